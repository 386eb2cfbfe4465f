import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from tsdyn.errors import GridPointTooLarge, HypothesisViolated, InputError, LipschitzWitness
from tsdyn.lift import PiecewiseMatrix
from tsdyn.nonlinear import (
    Perturbation,
    integrate_ts,
    solve_almost_linear,
    stable_manifold,
    verify_manifold_point,
)
from tsdyn.timescale import TimeScale

Z = TimeScale.integers()
R = TimeScale.reals()
PULSE = TimeScale.pulse(1.0, 1.0)
SADDLE = PiecewiseMatrix.constant(R, np.diag([-1.0, 1.0]))


def coupling(r0=1.0):
    return Perturbation.builtin("quadratic_coupling", 2, r0, coeffs=[[1, 0, 0, 1.0]])


def test_builtin_constants():
    p = Perturbation.builtin("sine", 2, 1.0, amp=[0.1, 0.2], W=[[1, 0], [0, 1]], bias=[0.0, 0.05])
    assert p.l == pytest.approx(0.2)
    assert p.epsilon == pytest.approx(0.05)
    eps, l = p.validate(Z, 10.0, samples=2000)
    assert (eps, l) == (p.epsilon, p.l)
    assert coupling().l == pytest.approx(2.0)
    with pytest.raises(InputError):
        Perturbation.builtin("cubic", 1, 1.0)


def test_validate_catches_understated_lipschitz():
    p = Perturbation.from_dict({"family": "sine", "amp": [1.0], "W": [[1.0]], "l": 0.1}, 1)
    with pytest.raises(LipschitzWitness):
        p.validate(R, 5.0, samples=2000)
    p = Perturbation.from_dict({"family": "constant", "bias": [0.3], "epsilon": 0.1}, 1)
    with pytest.raises(HypothesisViolated):
        p.validate(R, 5.0)


def test_zero_perturbation():
    A = PiecewiseMatrix.constant(Z, [[-0.5]])
    sol = solve_almost_linear(A, Perturbation.builtin("zero", 1, 1.0), horizon=10)
    assert sol.certificate.m <= 1
    assert np.abs(sol.x.values).max() == 0.0


def test_z_sine_matches_scalar_oracle():
    A = PiecewiseMatrix.constant(Z, [[-0.5]])
    g = Perturbation.builtin("sine", 1, 1.0, amp=[0.1], W=[[1.0]], bias=[0.05])
    sol = solve_almost_linear(A, g, tol=1e-12, horizon=20)
    xstar = brentq(lambda x: 0.5 * x + 0.1 * math.sin(x) + 0.05 - x, -1, 1, xtol=1e-15)
    assert np.abs(sol.x.values - xstar).max() < 1e-10
    c = sol.certificate
    assert c.contraction_ok() and c.bounds_ok() and c.final_ok() and not c.violations
    assert sol.residual_ts < 1e-8


def test_reals_bound_arithmetic():
    # a = -1 on R has Green norm 1: |X| <= eps / (1 - l) = 0.1 / 0.8
    A = PiecewiseMatrix.constant(R, [[-1.0]])
    g = Perturbation.builtin("sine", 1, 1.0, amp=[0.2], W=[[1.0]], bias=[0.1])
    sol = solve_almost_linear(A, g, tol=1e-11, horizon=10)
    assert np.abs(sol.x.values).max() <= 0.125
    assert sol.certificate.final_ok()


def test_pulse_almost_linear_residual():
    A = PiecewiseMatrix.constant(PULSE, [[-0.5]])
    g = Perturbation.builtin("sine", 1, 1.0, amp=[0.02], W=[[1.0]], bias=[0.01])
    sol = solve_almost_linear(A, g, tol=1e-11, horizon=10)
    assert sol.certificate.contraction_ok() and sol.residual_ts < 1e-7


def test_strict_mode_refuses_large_kl():
    with pytest.raises(HypothesisViolated):
        stable_manifold(SADDLE, coupling(1.0), lam=0.5, y0grid=[0.1])


def test_grid_point_too_large():
    with pytest.raises(GridPointTooLarge):
        stable_manifold(SADDLE, coupling(1.0), lam=0.5, y0grid=[0.6], check_hypotheses=False)


def test_linear_manifold_is_stable_space():
    mm = stable_manifold(SADDLE, Perturbation.builtin("zero", 2, 1.0), lam=0.5, y0grid=[-0.3, 0.0, 0.3])
    assert np.abs(mm.h).max() < 1e-12


def test_manifold_oracle_and_shooting():
    ys = np.array([-0.1, 0.1])
    mm = stable_manifold(SADDLE, coupling(), lam=0.5, y0grid=ys, check_hypotheses=False)
    assert np.abs(mm.h[:, 1] + ys ** 2 / 3).max() < 1e-7

    # shooting oracle: bisect y(0) so that y stays bounded up to t = 20
    def final_y(y0, x0=0.1):
        f = lambda t, v: [-v[0], v[1] + v[0] ** 2]
        return solve_ivp(f, (0, 20), [x0, y0], rtol=1e-12, atol=1e-14).y[1, -1]

    y_shoot = brentq(final_y, -0.01, 0.0, xtol=1e-14)
    assert mm.h[1, 1] == pytest.approx(y_shoot, abs=1e-7)


def test_verify_manifold_point():
    mm = stable_manifold(SADDLE, coupling(), lam=0.5, y0grid=[0.1], check_hypotheses=False)
    x0 = mm.y0[0] + mm.h[0]
    rep = verify_manifold_point(SADDLE, coupling(), 0.0, x0, horizon=10, lam=0.5, a=mm.a)
    assert rep.passed and not rep.exited and rep.exponent >= 0.45
    off = verify_manifold_point(SADDLE, coupling(), 0.0, x0 + [0.0, 0.01], horizon=20, lam=0.5, a=mm.a)
    assert off.exited and off.exit_time < 20


def test_linear_decay_rate():
    rep = verify_manifold_point(SADDLE, Perturbation.builtin("zero", 2, 1.0), 0.0, [0.2, 0.0], horizon=10, lam=0.5)
    assert rep.exponent >= 1.0 - 1e-3


def test_integrate_ts_integers():
    A = PiecewiseMatrix.constant(Z, [[-0.5]])
    g = Perturbation.builtin("constant", 1, 10.0, bias=[1.0])
    T, X, _ = integrate_ts(A, g, [0.0], 5.0)
    at_int = np.isclose(T, np.round(T))
    x = 0.0
    for t, v in zip(T[at_int], X[at_int]):
        assert v[0] == pytest.approx(x, abs=1e-12)
        x = 0.5 * x + 1.0
