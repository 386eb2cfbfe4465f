import math

import numpy as np
import pytest
import scipy.linalg as sla

from tsdyn.dichotomy import (
    Dichotomy,
    bounded_solution_ode,
    bounded_solution_ts,
    cauchy_matrix,
    classify_stable_directions,
    detect_dichotomy,
    fundamental_matrix_ts,
    pliss_maizel_probe,
    psi_decay_check,
    stable_decay_exponent,
    weighted_norm_check,
)
from tsdyn.errors import NotHyperbolic, NotRegressive, NonPeriodicUnsupported
from tsdyn.lift import PiecewiseMatrix, lift_coefficient
from tsdyn.timescale import TimeScale

Z = TimeScale.integers()
R = TimeScale.reals()
PULSE = TimeScale.pulse(1.0, 1.0)
LN2 = math.log(2.0)


def lifted(ts, A):
    return lift_coefficient(PiecewiseMatrix.constant(ts, A))


def test_cauchy_examples():
    A = np.array([[-0.3, 1.0], [-1.0, 0.2]])
    sys_ = lifted(R, A)
    assert np.allclose(cauchy_matrix(sys_, 2.5, 0.7), sla.expm(A * 1.8), atol=1e-12)
    assert np.allclose(cauchy_matrix(sys_, 1.3, 1.3), np.eye(2))
    sys_ = lifted(Z, [[1.0]])
    assert cauchy_matrix(sys_, 5 * LN2, 0.0)[0, 0] == pytest.approx(32.0, rel=1e-12)


def test_cocycle_random_triples():
    two = TimeScale(((0.0, 0.5), (1.0, 1.5)), period=2.5)
    A = PiecewiseMatrix(two, ([[-0.3, 1.0], [0.0, 0.2]], [[0.1, 0.0], [0.5, -0.4]]))
    sys_ = lift_coefficient(A)
    rng = np.random.default_rng(0)
    for _ in range(30):
        tau, u, s = np.sort(rng.uniform(0, 8, 3))
        lhs = cauchy_matrix(sys_, s, u) @ cauchy_matrix(sys_, u, tau)
        rhs = cauchy_matrix(sys_, s, tau)
        assert np.linalg.norm(lhs - rhs) <= 1e-9 * max(1.0, np.linalg.norm(rhs))


def test_fundamental_ts_examples():
    assert fundamental_matrix_ts(PiecewiseMatrix.constant(Z, [[1.0]]), 6.0, 0.0)[0, 0] == pytest.approx(64.0)
    A = np.array([[0.1, -1.0], [1.0, 0.1]])
    assert np.allclose(fundamental_matrix_ts(PiecewiseMatrix.constant(R, A), 1.7, 0.0), sla.expm(1.7 * A))
    psi = fundamental_matrix_ts(PiecewiseMatrix.constant(PULSE, [[-0.5]]), 2.0, 0.0)[0, 0]
    assert psi == pytest.approx(0.5 * math.exp(-0.5), rel=1e-12)
    back = fundamental_matrix_ts(PiecewiseMatrix.constant(PULSE, [[-0.5]]), 0.0, 2.0)[0, 0]
    assert back * psi == pytest.approx(1.0)
    with pytest.raises(NotRegressive):
        fundamental_matrix_ts(PiecewiseMatrix.constant(Z, [[-1.0]]), 0.0, 3.0)


def test_detect_examples():
    d = detect_dichotomy(lifted(R, np.diag([-1.0, 2.0])))
    assert np.allclose(d.Pplus0, np.diag([1.0, 0.0]))
    assert d.lambda0 == pytest.approx(1.0)
    assert d.C == pytest.approx(1.0, abs=1e-9)
    assert d.K == pytest.approx(1.1 * 2.0)
    with pytest.raises(NotHyperbolic) as e:
        detect_dichotomy(lifted(R, np.diag([0.0, -1.0])))
    assert abs(e.value.witness) < 1e-12
    d = detect_dichotomy(lifted(Z, [[-0.5]]))
    assert d.rank == 1 and d.lambda0 == pytest.approx(1.0) and d.C == pytest.approx(1.0, abs=1e-9)


def test_detect_rejects_aperiodic():
    ts = TimeScale(((0.0, 1.0), (3.0, 3.0)), tail="syndetic")
    with pytest.raises(NonPeriodicUnsupported):
        detect_dichotomy(lift_coefficient(PiecewiseMatrix.constant(ts, [[-1.0]])))


def test_projectors_invariant():
    two = TimeScale(((0.0, 0.5), (1.0, 1.5)), period=2.5)
    A = PiecewiseMatrix(two, ([[-0.3, 1.0], [0.0, 0.9]], [[-0.6, 0.0], [0.5, 0.4]]))
    d = detect_dichotomy(lift_coefficient(A))
    for s in (0.3, 1.1, 2.9):
        P = d.projector(s)
        assert np.allclose(P @ P, P, atol=1e-9)
        Phi = cauchy_matrix(d.system, s + 0.7, s)
        assert np.allclose(Phi @ P, d.projector(s + 0.7) @ Phi, atol=1e-8)
    assert psi_decay_check(d, A, pairs=40) <= 1.0 + 1e-6


def test_ode_examples():
    sys_ = lifted(R, [[-1.0]])
    d = detect_dichotomy(sys_)
    sol = bounded_solution_ode(sys_, d, lambda s: np.array([1.0]), tol=1e-10)
    assert np.abs(sol.values - 1.0).max() < 1e-9
    assert sol.residual <= 1e-8
    sol = bounded_solution_ode(sys_, d, lambda s: np.array([0.0]))
    assert np.abs(sol.values).max() == 0.0
    sys_ = lifted(R, np.diag([-1.0, 1.0]))
    d = detect_dichotomy(sys_)
    sol = bounded_solution_ode(sys_, d, lambda s: np.array([1.0, 1.0]), tol=1e-10)
    assert np.abs(sol.values - [1.0, -1.0]).max() < 1e-8


def test_ode_bound_k():
    sys_ = lifted(R, np.diag([-1.0, 2.0]))
    d = detect_dichotomy(sys_)
    sol = bounded_solution_ode(sys_, d, lambda s: np.array([np.sin(3 * s), np.cos(s)]), tol=1e-10)
    assert np.linalg.norm(sol.values, axis=1).max() <= d.K * math.sqrt(2)


def test_ts_examples():
    A = PiecewiseMatrix.constant(Z, [[-0.5]])
    assert np.abs(bounded_solution_ts(A, 1.0, horizon=20).x.values - 2.0).max() <= 1e-12
    assert np.abs(bounded_solution_ts(A, 0.0, horizon=20).x.values).max() == 0.0
    # pulse: x(2k) = alpha x(2k-2) + beta with exact stepping
    A = PiecewiseMatrix.constant(PULSE, [[-0.5]])
    alpha = 0.5 * math.exp(-0.5)
    beta = 0.5 * (-(math.exp(-0.5) - 1) / 0.5) + 1.0
    xstar = beta / (1 - alpha)
    sol = bounded_solution_ts(A, 1.0, tol=1e-12, horizon=10)
    at_even = np.isclose(np.mod(sol.x.t, 2.0), 0.0)
    assert np.abs(sol.x.values[at_even, 0] - xstar).max() < 1e-9
    assert sol.residual <= 1e-8


def test_weighted_examples():
    sys_ = lifted(Z, [[-0.5]])
    d = detect_dichotomy(sys_)
    A = PiecewiseMatrix.constant(Z, [[-0.5]])
    zero = bounded_solution_ts(A, 0.0, horizon=20, dich=d, sys=sys_, history="zero")
    chk = weighted_norm_check(d, zero, d.lambda1)
    assert chk.passed and chk.measured == 0.0
    assert stable_decay_exponent(detect_dichotomy(lifted(R, np.diag([-1.0, 2.0]))))[0] >= 0.99
    # discrete series oracle: x(n) = sum_{k<n} 0.5^{n-1-k} f(k), f(k) = e^{-lam s(k)}
    lam = d.lambda1
    f = lambda t: np.exp(-lam * sys_.rescaling(np.atleast_1d(t)))[:, None]
    sol = bounded_solution_ts(A, f, 1e-12, 20, d, sys_, history="zero")
    n = np.arange(21)
    fk = np.exp(-lam * n * LN2)
    oracle = np.array([sum(0.5 ** (m - 1 - k) * fk[k] for k in range(m)) for m in n])
    idx = np.searchsorted(sol.x.t, n)
    assert np.abs(sol.x.values[idx, 0] - oracle).max() < 1e-10
    chk = weighted_norm_check(d, sol, lam, 1.0)
    assert chk.passed


def test_probe_examples():
    rep = pliss_maizel_probe(PiecewiseMatrix.constant(Z, [[-0.5]]), trials=5)
    assert rep.status == "consistent"
    rep = pliss_maizel_probe(PiecewiseMatrix.constant(R, [[0.0]]), trials=5)
    assert rep.status == "witness"
    rep = pliss_maizel_probe(PiecewiseMatrix.constant(R, [[0.0, -1.0], [1.0, 0.0]]), trials=5)
    assert rep.status == "witness"


def test_probe_precondition():
    ts = TimeScale(((0.0, 1.0), (3.0, 3.0)), tail="non-syndetic")
    rep = pliss_maizel_probe(PiecewiseMatrix.constant(ts, [[-1.0]]), trials=2)
    assert rep.status == "precondition-failed"


def test_manual_dichotomy_runs_green_operator():
    sys_ = lifted(R, [[-1.0]])
    d = Dichotomy.manual(sys_, np.eye(1), 1.0, 1.0)
    sol = bounded_solution_ode(sys_, d, lambda s: np.array([2.0]), tol=1e-10)
    assert np.abs(sol.values - 2.0).max() < 1e-9


def test_stable_directions_periodic():
    rep = classify_stable_directions(lifted(Z, [[-0.5]]))
    assert rep.syndetic and rep.rank == 1
