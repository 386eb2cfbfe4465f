"""Bounded solutions of almost-linear systems and Lyapunov-Perron stable manifolds.

Both solvers are Picard iterations of Green's operator with the contraction
bounds checked at run time and recorded in an :class:`IterationCertificate`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dichotomy import Dichotomy, GreenOperator, detect_dichotomy, truncation_length, ts_residual
from .errors import (
    GridPointTooLarge,
    HypothesisViolated,
    InputError,
    LipschitzWitness,
    NoConvergence,
    TruncatedTailWarning,
)
from .lift import H_ODE, LiftedSystem, PiecewiseMatrix, build_sgrid, embed, lift_coefficient, lifted_forcing
from .timescale import H_GRID, GridFunction, TimeScale

M_MAX = 200
FAMILIES = ("zero", "constant", "sine", "quadratic_coupling", "quadratic")


@dataclass(frozen=True, eq=False)
class Perturbation:
    """Nonlinearity ``g(t, x)`` on the ball ``B(0, r0)``.

    ``g`` is called as ``g(t, X)`` with ``t`` of shape ``(N,)`` and ``X`` of
    shape ``(N, n)``.  ``epsilon`` bounds ``|g(t, 0)|`` and ``l`` is a
    Lipschitz constant on the ball; builtin families know both exactly.
    """

    g: Callable
    n: int
    r0: float
    epsilon: Optional[float] = None
    l: Optional[float] = None
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, t, X):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.asarray(self.g(t, X), dtype=float)
        return out.reshape(X.shape)

    @classmethod
    def builtin(cls, family, n, r0, **params):
        """Named families: ``zero``, ``constant``, ``sine``, ``quadratic_coupling``, ``quadratic``.

        * ``constant``: ``g = bias``.
        * ``sine``: ``g = amp * sin(W x) + bias`` componentwise.
        * ``quadratic_coupling``: ``coeffs = [[i, j, k, c], ...]`` adds ``c x_j x_k`` to ``g_i``.
        * ``quadratic``: ``Q`` of shape ``(n, n, n)`` with ``g_i = x^T Q_i x``.
        """
        if family not in FAMILIES:
            raise InputError(f"unknown perturbation family {family!r}", field="family")
        if r0 <= 0:
            raise InputError("r0 must be positive", field="r0")
        bias = np.asarray(params.get("bias", np.zeros(n)), dtype=float).reshape(n)
        if family == "zero":
            return cls(lambda t, X: np.zeros_like(X), n, r0, 0.0, 0.0, family, params)
        if family == "constant":
            return cls(lambda t, X: np.broadcast_to(bias, X.shape).copy(), n, r0,
                       float(np.linalg.norm(bias)), 0.0, family, params)
        if family == "sine":
            amp = np.asarray(params.get("amp", np.ones(n)), dtype=float).reshape(n)
            W = np.asarray(params.get("W", np.eye(n)), dtype=float).reshape(n, n)
            l = float(np.linalg.norm(np.diag(amp) @ W, 2))
            return cls(lambda t, X: amp * np.sin(X @ W.T) + bias, n, r0,
                       float(np.linalg.norm(bias)), l, family, params)
        if family == "quadratic_coupling":
            terms = [(int(i), int(j), int(k), float(c)) for i, j, k, c in params.get("coeffs", [])]
            for i, j, k, c in terms:
                if not all(0 <= q < n for q in (i, j, k)):
                    raise InputError(f"coupling index out of range in {[i, j, k, c]}", field="coeffs")
            Li = np.zeros(n)
            for i, j, k, c in terms:
                Li[i] += 2 * r0 * abs(c)

            def g(t, X):
                out = np.broadcast_to(bias, X.shape).copy()
                for i, j, k, c in terms:
                    out[:, i] += c * X[:, j] * X[:, k]
                return out

            return cls(g, n, r0, float(np.linalg.norm(bias)), float(np.linalg.norm(Li)), family, params)
        Q = np.asarray(params["Q"], dtype=float).reshape(n, n, n)
        Qs = 0.5 * (Q + Q.transpose(0, 2, 1))
        l = 2 * r0 * float(np.sqrt(sum(np.linalg.norm(q, 2) ** 2 for q in Qs)))
        return cls(lambda t, X: np.einsum("ij,mjk,ik->im", X, Qs, X) + bias, n, r0,
                   float(np.linalg.norm(bias)), l, family, params)

    @classmethod
    def from_dict(cls, d, n):
        d = dict(d)
        fam = d.pop("family", None)
        if fam is None:
            raise InputError("perturbation needs a 'family'", field="family")
        r0 = float(d.pop("r0", 1.0))
        eps = d.pop("epsilon", None)
        l = d.pop("l", None)
        p = cls.builtin(fam, n, r0, **d)
        if eps is not None or l is not None:
            p = cls(p.g, n, r0, p.epsilon if eps is None else float(eps), p.l if l is None else float(l), fam, p.params)
        return p

    def validate(self, scale: TimeScale, t_end, samples=10_000, seed=0):
        """Measure ``(epsilon, l)`` by sampling and check them against declared values.

        Returns the declared constants when present, otherwise the measured
        ones.  Raises :class:`LipschitzWitness` or :class:`HypothesisViolated`
        with the offending sample.
        """
        rng = np.random.default_rng(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncatedTailWarning)
            tg = scale.grid(min(t_end, scale.end), 0.05).t
        n, r0 = self.n, self.r0
        g0 = self(tg, np.zeros((tg.size, n)))
        e = np.linalg.norm(g0, axis=1)
        eps_meas = float(e.max())
        if self.epsilon is not None and eps_meas > self.epsilon * (1 + 1e-9) + 1e-15:
            j = int(np.argmax(e))
            raise HypothesisViolated(
                f"|g(t,0)| = {eps_meas:.6g} exceeds epsilon = {self.epsilon:.6g} at t={tg[j]}",
                t=float(tg[j]), value=eps_meas,
            )
        t = tg[rng.integers(0, tg.size, samples)]
        X1 = _ball(rng, samples, n, r0)
        X2 = _ball(rng, samples, n, r0)
        d = np.linalg.norm(X1 - X2, axis=1)
        ok = d > 1e-14
        ratio = np.zeros(samples)
        ratio[ok] = np.linalg.norm(self(t, X1) - self(t, X2), axis=1)[ok] / d[ok]
        l_meas = float(ratio.max())
        if self.l is not None and l_meas > self.l * (1 + 1e-9) + 1e-15:
            j = int(np.argmax(ratio))
            raise LipschitzWitness(
                f"sampled Lipschitz ratio {l_meas:.6g} exceeds l = {self.l:.6g}",
                witness={"t": float(t[j]), "x1": X1[j].tolist(), "x2": X2[j].tolist(), "ratio": l_meas},
            )
        eps = self.epsilon if self.epsilon is not None else eps_meas
        l = self.l if self.l is not None else l_meas
        return eps, l


def _ball(rng, m, n, r):
    v = rng.standard_normal((m, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * (r * rng.uniform(0, 1, m) ** (1.0 / n))[:, None]


@dataclass
class IterationCertificate:
    """Per-step record of a Picard iteration against its theoretical bounds."""

    m: int
    deltas: list
    bounds: list
    norms: list
    norm_bounds: list
    K: float
    l: float
    epsilon: float
    r0: float
    final_norm: float
    final_bound: float
    converged: bool
    violations: list = field(default_factory=list)
    residual: float = float("nan")
    weighted: bool = False
    lam: float = 0.0

    @property
    def Kl(self):
        return self.K * self.l

    @property
    def ratios(self):
        d = self.deltas
        return [d[i] / d[i - 1] if d[i - 1] > 0 else 0.0 for i in range(1, len(d))]

    def contraction_ok(self, slack=0.05):
        return all(r <= self.Kl + slack for r in self.ratios[1:])

    def bounds_ok(self, rtol=1e-9):
        ok = all(d <= b * (1 + rtol) + 1e-15 for d, b in zip(self.deltas, self.bounds))
        return ok and all(x <= b * (1 + rtol) + 1e-15 for x, b in zip(self.norms, self.norm_bounds))

    def final_ok(self):
        return self.final_norm <= self.final_bound

    def to_dict(self):
        return {
            "m": self.m,
            "converged": self.converged,
            "K": self.K,
            "l": self.l,
            "Kl": self.Kl,
            "epsilon": self.epsilon,
            "r0": self.r0,
            "deltas": list(self.deltas),
            "bounds": list(self.bounds),
            "ratios": self.ratios,
            "final_norm": self.final_norm,
            "final_bound": self.final_bound,
            "residual": self.residual,
            "contraction_ok": self.contraction_ok(),
            "bounds_ok": self.bounds_ok(),
            "violations": list(self.violations),
            "weighted": self.weighted,
            "lambda": self.lam,
        }


@dataclass(frozen=True, eq=False)
class AlmostLinearSolution:
    x: GridFunction
    certificate: IterationCertificate
    residual_ts: float
    working: np.ndarray
    dichotomy: Dichotomy


def _setup(A, dich, sys):
    if sys is None:
        sys = dich.system if dich is not None else lift_coefficient(A)
    if dich is None:
        dich = detect_dichotomy(sys)
    return sys, dich


def _violate(strict, violations, exc, msg, **details):
    if strict:
        raise exc(msg, **details)
    violations.append(msg)


def solve_almost_linear(A: PiecewiseMatrix, g: Perturbation, dich: Dichotomy = None, tol=1e-9,
                        horizon=None, m_max=M_MAX, h_grid=H_GRID, history="periodic",
                        check_hypotheses=True, sys: LiftedSystem = None, samples=10_000, seed=0,
                        backend=None) -> AlmostLinearSolution:
    """Bounded solution of ``x^Delta = A(t) x + g(t, x)`` by Picard iteration.

    ``x^0 = 0`` and ``x^m = L[g(., x^{m-1})]`` with the time-scale Green
    operator ``L``.  With ``check_hypotheses`` the iteration refuses to start
    unless ``K l <= 1/2`` and ``K eps / (1 - K l) <= r0 / 2``; otherwise
    violations are recorded in the certificate.
    """
    sys, dich = _setup(A, dich, sys)
    ts = A.scale
    n = A.n
    if g.n != n:
        raise InputError(f"perturbation dimension {g.n} does not match n = {n}", field="n")
    if horizon is None:
        horizon = 20 * ts.period if ts.periodic else ts.end
    eps, l = g.validate(ts, horizon, samples, seed)
    K = dich.K_ts
    Kl = K * l
    violations = []
    if Kl > 0.5:
        _violate(check_hypotheses, violations, HypothesisViolated, f"K l = {Kl:.6g} exceeds 1/2", Kl=Kl)
    if Kl < 1 and K * eps / (1 - Kl) > g.r0 / 2 * (1 + 1e-12):
        _violate(check_hypotheses, violations, HypothesisViolated,
                 f"K eps/(1 - K l) = {K * eps / (1 - Kl):.6g} exceeds r0/2 = {g.r0 / 2:.6g}", Keps=K * eps, r0=g.r0)
    r = sys.rescaling
    s_out = float(r(horizon))
    extra = truncation_length(dich, (eps + l * g.r0) * dich.forcing_gain, tol)
    if ts.periodic:
        t_work = float(r.inverse(s_out + extra))
    else:
        t_work = ts.end
    grid = build_sgrid(sys, t_work, h_grid)
    G = GreenOperator(dich, grid, history, backend)
    on = grid.scale_index()
    tn = grid.t[on]
    X = np.zeros((on.size, n))
    deltas, bounds, norms, norm_bounds = [], [], [], []
    converged = False
    m = 0
    geo = Kl if Kl < 1 else float("nan")
    while m < m_max:
        vals = g(tn, X)
        left, right = lifted_forcing(grid, vals)
        Xn = G.apply(left, right)[on, :n]
        delta = float(np.linalg.norm(Xn - X, axis=1).max())
        deltas.append(delta)
        bounds.append(K * eps * Kl ** m)
        nrm = float(np.linalg.norm(Xn, axis=1).max())
        norms.append(nrm)
        norm_bounds.append(K * eps * (1 - Kl ** (m + 1)) / (1 - Kl) if Kl != 1 else K * eps * (m + 1))
        if nrm > g.r0:
            _violate(check_hypotheses, violations, HypothesisViolated,
                     f"iterate {m + 1} leaves B(0, r0): |x| = {nrm:.6g}", norm=nrm)
        X = Xn
        m += 1
        if delta <= tol:
            converged = True
            break
    if not converged:
        raise NoConvergence(f"no convergence within {m_max} iterations (last step {deltas[-1]:.3g})",
                            deltas=deltas)
    vals = g(tn, X)
    left, right = lifted_forcing(grid, vals)
    Xw = G.apply(left, right)
    resid = float(np.linalg.norm(Xw[on, :n] - X, axis=1).max())
    final = float(np.linalg.norm(X, axis=1).max())
    fb = K * eps / (1 - Kl) if Kl < 1 else float("inf")
    cert = IterationCertificate(m, deltas, bounds, norms, norm_bounds, K, l, eps, g.r0, final, fb,
                                converged, violations, resid)
    keep = tn <= horizon + ts.atol
    x = GridFunction(ts, tn[keep], X[keep], grid.piece[on][keep], "linear", h_grid)
    res = ts_residual(A, x, vals[keep])
    ok = np.isfinite(res)
    ok[-1] = False
    return AlmostLinearSolution(x, cert, float(res[ok].max()) if ok.any() else 0.0, Xw, dich)


# ---------------------------------------------------------------------------
# stable manifold


@dataclass(frozen=True, eq=False)
class ManifoldMap:
    """Samples of the stable-manifold graph ``y0 -> h(y0)`` at ``t0``."""

    t0: float
    y0: np.ndarray  # (m, n) points of U+(t0)
    h: np.ndarray  # (m, n) values in U-(t0)
    lipschitz: float
    lipschitz_bound: float
    a: float
    lam: float
    K: float
    l: float
    decay: np.ndarray  # sup |x*(t)| e^{lam s(t)} / |y0| per point
    certificates: list
    basis: Optional[np.ndarray] = None

    def D(self):
        return 2 * self.a * self.K

    def to_rows(self):
        return np.hstack([self.y0, self.h])


def _shift(A: PiecewiseMatrix, g: Perturbation, t0):
    ts = A.scale
    if t0 == 0:
        return A, g
    ts2 = ts.shifted(t0)
    A2 = A.shifted(t0, ts2)
    gg = g.g
    g2 = Perturbation(lambda t, X: gg(t + t0, X), g.n, g.r0, g.epsilon, g.l, g.family, g.params)
    return A2, g2


def stable_manifold(A: PiecewiseMatrix, g: Perturbation, t0=0.0, lam=None, y0grid=None,
                    dich: Dichotomy = None, tol=1e-9, horizon=None, m_max=M_MAX, h_grid=H_GRID,
                    check_hypotheses=True, samples=10_000, seed=0, backend=None) -> ManifoldMap:
    """Lyapunov-Perron stable manifold of ``x^Delta = A(t) x + g(t, x)`` at ``t0``.

    For each ``y0`` in the stable space the iteration
    ``x^{m+1} = Psi(., 0) y0 + L[g(., x^m)]`` (half-line operator) converges in
    the ``e^{lam s}``-weighted norm; ``h(y0) = x*(0) - y0``.  A 1-D ``y0grid``
    is read as coordinates along a unit stable direction.
    """
    ts0 = A.scale
    ts0._check_points(t0)
    if t0 != 0 or dich is None:
        A, g = _shift(A, g, t0)
        sys = lift_coefficient(A)
        dich = detect_dichotomy(sys)
    sys = dich.system
    ts = A.scale
    n = A.n
    lam = dich.lambda1 if lam is None else float(lam)
    if not 0 < lam < dich.lambda0:
        raise HypothesisViolated(f"lambda = {lam} must lie in (0, lambda0 = {dich.lambda0:.6g})", lam=lam)
    if horizon is None:
        horizon = 30.0 / dich.lambda0
    horizon_t = float(sys.rescaling.inverse(horizon)) if ts.periodic else ts.end
    eps, l = g.validate(ts, horizon_t, samples, seed)
    violations = []
    if eps > 1e-14:
        raise HypothesisViolated(f"g(t,0) must vanish (measured |g(t,0)| = {eps:.3g})", epsilon=eps)
    a = dich.C
    K = dich.K_weighted_ts(lam)
    Kl = K * l
    if Kl >= 0.5:
        _violate(check_hypotheses, violations, HypothesisViolated, f"K l = {Kl:.6g} is not below 1/2", Kl=Kl)
    P0 = dich.Pplus0
    Pn = P0[:n, :n]
    basis = None
    y0grid = np.asarray(y0grid if y0grid is not None else np.linspace(-1, 1, 5) * g.r0 / (2 * a) * 0.9, dtype=float)
    if y0grid.ndim == 1:
        U, sv, _ = np.linalg.svd(Pn)
        if dich.rank != 1:
            raise InputError("a 1-D y0 grid needs a one-dimensional stable space", field="grid")
        basis = U[:, 0]
        basis = basis * np.sign(basis[np.argmax(np.abs(basis))])
        Y = y0grid[:, None] * basis[None, :]
    else:
        Y = y0grid
    for y in Y:
        if np.linalg.norm(y - Pn @ y) > 1e-10 * max(1.0, np.linalg.norm(y)):
            raise InputError(f"grid point {y.tolist()} is not in the stable space", field="grid")
        if 2 * a * np.linalg.norm(y) >= g.r0:
            raise GridPointTooLarge(f"2a|y0| = {2 * a * np.linalg.norm(y):.6g} >= r0 = {g.r0}", y0=y.tolist())
    extra = truncation_length(dich, l * g.r0 * dich.forcing_gain, tol)
    if ts.periodic:
        t_work = float(sys.rescaling.inverse(horizon + extra))
    else:
        t_work = ts.end
    grid = build_sgrid(sys, t_work, h_grid)
    G = GreenOperator(dich, grid, "zero", backend)
    on = grid.scale_index()
    tn = grid.t[on]
    w = np.exp(lam * grid.s[on])
    H = np.zeros_like(Y)
    decay = np.zeros(len(Y))
    certs = []
    Pm0 = np.eye(n) - Pn
    for j, y in enumerate(Y):
        yn = float(np.linalg.norm(y))
        hom = G.homogeneous_stable(embed(y, sys.doubled))[on, :n]
        X = np.zeros((on.size, n))
        deltas, bounds, norms, nb = [], [], [], []
        converged = False
        m = 0
        viol = list(violations)
        while m < m_max:
            vals = g(tn, X)
            left, right = lifted_forcing(grid, vals)
            Xn = hom + G.apply(left, right)[on, :n]
            delta = float((np.linalg.norm(Xn - X, axis=1) * w).max())
            deltas.append(delta)
            bounds.append(a * Kl ** m * yn)
            nrm = float((np.linalg.norm(Xn, axis=1) * w).max())
            norms.append(nrm)
            nb.append(a * yn * (1 - Kl ** (m + 1)) / (1 - Kl) if Kl < 1 else float("inf"))
            if float(np.linalg.norm(Xn, axis=1).max()) > g.r0:
                _violate(check_hypotheses, viol, HypothesisViolated, f"iterate {m + 1} leaves B(0, r0)")
            X = Xn
            m += 1
            if delta <= tol:
                converged = True
                break
        if not converged:
            raise NoConvergence(f"manifold iteration for y0={y.tolist()} did not converge", deltas=deltas)
        vals = g(tn, X)
        left, right = lifted_forcing(grid, vals)
        resid = float((np.linalg.norm(hom + G.apply(left, right)[on, :n] - X, axis=1) * w).max())
        H[j] = Pm0 @ X[0] if yn > 0 else 0.0
        decay[j] = float((np.linalg.norm(X, axis=1) * w).max())
        fb = 2 * a * yn
        certs.append(IterationCertificate(m, deltas, bounds, norms, nb, K, l, 0.0, g.r0, decay[j], fb,
                                          converged, viol, resid, True, lam))
    lip = 0.0
    if len(Y) > 1:
        order = np.argsort(Y @ (basis if basis is not None else Y[-1] - Y[0]))
        for p, q in zip(order[:-1], order[1:]):
            dy = np.linalg.norm(Y[q] - Y[p])
            if dy > 0:
                lip = max(lip, float(np.linalg.norm(H[q] - H[p]) / dy))
    return ManifoldMap(t0, Y, H, lip, 2 * a * Kl, a, lam, K, l, decay, certs, basis)


@dataclass
class DecayReport:
    passed: bool
    exponent: float
    weighted_max: float
    bound: float
    exited: bool
    exit_time: Optional[float]
    t: np.ndarray
    norms: np.ndarray

    def to_dict(self):
        return {
            "passed": self.passed,
            "exponent": self.exponent,
            "weighted_max": self.weighted_max,
            "bound": self.bound,
            "exited": self.exited,
            "exit_time": self.exit_time,
        }


def integrate_ts(A: PiecewiseMatrix, g: Perturbation, x0, t_end, h_ode=H_ODE, r_exit=None):
    """Forward solution of ``x^Delta = A x + g(t, x)`` by direct stepping.

    Dense pieces use RK4 with step at most ``h_ode``; a right-scattered ``t``
    maps ``x`` to ``x + mu (A x + g(t, x))``.  Stops early when ``|x|``
    exceeds ``r_exit``.
    """
    ts = A.scale
    x = np.asarray(x0, dtype=float).copy()
    T, Xs = [0.0], [x.copy()]

    def F(t, v, Am):
        return Am @ v + g(np.array([t]), v[None, :])[0]

    exited = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncatedTailWarning)
        segs = list(ts.segments(t_end))
    for seg in segs:
        if seg.kind == "dense":
            L = seg.end - seg.start
            if L <= 0:
                continue
            m = max(1, math.ceil(L / h_ode - 1e-9))
            dt = L / m
            v = A.values[seg.piece]
            for q in range(m):
                t = seg.start + q * dt
                if callable(v):
                    A1, A2, A3 = (np.atleast_2d(v(t)), np.atleast_2d(v(t + dt / 2)), np.atleast_2d(v(t + dt)))
                else:
                    A1 = A2 = A3 = v
                k1 = F(t, x, A1)
                k2 = F(t + dt / 2, x + dt / 2 * k1, A2)
                k3 = F(t + dt / 2, x + dt / 2 * k2, A2)
                k4 = F(t + dt, x + dt * k3, A3)
                x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                T.append(t + dt)
                Xs.append(x.copy())
                if r_exit is not None and np.linalg.norm(x) > r_exit:
                    exited = t + dt
                    break
        else:
            mu = seg.end - seg.start
            x = x + mu * F(seg.start, x, A.at(seg.start, seg.piece))
            T.append(seg.end)
            Xs.append(x.copy())
            if r_exit is not None and np.linalg.norm(x) > r_exit:
                exited = seg.end
        if exited is not None:
            break
    return np.array(T), np.array(Xs), exited


def verify_manifold_point(A: PiecewiseMatrix, g: Perturbation, t0, x0, horizon=10.0, lam=None,
                          a=None, dich: Dichotomy = None, h_ode=H_ODE) -> DecayReport:
    """Integrate the nonlinear system from ``x0`` at ``t0`` and measure its decay.

    Passes when ``sup |x(t)| e^{lam s(t)} <= 1.2 * 2a|y0|`` with ``y0`` the
    stable component of ``x0``.  Leaving ``B(0, r0)`` is reported, not raised.
    The measured exponent is ``inf_{s >= 1} -log(|x(t)|/|x0|)/s``.
    """
    A2, g2 = _shift(A, g, t0)
    if dich is None:
        dich = detect_dichotomy(lift_coefficient(A2))
    lam = dich.lambda1 if lam is None else lam
    a = dich.C if a is None else a
    n = A.n
    x0 = np.asarray(x0, dtype=float)
    y0 = dich.Pplus0[:n, :n] @ x0
    T, Xs, exited = integrate_ts(A2, g2, x0, horizon, h_ode, g.r0)
    s = dich.system.rescaling(T)
    norms = np.linalg.norm(Xs, axis=1)
    wmax = float((norms * np.exp(lam * s)).max())
    bound = 1.2 * 2 * a * float(np.linalg.norm(y0))
    sel = s >= 1.0
    x0n = max(float(np.linalg.norm(x0)), 1e-300)
    if sel.any() and exited is None:
        with np.errstate(divide="ignore"):
            expo = float(np.min(-np.log(np.maximum(norms[sel], 1e-300) / x0n) / s[sel]))
    else:
        expo = float("-inf") if exited is not None else float("nan")
    passed = exited is None and wmax <= bound
    return DecayReport(passed, expo, wmax, bound, exited is not None, exited, T + t0, norms)
