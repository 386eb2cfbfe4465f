"""Exponential dichotomies of lifted systems and bounded-solution operators.

Green's operator on a half line::

    phi(s) = int_0^s Phi(s,u) P+(u) f(u) du - int_s^inf Phi(s,u) P-(u) f(u) du

is evaluated on an :class:`~tsdyn.lift.SGrid` by two projected sweeps: a
forward one for the stable part and a backward one (terminal value zero at a
truncation horizon) for the unstable part.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import (
    HorizonExceeded,
    NonPeriodicUnsupported,
    NotHyperbolic,
    NotRegressive,
    ToleranceUnreachable,
    TruncatedTailWarning,
)
from .lift import (
    H_ODE,
    LiftedSystem,
    PiecewiseMatrix,
    SGrid,
    build_sgrid,
    embed,
    lift_coefficient,
    lifted_forcing,
    rk4_propagators,
)
from .matlog import spectral_projector
from .timescale import H_GRID, GridFunction, TimeScale, delta_derivative, stencil_derivative

GAP_TOL = 1e-6
SAFETY = 1.1
CAP = 1e4  # hard cap on lambda0 * (truncation horizon)


# ---------------------------------------------------------------------------
# transition matrices


def _window(sys, base, lo, hi, h_ode, X, Xi):
    """Advance ``(X, Xi)`` across ``[lo, hi]`` inside the period starting at ``base``."""
    r = sys.rescaling
    for kind, a, b, i, v in sys.segments():
        l, h = max(base + a, lo), min(base + b, hi)
        if h <= l:
            continue
        if kind == "dense" and callable(v):
            F, G, _, _ = rk4_propagators(lambda t: sys.work(v(t)), float(r.inverse(l)), h - l, h_ode)
        else:
            M = sys.work(v) * (h - l)
            F, G = sla.expm(M), sla.expm(-M)
        X = F @ X
        Xi = Xi @ G
    return X, Xi


def _forward(sys, s0, s1, h_ode):
    """``(Phi(s1, s0), Phi(s0, s1))`` for ``s0 <= s1``."""
    dim = sys.dim
    X, Xi = np.eye(dim), np.eye(dim)
    if s1 <= s0:
        return X, Xi
    if not sys.periodic:
        if s1 > sys.rescaling.s_break[-1] * (1 + 1e-12) + 1e-14:
            raise HorizonExceeded(f"s={s1} lies beyond the truncated scale")
        return _window(sys, 0.0, s0, s1, h_ode, X, Xi)
    S_P = sys.period
    k0 = math.floor(s0 / S_P)
    k1 = math.floor(s1 / S_P)
    if k1 == k0:
        return _window(sys, k0 * S_P, s0, s1, h_ode, X, Xi)
    X, Xi = _window(sys, k0 * S_P, s0, (k0 + 1) * S_P, h_ode, X, Xi)
    if k1 - k0 > 1:
        M, Mi = _window(sys, 0.0, 0.0, S_P, h_ode, np.eye(dim), np.eye(dim))
        X = np.linalg.matrix_power(M, k1 - k0 - 1) @ X
        Xi = Xi @ np.linalg.matrix_power(Mi, k1 - k0 - 1)
    return _window(sys, k1 * S_P, k1 * S_P, s1, h_ode, X, Xi)


def cauchy_matrix(sys: LiftedSystem, s, tau, h_ode=H_ODE, max_span=1e4):
    """Cauchy matrix ``Phi(s, tau)`` of the lifted system.

    Constant segments use exact matrix exponentials, variable ones RK4 with
    step ``h_ode``.  Backward evaluation integrates backward rather than
    inverting the forward product.
    """
    if max(abs(s), abs(tau)) > max_span:
        raise HorizonExceeded(f"|s| exceeds the computable span {max_span}")
    if s < 0 or tau < 0:
        raise HorizonExceeded("the lifted system lives on s >= 0")
    if s >= tau:
        return _forward(sys, tau, s, h_ode)[0]
    return _forward(sys, s, tau, h_ode)[1]


def fundamental_matrix_ts(A: PiecewiseMatrix, t, t0, h_ode=H_ODE):
    """``Psi(t, t0)`` of ``x^Delta = A(t) x`` by stepping along the scale.

    Dense pieces contribute their ODE transition, each right-scattered ``t1``
    the factor ``E + mu(t1) A(t1)``.  ``t < t0`` inverts the forward product
    and requires regressivity.
    """
    ts = A.scale
    ts._check_points([t, t0])
    if t < t0:
        F = fundamental_matrix_ts(A, t0, t, h_ode)
        s = np.linalg.svd(F, compute_uv=False)
        if s[-1] <= np.finfo(float).eps * max(1.0, s[0]) * A.n:
            raise NotRegressive(f"backward evaluation through a singular gap factor on [{t}, {t0}]")
        return np.linalg.inv(F)
    n = A.n
    X = np.eye(n)
    tol = ts.atol
    for seg in ts.segments(t + tol):
        if seg.kind == "dense":
            lo, hi = max(seg.start, t0), min(seg.end, t)
            if hi > lo:
                v = A.values[seg.piece]
                if callable(v):
                    X = rk4_propagators(lambda x: np.atleast_2d(v(x)), lo, hi - lo, h_ode)[0] @ X
                else:
                    X = sla.expm(np.asarray(v) * (hi - lo)) @ X
        elif seg.start >= t0 - tol and seg.end <= t + tol:
            X = (np.eye(n) + (seg.end - seg.start) * A.at(seg.start, seg.piece)) @ X
    return X


# ---------------------------------------------------------------------------
# dichotomy data


@dataclass(frozen=True, eq=False)
class Dichotomy:
    """Exponential dichotomy of a lifted system.

    ``Pplus0`` projects onto the stable space at ``s = 0``.  ``K`` bounds
    Green's operator in s-time and ``K_ts`` the induced time-scale operator.
    ``C`` is a sampled estimate; ``K`` includes the safety factor.
    """

    system: LiftedSystem
    Pplus0: np.ndarray
    C: float
    lambda0: float
    kind: str  # constant | periodic | manual
    multipliers: np.ndarray = field(default_factory=lambda: np.empty(0))
    safety: float = SAFETY
    projector_defect: float = 0.0
    h_ode: float = H_ODE

    @property
    def rank(self):
        return int(round(np.trace(self.Pplus0)))

    @property
    def dim(self):
        return self.Pplus0.shape[0]

    @property
    def lambda1(self):
        return 0.5 * self.lambda0

    @property
    def K(self):
        return self.safety * self.C * 2.0 / self.lambda0

    @property
    def forcing_gain(self):
        """``max(1, sup |(log(E + mu A)/log(1+mu)) A^{-1}|)`` over the gaps."""
        g = 1.0
        for gl in self.system.gaps.values():
            if gl.forcing_factor is not None:
                g = max(g, float(np.linalg.norm(gl.forcing_factor, 2)))
        return g

    @property
    def K_ts(self):
        return self.K * self.forcing_gain

    def K_weighted(self, lam):
        if not 0 <= lam < self.lambda0:
            raise ValueError("lambda must lie in [0, lambda0)")
        return self.safety * self.C * (1.0 / (self.lambda0 - lam) + 1.0 / (self.lambda0 + lam))

    def K_weighted_ts(self, lam):
        """Weighted bound for the scale operator.

        On a gap image of s-length ``ell`` the lifted forcing is frozen at the
        value of the left end, where the weight is larger by ``e^{lam ell}``.
        """
        ell = max((g.ell for g in self.system.gaps.values()), default=0.0)
        return self.K_weighted(lam) * self.forcing_gain * math.exp(lam * ell)

    def projector(self, s):
        """``P+(s) = Phi(s,0) P+(0) Phi(0,s)``, reduced modulo the period."""
        if self.kind == "constant":
            return self.Pplus0
        u = s
        if self.system.periodic:
            u = s - math.floor(s / self.system.period) * self.system.period
        X, Xi = _forward(self.system, 0.0, u, self.h_ode)
        return X @ self.Pplus0 @ Xi

    def Pminus(self, s):
        return np.eye(self.dim) - self.projector(s)

    @classmethod
    def manual(cls, system, Pplus0, C, lambda0, safety=SAFETY):
        """User-supplied dichotomy data, e.g. for a non-periodic lift."""
        P = np.asarray(Pplus0, dtype=float)
        if not np.allclose(P @ P, P, atol=1e-10):
            raise ValueError("Pplus0 is not a projector")
        return cls(system, P, float(C), float(lambda0), "manual", safety=safety)

    def to_dict(self):
        return {
            "kind": self.kind,
            "rank": self.rank,
            "C": self.C,
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "K": self.K,
            "K_ts": self.K_ts,
            "safety": self.safety,
            "multipliers": [[float(z.real), float(z.imag)] for z in np.atleast_1d(self.multipliers)],
            "projector_defect": self.projector_defect,
        }


def _estimate_C(sys, P0, lam0, kind, h_ode, periods=6, steps=240):
    """Sampled ``sup |Phi(t,u)P+(u)| e^{lam0 (t-u)}`` and the unstable analogue."""
    dim = sys.dim
    E = np.eye(dim)
    if kind == "constant":
        A = sys.constant_matrix
        W = max(periods, 8.0 / lam0)
        d = np.linspace(0, W, steps + 1)
        Pm = E - P0
        vals = [max(np.linalg.norm(sla.expm(A * x) @ P0, 2), np.linalg.norm(Pm @ sla.expm(-A * x), 2)) * math.exp(lam0 * x) for x in d]
        return np.array(vals)
    S_P = sys.period
    W = max(periods * S_P, 8.0 / lam0)
    W = math.ceil(W / S_P) * S_P
    d = np.linspace(0, W, steps + 1)
    out = np.zeros(d.size)
    for tau in np.linspace(0, S_P, 9)[:-1]:
        Xt, Xti = _forward(sys, 0.0, tau, h_ode)
        Pp = Xt @ P0 @ Xti
        Pm = E - Pp
        B, Bi = E.copy(), E.copy()
        for j in range(d.size):
            if j:
                F, G = _forward(sys, tau + d[j - 1], tau + d[j], h_ode)
                B, Bi = F @ B, Bi @ G
            r = max(np.linalg.norm(B @ Pp, 2), np.linalg.norm(Pm @ Bi, 2)) * math.exp(lam0 * d[j])
            out[j] = max(out[j], r)
    return out


def _C_with_growth_check(sys, P0, lam0, kind, h_ode):
    """Reduce ``lam0`` until the sampled ratio stops growing (defective spectrum)."""
    for _ in range(8):
        r = _estimate_C(sys, P0, lam0, kind, h_ode)
        q = r.size * 3 // 4
        if r[q:].max() <= 1.05 * r[:q].max():
            return float(max(1.0, r.max())), lam0
        lam0 *= 0.95
    return float(max(1.0, r.max())), lam0


def detect_dichotomy(sys: LiftedSystem, gap_tol=GAP_TOL, h_ode=H_ODE) -> Dichotomy:
    """Exponential dichotomy of a constant or periodic lifted system.

    Constant systems split by the sign of ``Re(lambda)``, periodic ones by the
    modulus of the Floquet multipliers.  Raises :class:`NotHyperbolic` with a
    witness when the spectrum meets the neutral band of width ``gap_tol``.
    """
    A = sys.constant_matrix
    if A is not None:
        ev = np.linalg.eigvals(A)
        neutral = np.abs(ev.real) <= gap_tol
        if np.any(neutral):
            w = complex(ev[np.argmax(neutral)])
            raise NotHyperbolic(f"eigenvalue {w:.6g} on the imaginary axis", witness=w, eigenvalues=ev)
        P0, k = spectral_projector(A, lambda re, im: re < 0)
        lam0 = float(np.abs(ev.real).min())
        C, lam0 = _C_with_growth_check(sys, P0, lam0, "constant", h_ode)
        return Dichotomy(sys, P0, C, lam0, "constant", ev, h_ode=h_ode)
    if not sys.periodic:
        raise NonPeriodicUnsupported(
            "dichotomy detection needs a constant or periodic lift; use Dichotomy.manual"
        )
    S_P = sys.period
    M, Mi = _forward(sys, 0.0, S_P, h_ode)
    rho = np.linalg.eigvals(M)
    mod = np.abs(rho)
    neutral = np.abs(mod - 1.0) <= gap_tol
    if np.any(neutral):
        w = complex(rho[np.argmax(neutral)])
        raise NotHyperbolic(f"Floquet multiplier {w:.6g} on the unit circle", witness=w, multipliers=rho)
    P0, k = spectral_projector(M, lambda re, im: re * re + im * im < 1.0)
    lam0 = float(np.abs(np.log(mod)).min() / S_P)
    C, lam0 = _C_with_growth_check(sys, P0, lam0, "periodic", h_ode)
    # projector closure over one period
    defect = float(np.linalg.norm(M @ P0 @ Mi - P0, 2))
    return Dichotomy(sys, P0, C, lam0, "periodic", rho, projector_defect=defect, h_ode=h_ode)


# ---------------------------------------------------------------------------
# Green's operator on a grid


def projector_tables(dich: Dichotomy, grid: SGrid):
    """``(Pplus_tab, Pminus_tab, idx)`` with ``P+(s_k) = Pplus_tab[idx[k]]``."""
    dim = dich.dim
    E = np.eye(dim)
    if dich.kind == "constant":
        Pp = dich.Pplus0[None]
        return Pp, (E - dich.Pplus0)[None], np.zeros(grid.t.size, dtype=np.int64)
    if grid.system.periodic:
        m = grid.n_template
        P = [dich.Pplus0]
        for j in range(m - 1):
            q = grid.phi_idx[j]
            P.append(grid.phi_tab[q] @ P[-1] @ grid.phiinv_tab[q])
        Pp = np.array(P)
        return Pp, E[None] - Pp, grid.local.astype(np.int64)
    P = [dich.Pplus0]
    for k in range(grid.N):
        q = grid.phi_idx[k]
        P.append(grid.phi_tab[q] @ P[-1] @ grid.phiinv_tab[q])
    Pp = np.array(P)
    return Pp, E[None] - Pp, np.arange(grid.t.size, dtype=np.int64)


class GreenOperator:
    """Green's operator of ``dich`` evaluated on ``grid`` (reusable).

    ``history="zero"`` keeps the stable part zero at ``s = 0`` (the integral
    from 0).  ``history="periodic"`` repeats the first-period forcing into the
    past, which gives the stationary solution for periodic data; it needs a
    periodic (or constant) lift and falls back to ``"zero"`` otherwise.
    """

    def __init__(self, dich: Dichotomy, grid: SGrid, history="zero", backend=None):
        if history not in ("zero", "periodic"):
            raise ValueError("history must be 'zero' or 'periodic'")
        self.dich = dich
        self.grid = grid
        self.backend = backend
        self.Pp, self.Pm, self.pidx = projector_tables(dich, grid)
        if history == "periodic" and not grid.system.periodic:
            history = "zero"
        self.history = history
        if history == "periodic":
            m = grid.n_template
            if grid.N < m:
                raise HorizonExceeded("the grid must cover at least one period for history='periodic'")
            X = kernels.transition_products(grid.phi_tab, grid.phi_idx[:m], np.eye(dich.dim), backend)
            M = X[-1]
            self._hist_solver = sla.lu_factor(np.eye(dich.dim) - M @ self.Pp[0])

    def forcing(self, left, right):
        g = self.grid
        G0 = g.g0_tab[g.phi_idx]
        G1 = g.g1_tab[g.phi_idx]
        return np.einsum("kij,kj->ki", G0, left) + np.einsum("kij,kj->ki", G1, right)

    def apply(self, left, right, q=None):
        """Node values of Green's operator applied to the forcing (left/right per interval)."""
        g = self.grid
        if q is None:
            q = self.forcing(left, right)
        dim = self.dich.dim
        x0 = np.zeros(dim)
        xp = kernels.projected_forward(g.phi_tab, g.phi_idx, self.Pp, self.pidx, q, x0, self.backend)
        if self.history == "periodic":
            m = g.n_template
            w = xp[m]
            x0 = self.Pp[0] @ sla.lu_solve(self._hist_solver, w)
            xp = kernels.projected_forward(g.phi_tab, g.phi_idx, self.Pp, self.pidx, q, x0, self.backend)
        xm = kernels.projected_backward(g.phiinv_tab, g.phi_idx, self.Pm, self.pidx, q, np.zeros(dim), self.backend)
        return xp + xm

    def homogeneous_stable(self, y0):
        """``Phi(s,0) y0`` for ``y0`` in the stable space, kept on it by projection."""
        g = self.grid
        return kernels.projected_forward(g.phi_tab, g.phi_idx, self.Pp, self.pidx, None, self.Pp[0] @ y0, self.backend)


def truncation_length(dich: Dichotomy, f_sup, tol):
    """s-length beyond the output horizon that keeps the tail below ``tol``."""
    if f_sup <= 0:
        return 0.0
    L = (math.log(dich.C) + math.log(f_sup) - math.log(tol * dich.lambda0)) / dich.lambda0
    return max(L, 0.0)


@dataclass(frozen=True, eq=False)
class ODESolution:
    s: np.ndarray
    values: np.ndarray
    residual: float
    K: float
    s_trunc: float
    grid: SGrid


def _runs_s(grid):
    """Smooth-run labels for nodes in s-time (changes at every segment start)."""
    brk = np.zeros(grid.t.size, dtype=np.int64)
    # a node starts a new run if the interval leaving it differs in kind or piece from the one entering it
    if grid.N:
        kind = np.concatenate([grid.kind, [grid.kind[-1]]])
        ip = np.concatenate([grid.ipiece, [grid.ipiece[-1]]])
        occ = grid.piece
        change = np.zeros(grid.t.size, dtype=bool)
        change[1:] = (kind[1:] != kind[:-1]) | (ip[1:] != ip[:-1]) | (occ[1:] != occ[:-1]) | grid.scattered[:-1]
        brk = np.cumsum(change)
    return brk


def bounded_solution_ode(sys: LiftedSystem, dich: Dichotomy, f, tol=1e-9, horizon=None,
                         h_grid=H_GRID, gap_substeps=128, history="periodic", backend=None):
    """Bounded solution of ``x' = A(s) x + f(s)`` sampled on a grid in s-time.

    ``f`` is a callable ``s -> R^dim``.  ``horizon`` is in s-time (default:
    twenty periods, or 20).  The grid extends beyond the horizon by the
    truncation length for ``tol``.
    """
    r = sys.rescaling
    if horizon is None:
        horizon = 20 * sys.period if sys.periodic else 20.0
    t_out = float(r.inverse(horizon))
    probe = build_sgrid(sys, t_out, h_grid, gap_substeps)
    fv = np.array([np.atleast_1d(f(x)) for x in probe.s], dtype=float)
    f_sup = float(np.linalg.norm(fv, axis=1).max()) if fv.size else 0.0
    extra = truncation_length(dich, f_sup, tol)
    s_trunc = horizon + extra
    if dich.lambda0 * s_trunc > CAP:
        raise ToleranceUnreachable(f"truncation horizon {s_trunc:.4g} exceeds the cap {CAP}/lambda0")
    if not sys.periodic and s_trunc > r.s_break[-1]:
        warnings.warn("truncation horizon exceeds the truncated scale; tail not controlled", TruncatedTailWarning)
        s_trunc = float(r.s_break[-1])
    grid = build_sgrid(sys, float(r.inverse(s_trunc)), h_grid, gap_substeps)
    vals = np.array([np.atleast_1d(f(x)) for x in grid.s], dtype=float)
    eps = 1e-13 * np.maximum(1.0, grid.s[1:])
    right = np.array([np.atleast_1d(f(x)) for x in grid.s[1:] - eps], dtype=float)
    G = GreenOperator(dich, grid, history, backend)
    phi = G.apply(vals[:-1], right)
    keep = grid.s <= horizon * (1 + 1e-12)
    s = grid.s[keep]
    # residual at interior nodes of each smooth run
    run = _runs_s(grid)[keep]
    dphi = stencil_derivative(s, phi[keep], run)
    Avals = np.array([sys.A(x) for x in s])
    res = dphi - np.einsum("kij,kj->ki", Avals, phi[keep]) - vals[keep]
    res = np.linalg.norm(res, axis=1)
    interior = np.isfinite(res)
    interior[0] = False
    interior[-1] = False
    rmax = float(res[interior].max()) if interior.any() else 0.0
    return ODESolution(s, phi[keep], rmax, dich.K, s_trunc, grid)


@dataclass(frozen=True, eq=False)
class BoundedSolution:
    """Bounded solution on the scale with its working-grid data."""

    x: GridFunction
    s: np.ndarray
    residual: float
    residual_scattered: float
    K: float
    s_trunc: float
    imag_part: float
    working: np.ndarray  # node values on the full working grid
    grid: SGrid
    dichotomy: Dichotomy


def _ts_forcing(f, grid: SGrid, n):
    ts = grid.system.scale
    t = grid.t[grid.on_scale]
    if isinstance(f, GridFunction):
        if f.t.size == t.size and np.allclose(f.t, t, rtol=0, atol=1e-9):
            return f.values
        out = np.zeros((t.size, n))
        inside = t <= f.t[-1] + ts.atol
        out[inside] = np.array([f(x) for x in t[inside]])
        return out
    if callable(f):
        try:
            v = np.asarray(f(t), dtype=float)
            if v.shape[0] == t.size:
                return v.reshape(t.size, n)
        except (TypeError, ValueError, IndexError):
            pass
        return np.array([np.atleast_1d(f(x)) for x in t], dtype=float).reshape(t.size, n)
    c = np.atleast_1d(np.asarray(f, dtype=float))
    return np.tile(c, (t.size, 1))


def ts_residual(A: PiecewiseMatrix, x: GridFunction, f_vals):
    """``|x^Delta - A x - f|`` per sample (``nan`` where undefined)."""
    d = delta_derivative(x)
    Av = _coef_values(A, x.t)
    res = d - np.einsum("kij,kj->ki", Av, x.values) - f_vals
    return np.linalg.norm(res, axis=1)


def _coef_values(A: PiecewiseMatrix, t):
    ts = A.scale
    _, pc, _, _ = ts._locate(t)
    out = np.empty((t.size, A.n, A.n))
    for i, v in enumerate(A.values):
        sel = pc == i
        if not np.any(sel):
            continue
        if callable(v):
            out[sel] = np.array([np.atleast_2d(v(x)) for x in t[sel]])
        else:
            out[sel] = v
    return out


def bounded_solution_ts(A: PiecewiseMatrix, f, tol=1e-9, horizon=None, dich: Dichotomy = None,
                        sys: LiftedSystem = None, h_grid=H_GRID, history="periodic",
                        interpolation="linear", backend=None) -> BoundedSolution:
    """Bounded solution of ``x^Delta = A(t) x + f(t)`` on the scale.

    ``f`` may be a constant vector, a callable ``t -> R^n`` or a
    :class:`GridFunction`.  The forcing is lifted, Green's operator applied in
    s-time and the result restricted to the scale points up to ``horizon``
    (default: twenty periods).
    """
    if sys is None:
        sys = dich.system if dich is not None else lift_coefficient(A)
    if dich is None:
        dich = detect_dichotomy(sys)
    ts = A.scale
    r = sys.rescaling
    if horizon is None:
        if isinstance(f, GridFunction):
            horizon = float(f.t[-1])
        else:
            horizon = 20 * ts.period if ts.periodic else ts.end
    probe = build_sgrid(sys, horizon, h_grid)
    fv = _ts_forcing(f, probe, A.n)
    f_sup = float(np.linalg.norm(fv, axis=1).max()) if fv.size else 0.0
    extra = truncation_length(dich, f_sup * dich.forcing_gain, tol)
    s_out = float(r(horizon))
    s_trunc = s_out + extra
    if dich.lambda0 * s_trunc > CAP:
        raise ToleranceUnreachable(f"truncation horizon {s_trunc:.4g} exceeds the cap {CAP}/lambda0")
    if ts.periodic:
        t_work = float(r.inverse(s_trunc))
    else:
        t_work = ts.end
        if s_trunc > r.s_break[-1] + 1e-12 and extra > 0:
            warnings.warn("truncation horizon exceeds the truncated scale; tail not controlled", TruncatedTailWarning)
    grid = build_sgrid(sys, t_work, h_grid)
    vals = _ts_forcing(f, grid, A.n)
    left, right = lifted_forcing(grid, vals, interpolation)
    G = GreenOperator(dich, grid, history, backend)
    X = G.apply(left, right)
    on = grid.scale_index()
    keep = grid.t[on] <= horizon + ts.atol
    idx = on[keep]
    xs = X[idx, : A.n]
    imag = float(np.abs(X[idx, A.n:]).max()) if sys.doubled and idx.size else 0.0
    x = GridFunction(ts, grid.t[idx], xs, grid.piece[idx], "linear", h_grid)
    res = ts_residual(A, x, vals[keep])
    ok = np.isfinite(res)
    ok[-1] = False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncatedTailWarning)
        mu = ts.graininess(x.t)
    sc = ok & (mu > 0)
    return BoundedSolution(
        x, grid.s[idx], float(res[ok].max()) if ok.any() else 0.0,
        float(res[sc].max()) if sc.any() else 0.0, dich.K_ts, s_trunc, imag, X, grid, dich,
    )


# ---------------------------------------------------------------------------
# weighted estimates and diagnostics


@dataclass
class WeightedCheck:
    passed: bool
    measured: float
    bound: float
    lam: float


def weighted_norm_check(dich: Dichotomy, output, lam, C_f=1.0):
    """Compare ``sup |x(t)| e^{lam s(t)}`` with ``K_lambda * C_f``.

    ``output`` is a :class:`BoundedSolution` (time-scale operator) or an
    :class:`ODESolution`.
    """
    if isinstance(output, BoundedSolution):
        s, v = output.s, output.x.values
        bound = dich.K_weighted_ts(lam) * C_f
    else:
        s, v = output.s, output.values
        bound = dich.K_weighted(lam) * C_f
    m = float((np.linalg.norm(v, axis=1) * np.exp(lam * s)).max()) if s.size else 0.0
    return WeightedCheck(m <= bound * (1 + 1e-9), m, bound, lam)


def stable_decay_exponent(dich: Dichotomy, s_end=None, vectors=None):
    """Measured decay rates ``-log(|Phi(s,0)v| / |v|)/s`` along stable directions.

    Uses the ratio between ``s_end/2`` and ``s_end`` to suppress transients.
    """
    sys = dich.system
    if dich.rank == 0:
        return np.empty(0)
    if s_end is None:
        s_end = 30.0 / dich.lambda0
    if sys.periodic:
        s_end = max(2, round(s_end / sys.period / 2) * 2) * sys.period
    if vectors is None:
        U, sv, _ = np.linalg.svd(dich.Pplus0)
        vectors = U[:, : dich.rank].T
    half, _ = _forward(sys, 0.0, s_end / 2, dich.h_ode)
    full, _ = _forward(sys, s_end / 2, s_end, dich.h_ode)
    out = []
    for v in vectors:
        v = dich.Pplus0 @ v
        a = half @ v
        b = full @ a
        out.append(-math.log(np.linalg.norm(b) / np.linalg.norm(a)) / (s_end / 2))
    return np.array(out)


def psi_decay_check(dich: Dichotomy, A: PiecewiseMatrix, pairs=100, seed=0, span=None):
    """Check the stable/unstable decay bounds of ``Psi`` on random ``(t, t0, x0)``.

    Returns the largest observed ratio ``|Psi(t,t0)x0| / (C |x0| e^{-lam0 |s(t)-s(t0)|})``
    for ``x0`` projected onto the stable (forward) or unstable (backward) space.
    """
    sys = dich.system
    ts = A.scale
    r = sys.rescaling
    rng = np.random.default_rng(seed)
    span = span or (5 * ts.period if ts.periodic else ts.end)
    grid = ts.grid(span, 0.05)
    pts = grid.t
    n = A.n
    worst = 0.0
    for _ in range(pairs):
        i, j = sorted(rng.integers(0, pts.size, 2))
        t0, t = pts[i], pts[j]
        s0, s1 = r(t0), r(t)
        P0 = dich.projector(s0)[:n, :n]
        P1 = dich.projector(s1)[:n, :n]
        x0 = rng.uniform(-1, 1, n)
        xs = P0 @ x0
        if np.linalg.norm(xs) > 1e-12:
            y = fundamental_matrix_ts(A, t, t0, dich.h_ode) @ xs
            worst = max(worst, np.linalg.norm(y) / (dich.C * np.linalg.norm(xs) * math.exp(-dich.lambda0 * (s1 - s0))))
        xu = x0 - P1 @ x0
        if np.linalg.norm(xu) > 1e-12:
            try:
                y = fundamental_matrix_ts(A, t0, t, dich.h_ode) @ xu
            except NotRegressive:
                continue
            worst = max(worst, np.linalg.norm(y) / (dich.C * np.linalg.norm(xu) * math.exp(-dich.lambda0 * (s1 - s0))))
    return worst


@dataclass
class ProbeReport:
    syndetic: bool
    hyperbolic: bool
    status: str  # consistent | witness | precondition-failed
    trials: int
    max_ratio: float = float("nan")
    witness: Optional[dict] = None

    def to_dict(self):
        return {
            "syndetic": self.syndetic,
            "hyperbolic": self.hyperbolic,
            "status": self.status,
            "trials": self.trials,
            "max_ratio": self.max_ratio,
            "witness": self.witness,
        }


def _forward_orbit(grid, left, right, x0, backend=None):
    G0 = grid.g0_tab[grid.phi_idx]
    G1 = grid.g1_tab[grid.phi_idx]
    q = np.einsum("kij,kj->ki", G0, left) + np.einsum("kij,kj->ki", G1, right)
    return kernels.affine_forward(grid.phi_tab, grid.phi_idx, q, x0, backend)


def pliss_maizel_probe(A: PiecewiseMatrix, trials=20, seed=0, horizon=None, growth=10.0,
                       sys: LiftedSystem = None, h_grid=0.01):
    """Illustrate the converse solvability statement on sampled forcings.

    Hyperbolic lift: every random bounded forcing must give a bounded solution
    within ``K_ts |f|``.  Otherwise a forcing is sought whose forward orbits
    from every initial value of a small grid exceed ``growth``.
    """
    ts = A.scale
    syn = ts.is_syndetic().syndetic
    if sys is None:
        sys = lift_coefficient(A)
    rng = np.random.default_rng(seed)
    n = A.n
    if horizon is None:
        horizon = 100 * ts.period if ts.periodic else ts.end
    try:
        dich = detect_dichotomy(sys)
    except (NotHyperbolic, NonPeriodicUnsupported):
        dich = None
    if not syn:
        return ProbeReport(False, dich is not None, "precondition-failed", 0)
    grid = build_sgrid(sys, horizon, h_grid)
    tg = grid.t[grid.on_scale]
    occ = grid.piece[grid.on_scale]
    nocc = int(occ.max()) + 1 if occ.size else 0

    def random_forcing():
        table = rng.uniform(-1, 1, (nocc, n))
        return table[occ]

    if dich is not None:
        worst = 0.0
        for _ in range(trials):
            vals = random_forcing()
            gf = GridFunction(ts, tg, vals, occ, "constant", h_grid)
            sol = bounded_solution_ts(A, gf, 1e-8, horizon * 0.5 if ts.periodic else None, dich, sys,
                                      h_grid, history="zero", interpolation="constant")
            ratio = sol.x.sup_norm() / (dich.K_ts * max(np.linalg.norm(vals, axis=1).max(), 1e-300))
            worst = max(worst, ratio)
        status = "consistent" if worst <= 1.0 else "witness"
        return ProbeReport(True, True, status, trials, worst)
    candidates = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        candidates.append(("constant", np.tile(e, (tg.size, 1))))
    Ac = sys.constant_matrix
    if Ac is not None:
        ev, V = np.linalg.eig(Ac)
        for lam, v in zip(ev, V.T):
            if abs(lam.real) <= GAP_TOL and lam.imag > GAP_TOL:
                s = grid.s[grid.on_scale]
                fr = np.real(np.outer(np.exp(1j * lam.imag * s), v[:n] if not sys.doubled else v[:n] + 1j * v[n:]))
                candidates.append(("resonant", fr))
    for _ in range(trials):
        candidates.append(("random", random_forcing()))
    x0s = np.array(np.meshgrid(*[np.linspace(-1, 1, 3)] * n)).reshape(n, -1).T
    for label, vals in candidates:
        left, right = lifted_forcing(grid, vals, "linear" if label == "resonant" else "constant")
        grows = True
        for x0 in x0s:
            orbit = _forward_orbit(grid, left, right, embed(x0, sys.doubled))
            if np.linalg.norm(orbit[:, :n], axis=1).max() < growth:
                grows = False
                break
        if grows:
            return ProbeReport(True, False, "witness", len(candidates), witness={"kind": label, "growth": growth})
    return ProbeReport(True, False, "no-witness", len(candidates))


@dataclass
class StableDirectionReport:
    syndetic: bool
    classification: str  # unstable-hyperbolic | not-hyperbolic | mixed-rank | stable-directions
    consistent: bool
    rank: Optional[int]
    exponents: Optional[list] = None

    def to_dict(self):
        return {
            "syndetic": self.syndetic,
            "classification": self.classification,
            "consistent": self.consistent,
            "rank": self.rank,
            "exponents": self.exponents,
        }


def classify_stable_directions(sys: LiftedSystem, gap_tol=GAP_TOL):
    """Classify a lift with respect to stable directions on non-syndetic scales.

    On a non-syndetic scale a hyperbolic lift cannot have a stable direction,
    so the expected outcomes are ``unstable-hyperbolic`` (rank 0) or
    ``not-hyperbolic``.  Aperiodic lifts use finite-time exponents from the
    singular values of the transition over the whole view.
    """
    ts = sys.scale
    syn = ts.is_syndetic().syndetic
    rank, exps = None, None
    try:
        dich = detect_dichotomy(sys, gap_tol)
        rank = dich.rank
        cls = "unstable-hyperbolic" if rank == 0 else ("stable-directions" if rank == dich.dim else "mixed-rank")
    except NotHyperbolic:
        cls = "not-hyperbolic"
    except NonPeriodicUnsupported:
        S = float(sys.rescaling.s_break[-1])
        X, _ = _forward(sys, 0.0, S, H_ODE)
        sv = np.linalg.svd(X, compute_uv=False)
        exps = [float(math.log(x) / S) for x in sv]
        if min(abs(e) for e in exps) <= gap_tol:
            cls = "not-hyperbolic"
        elif all(e > 0 for e in exps):
            cls, rank = "unstable-hyperbolic", 0
        else:
            rank = sum(e < 0 for e in exps)
            cls = "stable-directions" if rank == len(exps) else "mixed-rank"
    consistent = syn or cls in ("unstable-hyperbolic", "not-hyperbolic")
    return StableDirectionReport(syn, cls, consistent, rank, exps)
