"""Time rescaling and the lift of a time-scale system to an ODE.

The rescaling ``s(t)`` has slope 1 on dense pieces and ``log(1+mu)/mu`` on a
gap of length ``mu``, so a gap maps to an ``s``-interval of length
``log(1+mu)``.  On that interval the lifted coefficient is the constant
``log(E + mu A(t0)) / log(1 + mu)``, which makes the ODE transition across the
gap equal to ``E + mu A(t0)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .errors import (
    BeyondHorizon,
    ComplexLiftWarning,
    DomainMismatch,
    NonPositiveGapMatrix,
    NotRegressive,
    SingularCoefficient,
    SingularLogFactor,
    TruncatedTailWarning,
)
from .matlog import COND_MAX, matrix_log
from .timescale import H_GRID, GridFunction, TimeScale

H_ODE = 1e-3


@dataclass(frozen=True, eq=False)
class PiecewiseMatrix:
    """Coefficient ``A(t)``: one matrix (or callable ``t -> matrix``) per pattern piece.

    For a periodic scale a callable must itself be ``P``-periodic; grids are
    tiled from the first period.
    """

    scale: TimeScale
    values: tuple

    def __post_init__(self):
        vals = []
        n = None
        for i, v in enumerate(self.values):
            if callable(v):
                m = np.atleast_2d(np.asarray(v(self.scale.intervals[i][0]), dtype=float))
                vals.append(v)
            else:
                m = np.atleast_2d(np.asarray(v, dtype=float))
                vals.append(m)
            if m.shape[0] != m.shape[1] or (n is not None and m.shape[0] != n):
                raise DomainMismatch(f"piece {i}: coefficient must be square of a common size")
            n = m.shape[0]
        if len(vals) != self.scale.npieces:
            raise DomainMismatch(
                f"{len(vals)} coefficient pieces for a scale with {self.scale.npieces} pieces"
            )
        object.__setattr__(self, "values", tuple(vals))
        object.__setattr__(self, "_n", n)

    @classmethod
    def constant(cls, scale, A):
        return cls(scale, tuple(np.atleast_2d(np.asarray(A, dtype=float)) for _ in scale.intervals))

    @property
    def n(self):
        return self._n

    def is_constant(self, piece):
        return not callable(self.values[piece])

    def piece_of(self, t):
        _, i, _, inside = self.scale._locate(np.array([t]))
        return int(i[0])

    def at(self, t, piece=None):
        i = self.piece_of(t) if piece is None else piece
        v = self.values[i]
        return np.atleast_2d(np.asarray(v(t), dtype=float)) if callable(v) else v

    def scattered_points(self):
        """``(t0, mu, piece)`` for each right-scattered point of the pattern."""
        gaps = self.scale.pattern_gaps()
        for i, (a, b) in enumerate(self.scale.intervals):
            mu = gaps[i]
            if mu > 0 and not math.isnan(mu):
                yield b, float(mu), i

    def shifted(self, t0, new_scale):
        """Coefficient of the scale shifted so that ``t0`` becomes 0."""
        vals = []
        for a, b in new_scale.intervals:
            told = a + t0 + 0.5 * (b - a)
            i = self.piece_of(told if self.scale.contains(told) else a + t0)
            v = self.values[i]
            vals.append((lambda t, v=v: v(t + t0)) if callable(v) else v)
        return PiecewiseMatrix(new_scale, tuple(vals))


@dataclass(frozen=True, eq=False)
class TimeRescaling:
    """Piecewise-linear ``s(t)`` on the pattern, extended by periodicity."""

    scale: TimeScale
    t_break: np.ndarray
    s_break: np.ndarray
    slopes: np.ndarray
    S_P: Optional[float]

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ts = self.scale
        if np.any(t < -ts.atol):
            raise ValueError("s(t) is defined for t >= 0")
        if ts.periodic:
            k = np.floor((t + ts.atol) / ts.period)
            r = np.clip(t - k * ts.period, 0.0, ts.period)
            out = k * self.S_P + np.interp(r, self.t_break, self.s_break)
        else:
            if np.any(t > self.t_break[-1] + ts.atol):
                raise BeyondHorizon(f"t={t.max()} is beyond the truncated scale")
            out = np.interp(t, self.t_break, self.s_break)
        return float(out[0]) if scalar else out

    def inverse(self, s):
        scalar = np.ndim(s) == 0
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < 0):
            raise ValueError("inverse rescaling needs s >= 0")
        ts = self.scale
        if ts.periodic:
            k = np.floor(s / self.S_P * (1 + 1e-15))
            r = np.clip(s - k * self.S_P, 0.0, self.S_P)
            out = k * ts.period + np.interp(r, self.s_break, self.t_break)
        else:
            if np.any(s > self.s_break[-1] * (1 + 1e-12) + 1e-15):
                raise BeyondHorizon(f"s={s.max()} is beyond the truncated scale")
            out = np.interp(s, self.s_break, self.t_break)
        return float(out[0]) if scalar else out


def gap_slope(mu):
    """``log(1 + mu) / mu`` with the limit 1 at ``mu = 0``."""
    return 1.0 if mu == 0 else math.log1p(mu) / mu


def rescale(ts: TimeScale) -> TimeRescaling:
    """Closed-form ``s(t)``: slope 1 on dense pieces, ``log(1+mu)/mu`` on gaps."""
    if not ts.periodic and ts.tail is None:
        warnings.warn("rescaling a truncated view", TruncatedTailWarning)
    tb, sb, slopes = [0.0], [0.0], []
    gaps = ts.pattern_gaps()
    for i, (a, b) in enumerate(ts.intervals):
        if b > a:
            tb.append(b)
            sb.append(sb[-1] + (b - a))
            slopes.append(1.0)
        mu = gaps[i]
        if mu > 0 and not math.isnan(mu):
            nxt = ts.intervals[i + 1][0] if i + 1 < ts.npieces else ts.period
            tb.append(nxt)
            sb.append(sb[-1] + math.log1p(mu))
            slopes.append(gap_slope(mu))
    S_P = sb[-1] if ts.periodic else None
    return TimeRescaling(ts, np.array(tb), np.array(sb), np.array(slopes), S_P)


def rescale_inverse(r: TimeRescaling, s):
    return r.inverse(s)


def realify(M):
    """Real ``2n x 2n`` representation ``[[Re, -Im], [Im, Re]]``."""
    M = np.asarray(M)
    re, im = M.real, (M.imag if np.iscomplexobj(M) else np.zeros_like(M, dtype=float))
    return np.block([[re, -im], [im, re]])


def embed(v, doubled):
    """Vector(s) in the working representation of a (possibly doubled) lift."""
    v = np.asarray(v)
    if not doubled:
        return np.real(v).astype(float)
    re = np.real(v)
    im = np.imag(v) if np.iscomplexobj(v) else np.zeros_like(re, dtype=float)
    return np.concatenate([re, im], axis=-1)


@dataclass(frozen=True)
class GapLift:
    t0: float
    mu: float
    ell: float  # log(1 + mu), the s-length of the gap image
    coefficient: np.ndarray  # A(t0)
    log: np.ndarray  # log(E + mu A(t0))
    real: bool
    lifted: np.ndarray  # log / ell
    forcing_factor: Optional[np.ndarray]  # (log / ell) @ inv(A(t0))


@dataclass(frozen=True, eq=False)
class LiftedSystem:
    """The ODE ``x' = A(s) x`` produced from a time-scale coefficient."""

    coefficient: PiecewiseMatrix
    rescaling: TimeRescaling
    gaps: dict  # pattern piece -> GapLift for the gap following it
    doubled: bool

    @property
    def scale(self):
        return self.coefficient.scale

    @property
    def n(self):
        return self.coefficient.n

    @property
    def dim(self):
        return 2 * self.n if self.doubled else self.n

    @property
    def real_lift(self):
        return all(g.real for g in self.gaps.values())

    @property
    def periodic(self):
        return self.scale.periodic

    @property
    def period(self):
        return self.rescaling.S_P

    def work(self, M):
        return realify(M) if self.doubled else np.real(np.asarray(M)).astype(float)

    def segments(self):
        """Pattern segments in ``s``-time: ``(kind, s0, s1, piece, matrix-or-callable)``."""
        r = self.rescaling
        out = []
        for i, (a, b) in enumerate(self.scale.intervals):
            sb = float(r(b))
            if b > a:
                out.append(("dense", float(r(a)), sb, i, self.coefficient.values[i]))
            if i in self.gaps:
                g = self.gaps[i]
                out.append(("gap", sb, sb + g.ell, i, g.lifted))
        return out

    @property
    def constant_matrix(self):
        """The common coefficient if ``A(s)`` is one constant matrix, else ``None``."""
        mats = []
        for kind, s0, s1, i, v in self.segments():
            if callable(v):
                return None
            mats.append(np.asarray(v))
        if not mats:
            return None
        M0 = mats[0]
        scale = max(1.0, np.abs(M0).max())
        if all(m.shape == M0.shape and np.allclose(m, M0, rtol=0, atol=1e-13 * scale) for m in mats):
            return self.work(M0)
        return None

    def A(self, s):
        """Working (real) coefficient matrix at ``s`` (right-continuous)."""
        r = self.rescaling
        segs = self.segments()
        u = s
        if self.periodic:
            u = s - math.floor(s / r.S_P * (1 + 1e-15)) * r.S_P
        seg = segs[-1]
        for cand in segs:
            if cand[1] <= u < cand[2]:
                seg = cand
                break
        v = seg[4]
        if callable(v) and seg[0] == "dense":
            return self.work(v(float(r.inverse(s))))
        return self.work(v)

    def sup_norm(self):
        out = 0.0
        for kind, s0, s1, i, v in self.segments():
            if callable(v):
                ts = np.linspace(*self.scale.intervals[i], 33)
                out = max(out, max(np.linalg.norm(v(t), 2) for t in ts))
            else:
                out = max(out, float(np.linalg.norm(v, 2)))
        return out


def lift_coefficient(A: PiecewiseMatrix, require_real=False, cond_max=COND_MAX) -> LiftedSystem:
    """Lift ``x^Delta = A(t) x`` to ``x' = A(s) x``.

    Dense pieces keep ``A``; each gap after ``t0`` gets ``log(E + mu A(t0)) / log(1+mu)``.
    A gap matrix that is not positive yields a complex coefficient; the lift
    is then doubled to a real ``2n`` system (or rejected if ``require_real``).
    """
    gaps = {}
    n = A.n
    E = np.eye(n)
    for t0, mu, i in A.scattered_points():
        Ai = A.at(t0, i)
        M = E + mu * Ai
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= np.finfo(float).eps * max(s[0], 1.0) * n:
            raise NotRegressive(f"E + mu*A is singular at t={t0}", t=t0)
        lg = matrix_log(M, cond_max=cond_max)
        if not lg.real:
            if require_real:
                raise NonPositiveGapMatrix(f"E + mu*A is not positive at t={t0}", t=t0)
            warnings.warn(f"gap matrix at t={t0} is not positive; using a complex lift", ComplexLiftWarning)
        ell = math.log1p(mu)
        lifted = lg.value / ell
        sa = np.linalg.svd(Ai, compute_uv=False)
        factor = None
        if sa[-1] > np.finfo(float).eps * max(sa[0], 1.0) * n * 10:
            factor = lifted @ np.linalg.inv(Ai)
        gaps[i] = GapLift(t0, mu, ell, Ai, lg.value, lg.real, lifted, factor)
    doubled = not all(g.real for g in gaps.values())
    return LiftedSystem(A, rescale(A.scale) if (A.scale.periodic or A.scale.tail) else _rescale_quiet(A.scale), gaps, doubled)


def _rescale_quiet(ts):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncatedTailWarning)
        return rescale(ts)


# ---------------------------------------------------------------------------
# exact one-interval propagators


def interval_propagators(A, h):
    """``(Phi, Phi^-1, G0, G1)`` for ``x' = A x + f`` on an interval of length ``h``.

    With ``f`` linear between endpoint values ``f0, f1`` the exact step is
    ``x(h) = Phi x(0) + G0 f0 + G1 f1``.
    """
    n = A.shape[0]
    Z = np.zeros((3 * n, 3 * n))
    Z[:n, :n] = A * h
    Z[:n, n:2 * n] = np.eye(n)
    Z[n:2 * n, 2 * n:] = np.eye(n)
    E = sla.expm(Z)
    Phi = E[:n, :n]
    phi1, phi2 = E[:n, n:2 * n], E[:n, 2 * n:]
    return Phi, sla.expm(-A * h), h * (phi1 - phi2), h * phi2


def rk4_propagators(Afun, t0, h, h_ode=H_ODE):
    """RK4 analogue of :func:`interval_propagators` for a variable coefficient.

    ``Afun(tau)`` is evaluated at ``t0 + tau``, ``0 <= tau <= h``.
    """
    n = Afun(t0).shape[0]
    m = max(1, math.ceil(h / h_ode - 1e-9))
    dt = h / m

    def rhs(tau, Y):
        Am = Afun(t0 + tau)
        w = tau / h
        d = np.empty_like(Y)
        d[:, :n] = Am @ Y[:, :n]
        d[:, n:2 * n] = Am @ Y[:, n:2 * n] + (1 - w) * np.eye(n)
        d[:, 2 * n:] = Am @ Y[:, 2 * n:] + w * np.eye(n)
        return d

    Y = np.zeros((n, 3 * n))
    Y[:, :n] = np.eye(n)
    tau = 0.0
    for _ in range(m):
        k1 = rhs(tau, Y)
        k2 = rhs(tau + dt / 2, Y + dt / 2 * k1)
        k3 = rhs(tau + dt / 2, Y + dt / 2 * k2)
        k4 = rhs(tau + dt, Y + dt * k3)
        Y = Y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tau += dt
    Phi = Y[:, :n]
    return Phi, np.linalg.inv(Phi), Y[:, n:2 * n], Y[:, 2 * n:]


# ---------------------------------------------------------------------------
# s-time discretization


@dataclass(frozen=True, eq=False)
class SGrid:
    """Nodes of a lifted system in ``s``-time with exact interval propagators.

    Nodes with ``on_scale`` are images of time-scale samples; optional extra
    nodes subdivide gap images.  Interval ``k`` joins nodes ``k`` and ``k+1``
    and uses tables entry ``phi_idx[k]``.  For periodic systems every period
    reuses the template, ``local`` indexes nodes within it.
    """

    system: LiftedSystem
    t: np.ndarray
    s: np.ndarray
    on_scale: np.ndarray
    scattered: np.ndarray
    piece: np.ndarray  # occurrence index of the node (t-piece)
    local: np.ndarray
    period: np.ndarray
    kind: np.ndarray  # per interval: 0 dense, 1 gap
    ipiece: np.ndarray  # per interval: pattern piece
    phi_idx: np.ndarray
    phi_tab: np.ndarray
    phiinv_tab: np.ndarray
    g0_tab: np.ndarray
    g1_tab: np.ndarray
    n_template: int
    h_grid: float
    gap_substeps: int

    @property
    def N(self):
        return self.phi_idx.size

    def scale_index(self):
        return np.nonzero(self.on_scale)[0]


def _template_nodes(sys, h, gap_substeps):
    ts = sys.scale
    r = sys.rescaling
    offs, pcs, sc = ts.template(h)
    soffs = r(offs) if offs.size else offs
    t_nodes, s_nodes, on, scat, piece = [], [], [], [], []
    for j in range(offs.size):
        t_nodes.append(offs[j]); s_nodes.append(soffs[j]); on.append(True); scat.append(bool(sc[j])); piece.append(int(pcs[j]))
        if sc[j] and gap_substeps > 1 and int(pcs[j]) in sys.gaps:
            g = sys.gaps[int(pcs[j])]
            for q in range(1, gap_substeps):
                sv = soffs[j] + g.ell * q / gap_substeps
                t_nodes.append(float(r.inverse(sv)) if ts.periodic else float(np.interp(sv, r.s_break, r.t_break)))
                s_nodes.append(sv); on.append(False); scat.append(False); piece.append(int(pcs[j]))
    return (np.array(t_nodes), np.array(s_nodes), np.array(on), np.array(scat), np.array(piece, dtype=np.int64))


def _build_tables(sys, t_loc, s_loc, on, scat, pc, next_s, h_ode):
    """Per-interval propagator tables for one template (deduplicated)."""
    m = t_loc.size
    cache = {}
    phi, phiinv, g0, g1 = [], [], [], []
    idx = np.empty(m if next_s is not None else m - 1, dtype=np.int64)
    kind = np.empty_like(idx)
    ipiece = np.empty_like(idx)
    in_gap = False
    for j in range(idx.size):
        s_right = s_loc[j + 1] if j + 1 < m else next_s
        h = s_right - s_loc[j]
        i = int(pc[j])
        gap = bool(scat[j]) or not on[j]
        kind[j] = 1 if gap else 0
        ipiece[j] = i
        if gap:
            key = ("g", i, round(h, 13))
            M = sys.work(sys.gaps[i].lifted)
        else:
            v = sys.coefficient.values[i]
            if callable(v):
                key = ("c", j)
                M = None
            else:
                key = ("d", i, round(h, 13))
                M = sys.work(v)
        if key not in cache:
            if M is None:
                Afun = lambda t, v=v: sys.work(v(t))
                props = rk4_propagators(Afun, t_loc[j], h, h_ode)
            else:
                props = interval_propagators(M, h)
            cache[key] = len(phi)
            for lst, val in zip((phi, phiinv, g0, g1), props):
                lst.append(val)
        idx[j] = cache[key]
    return idx, kind, ipiece, np.array(phi), np.array(phiinv), np.array(g0), np.array(g1)


@lru_cache(maxsize=32)
def _sgrid_cached(sys, t_end, h, gap_substeps, h_ode):
    ts = sys.scale
    t_loc, s_loc, on, scat, pc = _template_nodes(sys, h, gap_substeps)
    tol = ts.atol
    if ts.periodic:
        S_P = sys.period
        idx_loc, kind_loc, ip_loc, phi, phiinv, g0, g1 = _build_tables(
            sys, t_loc, s_loc, on, scat, pc, S_P, h_ode)
        nper = int(math.floor((t_end + tol) / ts.period)) + 1
        m = t_loc.size
        ks = np.repeat(np.arange(nper), m)
        t = np.tile(t_loc, nper) + ks * ts.period
        keep = t <= t_end + tol
        t = t[keep]
        s = (np.tile(s_loc, nper) + ks * S_P)[keep]
        local = np.tile(np.arange(m), nper)[keep]
        period = ks[keep]
        N = t.size - 1
        phi_idx = np.tile(idx_loc, nper)[:N]
        kind = np.tile(kind_loc, nper)[:N]
        ipiece = np.tile(ip_loc, nper)[:N]
        on_all = np.tile(on, nper)[keep]
        scat_all = np.tile(scat, nper)[keep]
        piece = (period * ts.npieces + np.tile(pc, nper)[keep])
    else:
        keep = t_loc <= t_end + tol
        t, s = t_loc[keep], s_loc[keep]
        on_all, scat_all = on[keep], scat[keep]
        if t.size and scat_all[-1]:
            scat_all = scat_all.copy()
            scat_all[-1] = False
        idx_loc, kind, ipiece, phi, phiinv, g0, g1 = _build_tables(
            sys, t, s, on_all, scat_all, pc[keep], None, h_ode)
        phi_idx = idx_loc
        local = np.arange(t.size)
        period = np.zeros(t.size, dtype=np.int64)
        piece = pc[keep].astype(np.int64)
        m = t.size
    return SGrid(sys, t, s, on_all, scat_all, piece, local, period, kind, ipiece, phi_idx,
                 phi, phiinv, g0, g1, m, h, gap_substeps)


def build_sgrid(sys: LiftedSystem, t_end, h_grid=H_GRID, gap_substeps=1, h_ode=H_ODE) -> SGrid:
    """Discretize ``sys`` on ``[0, t_end]`` (time-scale units)."""
    return _sgrid_cached(sys, float(t_end), float(h_grid), int(gap_substeps), float(h_ode))


# ---------------------------------------------------------------------------
# right-hand sides


@dataclass(frozen=True, eq=False)
class SGridFunction:
    """A forcing (or solution) in ``s``-time on an :class:`SGrid`.

    ``left``/``right`` are the interval endpoint values used by the exact
    integrator (linear in between); ``values`` are node values.
    """

    grid: SGrid
    values: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def sup_norm(self):
        vals = [np.abs(self.values).max() if self.values.size else 0.0]
        if self.left.size:
            vals += [np.linalg.norm(self.left, axis=1).max(), np.linalg.norm(self.right, axis=1).max()]
        return float(max(np.linalg.norm(self.values, axis=1).max(), *vals[1:])) if self.values.size else 0.0


def _resample(f: GridFunction, grid: SGrid):
    t = grid.t[grid.on_scale]
    if f.t.size == t.size and np.allclose(f.t, t, rtol=0, atol=1e-9):
        return f.values
    return np.array([f(x) for x in t])


def lifted_forcing(grid: SGrid, vals_ts, interpolation="linear"):
    """Interval endpoint values of the lifted forcing from scale samples."""
    sys = grid.system
    doubled = sys.doubled
    on_idx = grid.scale_index()
    dim = sys.dim
    N = grid.N
    values = np.zeros((grid.t.size, dim))
    values[on_idx] = embed(vals_ts, doubled)
    # forward-fill for gap sub-nodes (they carry the opener's value)
    owner = np.maximum.accumulate(np.where(grid.on_scale, np.arange(grid.t.size), 0))
    left = values[:-1].copy()
    right = values[1:].copy()
    dense = grid.kind == 0
    jump = dense & (grid.piece[1:] != grid.piece[:-1])
    if interpolation == "constant":
        right[dense] = left[dense]
    elif np.any(jump):
        k = np.nonzero(jump)[0]
        prev_ok = (k >= 1) & (grid.piece[np.maximum(k - 1, 0)] == grid.piece[k]) & grid.on_scale[np.maximum(k - 1, 0)]
        km = np.maximum(k - 1, 0)
        w = np.where(prev_ok, (grid.t[k + 1] - grid.t[k]) / np.where(prev_ok, grid.t[k] - grid.t[km], 1.0), 0.0)
        right[k] = values[k] + w[:, None] * (values[k] - values[km])
    gap = np.nonzero(grid.kind == 1)[0]
    if gap.size:
        op = owner[gap]
        vts = np.searchsorted(on_idx, op)
        for i in np.unique(grid.ipiece[gap]):
            gl = sys.gaps[int(i)]
            sel = grid.ipiece[gap] == i
            if gl.forcing_factor is None:
                raise SingularCoefficient(f"A(t0) is singular at the scattered point t0={gl.t0}")
            f0 = vals_ts[vts[sel]] @ gl.forcing_factor.T
            e = embed(f0, doubled)
            left[gap[sel]] = e
            right[gap[sel]] = e
    return left, right


def lift_rhs(f: GridFunction, A: PiecewiseMatrix = None, sys: LiftedSystem = None, grid: SGrid = None):
    """Transform a time-scale forcing into the lifted ODE forcing.

    On time-scale points the lifted forcing equals ``f``; on each gap image it
    is the constant ``f0 = (log(E + mu A)/log(1+mu)) A^{-1} f(t0)``.
    """
    if sys is None:
        sys = lift_coefficient(A)
    if grid is None:
        h = f.h_grid or _infer_h(f)
        grid = build_sgrid(sys, f.t[-1], h)
    vals_ts = _resample(f, grid)
    left, right = lifted_forcing(grid, vals_ts, f.interpolation)
    values = np.zeros((grid.t.size, sys.dim))
    values[grid.on_scale] = embed(vals_ts, sys.doubled)
    return SGridFunction(grid, values, left, right)


def _infer_h(f):
    same = f.piece[1:] == f.piece[:-1]
    d = np.diff(f.t)[same]
    return float(d.max()) if d.size else H_GRID


def project_rhs(f0, t0, A: PiecewiseMatrix):
    """Recover ``f(t0) = log(1+mu) (log[E + mu A(t0)])^{-1} A(t0) f0`` at a scattered ``t0``."""
    ts = A.scale
    mu = ts.graininess(t0)
    if mu <= 0:
        raise ValueError(f"t0={t0} is right-dense; the transform is defined on gaps only")
    At = A.at(t0)
    L = matrix_log(np.eye(A.n) + mu * At).value
    s = np.linalg.svd(L, compute_uv=False)
    if s[-1] <= 1e-14 * max(s[0], 1.0):
        raise SingularLogFactor(f"log(E + mu A) is singular at t0={t0}")
    out = math.log1p(mu) * np.linalg.solve(L, At @ np.asarray(f0))
    if np.iscomplexobj(out) and np.allclose(out.imag, 0, atol=1e-12 * max(1.0, np.abs(out).max())):
        out = out.real
    return out


# ---------------------------------------------------------------------------
# fundamental matrices by direct time-scale stepping


def ts_checkpoints(ts: TimeScale, t_end, interior=2):
    """Scale points used for identity checks: piece ends plus interior points."""
    pts = []
    for seg in ts.segments(t_end):
        if seg.kind == "dense":
            if seg.end > seg.start:
                pts.extend(np.linspace(seg.start, seg.end, interior + 2))
            else:
                pts.append(seg.start)
        else:
            pts.extend([seg.start, seg.end])
    return np.unique(np.round(np.array(pts), 12))


def ts_transition(A: PiecewiseMatrix, t_points, h_ode=H_ODE):
    """``Psi(t, 0)`` at increasing scale points by stepping along the scale.

    Dense pieces use ``expm`` (constant) or RK4 (callable); a right-scattered
    ``t1`` contributes the factor ``E + mu(t1) A(t1)``.
    """
    ts = A.scale
    t_points = np.asarray(t_points, dtype=float)
    t_end = float(t_points.max())
    n = A.n
    X = np.eye(n)
    out = np.empty((t_points.size, n, n))
    j = 0
    order = np.argsort(t_points)
    tp = t_points[order]
    while j < tp.size and tp[j] <= 1e-15:
        out[order[j]] = X
        j += 1
    for seg in ts.segments(t_end + ts.atol):
        if seg.kind == "dense":
            v = A.values[seg.piece]
            cur = seg.start
            while j < tp.size and tp[j] <= seg.end + ts.atol:
                dt = tp[j] - cur
                if dt > 0:
                    X = _dense_step(v, cur, dt, h_ode) @ X
                    cur = tp[j]
                out[order[j]] = X
                j += 1
            if seg.end > cur:
                X = _dense_step(v, cur, seg.end - cur, h_ode) @ X
        else:
            X = (np.eye(n) + (seg.end - seg.start) * A.at(seg.start, seg.piece)) @ X
            while j < tp.size and tp[j] <= seg.end + ts.atol:
                out[order[j]] = X
                j += 1
        if j >= tp.size:
            break
    return out


def _dense_step(v, t0, dt, h_ode):
    if not callable(v):
        return sla.expm(np.asarray(v) * dt)
    Phi, _, _, _ = rk4_propagators(lambda t: np.atleast_2d(v(t)), t0, dt, h_ode)
    return Phi


@dataclass
class IdentityDefect:
    max_abs: float
    max_rel: float
    points: int
    max_norm: float = 1.0


def lifted_transition_ivp(sys: LiftedSystem, s_points, rtol=1e-12, atol=1e-14):
    """``Phi_A(s, 0)`` by adaptive ODE integration of the lift, restarted at breakpoints."""
    s_points = np.asarray(s_points, dtype=float)
    order = np.argsort(s_points)
    sp = s_points[order]
    dim = sys.dim
    out = np.empty((sp.size, dim, dim))
    segs = sys.segments()
    S_P = sys.period
    X = np.eye(dim)
    j = 0
    while j < sp.size and sp[j] <= 0:
        out[order[j]] = X
        j += 1
    k = 0
    s_end = sp[-1] if sp.size else 0.0
    while j < sp.size:
        base = k * S_P if sys.periodic else 0.0
        for kind, s0, s1, i, v in segs:
            a, b = base + s0, base + s1
            if b <= a:
                continue
            if callable(v) and kind == "dense":
                r = sys.rescaling
                func = lambda s, y: (sys.work(v(float(r.inverse(s)))) @ y.reshape(dim, dim)).ravel()
            else:
                M = sys.work(v)
                func = lambda s, y, M=M: (M @ y.reshape(dim, dim)).ravel()
            evals = sp[(sp > a) & (sp <= b)]
            sol = solve_ivp(func, (a, b), X.ravel(), method="DOP853", rtol=rtol, atol=atol,
                            t_eval=np.concatenate([evals, [b]]) if evals.size == 0 or evals[-1] < b else evals)
            Ys = sol.y.T.reshape(-1, dim, dim)
            for q, sv in enumerate(sol.t):
                while j < sp.size and abs(sp[j] - sv) <= 1e-13 * max(1.0, sv):
                    out[order[j]] = Ys[q]
                    j += 1
            X = Ys[-1]
            if j >= sp.size:
                break
        if not sys.periodic:
            break
        k += 1
    return out


def check_fundamental_identity(sys: LiftedSystem, horizon, interior=2, h_ode=H_ODE):
    """Max defect of ``Phi_A(s(t), 0) = Psi_A(t, 0)`` over scale checkpoints up to ``horizon``.

    ``Psi`` comes from time-scale stepping, ``Phi`` from adaptive integration
    of the lifted ODE.  The relative defect divides by ``max(1, |Psi|)``.
    """
    ts = sys.scale
    pts = ts_checkpoints(ts, horizon, interior)
    Psi = ts_transition(sys.coefficient, pts, h_ode)
    Phi = lifted_transition_ivp(sys, sys.rescaling(pts))
    n = sys.n
    if sys.doubled:
        Phi_n = Phi[:, :n, :n]
        off = np.abs(Phi[:, n:, :n]).max(axis=(1, 2))
    else:
        Phi_n = Phi
        off = np.zeros(pts.size)
    d = np.linalg.norm(Phi_n - Psi, axis=(1, 2), ord=2) + off
    nrm = np.maximum(1.0, np.linalg.norm(Psi, axis=(1, 2), ord=2))
    return IdentityDefect(float(d.max()), float((d / nrm).max()), int(pts.size), float(nrm.max()))
