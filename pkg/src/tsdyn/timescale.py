"""Finite representations of time scales and sampled functions on them.

A :class:`TimeScale` is a finite pattern of closed intervals (isolated points
are degenerate intervals) that optionally repeats with a period ``P``.  The
forward jump, graininess and the floor ``[t]_T`` are computed from the
pattern, so they are exact up to one rounding of ``k*P``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import (
    InsufficientSamples,
    PointNotInScale,
    ScaleValidationError,
    TruncatedTailWarning,
    UnboundedRequired,
)

H_GRID = 1e-3
TAILS = (None, "syndetic", "non-syndetic")


class SyndeticReport(NamedTuple):
    syndetic: bool
    sup_gap: float


class Segment(NamedTuple):
    kind: str  # "dense" or "gap"
    start: float
    end: float
    piece: int  # pattern piece index (for a gap: the piece it follows)
    occurrence: int  # period * npieces + piece
    period: int


class ScaleGrid(NamedTuple):
    """Sample nodes on a scale, tiled from a one-period template."""

    t: np.ndarray
    piece: np.ndarray  # occurrence index of each node
    local: np.ndarray  # index into the one-period template
    period: np.ndarray
    scattered: np.ndarray  # node is right-scattered


@dataclass(frozen=True, eq=False)
class TimeScale:
    """Union of closed intervals ``[a_i, b_i]``, repeated every ``period``.

    ``tail`` lets an aperiodic (truncated) view declare how the scale would
    continue: ``"syndetic"`` or ``"non-syndetic"``.  Without a declaration
    the truncated view is rejected by queries that need unboundedness.
    """

    intervals: tuple
    period: Optional[float] = None
    tail: Optional[str] = None
    _a: np.ndarray = field(init=False, repr=False)
    _b: np.ndarray = field(init=False, repr=False)
    _next: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        iv = tuple((float(a), float(b)) for a, b in self.intervals)
        object.__setattr__(self, "intervals", iv)
        if not iv:
            raise ScaleValidationError("a time scale needs at least one interval")
        for i, (a, b) in enumerate(iv):
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ScaleValidationError(f"interval {i}: endpoints must be finite", index=i)
            if a > b:
                raise ScaleValidationError(f"interval {i}: a > b ({a} > {b})", index=i)
            if i > 0 and not iv[i - 1][1] < a:
                raise ScaleValidationError(
                    f"interval {i}: must start after interval {i - 1} ends", index=i
                )
        if iv[0][0] != 0.0:
            raise ScaleValidationError("interval 0: the scale must contain 0 (a_1 = 0)", index=0)
        if self.period is not None:
            p = float(self.period)
            object.__setattr__(self, "period", p)
            if not p > 0:
                raise ScaleValidationError("period must be positive")
            if p < iv[-1][1]:
                raise ScaleValidationError(
                    f"interval {len(iv) - 1}: extends past the period {p}", index=len(iv) - 1
                )
        if self.tail not in TAILS:
            raise ScaleValidationError(f"tail must be one of {TAILS}")
        a = np.array([x[0] for x in iv])
        b = np.array([x[1] for x in iv])
        nxt = np.empty(len(iv))
        nxt[:-1] = a[1:]
        nxt[-1] = self.period if self.period is not None else np.nan
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_b", b)
        object.__setattr__(self, "_next", nxt)

    # -- constructors -------------------------------------------------------
    @classmethod
    def reals(cls):
        return cls(((0.0, 1.0),), period=1.0)

    @classmethod
    def integers(cls, h=1.0):
        return cls(((0.0, 0.0),), period=h)

    @classmethod
    def pulse(cls, a=1.0, b=1.0):
        """``P_{a,b}``: intervals of length ``a`` separated by gaps ``b``."""
        return cls(((0.0, a),), period=a + b)

    @classmethod
    def from_dict(cls, data):
        if "intervals" not in data:
            raise ScaleValidationError("missing field 'intervals'")
        return cls(tuple(tuple(x) for x in data["intervals"]), data.get("period"), data.get("tail"))

    def to_dict(self):
        d = {"intervals": [list(x) for x in self.intervals]}
        if self.period is not None:
            d["period"] = self.period
        if self.tail is not None:
            d["tail"] = self.tail
        return d

    # -- structure ------------------------------------------------------------
    @property
    def npieces(self):
        return len(self.intervals)

    @property
    def periodic(self):
        return self.period is not None

    @property
    def merged(self):
        """Copies of the pattern touch at ``k*P`` (e.g. the reals)."""
        return self.periodic and self._b[-1] == self.period

    @property
    def end(self):
        """Right end of a truncated view (``inf`` for periodic scales)."""
        return math.inf if self.periodic else float(self._b[-1])

    @property
    def atol(self):
        span = self.period if self.periodic else max(1.0, self._b[-1])
        return 1e-12 * max(1.0, span)

    def pattern_gaps(self):
        """Graininess at the right end of each pattern piece (``nan`` = none)."""
        gaps = self._next - self._b
        if self.merged:
            gaps[-1] = 0.0
        return gaps

    def _locate(self, t):
        """Return ``(k, i, r, inside)`` arrays for nonnegative ``t``."""
        t = np.asarray(t, dtype=float)
        tol = self.atol
        if self.periodic:
            k = np.floor((t + tol) / self.period)
            r = t - k * self.period
            r = np.where(r < 0, 0.0, r)
        else:
            k = np.zeros_like(t)
            r = t
        i = np.searchsorted(self._a, r + tol, side="right") - 1
        i = np.clip(i, 0, self.npieces - 1)
        inside = (r >= self._a[i] - tol) & (r <= self._b[i] + tol)
        return k.astype(np.int64), i, r, inside

    def contains(self, t):
        t = np.asarray(t, dtype=float)
        k, i, r, inside = self._locate(np.maximum(t, 0.0))
        return inside & (t >= -self.atol)

    def _check_points(self, t):
        t = np.asarray(t, dtype=float)
        ok = self.contains(t)
        if not np.all(ok):
            bad = np.atleast_1d(t)[~np.atleast_1d(ok)][0]
            raise PointNotInScale(f"t={bad!r} is not a point of the time scale", t=float(bad))

    # -- jump operators ---------------------------------------------------------
    def sigma(self, t):
        """Forward jump ``sigma(t) = inf{tau in T: tau > t}``.

        At the right end of a truncated view the point itself is returned and
        a :class:`TruncatedTailWarning` is issued.
        """
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_points(t)
        k, i, r, _ = self._locate(t)
        tol = self.atol
        out = t.copy()
        at_end = r >= self._b[i] - tol
        P = self.period if self.periodic else 0.0
        gaps = self.pattern_gaps()
        jump = at_end & (np.nan_to_num(gaps[i], nan=0.0) > 0)
        last = i == self.npieces - 1
        wrap = jump & last
        inner = jump & ~last
        out[inner] = k[inner] * P + self._a[i[inner] + 1]
        out[wrap] = (k[wrap] + 1) * P
        tail = at_end & last & ~self.periodic
        if np.any(tail):
            warnings.warn("sigma evaluated at the end of a truncated time scale", TruncatedTailWarning)
        return float(out[0]) if scalar else out

    def graininess(self, t):
        """``mu(t) = sigma(t) - t``; zero at right-dense points."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncatedTailWarning)
            s = self.sigma(t)
        k, i, r, _ = self._locate(t)
        mu = np.where(s > t, np.nan_to_num(self.pattern_gaps()[i], nan=0.0), 0.0)
        return float(mu[0]) if scalar else mu

    def floor(self, t):
        """``[t]_T = max{tau in T: tau <= t}``."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < -self.atol):
            raise ValueError("floor_ts needs t >= 0")
        t = np.maximum(t, 0.0)
        k, i, r, inside = self._locate(t)
        P = self.period if self.periodic else 0.0
        out = np.where(inside, t, k * P + self._b[i])
        return float(out[0]) if scalar else out

    def is_syndetic(self):
        gaps = np.nan_to_num(self.pattern_gaps(), nan=0.0)
        sup_gap = float(gaps.max()) if gaps.size else 0.0
        if self.periodic:
            return SyndeticReport(True, sup_gap)
        if self.tail is None:
            raise UnboundedRequired(
                "a truncated view must declare its tail ('syndetic' or 'non-syndetic')"
            )
        return SyndeticReport(self.tail == "syndetic", sup_gap)

    # -- traversal -------------------------------------------------------------
    def segments(self, t_end):
        """Dense pieces and gaps covering ``[0, t_end]`` in order.

        Gaps are included only when their right end does not exceed ``t_end``;
        dense pieces are clipped at ``t_end``.
        """
        tol = self.atol
        gaps = self.pattern_gaps()
        P = self.period if self.periodic else 0.0
        k = 0
        while True:
            for i, (a, b) in enumerate(self.intervals):
                start = k * P + a
                if start > t_end + tol:
                    return
                occ = k * self.npieces + i
                end = min(k * P + b, t_end)
                yield Segment("dense", start, end, i, occ, k)
                mu = gaps[i]
                if mu > 0 and not math.isnan(mu):
                    gend = (k * P + self._a[i + 1]) if i + 1 < self.npieces else (k + 1) * P
                    if gend <= t_end + tol:
                        yield Segment("gap", k * P + b, gend, i, occ, k)
            if not self.periodic:
                return
            k += 1

    def template(self, h=H_GRID):
        """One period of sample offsets: ``(offsets, piece, scattered)``."""
        offs, pcs, sc = [], [], []
        gaps = self.pattern_gaps()
        for i, (a, b) in enumerate(self.intervals):
            if b > a:
                m = max(1, math.ceil((b - a) / h - 1e-9))
                pts = a + (b - a) * np.arange(m + 1) / m
                pts[-1] = b
            else:
                pts = np.array([a])
            if self.merged and i == self.npieces - 1:
                pts = pts[:-1]
            offs.append(pts)
            pcs.append(np.full(pts.size, i))
            flag = np.zeros(pts.size, dtype=bool)
            mu = gaps[i]
            if pts.size and mu > 0 and not math.isnan(mu) and pts[-1] == b:
                flag[-1] = True
            sc.append(flag)
        return np.concatenate(offs), np.concatenate(pcs), np.concatenate(sc)

    def grid(self, t_end, h=H_GRID):
        """Sample nodes up to ``t_end`` (dense spacing at most ``h``).

        The grid is periodic: every period reuses the same template, and the
        last node is the last template node not beyond ``t_end``.
        """
        offs, pcs, sc = self.template(h)
        tol = self.atol
        if not self.periodic:
            keep = offs <= t_end + tol
            idx = np.nonzero(keep)[0]
            return ScaleGrid(offs[keep], pcs[keep], idx, np.zeros(idx.size, dtype=np.int64), sc[keep])
        nper = int(math.floor((t_end + tol) / self.period)) + 1
        ks = np.repeat(np.arange(nper), offs.size)
        t = np.tile(offs, nper) + ks * self.period
        keep = t <= t_end + tol
        local = np.tile(np.arange(offs.size), nper)[keep]
        ks = ks[keep]
        return ScaleGrid(t[keep], (ks * self.npieces + np.tile(pcs, nper)[keep]), local, ks, np.tile(sc, nper)[keep])

    def shifted(self, t0):
        """The scale ``{t - t0 : t in T, t >= t0}`` for ``t0`` in ``T``."""
        self._check_points(t0)
        if t0 == 0:
            return self
        k, i, r, _ = self._locate(np.array([t0]))
        i, r = int(i[0]), float(r[0])
        pieces = [(a - r, b - r) for a, b in self.intervals[i:] if b >= r]
        pieces[0] = (0.0, pieces[0][1])
        if not self.periodic:
            return TimeScale(tuple(pieces), None, self.tail)
        P = self.period
        pieces += [(a + P - r, b + P - r) for a, b in self.intervals[:i]]
        if r > self._a[i]:
            pieces.append((self._a[i] + P - r, P))
        merged = []
        for a, b in pieces:
            if merged and a <= merged[-1][1] + self.atol:
                merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
            else:
                merged.append((a, b))
        return TimeScale(tuple(merged), P, None)


def sigma(ts, t):
    return ts.sigma(t)


def graininess(ts, t):
    return ts.graininess(t)


def floor_ts(ts, t):
    return ts.floor(t)


def is_syndetic(ts):
    return ts.is_syndetic()


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples ``(t_k, values_k)`` of a vector function on a time scale.

    ``piece`` holds the occurrence index of each sample; interpolation never
    crosses from one occurrence to the next.
    """

    scale: TimeScale
    t: np.ndarray
    values: np.ndarray
    piece: np.ndarray
    interpolation: str = "linear"
    h_grid: Optional[float] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values)
        if v.ndim == 1:
            v = v[:, None]
        piece = np.asarray(self.piece, dtype=np.int64)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "piece", piece)
        if t.ndim != 1 or v.shape[0] != t.size or piece.shape != t.shape:
            raise ValueError("t, values and piece must have matching lengths")
        if self.interpolation not in ("linear", "constant"):
            raise ValueError("interpolation must be 'linear' or 'constant'")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        self.scale._check_points(t)
        if self.h_grid is not None and t.size > 1:
            same = piece[1:] == piece[:-1]
            if np.any(np.diff(t)[same] > self.h_grid * (1 + 1e-9)):
                raise ValueError("sample spacing exceeds h_grid inside a piece")

    @classmethod
    def from_function(cls, scale, func, t_end, h_grid=H_GRID, interpolation="linear"):
        g = scale.grid(t_end, h_grid)
        return cls.on_grid(scale, g, func, interpolation, h_grid)

    @classmethod
    def on_grid(cls, scale, grid, func, interpolation="linear", h_grid=None):
        try:
            vals = np.asarray(func(grid.t), dtype=float)
            if vals.shape[0] != grid.t.size:
                raise ValueError
        except (TypeError, ValueError, IndexError):
            vals = np.array([np.atleast_1d(func(x)) for x in grid.t], dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        return cls(scale, grid.t, vals, grid.piece, interpolation, h_grid)

    def with_values(self, values):
        return GridFunction(self.scale, self.t, values, self.piece, self.interpolation, self.h_grid)

    @property
    def n(self):
        return self.values.shape[1]

    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=1))) if self.t.size else 0.0

    def index_of(self, t):
        j = int(np.searchsorted(self.t, t - 1e-12 * max(1.0, abs(t))))
        if j < self.t.size and abs(self.t[j] - t) <= 1e-9 * max(1.0, abs(t)):
            return j
        return None

    def __call__(self, t):
        """Evaluate at a scale point, interpolating inside its piece."""
        self.scale._check_points(t)
        j = self.index_of(t)
        if j is not None:
            return self.values[j].copy()
        j = int(np.searchsorted(self.t, t)) - 1
        if j < 0 or j + 1 >= self.t.size or self.piece[j] != self.piece[j + 1]:
            raise InsufficientSamples(f"no samples bracket t={t} inside one piece")
        if self.interpolation == "constant":
            return self.values[j].copy()
        w = (t - self.t[j]) / (self.t[j + 1] - self.t[j])
        return (1 - w) * self.values[j] + w * self.values[j + 1]


def _lagrange_slope(x0, x1, x2, y0, y1, y2):
    """Derivative at ``x0`` of the parabola through three nodes."""
    d01, d02, d12 = x0 - x1, x0 - x2, x1 - x2
    w0 = (d01 + d02) / (d01 * d02)
    w1 = -d02 / (d01 * d12)
    w2 = d01 / (d02 * d12)
    return w0[:, None] * y0 + w1[:, None] * y1 + w2[:, None] * y2


def stencil_derivative(x, y, run):
    """One-sided Richardson-extrapolated derivative at every node.

    Nodes sharing a ``run`` label form one smooth piece; stencils never leave
    their run.  Uses up to two extrapolation levels (9 nodes); runs with fewer
    than 3 nodes give ``nan``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    N = x.size
    out = np.full(y.shape, np.nan)
    if N == 0:
        return out
    brk = np.nonzero(np.diff(run))[0] + 1
    starts = np.concatenate(([0], brk))
    ends = np.concatenate((brk, [N]))
    lo = np.repeat(starts, ends - starts)
    hi = np.repeat(ends, ends - starts)
    idx = np.arange(N)
    fwd = hi - 1 - idx
    bwd = idx - lo

    def level(cnt):
        return np.where(cnt >= 8, 2, np.where(cnt >= 4, 1, np.where(cnt >= 2, 0, -1)))

    lf, lb = level(fwd), level(bwd)
    use_fwd = lf >= lb
    d = np.where(use_fwd, 1, -1)
    lev = np.maximum(lf, lb)
    for L in (0, 1, 2):
        sel = np.nonzero(lev == L)[0]
        if sel.size == 0:
            continue
        dd = d[sel]

        def slope(step):
            i1, i2 = sel + dd * step, sel + 2 * dd * step
            return _lagrange_slope(x[sel], x[i1], x[i2], y[sel], y[i1], y[i2])

        Da = slope(1)
        if L == 0:
            out[sel] = Da
            continue
        Db = slope(2)
        E1 = (4 * Da - Db) / 3
        if L == 1:
            out[sel] = E1
            continue
        Dc = slope(4)
        E2 = (4 * Db - Dc) / 3
        out[sel] = (8 * E1 - E2) / 7
    return out


def delta_derivative(f: GridFunction, t=None):
    """Delta derivative of sampled ``f`` at ``t`` (or at every sample).

    Right-scattered points use ``(f(sigma(t)) - f(t)) / mu(t)`` exactly; dense
    points use a one-sided difference quotient with Richardson extrapolation.
    Samples where no rule applies are ``nan`` in the all-samples form.
    """
    ts = f.scale
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncatedTailWarning)
        mu = ts.graininess(f.t)
        sig = ts.sigma(f.t)
    out = stencil_derivative(f.t, f.values, f.piece)
    sc = np.nonzero(mu > 0)[0]
    nxt = np.minimum(sc + 1, f.t.size - 1)
    ok = (sc + 1 < f.t.size) & np.isclose(f.t[nxt], sig[sc], rtol=1e-12, atol=ts.atol)
    out[sc] = np.nan
    good = sc[ok]
    out[good] = (f.values[good + 1] - f.values[good]) / mu[good][:, None]
    if t is None:
        return out
    ts._check_points(t)
    j = f.index_of(t)
    if j is None:
        raise InsufficientSamples(f"t={t} is not a sample point")
    if not ts.periodic and t >= ts.end - ts.atol:
        raise InsufficientSamples("no derivative at the end of a truncated scale")
    if np.any(np.isnan(out[j])):
        if mu[j] > 0:
            raise InsufficientSamples(f"sigma({t}) is not sampled")
        raise InsufficientSamples("fewer than 3 samples in the piece")
    return out[j]


def delta_antiderivative(f: GridFunction):
    """Cumulative Delta integral ``F(t_k) = int_0^{t_k} f Delta t`` at the samples.

    Dense runs use cumulative Simpson (or left sums for piecewise-constant
    data); each right-scattered sample contributes ``mu(t) f(t)``.
    """
    ts = f.scale
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncatedTailWarning)
        mu = ts.graininess(f.t)
    N = f.t.size
    inc = np.zeros((max(N - 1, 0), f.n))
    if N < 2:
        return np.zeros((N, f.n))
    gap = mu[:-1] > 0
    inc[gap] = mu[:-1][gap, None] * f.values[:-1][gap]
    dense = ~gap
    # dense intervals, grouped by the occurrence of their left node
    run = f.piece[:-1]
    k = 0
    while k < N - 1:
        if not dense[k]:
            k += 1
            continue
        j = k
        while j + 1 < N - 1 and dense[j + 1] and run[j + 1] == run[k]:
            j += 1
        x = f.t[k : j + 2].copy()
        y = f.values[k : j + 2].copy()
        if f.piece[j + 1] != run[k]:
            # right node belongs to the next occurrence: use the left limit
            if x.size < 3 or f.interpolation == "constant":
                y[-1] = y[-2]
            else:
                y[-1] = y[-2] + (y[-2] - y[-3]) * (x[-1] - x[-2]) / (x[-2] - x[-3])
        if f.interpolation == "constant":
            part = y[:-1] * np.diff(x)[:, None]
        elif x.size >= 3:
            part = np.diff(cumulative_simpson(y, x=x, axis=0, initial=0.0), axis=0)
        else:
            part = 0.5 * (y[1:] + y[:-1]) * np.diff(x)[:, None]
        inc[k : j + 1] = part
        k = j + 1
    F = np.zeros((N, f.n))
    F[1:] = np.cumsum(inc, axis=0)
    return F


def delta_integral(f: GridFunction, tau, s):
    """``int_tau^s f(t) Delta t = F(s) - F(tau)`` for scale points ``tau <= s``."""
    ts = f.scale
    ts._check_points([tau, s])
    if tau > s:
        raise ValueError("delta_integral needs tau <= s")
    F = delta_antiderivative(f)

    def at(x):
        j = f.index_of(x)
        if j is not None:
            return F[j]
        j = int(np.searchsorted(f.t, x)) - 1
        if j < 0 or j + 1 >= f.t.size:
            raise InsufficientSamples(f"t={x} outside the sampled range")
        w = (x - f.t[j]) / (f.t[j + 1] - f.t[j])
        return (1 - w) * F[j] + w * F[j + 1]

    return at(s) - at(tau)
