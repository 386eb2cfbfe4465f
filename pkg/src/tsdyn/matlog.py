"""Matrix logarithms with a real branch, positivity and regressivity checks.

A real nonsingular matrix has a real logarithm exactly when, at every
negative eigenvalue, its Jordan blocks of each size come in pairs.  The real
branch is built from that pairing: on the negative-eigenvalue part ``-N`` we
construct a complex structure ``J`` (``J @ J = -I``) commuting with ``N`` and
return ``log N + pi*J``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import DomainMismatch, IllConditioned, SingularMatrix

COND_MAX = 1e8
TOL_EIG = 1e-8


@dataclass
class PositivityCertificate:
    """Outcome of the Jordan-block parity test.

    ``positive`` is ``True``/``False``, or ``None`` when clustered eigenvalues
    make the block structure unresolvable at the working tolerance.
    ``blocks`` maps each negative eigenvalue to ``{block size: count}``.
    """

    positive: Optional[bool]
    eigenvalues: np.ndarray
    blocks: dict = field(default_factory=dict)
    det: float = float("nan")
    reason: str = ""

    def __bool__(self):
        return bool(self.positive)


@dataclass
class MatrixLog:
    value: np.ndarray
    real: bool
    branch: str
    pairing: list = field(default_factory=list)


def _check_input(A, cond_max):
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= np.finfo(float).eps * max(s[0], 1e-300) * A.shape[0]:
        raise SingularMatrix("matrix is singular")
    if s[0] / s[-1] > cond_max:
        raise IllConditioned(f"condition number {s[0] / s[-1]:.3g} exceeds {cond_max:.3g}")
    return A


def _cluster_negative(eigs, scale, tol_eig):
    """Group eigenvalues on the negative real axis into clusters."""
    tol = tol_eig * scale
    neg = np.sort([e.real for e in eigs if abs(e.imag) <= tol and e.real < -tol])
    clusters = []
    for x in neg:
        if clusters and x - clusters[-1][-1] <= tol:
            clusters[-1].append(x)
        else:
            clusters.append([x])
    return [float(np.mean(c)) for c in clusters], [len(c) for c in clusters]


def _split(T, select):
    """Block-diagonalize a quasi-triangular ``T`` along ``select``.

    Returns ``(S, T11, T22)`` with ``T = S @ blockdiag(T11, T22) @ inv(S)``.
    """
    T2, Z, k = sla.schur(T, output="real", sort=select)
    n = T.shape[0]
    if k == 0 or k == n:
        return Z, T2, k
    T11, T12, T22 = T2[:k, :k], T2[:k, k:], T2[k:, k:]
    Y = sla.solve_sylvester(T11, -T22, -T12)
    S = np.eye(n)
    S[:k, k:] = Y
    W = Z @ S
    D = np.zeros_like(T2)
    D[:k, :k] = T11
    D[k:, k:] = T22
    return W, D, k


def spectral_projector(M, select):
    """Real projector onto the invariant subspace of eigenvalues in ``select``.

    ``select(re, im)`` follows the scipy ``schur`` sort-callable convention.
    Returns ``(P, k)`` with ``k`` the projector rank.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    T2, Z, k = sla.schur(M, output="real", sort=select)
    if k == 0:
        return np.zeros((n, n)), 0
    if k == n:
        return np.eye(n), n
    T11, T12, T22 = T2[:k, :k], T2[:k, k:], T2[k:, k:]
    Y = sla.solve_sylvester(T11, -T22, -T12)
    Pt = np.zeros((n, n))
    Pt[:k, :k] = np.eye(k)
    Pt[:k, k:] = -Y
    return Z @ Pt @ Z.T, k


def _numeric_rank(X, lo, hi):
    """Rank with an ambiguity flag for singular values between ``lo`` and ``hi``."""
    s = np.linalg.svd(X, compute_uv=False)
    return int(np.sum(s > hi)), bool(np.any((s > lo) & (s <= hi)))


def _jordan_counts(T, lam, scale, tol_eig):
    """Jordan block counts ``{size: count}`` of a one-eigenvalue block."""
    k = T.shape[0]
    M = T - lam * np.eye(k)
    ranks = [k]
    P = np.eye(k)
    ambiguous = False
    for j in range(1, k + 1):
        P = P @ M
        sj = scale ** j
        r, amb = _numeric_rank(P, 1e3 * np.finfo(float).eps * sj * k, tol_eig * sj)
        ambiguous |= amb
        ranks.append(r)
    if ranks[-1] != 0:
        return None, True
    ranks.append(0)
    counts = {}
    for size in range(1, k + 1):
        c = (ranks[size - 1] - ranks[size]) - (ranks[size] - ranks[size + 1])
        if c < 0:
            return None, True
        if c:
            counts[size] = c
    return counts, ambiguous


def is_positive_matrix(A, tol_eig=TOL_EIG, cond_max=COND_MAX):
    """Jordan-parity test for a real logarithm; returns a certificate.

    Positive means every negative eigenvalue has an even number of Jordan
    blocks of each size.  ``positive=None`` signals an unresolvable cluster.
    """
    A = _check_input(np.asarray(A, dtype=float), cond_max)
    eigs = np.linalg.eigvals(A)
    scale = max(np.linalg.norm(A, 2), 1.0)
    det = float(np.linalg.det(A))
    lams, mults = _cluster_negative(eigs, scale, tol_eig)
    cert = PositivityCertificate(True, eigs, {}, det)
    if not lams:
        return cert
    for lam, mult in zip(lams, mults):
        block = _eigen_block(A, lam, scale, tol_eig)
        counts, amb = _jordan_counts(block, lam, scale, tol_eig)
        if counts is None or amb or block.shape[0] != mult:
            cert.positive = None
            cert.reason = f"cannot resolve Jordan structure at eigenvalue {lam:.6g}"
            cert.blocks[lam] = counts or {}
            return cert
        cert.blocks[lam] = counts
        if any(c % 2 for c in counts.values()):
            cert.positive = False
            cert.reason = f"odd number of Jordan blocks at eigenvalue {lam:.6g}"
    return cert


def _near(lam, tol):
    return lambda re, im: (abs(re - lam) <= tol) & (abs(im) <= tol)


def _eigen_block(A, lam, scale, tol_eig):
    _, D, k = _split(A, _near(lam, tol_eig * scale))
    return D[:k, :k]


def _nilpotent_chains(M, scale, tol_eig):
    """Real Jordan chains of a (numerically) nilpotent ``M``.

    Returns a list of chains ``[v_1, ..., v_m]`` with ``M v_1 = 0`` and
    ``M v_{j+1} = v_j``, longest first.
    """
    k = M.shape[0]
    powers = [np.eye(k)]
    for _ in range(k):
        powers.append(powers[-1] @ M)
    tol = tol_eig * scale
    kernels = [sla.null_space(p, rcond=tol / max(np.linalg.norm(p, 2), 1e-300)) if j else np.zeros((k, 0))
               for j, p in enumerate(powers)]
    chains = []
    covered = np.zeros((k, 0))
    for m in range(k, 0, -1):
        # tops of length-m chains: ker M^m modulo (ker M^{m-1} + span of chain vectors)
        base = np.hstack([kernels[m - 1], covered])
        K = kernels[m]
        if K.shape[1] == 0:
            continue
        if base.shape[1]:
            Qb = sla.orth(base)
            R = K - Qb @ (Qb.T @ K)
        else:
            R = K
        _, s, Vt = np.linalg.svd(R, full_matrices=False)
        tops = K @ Vt[s > 1e-6].T
        for top in tops.T:
            chain = [top]
            for _ in range(m - 1):
                chain.append(M @ chain[-1])
            chain = chain[::-1]
            chains.append(chain)
            covered = np.hstack([covered, np.column_stack(chain)])
    return chains


def _complex_structure(N, lam, scale, tol_eig):
    """Real ``J`` with ``J @ J = -I`` commuting with ``N = |lam| I + nilpotent``."""
    k = N.shape[0]
    M = N - abs(lam) * np.eye(k)
    chains = _nilpotent_chains(M, scale, tol_eig)
    by_len = {}
    for c in chains:
        by_len.setdefault(len(c), []).append(c)
    cols, images, pairing = [], [], []
    for m, cs in sorted(by_len.items()):
        if len(cs) % 2:
            raise ValueError("odd chain count")
        for u, w in zip(cs[0::2], cs[1::2]):
            pairing.append(m)
            for vj, wj in zip(u, w):
                cols += [vj, wj]
                images += [wj, -vj]
    V = np.column_stack(cols)
    W = np.column_stack(images)
    return W @ np.linalg.inv(V), pairing


def _real_log(A, scale, tol_eig):
    """Real logarithm of a positive matrix, plus the block pairing used."""
    lams, _ = _cluster_negative(np.linalg.eigvals(A), scale, tol_eig)
    if not lams:
        L = sla.logm(A)
        return np.real(L), []
    tol = tol_eig * scale
    neg = lambda re, im: (abs(im) <= tol) & (re < -tol)
    W, D, k = _split(A, neg)
    n = A.shape[0]
    X = np.zeros((n, n))
    if k < n:
        X[k:, k:] = np.real(sla.logm(D[k:, k:]))
    T = D[:k, :k]
    pairing = []
    # peel clusters one at a time: T = Wacc @ blockdiag(B_1, ..., B_m) @ inv(Wacc)
    blocks = []
    rest = T
    offset = 0
    Wacc = np.eye(k)
    for lam in lams:
        Wi, Di, ki = _split(rest, _near(lam, tol))
        Wfull = np.eye(k)
        Wfull[offset:, offset:] = Wi
        Wacc = Wacc @ Wfull
        blocks.append((offset, ki, lam, Di[:ki, :ki]))
        rest = Di[ki:, ki:]
        offset += ki
    for off, ki, lam, B in blocks:
        N = -B
        J, pr = _complex_structure(N, lam, scale, tol_eig)
        pairing.append((lam, pr))
        X[off:off + ki, off:off + ki] = np.real(sla.logm(N)) + np.pi * J
    Wall = np.eye(n)
    Wall[:k, :k] = Wacc
    S = W @ Wall
    return S @ X @ np.linalg.inv(S), pairing


def matrix_log(A, branch="real-preferring", cond_max=COND_MAX, tol_eig=TOL_EIG):
    """Logarithm ``B`` with ``expm(B) == A``.

    ``branch="principal"`` returns the principal logarithm (complex when
    ``A`` has negative eigenvalues).  ``"real-preferring"`` returns a real
    logarithm whenever ``A`` is positive and falls back to the principal one
    otherwise.
    """
    if branch not in ("principal", "real-preferring"):
        raise ValueError(f"unknown branch {branch!r}")
    A = _check_input(A, cond_max)
    if np.iscomplexobj(A) or branch == "principal":
        L = sla.logm(A)
        real = not np.iscomplexobj(A) and np.allclose(np.imag(L), 0, atol=1e-13 * max(1, np.abs(L).max()))
        return MatrixLog(np.real(L) if real else L, real, "principal")
    A = A.astype(float)
    scale = max(np.linalg.norm(A, 2), 1.0)
    cert = is_positive_matrix(A, tol_eig, cond_max)
    if cert.positive:
        L, pairing = _real_log(A, scale, tol_eig)
        return MatrixLog(L, True, "real", pairing)
    L = sla.logm(A)
    if not np.iscomplexobj(L):
        return MatrixLog(L, True, "principal")
    return MatrixLog(L, False, "principal")


@dataclass
class RegressivityReport:
    regressive: bool
    uniformly_regressive: bool
    sup_inverse_norm: float
    positively_regressive: bool
    witnesses: list = field(default_factory=list)
    points: list = field(default_factory=list)

    def to_dict(self):
        return {
            "regressive": self.regressive,
            "uniformly_regressive": self.uniformly_regressive,
            "sup_inverse_norm": self.sup_inverse_norm,
            "positively_regressive": self.positively_regressive,
            "witnesses": [
                {"t": t, "reason": r, "matrix": np.asarray(m).tolist()} for t, r, m in self.witnesses
            ],
        }


def regressivity_report(ts, A, cond_max=COND_MAX):
    """Check ``E + mu(t) A(t)`` at every right-scattered pattern point.

    Dense points have ``mu = 0`` and are regressive trivially.  ``A`` is a
    :class:`~tsdyn.lift.PiecewiseMatrix` on ``ts``.
    """
    if A.scale is not ts and A.scale.to_dict() != ts.to_dict():
        raise DomainMismatch("coefficient pattern does not match the scale")
    regressive, positive = True, True
    sup_inv = 1.0
    witnesses, points = [], []
    for t0, mu, i in A.scattered_points():
        M = np.eye(A.n) + mu * A.at(t0, i)
        s = np.linalg.svd(M, compute_uv=False)
        points.append(t0)
        if s[-1] <= np.finfo(float).eps * max(s[0], 1.0) * A.n:
            regressive = positive = False
            witnesses.append((t0, "singular", M))
            continue
        sup_inv = max(sup_inv, 1.0 / s[-1])
        try:
            cert = is_positive_matrix(M, cond_max=np.inf)
        except SingularMatrix:
            cert = PositivityCertificate(False, np.linalg.eigvals(M))
        if not cert.positive:
            positive = False
            witnesses.append((t0, "not positive" if cert.positive is False else "ambiguous", M))
    return RegressivityReport(
        regressive, regressive, sup_inv if regressive else float("inf"), positive and regressive,
        witnesses, points,
    )
