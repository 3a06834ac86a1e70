"""Smallest-magnitude eigenpairs of realified Jackiw--Rossi operators.

For a chirally odd operator ``H = [[0, M^T], [M, 0]]`` the square is
``diag(M^T M, M M^T)``.  The solver runs implicitly restarted Lanczos
(ARPACK, via scipy) on each diagonal block, either inverted through a
dense Cholesky factor (``shift_invert``, the default for blocks up to
``DENSE_FACTOR_LIMIT``) or directly on the block with ``which="SA"``
(``lanczos_on_square``).  A Rayleigh--Ritz step with ``H`` on the union
of both Ritz bases follows.  The reduced matrix is chirally odd as well, so signed eigenvalues come out
in exact ``+-`` pairs.  Operators without a chiral block use ``H^2``
directly (dense ``eigh`` when small).

Lattice artifacts
-----------------
On a square lattice the discrete index vanishes, so every physical near
zero mode is accompanied by a compensating mode of opposite chirality.
These live at the grid scale: their covariant roughness
``sum |U psi(x+e) - psi(x)|^2 / |psi|^2`` is close to its maximum 8,
while continuum modes stay well below 1.  :func:`kernel_dim` separates
the two populations by a Rayleigh--Ritz step with that form inside each
chiral projection of the near-zero cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .assembly import RealOperator, join_chiral, roughness_form, split_chiral

ROUGHNESS_CUT = 2.0
# chiral blocks up to this size are LU-factored densely for shift-invert
DENSE_FACTOR_LIMIT = 10000
# operators without a chiral block up to this size are diagonalized densely
DENSE_EIG_LIMIT = 4000
SEPARATION_MIN = 10.0


@dataclass(frozen=True)
class SolverConfig:
    num_pairs: int = 8
    tol: Optional[float] = None
    max_iter: int = 5000
    seed: int = 0
    method: str = "auto"
    ncv: Optional[int] = None

    def __post_init__(self):
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be >= 1")
        if self.tol is not None and not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.method not in ("auto", "lanczos_on_square", "shift_invert", "dense"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    vectors: np.ndarray
    plus_mass: np.ndarray
    minus_mass: np.ndarray
    roughness: np.ndarray
    tol: float
    norm_estimate: float
    converged: bool
    cluster_size: int
    separation_ratio: float
    gap: float
    dropped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def kernel_dim(self) -> int:
        return self.cluster_size

    def pairing_defects(self) -> np.ndarray:
        """For each pair, ``min_j |lam_j + lam_i| - 2 r_i`` (<= 0 means paired)."""
        lam, res = self.eigenvalues, self.residuals
        return np.array([np.min(np.abs(lam + l)) - 2 * r for l, r in zip(lam, res)])


def norm_estimate(A, seed: int = 0, iters: int = 30) -> float:
    """Power-method estimate of ``||A||_2`` for a symmetric operator."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A @ v
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def _start(n: int, seed: int, salt: int) -> np.ndarray:
    return np.random.default_rng([seed, salt]).standard_normal(n)


def _low_block(B, k: int, cfg: SolverConfig, salt: int):
    """Lowest ``k`` eigenpairs of the PSD operator ``B`` (LinearOperator or matrix)."""
    n = B.shape[0]
    if n <= max(64, 2 * k + 2) or cfg.method == "dense":
        dense = B @ np.eye(n) if isinstance(B, LinearOperator) else B.toarray()
        w, V = np.linalg.eigh(0.5 * (dense + dense.T))
        return w[:k], V[:, :k], True
    ncv = cfg.ncv or min(n - 1, max(2 * k + 1, 40))
    try:
        w, V = eigsh(B, k=k, which="SA", v0=_start(n, cfg.seed, salt), tol=1e-12,
                     ncv=ncv, maxiter=cfg.max_iter)
        ok = True
    except ArpackNoConvergence as exc:
        w, V, ok = exc.eigenvalues, exc.eigenvectors, False
    order = np.argsort(w)
    return w[order], V[:, order], ok


def _inverse_low(M, k: int, cfg: SolverConfig, norm: float, salt: int):
    """Low singular vectors of ``M`` by Lanczos on ``(M^T M + mu)^{-1}``.

    ``mu = 1e-8 ||H||^2`` keeps both Gram matrices positive definite with
    condition number at most ``1e8``, so their Cholesky factors are
    accurate on every direction that matters (a plain LU of ``M`` is not:
    near-null vectors amplify solve errors into the whole low spectrum).
    """
    n = M.shape[0]
    mu = 1e-8 * norm * norm
    out, ok = [], True
    ncv = cfg.ncv or min(n - 1, max(2 * k + 1, 30))
    for G, s in (((M.T @ M), salt), ((M @ M.T), salt + 1)):
        dense = G.toarray()
        dense[np.diag_indices(n)] += mu
        fac = sla.cho_factor(dense, check_finite=False)
        inv = LinearOperator((n, n), dtype=float,
                             matvec=lambda v, fac=fac: sla.cho_solve(fac, v, check_finite=False))
        try:
            _, V = eigsh(inv, k=k, which="LA", v0=_start(n, cfg.seed, s), tol=1e-12,
                         ncv=ncv, maxiter=cfg.max_iter)
        except ArpackNoConvergence as exc:
            V, ok = exc.eigenvectors, False
        out.append(V)
    return out[0], out[1], ok


def _finish(op: RealOperator, lam: np.ndarray, X: np.ndarray, cfg: SolverConfig, tol: float,
            norm: float, ok: bool, gap_scale: Optional[float]) -> SpectrumReport:
    H = op.matrix
    R = H @ X - X * lam
    res = np.linalg.norm(R, axis=0)
    keep = res <= tol
    dropped = int(np.sum(~keep))
    lam, X, res = lam[keep], X[:, keep], res[keep]
    order = np.lexsort((lam, np.abs(lam)))
    lam, X, res = lam[order], X[:, order], res[order]
    # trim to num_pairs, completing a +- pair cut in half
    n = min(cfg.num_pairs, lam.size)
    if 0 < n < lam.size and abs(abs(lam[n]) - abs(lam[n - 1])) <= 2 * max(res[n], res[n - 1]) and lam[n] != 0:
        n += 1
    lam, X, res = lam[:n], X[:, :n], res[:n]
    if op.kind in ("jr", "dirac", "perturbation", "conformal"):
        ns = op.n_sites
        P, Mi = split_chiral(X, ns)
        pm, mm = np.sum(P ** 2, axis=0), np.sum(Mi ** 2, axis=0)
        Rf = roughness_form(op.grid, op.gauge)
        rough = (np.sum(P * (Rf @ P), axis=0) + np.sum(Mi * (Rf @ Mi), axis=0)) / np.maximum(pm + mm, 1e-300)
    else:
        pm = mm = rough = np.full(lam.size, np.nan)
    size, ratio = locate_cluster(np.abs(lam), res, norm, gap_scale)
    gap = float(abs(lam[size])) if size < lam.size else math.nan
    return SpectrumReport(lam, res, X, pm, mm, rough, tol, norm, bool(ok and lam.size > 0),
                          size, ratio, gap, dropped, {"method": cfg.method, "seed": cfg.seed})


def locate_cluster(absl: np.ndarray, res: np.ndarray, norm: float,
                   gap_scale: Optional[float] = None) -> tuple[int, float]:
    """Size of the near-zero cluster and its separation ratio.

    The cluster ends before the index ``j`` maximizing
    ``|lam_j| / max(|lam_{j-1}|, floor)``, where ``floor`` is the
    numerical noise level.  With ``gap_scale`` given, only candidates with
    ``|lam_j| >= gap_scale / 10`` count as the first non-kernel level.
    """
    if absl.size == 0:
        return 0, math.nan
    floor = max(1e-8 * norm, 2 * float(np.max(res)), 1e-300)
    best_j, best = absl.size, 0.0
    for j in range(absl.size):
        prev = absl[j - 1] if j > 0 else 0.0
        if gap_scale is not None and absl[j] < 0.1 * gap_scale:
            continue
        r = absl[j] / max(prev, floor)
        if r > best * (1 + 1e-12):
            best_j, best = j, r
    # best < 1 only when every candidate sits below the noise floor
    if best_j == absl.size or best < 1.0:
        return absl.size, math.nan
    return best_j, float(best)


def smallest_eigenpairs(op: RealOperator, cfg: SolverConfig = SolverConfig(),
                        gap_scale: Optional[float] = None) -> SpectrumReport:
    """Eigenpairs of smallest ``|lam|`` with residual ``<= tol``.

    ``num_pairs`` eigenpairs are returned (one more if needed to complete a
    ``+-`` pair); pairs that fail the residual test are dropped and counted
    in ``SpectrumReport.dropped``.
    """
    H = op.matrix
    norm = norm_estimate(H, cfg.seed)
    tol = cfg.tol if cfg.tol is not None else 1e-8 * max(norm, 1e-300)
    n = H.shape[0]
    M = op.chiral_block
    if cfg.method == "shift_invert" and M is None:
        k = min(cfg.num_pairs + 4, n - 2)
        sigma = 1e-6 * norm
        w, X = eigsh(H.tocsc(), k=k, sigma=sigma, which="LM", v0=_start(n, cfg.seed, 0), tol=1e-12)
        return _finish(op, w, X, cfg, tol, norm, True, gap_scale)
    if M is not None and op.symmetry_defect() == 0.0:
        k = min(cfg.num_pairs // 2 + 4, M.shape[0] - 2)
        Mt = M.T.tocsr()
        right = LinearOperator(M.shape[::-1], matvec=lambda v: Mt @ (M @ v), dtype=float)
        left = LinearOperator(M.shape, matvec=lambda v: M @ (Mt @ v), dtype=float)
        method = cfg.method
        if method == "auto":
            method = "shift_invert" if M.shape[0] <= DENSE_FACTOR_LIMIT else "lanczos_on_square"
        if method == "shift_invert" and M.shape[0] > max(64, 2 * k + 2):
            V, U, ok1 = _inverse_low(M, k, cfg, norm, 1)
            ok2 = ok1
        else:
            _, V, ok1 = _low_block(right, k, cfg, 1)
            _, U, ok2 = _low_block(left, k, cfg, 2)
        # enlarge each side by the image of the other so that Ritz pairs
        # inside near-degenerate clusters match up
        V = _enlarge(V, Mt @ U, norm)
        U = _enlarge(U, M @ V, norm)
        B = U.T @ (M @ V)
        ku, kv = B.shape
        red = np.zeros((kv + ku, kv + ku))
        red[:kv, kv:] = B.T
        red[kv:, :kv] = B
        lam, Y = np.linalg.eigh(red)
        X = join_chiral(V @ Y[:kv], U @ Y[kv:])
        return _finish(op, lam, X, cfg, tol, norm, ok1 and ok2, gap_scale)
    k = min(cfg.num_pairs + 4, n - 2)
    if cfg.method == "dense" or (cfg.method == "auto" and n <= DENSE_EIG_LIMIT):
        # single-vector Krylov misses exact multiplicities, which are
        # common here (BdG doubling, constant sections)
        w, V = np.linalg.eigh(H.toarray())
        pick = np.argsort(np.abs(w), kind="stable")[:k]
        return _finish(op, w[pick], V[:, pick], cfg, tol, norm, True, gap_scale)
    sq = LinearOperator(H.shape, matvec=lambda v: H @ (H @ v), dtype=float)
    _, V, ok = _low_block(sq, k, cfg, 3)
    red = V.T @ (H @ V)
    lam, Y = np.linalg.eigh(0.5 * (red + red.T))
    return _finish(op, lam, V @ Y, cfg, tol, norm, ok, gap_scale)


@dataclass(frozen=True)
class KernelCount:
    dim_plus: int
    dim_minus: int
    lattice_plus: int
    lattice_minus: int
    roughness_plus: tuple
    roughness_minus: tuple
    separation_ratio: float
    cluster_size: int
    ambiguous: bool
    purity: float

    @property
    def index(self) -> int:
        return self.dim_plus - self.dim_minus


def _enlarge(Q: np.ndarray, W: np.ndarray, norm: float) -> np.ndarray:
    """Orthonormal basis of ``span(Q) + span(W)``, ignoring near-null images.

    Columns of ``W`` shorter than ``1e-6 ||H||`` are images of (near) null
    vectors and carry only rounding noise, so they are skipped; the rest
    are normalized before the dependency cut.
    """
    lens = np.linalg.norm(W, axis=0)
    keep = lens > 1e-6 * norm
    if not np.any(keep):
        return Q
    return _orth(np.hstack([Q, W[:, keep] / lens[keep]]), 1e-6)


def _orth(A: np.ndarray, cut: float = 0.5) -> np.ndarray:
    if A.shape[1] == 0:
        return A
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    return U[:, s > cut]


def kernel_dim(report: SpectrumReport, op: RealOperator,
               rough_cut: float = ROUGHNESS_CUT) -> KernelCount:
    """Chirality-resolved real dimension of the continuum kernel.

    The near-zero cluster is projected to each chirality; within each
    projection a Rayleigh--Ritz step with the covariant roughness form
    splits smooth (continuum) modes from grid-scale artifacts.
    """
    size = report.cluster_size
    if size >= report.eigenvalues.size:
        raise ValueError("all reported pairs lie in the near-zero cluster; raise num_pairs")
    X = report.vectors[:, :size]
    P, Mi = split_chiral(X, op.n_sites)
    Qp, Qm = _orth(P), _orth(Mi)
    R = roughness_form(op.grid, op.gauge)
    rp = np.linalg.eigvalsh(Qp.T @ (R @ Qp)) if Qp.shape[1] else np.array([])
    rm = np.linalg.eigvalsh(Qm.T @ (R @ Qm)) if Qm.shape[1] else np.array([])
    if size:
        purity = float(np.min(np.maximum(report.plus_mass[:size], report.minus_mass[:size])
                              / (report.plus_mass[:size] + report.minus_mass[:size])))
    else:
        purity = 1.0
    borderline = np.any(np.abs(np.concatenate([rp, rm]) - rough_cut) < 0.5)
    ratio = report.separation_ratio
    ambiguous = bool(not (ratio >= SEPARATION_MIN) or borderline
                     or Qp.shape[1] + Qm.shape[1] != size)
    return KernelCount(int(np.sum(rp < rough_cut)), int(np.sum(rm < rough_cut)),
                       int(Qp.shape[1]), int(Qm.shape[1]), tuple(rp), tuple(rm),
                       float(ratio), int(size), ambiguous, purity)


def smooth_kernel_basis(report: SpectrumReport, op: RealOperator,
                        rough_cut: float = ROUGHNESS_CUT) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal smooth (continuum) kernel vectors of each chirality.

    Returns full-length realified vectors ``(plus_basis, minus_basis)``,
    the ones counted by :func:`kernel_dim`.
    """
    size = report.cluster_size
    X = report.vectors[:, :size]
    P, Mi = split_chiral(X, op.n_sites)
    R = roughness_form(op.grid, op.gauge)
    out = []
    for part, is_plus in ((P, True), (Mi, False)):
        Q = _orth(part)
        if Q.shape[1] == 0:
            out.append(np.zeros((X.shape[0], 0)))
            continue
        w, Y = np.linalg.eigh(Q.T @ (R @ Q))
        S = Q @ Y[:, w < rough_cut]
        empty = np.zeros((S.shape[0], S.shape[1]))
        out.append(join_chiral(S, empty) if is_plus else join_chiral(empty, S))
    return out[0], out[1]


@dataclass(frozen=True)
class BlockKernel:
    dim_plus: int
    dim_minus: int
    lattice_plus: int
    lattice_minus: int
    singular_plus: np.ndarray
    singular_minus: np.ndarray
    vectors_plus: np.ndarray
    vectors_minus: np.ndarray


def _one_norm(M) -> float:
    return float(abs(M).sum(axis=0).max())


def low_singular(M, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """``k`` smallest singular values of ``M`` and right singular vectors."""
    n = M.shape[1]
    norm = _one_norm(M)
    G = (M.T @ M)
    G = G.toarray() if sp.issparse(G) else np.array(G)
    if n <= 600:
        w, V = np.linalg.eigh(G)
        return np.sqrt(np.maximum(w[:k], 0)), V[:, :k]
    mu = 1e-8 * norm * norm
    G[np.diag_indices(n)] += mu
    fac = sla.cho_factor(G, check_finite=False)
    inv = LinearOperator((n, n), dtype=float, matvec=lambda v: sla.cho_solve(fac, v, check_finite=False))
    lam, V = eigsh(inv, k=k, which="LA", v0=_start(n, seed, 7), tol=1e-12)
    # Rayleigh quotients with the unshifted Gram matrix
    sv = np.linalg.norm(M @ V, axis=0)
    order = np.argsort(sv)
    return sv[order], V[:, order]


def block_kernel_count(M, Mt, grid, gauge, gap_scale: float, k: int = 16,
                       rough_cut: float = ROUGHNESS_CUT, seed: int = 0) -> BlockKernel:
    """Kernel counts of ``[[0, Mt], [M, 0]]`` for a non-symmetric chiral pair.

    ``ker M`` (plus side) and ``ker Mt`` (minus side) are read off the
    smallest singular values with the same cluster rule as the symmetric
    solver, then split into smooth and grid-scale modes by roughness.
    """
    R = roughness_form(grid, gauge)
    res = []
    for B in (M, Mt):
        sv, V = low_singular(B, k, seed)
        size, _ = locate_cluster(sv, np.zeros_like(sv), _one_norm(B), gap_scale)
        if size >= sv.size:
            raise ValueError("kernel cluster fills the computed window; raise k")
        Q = V[:, :size]
        w = np.linalg.eigvalsh(Q.T @ (R @ Q)) if size else np.array([])
        res.append((int(np.sum(w < rough_cut)), size, sv, Q))
    (dp, lp, sp_, vp), (dm, lm, sm, vm) = res
    return BlockKernel(dp, dm, lp, lm, sp_, sm, vp, vm)


def spectral_gap(report: SpectrumReport, physical_only: bool = False,
                 rough_cut: float = ROUGHNESS_CUT) -> float:
    """Smallest ``|lam|`` outside the near-zero cluster.

    With ``physical_only`` the grid-scale (rough) eigenvectors are skipped.
    """
    lam = np.abs(report.eigenvalues[report.cluster_size:])
    if physical_only:
        lam = lam[report.roughness[report.cluster_size:] < rough_cut]
    if lam.size == 0:
        raise ValueError("all reported pairs lie in the kernel; raise num_pairs")
    return float(lam.min())


def spectrum_rows(report: SpectrumReport) -> list[tuple]:
    """Rows ``(idx, eigenvalue, residual, plus_mass, minus_mass)``."""
    return [(i, float(l), float(r), float(p), float(m))
            for i, (l, r, p, m) in enumerate(zip(report.eigenvalues, report.residuals,
                                                 report.plus_mass, report.minus_mass))]
