"""Dense reference solver for the planar model equation

    dbar f + alpha f + Phi conj(f) = 0,   Phi = T z^p conj(z)^q + phi(z).

The oracle is deliberately independent of :mod:`jrlab.assembly`: it
uses Fourier differentiation on a periodic box of side ``2R`` and looks
for solutions supported on the disk ``|z| < frac * R``.  The model
operator maps disk-supported ``f`` to box-supported values, so its
singular values are computed from the realified Gram matrix
``G = M^T M`` (size ``2 N_disk``), which is assembled directly from
translation-invariant pieces without forming any box-sized matrix.

``D^+`` is the operator above; ``D^-`` is its formal adjoint
``-d f + conj(alpha) f + Phi conj(f)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, eigsh

from .fields import PlanePatch, eval_polynomial, perturbation_margin


@dataclass(frozen=True, eq=False)
class ModelProblem:
    T: complex
    p: int
    q: int
    perturbation: Optional[Mapping] = None
    eps: float = 0.5
    alpha: Optional[Callable] = None
    R: float = 4.0
    n: int = 48
    frac: float = 0.75

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("p and q must be nonnegative integers")
        if self.T == 0:
            raise ValueError("T must be nonzero")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.perturbation and perturbation_margin(self.T, self.m, self.perturbation) < self.eps:
            raise ValueError("perturbation too large for the declared eps margin")
        if self.n > 64:
            raise ValueError("dense oracle limited to n <= 64")

    @property
    def m(self) -> int:
        return self.p + self.q

    @property
    def k(self) -> int:
        return self.p - self.q

    @property
    def h(self) -> float:
        return 2 * self.R / self.n

    @property
    def scale(self) -> float:
        """Natural gap scale ``|T|^{1/(m+1)}``."""
        return abs(self.T) ** (1.0 / (self.m + 1))

    def coords(self) -> np.ndarray:
        x = -self.R + (np.arange(self.n) + 0.5) * self.h
        return x[:, None] + 1j * x[None, :]

    def phi(self) -> np.ndarray:
        z = self.coords()
        return complex(self.T) * z ** self.p * np.conj(z) ** self.q + eval_polynomial(self.perturbation, z)

    def alpha_samples(self) -> np.ndarray:
        if self.alpha is None:
            return np.zeros((self.n, self.n), dtype=complex)
        a = np.asarray(self.alpha(self.coords()), dtype=complex)
        if np.any(a[np.abs(self.coords()) > self.R / 2] != 0):
            raise ValueError("alpha must be supported inside radius R/2")
        return a

    def with_alpha(self, alpha: Optional[Callable]) -> "ModelProblem":
        return ModelProblem(self.T, self.p, self.q, self.perturbation, self.eps, alpha,
                            self.R, self.n, self.frac)


def fourier_derivative_1d(n: int, length: float) -> np.ndarray:
    """Periodic spectral differentiation matrix (real, antisymmetric)."""
    J = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    C = np.zeros((n, n))
    nz = J != 0
    sign = np.where(J % 2 == 0, 1.0, -1.0)
    if n % 2 == 0:
        C[nz] = (math.pi / length) * sign[nz] / np.tan(math.pi * J[nz] / n)
    else:
        C[nz] = (math.pi / length) * sign[nz] / np.sin(math.pi * J[nz] / n)
    return C


def _realify_dense(A: np.ndarray, conj: bool) -> np.ndarray:
    out = np.empty((2 * A.shape[0], 2 * A.shape[1]))
    if conj:
        out[0::2, 0::2], out[0::2, 1::2] = A.real, A.imag
        out[1::2, 0::2], out[1::2, 1::2] = A.imag, -A.real
    else:
        out[0::2, 0::2], out[0::2, 1::2] = A.real, -A.imag
        out[1::2, 0::2], out[1::2, 1::2] = A.imag, A.real
    return out


@dataclass(frozen=True, eq=False)
class KernelReport:
    singular_values: np.ndarray
    kernel_dim: int
    basis: list
    separation_ratio: float
    confident: bool
    sigma_gap: float
    sign: int
    meta: dict = field(default_factory=dict)


def _disk_pieces(prob: ModelProblem):
    n = prob.n
    D1 = fourier_derivative_1d(n, 2 * prob.R)
    D2 = D1 @ D1
    z = prob.coords()
    disk = np.abs(z) < prob.frac * prob.R
    ii, jj = np.nonzero(disk)
    same_j = jj[:, None] == jj[None, :]
    same_i = ii[:, None] == ii[None, :]
    Dx = np.where(same_j, D1[ii[:, None], ii[None, :]], 0.0)
    Dy = np.where(same_i, D1[jj[:, None], jj[None, :]], 0.0)
    lap = np.where(same_j, D2[ii[:, None], ii[None, :]], 0.0) + np.where(same_i, D2[jj[:, None], jj[None, :]], 0.0)
    return disk, Dx, Dy, lap


def gram_matrix(prob: ModelProblem, sign: int) -> tuple[np.ndarray, np.ndarray]:
    """Realified ``M^T M`` of ``D^sign`` on disk-supported functions."""
    disk, Dx, Dy, lap = _disk_pieces(prob)
    phi = prob.phi()[disk]
    a = prob.alpha_samples()[disk]
    if sign > 0:
        L = 0.5 * (Dx + 1j * Dy)
        a_lin = a
    else:
        L = -0.5 * (Dx - 1j * Dy)
        a_lin = np.conj(a)
    # L^dag L over the whole box equals -lap/4 on disk columns; add alpha terms
    LL = -0.25 * lap.astype(complex)
    LL += L.conj().T * a_lin[None, :] + np.conj(a_lin)[:, None] * L
    LL[np.diag_indices_from(LL)] += np.abs(a_lin) ** 2 + np.abs(phi) ** 2
    Ld = L + np.diag(a_lin)
    C = Ld.conj().T * phi[None, :]
    Cr = _realify_dense(C, conj=True)
    G = _realify_dense(LL, conj=False) + Cr + Cr.T
    return 0.5 * (G + G.T), disk


def _low_spectrum(G: np.ndarray, count: int, dense_limit: int = 2400):
    """Lowest ``count`` eigenpairs of the Gram matrix and ``sigma_max``.

    Small matrices use a full ``eigh``.  Larger ones use shift-invert
    Lanczos around a slightly negative shift, so ``G - shift`` is positive
    definite and a Cholesky factor serves as the inverse.
    """
    if G.shape[0] <= dense_limit:
        w, V = np.linalg.eigh(G)
        return w, V, float(np.sqrt(max(w[-1], 0.0)))
    top = eigsh(G, k=1, which="LA", return_eigenvectors=False, tol=1e-6)[0]
    shift = -1e-8 * top
    fac = cho_factor(G - shift * np.eye(G.shape[0]))
    inv = LinearOperator(G.shape, matvec=lambda x: cho_solve(fac, x), dtype=float)
    v0 = np.ones(G.shape[0]) / math.sqrt(G.shape[0])
    mu, V = eigsh(inv, k=count, which="LA", v0=v0, tol=1e-12)
    w = shift + 1.0 / mu
    order = np.argsort(w)
    return w[order], V[:, order], float(math.sqrt(top))


def dense_kernel_dim(prob: ModelProblem, sign: int = 1, search: int = 12) -> KernelReport:
    """Kernel dimension of ``D^sign`` from the Gram spectrum.

    The kernel is the cluster below the first singular value ``s_j`` with
    ``s_j >= |T|^{1/(m+1)} / 10`` and ``s_j >= 10 max(s_{j-1}, floor)``,
    ``floor = 1e-7 sigma_max`` (the resolution of ``sqrt`` of Gram
    eigenvalues).  If no such index exists the report is not confident.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    G, disk = gram_matrix(prob, sign)
    w, V, smax = _low_spectrum(G, search + 1)
    s = np.sqrt(np.maximum(w, 0.0))
    floor = max(1e-7 * smax, 1e-300)
    gap_floor = 0.1 * prob.scale
    dim, ratio = None, math.nan
    for j in range(min(search, s.size)):
        prev = s[j - 1] if j > 0 else 0.0
        if s[j] >= gap_floor and s[j] >= 10 * max(prev, floor):
            dim, ratio = j, float(s[j] / max(prev, floor))
            break
    confident = dim is not None
    if dim is None:
        dim = int(np.argmax(s[1:search] / np.maximum(s[:search - 1], floor)) + 1)
        ratio = float(s[dim] / max(s[dim - 1], floor))
    basis = []
    for c in range(dim):
        v = V[:, c]
        f = np.zeros((prob.n, prob.n), dtype=complex)
        f[disk] = v[0::2] + 1j * v[1::2]
        basis.append(f)
    return KernelReport(s, int(dim), basis, ratio, confident, float(s[dim]), sign,
                        {"sigma_max": smax, "n_disk": int(disk.sum())})


def expected_dims(k: int) -> tuple[int, int]:
    return max(k, 0), max(-k, 0)


# ------------------------------------------------------------ exact mode


def exact_mode_k1(t: float, grid: PlanePatch, c: complex = 1.0) -> np.ndarray:
    """``c exp(-t |z|^2)`` normalized in ``L^2(h^2)``; the kernel of ``Phi = t z``."""
    if not t > 0:
        raise ValueError("t must be positive")
    z = grid.coords()
    f = c * np.exp(-t * np.abs(z) ** 2)
    return f / math.sqrt(grid.h ** 2 * float(np.sum(np.abs(f) ** 2)))


def model_residual(f: np.ndarray, grid: PlanePatch, t: float) -> float:
    """``|dbar f + t z conj(f)| / |f|`` with Fourier ``dbar`` on the patch."""
    D1 = fourier_derivative_1d(grid.n, 2 * grid.radius)
    fx = D1 @ f
    fy = f @ D1.T
    r = 0.5 * (fx + 1j * fy) + t * grid.coords() * np.conj(f)
    return float(np.linalg.norm(r) / np.linalg.norm(f))


def overlap(f: np.ndarray, g: np.ndarray) -> float:
    """``|<f, g>| / (|f| |g|)``, insensitive to a global phase."""
    return float(abs(np.vdot(f, g)) / (np.linalg.norm(f) * np.linalg.norm(g)))


def real_line_overlap(f: np.ndarray, g: np.ndarray) -> float:
    """Overlap of ``g`` with the real line through ``f`` (``Re<f,g>`` only).

    The kernel of the model equation is a real vector space, so ``i f`` is
    a different element; this is the overlap used when the phase is not
    allowed to rotate.
    """
    return float(abs(np.real(np.vdot(f, g))) / (np.linalg.norm(f) * np.linalg.norm(g)))


# ----------------------------------------------------------- decay fits


@dataclass(frozen=True)
class DecayFit:
    rate: float
    predicted: float
    superexponential: bool
    curvature: float
    npoints: int


def decay_rate_fit(f: np.ndarray, coords: np.ndarray, t: float, m: int, R: float,
                   window: Optional[tuple[float, float]] = None, floor: float = 1e-12) -> DecayFit:
    """Least-squares slope of ``log|f|`` against ``|z|`` on an annulus.

    The default window is ``[R/4, R/2]``; samples below ``floor * max|f|``
    are ignored.  A quadratic fit that is much better than the linear one
    (with negative curvature) flags faster-than-exponential decay.
    """
    lo, hi = window if window is not None else (R / 4, R / 2)
    r = np.abs(coords).ravel()
    a = np.abs(f).ravel()
    keep = (r >= lo) & (r <= hi) & (a > floor * a.max())
    if keep.sum() < 5:
        raise ValueError("vector mass below numeric floor in the fit annulus")
    x, y = r[keep], np.log(a[keep])
    A1 = np.vstack([np.ones_like(x), x]).T
    c1, res1, *_ = np.linalg.lstsq(A1, y, rcond=None)
    A2 = np.vstack([np.ones_like(x), x, x * x]).T
    c2, res2, *_ = np.linalg.lstsq(A2, y, rcond=None)
    rss1 = float(np.sum((A1 @ c1 - y) ** 2))
    rss2 = float(np.sum((A2 @ c2 - y) ** 2))
    superexp = bool(c2[2] < 0 and rss1 > 10 * rss2 + 1e-300)
    return DecayFit(float(-c1[1]), float(t ** (1.0 / (m + 1))), superexp, float(c2[2]), int(keep.sum()))


# ---------------------------------------------------------- alpha sweeps


def bump(radius: float, center: complex = 0.0, phase: complex = 1.0) -> Callable:
    """Smooth unit-height bump supported in ``|z - center| < radius``."""
    def f(z):
        r2 = (np.abs(z - center) / radius) ** 2
        out = np.zeros(np.shape(z), dtype=complex)
        inside = r2 < 1
        out[inside] = phase * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out
    return f


@dataclass(frozen=True)
class AlphaRow:
    T: complex
    p: int
    q: int
    alpha_norm: float
    dim_plus: int
    dim_minus: int
    sigma_gap: float
    separation_ratio: float
    confident: bool


def alpha_row(prob: ModelProblem, amplitude: float, profile: Callable) -> AlphaRow:
    pr = prob.with_alpha(None if amplitude == 0 else (lambda z: amplitude * profile(z)))
    plus = dense_kernel_dim(pr, 1)
    minus = dense_kernel_dim(pr, -1)
    norm = float(np.max(np.abs(pr.alpha_samples())))
    return AlphaRow(prob.T, prob.p, prob.q, norm, plus.kernel_dim, minus.kernel_dim,
                    min(plus.sigma_gap, minus.sigma_gap),
                    min(plus.separation_ratio, minus.separation_ratio),
                    plus.confident and minus.confident)


def alpha_robustness(prob: ModelProblem, scales, profile: Optional[Callable] = None,
                     refine: int = 6) -> tuple[list[AlphaRow], float]:
    """Kernel dims against ``||alpha||_inf`` and the empirical threshold.

    ``scales`` are amplitudes of ``profile`` (default a unit bump of radius
    ``R/2``).  The threshold is the smallest amplitude at which the dims
    differ from ``max(+-k, 0)`` or the report loses confidence, refined by
    bisection between the last good and first bad amplitude (``inf`` if
    every amplitude passes).  The sweep stops at the first failure.
    """
    profile = profile or bump(prob.R / 2)
    want = expected_dims(prob.k)

    def good(row):
        return row.confident and (row.dim_plus, row.dim_minus) == want

    rows, last_good, first_bad = [], 0.0, None
    for a in scales:
        row = alpha_row(prob, float(a), profile)
        rows.append(row)
        if not good(row):
            first_bad = float(a)
            break
        last_good = float(a)
    if first_bad is None:
        return rows, math.inf
    lo, hi = last_good, first_bad
    for _ in range(refine):
        mid = 0.5 * (lo + hi) if lo > 0 else hi / 2
        if good(alpha_row(prob, mid, profile)):
            lo = mid
        else:
            hi = mid
    return rows, 0.5 * (lo + hi)


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of ``log y`` on ``log x`` and its standard error."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([np.ones_like(lx), lx]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = max(lx.size - 2, 1)
    cov = np.linalg.inv(A.T @ A) * float(resid @ resid) / dof
    return float(coef[1]), float(math.sqrt(max(cov[1, 1], 0.0)))
