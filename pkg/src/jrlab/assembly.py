"""Realified sparse operators for the lattice Jackiw--Rossi problem.

Discretization
--------------
The covariant derivative along each axis is the SLAC (spectral) stencil
with parallel transport along straight lattice paths::

    (nabla_mu psi)(x) = sum_j c_j T(x -> x + j e_mu) psi(x + j e_mu)

with ``c_j = (-1)^{j+1} / (j h)`` on a plane patch (Dirichlet outside)
and the Fourier coefficients ``(pi/L)(-1)^{j+1} / tan(pi j/n)``
(``/ sin`` for odd ``n``) on a torus.  ``nabla_mu`` is anti-Hermitian,
so ``dbar = (nabla_x + i nabla_y)/2`` and its adjoint ``-d`` give an
exactly symmetric realified ``H``.

Layout
------
Complex vectors are realified per index as ``(Re, Im)``.  A full spinor
vector has per site ``(Re psi+, Im psi+, Re psi-, Im psi-)``.  The chiral
block ``M`` maps the plus half (length ``2N``) to the minus half, and
``H = [[0, M^T], [M, 0]]`` in chiral order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .fields import GaugeField, Grid2D, HiggsConfig, PlanePatch, SpinorField, Torus


# ------------------------------------------------------------ stencils


def slac_coefficient(j: int, n: int, length: float, periodic: bool) -> float:
    """Coefficient of ``psi(x + j h)`` in the spectral derivative, ``j >= 1``."""
    sign = 1.0 if j % 2 else -1.0
    if not periodic:
        return sign / (j * length / n)
    if n % 2 == 0:
        if 2 * j == n:
            return 0.0
        return sign * math.pi / length / math.tan(math.pi * j / n)
    return sign * math.pi / length / math.sin(math.pi * j / n)


def _grid_links(grid: Grid2D, gauge: Optional[GaugeField]):
    if gauge is None:
        one = np.ones(grid.shape, dtype=complex)
        return one, one
    if gauge.grid != grid:
        raise ValueError("gauge field lives on a different grid")
    return gauge.ux, gauge.uy


def covariant_derivative(grid: Grid2D, gauge: Optional[GaugeField], axis: int,
                         charge: int = 1) -> sp.csr_matrix:
    """Anti-Hermitian covariant SLAC derivative along ``axis`` (complex N x N)."""
    ux, uy = _grid_links(grid, gauge)
    links = (ux if axis == 0 else uy) ** charge
    shape = grid.shape
    n = shape[axis]
    length = n * (grid.hx if axis == 0 else grid.hy)
    idx = np.arange(grid.n_sites).reshape(shape)
    coord = np.indices(shape)[axis]
    jmax = n // 2 if grid.periodic else n - 1
    rows, cols, vals = [], [], []
    T = np.ones(shape, dtype=complex)
    for j in range(1, jmax + 1):
        T = T * np.roll(links, -(j - 1), axis=axis)
        c = slac_coefficient(j, n, length, grid.periodic)
        if c == 0.0:
            continue
        target = np.roll(idx, -j, axis=axis)
        if grid.periodic:
            mask = np.ones(shape, dtype=bool)
        else:
            mask = coord + j < n
        r, t, v = idx[mask], target[mask], c * T[mask]
        rows += [r, t]
        cols += [t, r]
        vals += [v, -np.conj(v)]
    N = grid.n_sites
    if not rows:
        return sp.csr_matrix((N, N), dtype=complex)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N))


def dbar_operator(grid: Grid2D, gauge: Optional[GaugeField] = None) -> sp.csr_matrix:
    """Complex ``dbar_nabla = (nabla_x + i nabla_y) / 2``."""
    return 0.5 * (covariant_derivative(grid, gauge, 0) + 1j * covariant_derivative(grid, gauge, 1))


def forward_difference(grid: Grid2D, f: np.ndarray, axis: int) -> np.ndarray:
    """First-order forward difference of a real scalar (zero past a plane edge)."""
    h = grid.hx if axis == 0 else grid.hy
    if grid.periodic:
        return (np.roll(f, -1, axis=axis) - f) / h
    out = np.zeros_like(f)
    sl_hi = [slice(None)] * 2
    sl_lo = [slice(None)] * 2
    sl_hi[axis] = slice(1, None)
    sl_lo[axis] = slice(None, -1)
    out[tuple(sl_lo)] = (f[tuple(sl_hi)] - f[tuple(sl_lo)]) / h
    return out


# -------------------------------------------------------- realification


def realify_linear(C) -> sp.csr_matrix:
    """Real form of ``psi -> C psi`` in interleaved ``(Re, Im)`` layout."""
    C = sp.coo_matrix(C)
    r, c, v = C.row, C.col, C.data
    rows = np.concatenate([2 * r, 2 * r, 2 * r + 1, 2 * r + 1])
    cols = np.concatenate([2 * c, 2 * c + 1, 2 * c, 2 * c + 1])
    vals = np.concatenate([v.real, -v.imag, v.imag, v.real])
    out = sp.csr_matrix((vals, (rows, cols)), shape=(2 * C.shape[0], 2 * C.shape[1]))
    out.eliminate_zeros()
    return out


def realify_conj(C) -> sp.csr_matrix:
    """Real form of the conjugate-linear map ``psi -> C conj(psi)``."""
    C = sp.coo_matrix(C)
    r, c, v = C.row, C.col, C.data
    rows = np.concatenate([2 * r, 2 * r, 2 * r + 1, 2 * r + 1])
    cols = np.concatenate([2 * c, 2 * c + 1, 2 * c, 2 * c + 1])
    vals = np.concatenate([v.real, v.imag, v.imag, -v.real])
    out = sp.csr_matrix((vals, (rows, cols)), shape=(2 * C.shape[0], 2 * C.shape[1]))
    out.eliminate_zeros()
    return out


def complex_to_real(z: np.ndarray) -> np.ndarray:
    out = np.empty(2 * z.size)
    out[0::2] = z.real.ravel()
    out[1::2] = z.imag.ravel()
    return out


def real_to_complex(v: np.ndarray) -> np.ndarray:
    return v[0::2] + 1j * v[1::2]


def plus_indices(n_sites: int) -> np.ndarray:
    s = np.arange(n_sites)
    return np.stack([4 * s, 4 * s + 1], axis=1).ravel()


def minus_indices(n_sites: int) -> np.ndarray:
    return plus_indices(n_sites) + 2


def split_chiral(vec: np.ndarray, n_sites: int):
    """Plus and minus halves (each interleaved ``(Re, Im)``) of a full vector."""
    v = np.asarray(vec).reshape(n_sites, 4, *np.shape(vec)[1:])
    return (v[:, 0:2].reshape(2 * n_sites, *np.shape(vec)[1:]),
            v[:, 2:4].reshape(2 * n_sites, *np.shape(vec)[1:]))


def join_chiral(plus: np.ndarray, minus: np.ndarray) -> np.ndarray:
    n_sites = plus.shape[0] // 2
    tail = plus.shape[1:]
    out = np.empty((n_sites, 4) + tail)
    out[:, 0:2] = plus.reshape((n_sites, 2) + tail)
    out[:, 2:4] = minus.reshape((n_sites, 2) + tail)
    return out.reshape((4 * n_sites,) + tail)


def _from_chiral_block(M: sp.spmatrix, n_sites: int, Mt: Optional[sp.spmatrix] = None) -> sp.csr_matrix:
    """Full ``[[0, Mt], [M, 0]]`` in site-interleaved layout (``Mt`` defaults to ``M^T``)."""
    pl, mi = plus_indices(n_sites), minus_indices(n_sites)
    M = sp.coo_matrix(M)
    Mt = M.T.tocoo() if Mt is None else sp.coo_matrix(Mt)
    rows = np.concatenate([mi[M.row], pl[Mt.row]])
    cols = np.concatenate([pl[M.col], mi[Mt.col]])
    vals = np.concatenate([M.data, Mt.data])
    D = 4 * n_sites
    return sp.csr_matrix((vals, (rows, cols)), shape=(D, D))


# ------------------------------------------------------------ operators


@dataclass(frozen=True, eq=False)
class RealOperator:
    """Realified sparse operator with its chiral block and provenance."""

    matrix: sp.csr_matrix
    grid: Grid2D
    kind: str
    t: float = 1.0
    chiral_block: Optional[sp.csr_matrix] = None
    gauge: Optional[GaugeField] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pass

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_sites(self) -> int:
        return self.grid.n_sites

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def parity(self) -> sp.csr_matrix:
        """Grading ``diag(+1 on plus, -1 on minus)``."""
        d = np.tile([1.0, 1.0, -1.0, -1.0], self.n_sites)
        return sp.diags(d, format="csr")

    def symmetry_defect(self) -> float:
        diff = (self.matrix - self.matrix.T).tocoo()
        return float(np.abs(diff.data).max()) if diff.nnz else 0.0

    def to_spinor(self, vec: np.ndarray) -> SpinorField:
        return SpinorField.from_real(self.grid, vec)

    def export_triplets(self, path) -> None:
        """Write ``row col value`` lines and a JSON sidecar ``<path>.json``."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order])]
        Path(path).write_text("\n".join(lines) + "\n")
        side = {"grid": self.grid.header(), "t": self.t, "kind": self.kind,
                "dimension": self.dimension, "layout": "site-major (Re+, Im+, Re-, Im-)"}
        Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


class RealSymOperator(RealOperator):
    """A :class:`RealOperator` whose matrix is exactly symmetric."""

    def __post_init__(self):
        if self.symmetry_defect() != 0.0:
            raise ArithmeticError(f"{self.kind} operator is not exactly symmetric")
        if not np.all(np.isfinite(self.matrix.data)):
            raise ValueError("operator has non-finite entries")


def _check_grid(grid, *objs):
    for o in objs:
        if o is not None and o.grid != grid:
            raise ValueError("inconsistent grid/gauge/higgs data")


def dirac_block(grid: Grid2D, gauge: Optional[GaugeField]) -> sp.csr_matrix:
    return realify_linear(dbar_operator(grid, gauge))


def perturbation_block(higgs: HiggsConfig) -> sp.csr_matrix:
    return realify_conj(sp.diags(higgs.scaled.ravel()))


def assemble_dirac(grid: Grid2D, gauge: Optional[GaugeField] = None) -> RealSymOperator:
    _check_grid(grid, gauge)
    M = dirac_block(grid, gauge)
    return RealSymOperator(_from_chiral_block(M, grid.n_sites), grid, "dirac", 0.0, M, gauge)


def assemble_perturbation(grid: Grid2D, higgs: HiggsConfig) -> RealSymOperator:
    _check_grid(grid, higgs)
    M = perturbation_block(higgs)
    return RealSymOperator(_from_chiral_block(M, grid.n_sites), grid, "perturbation", higgs.t, M)


def assemble_H(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig) -> RealSymOperator:
    """``H = D_nabla + A_Phi`` with the scale ``t`` taken from ``higgs``."""
    _check_grid(grid, gauge, higgs)
    M = (dirac_block(grid, gauge) + perturbation_block(higgs)).tocsr()
    M.sort_indices()
    return RealSymOperator(_from_chiral_block(M, grid.n_sites), grid, "jr", higgs.t, M, gauge,
                           {"zeros": [(z.position, z.k, z.m) for z in higgs.zeros]})


def roughness_form(grid: Grid2D, gauge: Optional[GaugeField]) -> sp.csr_matrix:
    """Realified ``sum_mu |U_mu psi(x+mu) - psi(x)|^2`` on one chirality (2N x 2N).

    Values outside a plane patch count as zero, so the form lies in [0, 8]
    after normalization.
    """
    ux, uy = _grid_links(grid, gauge)
    N = grid.n_sites
    idx = np.arange(N).reshape(grid.shape)
    coord = np.indices(grid.shape)
    ops = []
    for axis, links in ((0, ux), (1, uy)):
        nb = np.roll(idx, -1, axis=axis)
        mask = np.ones(grid.shape, bool) if grid.periodic else coord[axis] + 1 < grid.shape[axis]
        S = sp.csr_matrix((links[mask], (idx[mask], nb[mask])), shape=(N, N))
        E = S - sp.identity(N, format="csr")
        ops.append((E.conj().T @ E))
    return realify_linear((ops[0] + ops[1]).tocsr())


def chiral_masses(vec: np.ndarray, n_sites: int):
    p, m = split_chiral(vec, n_sites)
    return float(np.sum(p ** 2)), float(np.sum(m ** 2))


# ------------------------------------------------------ gauge transforms


def gauge_transform(gauge: Optional[GaugeField], higgs: HiggsConfig, mu: np.ndarray):
    """Apply ``psi -> mu psi``: links ``mu_x U conj(mu_{x+e})`` and ``Phi -> mu^2 Phi``."""
    grid = higgs.grid
    ux, uy = _grid_links(grid, gauge)
    twists = gauge.twists if gauge is not None else (False, False)
    mu = np.asarray(mu, dtype=complex)
    nux = mu * ux * np.conj(np.roll(mu, -1, axis=0))
    nuy = mu * uy * np.conj(np.roll(mu, -1, axis=1))
    g = GaugeField(grid, nux, nuy, twists)
    h = HiggsConfig(grid, mu ** 2 * higgs.phi, higgs.zeros, higgs.t)
    return g, h


def realified_unitary(mu: np.ndarray) -> sp.csr_matrix:
    """Real matrix ``W`` of ``psi -> mu psi`` on full spinor vectors."""
    n = mu.size
    block = realify_linear(sp.diags(np.asarray(mu, dtype=complex).ravel()))
    return _embed_both(block, n)


def _embed_both(block: sp.spmatrix, n_sites: int) -> sp.csr_matrix:
    pl, mi = plus_indices(n_sites), minus_indices(n_sites)
    b = sp.coo_matrix(block)
    rows = np.concatenate([pl[b.row], mi[b.row]])
    cols = np.concatenate([pl[b.col], mi[b.col]])
    vals = np.concatenate([b.data, b.data])
    return sp.csr_matrix((vals, (rows, cols)), shape=(4 * n_sites, 4 * n_sites))


# -------------------------------------------------- concentrating pair


def covariant_gradient_phi(higgs: HiggsConfig, gauge: Optional[GaugeField]):
    """``(d Phi, dbar Phi)`` of ``t Phi`` by central covariant differences.

    ``Phi`` has charge 2, so it is transported with ``U**2``.  One-sided
    differences are used on the rows and columns at a plane edge.
    """
    grid = higgs.grid
    ux, uy = _grid_links(grid, gauge)
    phi = higgs.scaled
    grads = []
    for axis, links, h in ((0, ux, grid.hx), (1, uy, grid.hy)):
        u2 = links ** 2
        fwd = u2 * np.roll(phi, -1, axis=axis)
        bwd = np.conj(np.roll(u2, 1, axis=axis)) * np.roll(phi, 1, axis=axis)
        g = (fwd - bwd) / (2 * h)
        if not grid.periodic:
            first = [slice(None)] * 2
            last = [slice(None)] * 2
            first[axis], last[axis] = 0, -1
            g[tuple(first)] = ((fwd - phi) / h)[tuple(first)]
            g[tuple(last)] = ((phi - bwd) / h)[tuple(last)]
        grads.append(g)
    gx, gy = grads
    return 0.5 * (gx - 1j * gy), 0.5 * (gx + 1j * gy)


def concentrating_pair_operator(higgs: HiggsConfig, gauge: Optional[GaugeField]) -> sp.csr_matrix:
    """Realified ``(psi+, psi-) -> (-(d Phi) conj psi+, (dbar Phi) conj psi-)``."""
    d, db = covariant_gradient_phi(higgs, gauge)
    n = higgs.grid.n_sites
    plus = realify_conj(sp.diags(-d.ravel()))
    minus = realify_conj(sp.diags(db.ravel()))
    pl, mi = plus_indices(n), minus_indices(n)
    rows, cols, vals = [], [], []
    for blk, ix in ((plus, pl), (minus, mi)):
        b = blk.tocoo()
        rows.append(ix[b.row])
        cols.append(ix[b.col])
        vals.append(b.data)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(4 * n, 4 * n))


def smooth_test_vectors(grid: Grid2D, count: int, seed: int = 0, modes: int = 3) -> np.ndarray:
    """Random smooth spinors in physical coordinates (columns, realified).

    On a plane patch they carry a smooth window vanishing well inside the
    patch so that refinements see the same continuum functions.
    """
    rng = np.random.default_rng(seed)
    z = grid.coords()
    if grid.periodic:
        x, y = z.real / grid.lx, z.imag / grid.ly
        window = 1.0
    else:
        x, y = z.real / (2 * grid.radius), z.imag / (2 * grid.radius)
        r2 = (np.abs(z) / (0.6 * grid.radius)) ** 2
        window = np.where(r2 < 1, np.exp(-1.0 / np.maximum(1 - r2, 1e-300)) * math.e, 0.0)
    out = []
    for _ in range(count):
        comps = []
        for _c in range(2):
            f = np.zeros(grid.shape, dtype=complex)
            for a in range(-modes, modes + 1):
                for b in range(-modes, modes + 1):
                    amp = (rng.normal() + 1j * rng.normal()) / (1 + a * a + b * b)
                    f += amp * np.exp(2j * math.pi * (a * x + b * y))
            comps.append(f * window)
        out.append(SpinorField(grid, comps[0], comps[1]).to_real())
    return np.array(out).T


def concentrating_pair_check(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig,
                             trials: int = 4, seed: int = 0) -> float:
    """Max relative residual ``|(DA + AD - cl(A_{nabla Phi})) v| / |v|`` on smooth ``v``."""
    _check_grid(grid, gauge, higgs)
    D = assemble_dirac(grid, gauge).matrix
    A = assemble_perturbation(grid, higgs).matrix
    K = concentrating_pair_operator(higgs, gauge)
    V = smooth_test_vectors(grid, trials, seed)
    R = D @ (A @ V) + A @ (D @ V) - K @ V
    return float(np.max(np.linalg.norm(R, axis=0) / np.linalg.norm(V, axis=0)))


# ------------------------------------------------------------ conformal


def assemble_conformal(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig,
                       phi_conf: np.ndarray) -> RealOperator:
    """``H^phi = e^{-phi} (D + cl(d_h phi)/2 + A_Phi)`` for ``g^phi = e^{2 phi} g``.

    ``d_h phi`` uses forward differences.  ``cl(d phi)`` maps
    ``(psi+, psi-) -> (-(d phi) psi-, (dbar phi) psi+)``.  The result is
    not symmetric in the flat inner product (it is symmetric only with the
    weight ``e^{2 phi}`` up to the difference scheme), so a plain
    :class:`RealOperator` is returned; its kernel maps to ``e^{-phi/2}
    ker H``.
    """
    _check_grid(grid, gauge, higgs)
    f = np.asarray(phi_conf, dtype=float)
    if f.shape != grid.shape or not np.all(np.isfinite(f)):
        raise ValueError("conformal factor must be finite samples on the grid")
    fx = forward_difference(grid, f, 0)
    fy = forward_difference(grid, f, 1)
    dphi = 0.5 * (fx - 1j * fy)
    dbphi = 0.5 * (fx + 1j * fy)
    n = grid.n_sites
    w = np.exp(-f).ravel()
    W = sp.diags(np.repeat(w, 2))
    M = dirac_block(grid, gauge) + perturbation_block(higgs) + realify_linear(sp.diags(0.5 * dbphi.ravel()))
    Mt = (dirac_block(grid, gauge).T + perturbation_block(higgs)
          + realify_linear(sp.diags(-0.5 * dphi.ravel())))
    M = (W @ M).tocsr()
    Mt = (W @ Mt).tocsr()
    mat = _from_chiral_block(M, n, Mt)
    return RealOperator(mat, grid, "conformal", higgs.t, M, gauge,
                        {"upper_block": Mt, "weight": np.exp(2 * f)})


# ------------------------------------------------------------------ BdG


@dataclass(frozen=True, eq=False)
class BdGSpec:
    p_sign: int
    s_phi: int
    h_hat: RealSymOperator
    c_hat: sp.csr_matrix
    complex_h: sp.csr_matrix


def assemble_bdg(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig,
                 p_sign: int, s_phi: int = 1) -> BdGSpec:
    """Doubled operator on ``E + conj(E)`` and its antiunitary symmetry.

    In coordinates ``(x, c)`` with ``c = conj(psi_2)``::

        H_hat = [[D, A], [A^*, p conj(D)]],   A = [[0, Phi], [s Phi, 0]] per site
        C_hat (x, c) = (conj c, s p conj x)

    so ``A^T = s A``, ``H_hat C_hat = p C_hat H_hat`` and ``C_hat^2 = s p``.
    ``E`` is ordered ``(plus sites, minus sites)``.
    """
    if p_sign not in (-1, 1) or s_phi not in (-1, 1):
        raise ValueError("p_sign and s_phi must be +1 or -1")
    _check_grid(grid, gauge, higgs)
    n = grid.n_sites
    Db = dbar_operator(grid, gauge)
    Dc = sp.bmat([[None, Db.conj().T], [Db, None]], format="csr")
    P = sp.diags(higgs.scaled.ravel())
    Ac = sp.bmat([[None, P], [s_phi * P, None]], format="csr")
    Hc = sp.bmat([[Dc, Ac], [Ac.conj().T, p_sign * Dc.conj()]], format="csr")
    Hc.sort_indices()
    H = realify_linear(Hc)
    I = sp.identity(2 * n, format="csr")
    Cc = sp.bmat([[None, I], [(s_phi * p_sign) * I, None]], format="csr")
    C = realify_conj(Cc)
    op = RealSymOperator(H, grid, "bdg", higgs.t, None, gauge, {"p_sign": p_sign, "s_phi": s_phi})
    return BdGSpec(p_sign, s_phi, op, C, Hc)
