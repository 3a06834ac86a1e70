"""Drivers that turn assembled operators and spectra into checks.

Every driver returns a small frozen record; the ``*_rows`` helpers turn
records into CSV rows for :mod:`jrlab.cli`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .assembly import (RealOperator, assemble_conformal, assemble_H, gauge_transform,
                       realified_unitary)
from .eigensolver import (SEPARATION_MIN, KernelCount, SolverConfig, SpectrumReport,
                          block_kernel_count, kernel_dim, smallest_eigenpairs,
                          smooth_kernel_basis, spectral_gap)
from .fields import (GaugeField, Grid2D, HiggsConfig, ScalingSchedule, Torus, ZeroDatum,
                     torus_distance)
from .model_oracle import loglog_slope
from .vortex import VortexProblem, bradlow_threshold, solve_vortex, vortex_to_jr

MAX_PAIRS = 96


def _grow(cfg: SolverConfig) -> Optional[SolverConfig]:
    if cfg.num_pairs >= MAX_PAIRS:
        return None
    return replace(cfg, num_pairs=min(2 * cfg.num_pairs, MAX_PAIRS))


def solve_with_kernel(op: RealOperator, cfg: SolverConfig = SolverConfig(),
                      gap_scale: Optional[float] = None) -> tuple[SpectrumReport, KernelCount]:
    """Spectrum plus kernel count, doubling ``num_pairs`` until the cluster is separated."""
    while True:
        rep = smallest_eigenpairs(op, cfg, gap_scale)
        try:
            if rep.cluster_size >= rep.eigenvalues.size:
                raise ValueError("all reported pairs lie in the near-zero cluster; raise num_pairs")
            kc = kernel_dim(rep, op)
        except ValueError:
            nxt = _grow(cfg)
            if nxt is None:
                raise
            cfg = nxt
            continue
        # a window cut inside the cluster shows up as a weak separation
        nxt = _grow(cfg)
        if kc.separation_ratio >= SEPARATION_MIN or nxt is None:
            return rep, kc
        cfg = nxt


def cluster_subspace(op: RealOperator, cfg: SolverConfig = SolverConfig(),
                     gap_scale: Optional[float] = None) -> np.ndarray:
    """Orthonormal basis of the near-zero cluster of a symmetric operator."""
    while True:
        rep = smallest_eigenpairs(op, cfg, gap_scale)
        if rep.cluster_size < rep.eigenvalues.size:
            return rep.vectors[:, :rep.cluster_size]
        cfg = _grow(cfg)
        if cfg is None:
            raise ValueError("near-zero cluster larger than the maximal window")


def subspace_distance(A: np.ndarray, B: np.ndarray) -> float:
    """Sine of the largest principal angle between two orthonormal bases."""
    if A.shape[1] != B.shape[1]:
        raise ValueError("kernel dims differ")
    if A.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(A - B @ (B.T @ A), 2))


# ----------------------------------------------------------------- index


@dataclass(frozen=True)
class IndexReport:
    run_id: str
    dim_plus: int
    dim_minus: int
    expected: int
    separation_ratio: float
    ambiguous: bool
    lattice_plus: int = 0
    lattice_minus: int = 0

    @property
    def index(self) -> int:
        return self.dim_plus - self.dim_minus

    @property
    def complex_index(self) -> float:
        return self.index / 2


def index_count(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig,
                cfg: SolverConfig = SolverConfig(), run_id: str = "run",
                gap_scale: Optional[float] = None, strict: bool = True) -> IndexReport:
    """Kernel dims of ``H`` with the declared ``sum k(x)`` for comparison."""
    op = assemble_H(grid, gauge, higgs)
    _, kc = solve_with_kernel(op, cfg, gap_scale)
    if strict and kc.ambiguous:
        raise ValueError(f"separation ambiguity in run {run_id!r} (ratio {kc.separation_ratio:.3g})")
    return IndexReport(run_id, kc.dim_plus, kc.dim_minus, higgs.total_index, kc.separation_ratio,
                       kc.ambiguous, kc.lattice_plus, kc.lattice_minus)


def index_rows(reports: Sequence[IndexReport]) -> list[tuple]:
    return [(r.run_id, r.dim_plus, r.dim_minus, r.expected) for r in reports]


# --------------------------------------------------------------- gap scan


@dataclass(frozen=True)
class GapScan:
    t: tuple
    gap: tuple
    tau: tuple
    cluster_max: tuple
    slope: float
    stderr: float
    predicted: float
    excluded: tuple = ()

    def ratio(self) -> float:
        return self.slope / self.predicted


def gap_scan(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig,
             schedule: ScalingSchedule, cfg: SolverConfig = SolverConfig()) -> GapScan:
    """Fit ``log gap`` against ``log t``; the prediction is ``1/(M+1)``.

    The gap is the smallest smooth (non-artifact) ``|lam|`` outside the
    near-zero cluster.  Points whose solve did not converge are excluded
    and listed in ``excluded``.
    """
    ts, gaps, taus, cmax, bad = [], [], [], [], []
    for t in schedule.t_values:
        tau = float(schedule.tau(t))
        op = assemble_H(grid, gauge, higgs.with_scale(t))
        try:
            rep, _ = solve_with_kernel(op, cfg, gap_scale=tau)
            g = spectral_gap(rep, physical_only=True)
        except (ValueError, ArithmeticError):
            bad.append(t)
            continue
        if not rep.converged:
            bad.append(t)
            continue
        ts.append(t)
        gaps.append(g)
        taus.append(tau)
        cl = np.abs(rep.eigenvalues[:rep.cluster_size])
        cmax.append(float(cl.max()) if cl.size else 0.0)
    if len(ts) < 2:
        raise ValueError("fewer than two converged points in the gap scan")
    slope, err = loglog_slope(ts, gaps)
    return GapScan(tuple(ts), tuple(gaps), tuple(taus), tuple(cmax), slope, err,
                   1.0 / (schedule.M + 1), tuple(bad))


def gapscan_rows(scan: GapScan) -> list[tuple]:
    return [(t, g, tau, scan.slope) for t, g, tau in zip(scan.t, scan.gap, scan.tau)]


# ----------------------------------------------------------- concentration


MASS_FLOOR = 1e-14


@dataclass(frozen=True)
class ConcentrationProfile:
    t: float
    deltas: tuple
    mass_outside: tuple
    per_vector: tuple
    floored: tuple


def distance_to_zeros(grid: Grid2D, zeros: Sequence[ZeroDatum]) -> np.ndarray:
    if not zeros:
        raise ValueError("Higgs field declares no zeros")
    if isinstance(grid, Torus):
        return np.min([torus_distance(grid, z.position) for z in zeros], axis=0)
    return np.min([np.abs(grid.coords() - z.position) for z in zeros], axis=0)


def _site_density(vecs: np.ndarray, n_sites: int) -> np.ndarray:
    """Per-site mass of each realified spinor column (both chiralities)."""
    sq = vecs.reshape(n_sites, 4, -1) ** 2
    return sq.sum(axis=1)


def mass_outside(vecs: np.ndarray, grid: Grid2D, dist: np.ndarray, deltas) -> np.ndarray:
    """Fraction of each column's mass at distance ``> delta``; shape (cols, deltas)."""
    dens = _site_density(vecs, grid.n_sites)
    tot = dens.sum(axis=0)
    d = dist.ravel()
    out = np.array([[float(dens[d > delta, j].sum() / tot[j]) for delta in deltas]
                    for j in range(vecs.shape[1])])
    return out.reshape(vecs.shape[1], len(deltas))


def concentration_profile(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig,
                          deltas: Sequence[float], schedule: ScalingSchedule,
                          cfg: SolverConfig = SolverConfig()) -> list[ConcentrationProfile]:
    """Mass of the smooth kernel outside ``delta``-balls around the zeros.

    ``mass_outside`` is the average over an orthonormal basis of the smooth
    kernel (the trace of the projector restricted to the far region,
    divided by its rank).  Values below ``MASS_FLOOR`` are reported as
    the floor and flagged.
    """
    dist = distance_to_zeros(grid, higgs.zeros)
    deltas = tuple(float(d) for d in deltas)
    out = []
    for t in schedule.t_values:
        op = assemble_H(grid, gauge, higgs.with_scale(t))
        rep, _ = solve_with_kernel(op, cfg, gap_scale=float(schedule.tau(t)))
        bp, bm = smooth_kernel_basis(rep, op)
        basis = np.hstack([bp, bm])
        if basis.shape[1] == 0:
            raise ValueError(f"no smooth kernel vectors at t={t}")
        per = mass_outside(basis, grid, dist, deltas)
        avg = per.mean(axis=0)
        floored = tuple(bool(a < MASS_FLOOR) for a in avg)
        avg = np.maximum(avg, MASS_FLOOR)
        out.append(ConcentrationProfile(float(t), deltas, tuple(float(a) for a in avg),
                                        tuple(tuple(float(v) for v in row) for row in per), floored))
    return out


def concentration_slope(profiles: Sequence[ConcentrationProfile], delta: float,
                        slack: float = 0.05) -> tuple[float, bool]:
    """Log-log slope of ``mass_outside(delta)`` in ``t`` and monotonicity.

    Floored points are left out of the fit.  Monotone means each step is
    at most ``(1 + slack)`` times the previous value.
    """
    j = profiles[0].deltas.index(float(delta))
    ts = [p.t for p in profiles]
    ms = [p.mass_outside[j] for p in profiles]
    monotone = all(b <= (1 + slack) * a for a, b in zip(ms, ms[1:]))
    keep = [i for i, p in enumerate(profiles) if not p.floored[j]]
    if len(keep) < 2:
        return -math.inf, monotone
    slope, _ = loglog_slope([ts[i] for i in keep], [ms[i] for i in keep])
    return slope, monotone


def concentration_rows(profiles: Sequence[ConcentrationProfile]) -> list[tuple]:
    return [(p.t, d, m) for p in profiles for d, m in zip(p.deltas, p.mass_outside)]


# ------------------------------------------------------------ Riemann--Roch


@dataclass(frozen=True, eq=False)
class RiemannRoch:
    deg_L: int
    dim_plus: int
    dim_minus: int
    expected: int
    vortex: object = None

    @property
    def complex_index(self) -> float:
        return (self.dim_plus - self.dim_minus) / 2


def spread_zeros(grid: Torus, d: int) -> tuple:
    """Deterministic, well separated, off-lattice positions for ``d`` simple zeros."""
    out = []
    for j in range(d):
        x = grid.lx * ((j + 0.5) / d) + 0.013 * grid.hx
        y = grid.ly * (((0.5 + 0.618034 * j) % 1.0)) + 0.029 * grid.hy
        out.append((complex(x % grid.lx, y % grid.ly), 1))
    return tuple(out)


def riemann_roch_check(grid: Torus, deg_L: int, tau_factor: float = 2.0,
                       cfg: SolverConfig = SolverConfig()) -> RiemannRoch:
    """Complex index of ``dbar`` on ``L`` (genus 1) from a vortex of degree ``2 deg_L``.

    ``deg_L = 0`` uses the trivial bundle with a constant nonvanishing
    ``Phi``.  The expected value is ``deg L + 1 - genus = deg L``.
    """
    if deg_L < 0:
        raise ValueError("deg_L must be nonnegative")
    if deg_L == 0:
        gauge = GaugeField.trivial(grid)
        higgs = HiggsConfig(grid, np.ones(grid.shape, dtype=complex), (), 1.0)
        sol = None
    else:
        d = 2 * deg_L
        sol = solve_vortex(VortexProblem(grid, spread_zeros(grid, d), tau_factor * bradlow_threshold(grid, d)))
        gauge, higgs = vortex_to_jr(sol, side="rr")
    op = assemble_H(grid, gauge, higgs)
    _, kc = solve_with_kernel(op, cfg)
    if kc.ambiguous:
        raise ValueError(f"separation ambiguity (ratio {kc.separation_ratio:.3g})")
    return RiemannRoch(deg_L, kc.dim_plus, kc.dim_minus, deg_L, sol)


# ------------------------------------------------------------ equivariance


def gauge_equivariance_check(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig,
                             mu: np.ndarray, cfg: SolverConfig = SolverConfig(),
                             gap_scale: Optional[float] = None) -> float:
    """Distance between ``mu ker H`` and ``ker H`` of the transformed pair.

    The transformation acts by ``U -> mu U conj(mu(x+e))`` and
    ``Phi -> mu^2 Phi``.  "Kernel" is the near-zero cluster.
    """
    mu = np.asarray(mu, dtype=complex)
    if mu.shape != grid.shape or np.max(np.abs(np.abs(mu) - 1)) > 1e-12:
        raise ValueError("mu must be a unit-modulus field on the grid")
    K1 = cluster_subspace(assemble_H(grid, gauge, higgs), cfg, gap_scale)
    g2, h2 = gauge_transform(gauge, higgs, mu)
    K2 = cluster_subspace(assemble_H(grid, g2, h2), cfg, gap_scale)
    W = realified_unitary(mu)
    return subspace_distance(W @ K1, K2)


@dataclass(frozen=True)
class ConformalResult:
    dims_flat: tuple
    dims_conformal: tuple
    residual: float
    bound: float
    h: float


def conformal_check(grid: Grid2D, gauge: Optional[GaugeField], higgs: HiggsConfig,
                    phi_conf: np.ndarray, cfg: SolverConfig = SolverConfig(),
                    gap_scale: Optional[float] = None) -> ConformalResult:
    """Kernel dims before and after ``g -> e^{2 phi} g``, and transport residual.

    The residual is ``max |H^phi (e^{-phi/2} psi)| / |e^{-phi/2} psi|`` over
    an orthonormal basis of the smooth flat kernel.
    """
    f = np.asarray(phi_conf, dtype=float)
    op = assemble_H(grid, gauge, higgs)
    rep, kc = solve_with_kernel(op, cfg, gap_scale)
    bp, bm = smooth_kernel_basis(rep, op)
    conf = assemble_conformal(grid, gauge, higgs, f)
    scale = gap_scale if gap_scale is not None else max(rep.gap, 1e-12)
    bk = block_kernel_count(conf.chiral_block, conf.meta["upper_block"], grid, gauge, scale,
                            k=max(16, kc.cluster_size + 8), seed=cfg.seed)
    w = np.repeat(np.exp(-0.5 * f.ravel()), 4)
    res = 0.0
    for v in np.hstack([bp, bm]).T:
        tv = w * v
        res = max(res, float(np.linalg.norm(conf.matrix @ tv) / np.linalg.norm(tv)))
    gx = np.diff(f, axis=0) / grid.hx
    gy = np.diff(f, axis=1) / grid.hy
    dmax = max(float(np.max(np.abs(gx), initial=0.0)), float(np.max(np.abs(gy), initial=0.0)))
    h = float(min(grid.hx, grid.hy))
    return ConformalResult((kc.dim_plus, kc.dim_minus), (bk.dim_plus, bk.dim_minus), res,
                           10 * h * (1 + dmax), h)


# -------------------------------------------------------------------- BdG


@dataclass(frozen=True)
class BdGCheck:
    p_sign: int
    s_phi: int
    commutation: float
    square: float
    kernel_invariance: float
    kernel_dim: int

    @property
    def c_square(self) -> int:
        return self.p_sign * self.s_phi


def bdg_symmetry_check(bdg, trials: int = 8, seed: int = 0,
                       cfg: SolverConfig = SolverConfig(), gap_scale: Optional[float] = None) -> BdGCheck:
    """Residuals of ``H C = p C H`` and ``C^2 = s p`` plus kernel invariance under ``C``."""
    H = bdg.h_hat.matrix
    C = bdg.c_hat
    p, s = bdg.p_sign, bdg.s_phi
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((H.shape[0], trials))
    V /= np.linalg.norm(V, axis=0)
    comm = np.linalg.norm(H @ (C @ V) - p * (C @ (H @ V)), axis=0).max()
    sq = np.linalg.norm(C @ (C @ V) - s * p * V, axis=0).max()
    K = cluster_subspace(bdg.h_hat, cfg, gap_scale)
    inv = subspace_distance(np.asarray(C @ K), K) if K.shape[1] else 0.0
    return BdGCheck(p, s, float(comm), float(sq), inv, int(K.shape[1]))


def bdg_rows(checks: Sequence[BdGCheck]) -> list[tuple]:
    return [(c.p_sign, c.s_phi, c.c_square, c.commutation, c.square, c.kernel_invariance, c.kernel_dim)
            for c in checks]


__all__ = [
    "MAX_PAIRS",
    "solve_with_kernel",
    "cluster_subspace",
    "subspace_distance",
    "IndexReport",
    "index_count",
    "index_rows",
    "GapScan",
    "gap_scan",
    "gapscan_rows",
    "MASS_FLOOR",
    "ConcentrationProfile",
    "distance_to_zeros",
    "mass_outside",
    "concentration_profile",
    "concentration_slope",
    "concentration_rows",
    "RiemannRoch",
    "spread_zeros",
    "riemann_roch_check",
    "gauge_equivariance_check",
    "ConformalResult",
    "conformal_check",
    "BdGCheck",
    "bdg_symmetry_check",
    "bdg_rows",
]
