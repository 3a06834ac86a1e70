"""Critically coupled vortices on a flat lattice torus.

Pipeline for a zero divisor ``sum m_i x_i`` of degree ``d``:

1. Scalar reduction.  ``|Phi|^2 = exp(u + u_s)`` with
   ``u_s = sum m_i G(x - x_i)``, where ``G`` is the periodic Green's
   function ``Delta G = 4 pi delta - 4 pi / Area`` (closed form through
   Jacobi's theta_1).  The smooth part solves

       Delta u = exp(u + u_s) - tau + 4 pi d / Area

   which is solved by damped Newton with the 5-point Laplacian.
2. Gauge reconstruction in unitary gauge (``Phi`` real positive at every
   site).  The connection is ``A = 1/2 (d_y v, -d_x v)`` with
   ``v = log|Phi|^2``; the singular part of each link angle is the exact
   angle the link subtends at each zero, the smooth part uses differences
   of ``u``.
3. Discrete polish.  A sparse Levenberg--Marquardt iteration drives the
   lattice Bogomolny system (forward-difference ``dbar_A Phi = 0`` per
   site, plaquette flux ``= h^2/2 (tau - |Phi|^2)``, Coulomb gauge
   relative to the start) to machine precision.

Link convention: ``U = exp(-i a)`` transports from ``x + e`` to ``x``,
so ``a = h A`` for ``nabla = d - i A`` and the plaquette sum of ``a`` is
``h^2 F``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import GaugeField, HiggsConfig, Torus, ZeroDatum, covariant_winding

MARGIN = 1.05


class BradlowError(ValueError):
    pass


class NewtonDivergence(RuntimeError):
    pass


def bradlow_threshold(grid: Torus, d: int) -> float:
    """``tau_0 = 4 pi d / Area``."""
    return 4.0 * math.pi * d / grid.area


@dataclass(frozen=True)
class VortexProblem:
    grid: Torus
    zeros: tuple  # ((position, multiplicity), ...)
    tau: float

    def __post_init__(self):
        if not isinstance(self.grid, Torus):
            raise TypeError("vortices are solved on a Torus grid")
        zs = tuple((complex(p), int(m)) for p, m in self.zeros)
        if any(m < 1 for _, m in zs):
            raise ValueError("zero multiplicities must be positive")
        object.__setattr__(self, "zeros", zs)
        if self.degree < 1:
            raise ValueError("vortex degree must be at least 1")
        if not math.isclose(self.grid.hx, self.grid.hy, rel_tol=1e-12):
            raise ValueError("vortex solver needs square cells")

    @property
    def degree(self) -> int:
        return sum(m for _, m in self.zeros)

    @property
    def tau0(self) -> float:
        return bradlow_threshold(self.grid, self.degree)

    def check_bradlow(self) -> None:
        if not self.tau > self.tau0:
            raise BradlowError(f"Bradlow bound violated: tau={self.tau:.6g} <= tau0={self.tau0:.6g}")
        if self.tau < MARGIN * self.tau0:
            raise BradlowError(f"tau={self.tau:.6g} is within the 5% margin above tau0={self.tau0:.6g}")

    def translated(self, shift: complex) -> "VortexProblem":
        g = self.grid
        moved = []
        for p, m in self.zeros:
            q = p + shift
            moved.append((complex(q.real % g.lx, q.imag % g.ly), m))
        return VortexProblem(g, tuple(moved), self.tau)


@dataclass(frozen=True, eq=False)
class VortexSolution:
    problem: VortexProblem
    gauge: GaugeField
    higgs: HiggsConfig
    ax: np.ndarray
    ay: np.ndarray
    residual_1: float
    residual_2: float
    newton_iters: int
    polish_iters: int
    kw_residual: float
    energy: float
    meta: dict = field(default_factory=dict)

    @property
    def phi(self) -> np.ndarray:
        return self.higgs.phi


# ------------------------------------------------------------ Green's function


def theta1(w: np.ndarray, q: float, terms: int = 24) -> np.ndarray:
    """Jacobi ``theta_1(w, q) = 2 sum (-1)^n q^{(n+1/2)^2} sin((2n+1) w)``."""
    w = np.asarray(w, dtype=complex)
    out = np.zeros_like(w)
    for n in range(terms):
        c = q ** ((n + 0.5) ** 2)
        if c < 1e-300:
            break
        out += ((-1) ** n) * c * np.sin((2 * n + 1) * w)
    return 2.0 * out


def _reduce(grid: Torus, d: np.ndarray) -> np.ndarray:
    """Representative of a displacement in ``[-L/2, L/2)^2``."""
    dx = (d.real + grid.lx / 2) % grid.lx - grid.lx / 2
    dy = (d.imag + grid.ly / 2) % grid.ly - grid.ly / 2
    return dx + 1j * dy


def green(grid: Torus, z: np.ndarray, center: complex) -> np.ndarray:
    """``G(z - center)`` with ``Delta G = 4 pi delta - 4 pi / Area``, up to a constant.

    ``G = 2 log|theta_1(pi w / Lx)| - 2 pi Im(w)^2 / Area`` for the reduced
    displacement ``w``; the expression is periodic in both directions.
    """
    w = _reduce(grid, np.asarray(z) - center)
    q = math.exp(-math.pi * grid.ly / grid.lx)
    th = theta1(math.pi * w / grid.lx, q)
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(np.abs(th)) - 2.0 * math.pi * w.imag ** 2 / grid.area


def singular_potential(prob: VortexProblem) -> np.ndarray:
    z = prob.grid.coords()
    us = np.zeros(prob.grid.shape)
    for p, m in prob.zeros:
        us += m * green(prob.grid, z, p)
    return us


def _laplacian(grid: Torus) -> sp.csr_matrix:
    nx, ny = grid.shape
    h2 = grid.h ** 2

    def ring(n):
        e = np.ones(n)
        return sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")

    Lx, Ly = ring(nx), ring(ny)
    Lx[0, nx - 1] = Lx[nx - 1, 0] = 1.0
    Ly[0, ny - 1] = Ly[ny - 1, 0] = 1.0
    return ((sp.kron(Lx, sp.identity(ny)) + sp.kron(sp.identity(nx), Ly)) / h2).tocsc()


def solve_kazdan_warner(prob: VortexProblem, tol: float = 1e-12, max_iter: int = 60):
    """Damped Newton for the scalar equation; returns ``(u, u_s, iters, residual)``."""
    g = prob.grid
    us = singular_potential(prob)
    es = np.exp(us).ravel()
    L = _laplacian(g)
    rhs = -prob.tau + prob.tau0
    # constant start with the right integral of exp(u + u_s)
    u = np.full(g.n_sites, math.log((prob.tau - prob.tau0) * g.n_sites / es.sum()))

    def resid(v):
        return L @ v - es * np.exp(v) - rhs

    r = resid(u)
    norm = float(np.max(np.abs(r)))
    for it in range(1, max_iter + 1):
        J = L - sp.diags(es * np.exp(u))
        step = splu(J.tocsc()).solve(-r)
        lam = 1.0
        while True:
            trial = u + lam * step
            rt = resid(trial)
            nt = float(np.max(np.abs(rt)))
            if nt < norm or lam < 1e-6:
                break
            lam *= 0.5
        if not np.all(np.isfinite(rt)) or (lam < 1e-6 and nt >= norm):
            raise NewtonDivergence("Newton iteration diverged")
        u, r, norm = trial, rt, nt
        if norm < tol * max(1.0, prob.tau):
            return u.reshape(g.shape), us, it, norm
    raise NewtonDivergence(f"Newton did not converge in {max_iter} steps (residual {norm:.3g})")


# ------------------------------------------------------------- gauge start


def _wrap(x):
    return x - 2 * math.pi * np.round(x / (2 * math.pi))


def unitary_gauge_links(prob: VortexProblem, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Link angles with ``Phi`` real positive: ``a = int 1/2 (d_y v, -d_x v) . dl``."""
    g = prob.grid
    h = g.h
    z = g.coords()
    q = math.exp(-math.pi * g.ly / g.lx)
    ax = np.zeros(g.shape)
    ay = np.zeros(g.shape)
    for p, m in prob.zeros:
        w0 = _reduce(g, z - p)
        arg0 = np.angle(theta1(math.pi * w0 / g.lx, q))
        argx = np.angle(theta1(math.pi * (w0 + h) / g.lx, q))
        argy = np.angle(theta1(math.pi * (w0 + 1j * h) / g.lx, q))
        ax += m * (-_wrap(argx - arg0) - 2 * math.pi * w0.imag * h / g.area)
        ay += m * (-_wrap(argy - arg0))
    # smooth part: centred derivatives averaged over the link endpoints
    du_y = (np.roll(u, -1, 1) - np.roll(u, 1, 1)) / (2 * h)
    du_x = (np.roll(u, -1, 0) - np.roll(u, 1, 0)) / (2 * h)
    ax += 0.5 * h * 0.5 * (du_y + np.roll(du_y, -1, 0))
    ay += -0.5 * h * 0.5 * (du_x + np.roll(du_x, -1, 1))
    return ax, ay


# ----------------------------------------------------------- discrete polish


def _plaquette_angles(ax, ay):
    return ax + np.roll(ay, -1, 0) - np.roll(ax, -1, 1) - ay


def bogomolny_residuals(phi, ax, ay, tau: float, h: float):
    """``(dbar_A Phi, F - (tau - |Phi|^2)/2)`` on sites and plaquettes."""
    ux, uy = np.exp(-1j * ax), np.exp(-1j * ay)
    px, py = np.roll(phi, -1, 0), np.roll(phi, -1, 1)
    r2 = ((ux * px - phi) + 1j * (uy * py - phi)) / (2 * h)
    rho = np.abs(phi) ** 2
    rho_p = 0.25 * (rho + np.roll(rho, -1, 0) + np.roll(rho, -1, 1) + np.roll(np.roll(rho, -1, 0), -1, 1))
    r1 = _wrap(_plaquette_angles(ax, ay)) / h ** 2 - 0.5 * (tau - rho_p)
    return r2, r1


def _divergence(ax, ay):
    return ax - np.roll(ax, 1, 0) + ay - np.roll(ay, 1, 1)


def _jacobian(phi, ax, ay, h):
    nx, ny = phi.shape
    N = nx * ny
    idx = np.arange(N).reshape(nx, ny)
    s = idx.ravel()
    px = np.roll(idx, -1, 0).ravel()
    py = np.roll(idx, -1, 1).ravel()
    pxy = np.roll(np.roll(idx, -1, 0), -1, 1).ravel()
    mx = np.roll(idx, 1, 0).ravel()
    my = np.roll(idx, 1, 1).ravel()
    f = phi.ravel()
    ux, uy = np.exp(-1j * ax).ravel(), np.exp(-1j * ay).ravel()
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(np.broadcast_to(v, r.shape).astype(float))

    # R2 rows: [0, N) real part, [N, 2N) imaginary part.  Unknowns
    # [Re Phi, Im Phi, ax, ay] in blocks of N.
    for c, col in ((-(1 + 1j) / (2 * h) * np.ones(N), s), (ux / (2 * h), px), (1j * uy / (2 * h), py)):
        put(s, col, c.real)
        put(s, N + col, -c.imag)
        put(N + s, col, c.imag)
        put(N + s, N + col, c.real)
    gx = -1j * ux * f[px] / (2 * h)
    gy = uy * f[py] / (2 * h)
    put(s, 2 * N + s, gx.real)
    put(N + s, 2 * N + s, gx.imag)
    put(s, 3 * N + s, gy.real)
    put(N + s, 3 * N + s, gy.imag)
    # R1 rows [2N, 3N)
    r1 = 2 * N + s
    inv = 1.0 / h ** 2
    put(r1, 2 * N + s, inv)
    put(r1, 3 * N + px, inv)
    put(r1, 2 * N + py, -inv)
    put(r1, 3 * N + s, -inv)
    for corner in (s, px, py, pxy):
        put(r1, corner, 0.25 * f[corner].real)
        put(r1, N + corner, 0.25 * f[corner].imag)
    # Coulomb rows [3N, 4N)
    rc = 3 * N + s
    put(rc, 2 * N + s, 1.0)
    put(rc, 2 * N + mx, -1.0)
    put(rc, 3 * N + s, 1.0)
    put(rc, 3 * N + my, -1.0)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(4 * N, 4 * N))


def polish(phi, ax, ay, tau: float, h: float, tol: float = 1e-11, max_iter: int = 50):
    """Levenberg--Marquardt on the discrete Bogomolny system plus Coulomb gauge.

    The lattice breaks the translation moduli only weakly, so the last
    digits can be stuck on a nearly flat direction; the iteration stops
    when the residual is below ``tol`` or the cost no longer decreases.
    """
    div0 = _divergence(ax, ay)
    N = phi.size
    shape = phi.shape

    def unpack(x):
        return ((x[:N] + 1j * x[N:2 * N]).reshape(shape), x[2 * N:3 * N].reshape(shape),
                x[3 * N:].reshape(shape))

    def resid(x):
        f, a, b = unpack(x)
        r2, r1 = bogomolny_residuals(f, a, b, tau, h)
        rc = _divergence(a, b) - div0
        return np.concatenate([r2.real.ravel(), r2.imag.ravel(), r1.ravel(), rc.ravel()])

    x = np.concatenate([phi.real.ravel(), phi.imag.ravel(), ax.ravel(), ay.ravel()])
    r = resid(x)
    cost = float(r @ r)
    lam = 1e-6
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(r[:3 * N])) < tol:
            break
        J = _jacobian(*unpack(x), h)
        JtJ = (J.T @ J).tocsc()
        g = J.T @ r
        scale = float(JtJ.diagonal().mean())
        improved = False
        while lam <= 1e6:
            A = JtJ + lam * scale * sp.identity(4 * N, format="csc")
            xt = x - splu(A).solve(g)
            rt = resid(xt)
            ct = float(rt @ rt)
            if ct < cost:
                improved = ct < (1 - 1e-6) * cost
                x, r, cost = xt, rt, ct
                lam = max(lam / 10, 1e-14)
                break
            lam *= 10
        if not improved:
            break
    f, a, b = unpack(x)
    return f, a, b, it


def discrete_energy(phi, ax, ay, tau: float, h: float) -> float:
    """``sum_p h^2 F^2 + sum_links |U Phi(x+e) - Phi(x)|^2 + sum_x h^2 (tau - |Phi|^2)^2 / 4``."""
    F = _wrap(_plaquette_angles(ax, ay)) / h ** 2
    ux, uy = np.exp(-1j * ax), np.exp(-1j * ay)
    kin = np.sum(np.abs(ux * np.roll(phi, -1, 0) - phi) ** 2) + np.sum(np.abs(uy * np.roll(phi, -1, 1) - phi) ** 2)
    pot = 0.25 * h * h * np.sum((tau - np.abs(phi) ** 2) ** 2)
    return float(h * h * np.sum(F ** 2) + kin + pot)


def solve_vortex(prob: VortexProblem, tol: float = 1e-8) -> VortexSolution:
    """Solve the tau-vortex equations to lattice residuals below ``tol``.

    Raises :class:`BradlowError` before any iteration if ``tau`` is not
    safely above the Bradlow threshold, and :class:`NewtonDivergence` if
    either stage fails to reach its tolerance.
    """
    prob.check_bradlow()
    g = prob.grid
    h = g.h
    u, us, iters, kw_res = solve_kazdan_warner(prob)
    phi0 = np.exp(0.5 * (u + us)).astype(complex)
    ax0, ay0 = unitary_gauge_links(prob, u)
    phi, ax, ay, pit = polish(phi0, ax0, ay0, prob.tau, h, tol=1e-3 * tol)
    r2, r1 = bogomolny_residuals(phi, ax, ay, prob.tau, h)
    worst = max(float(np.max(np.abs(r1))), float(np.max(np.abs(r2))))
    if worst > tol:
        raise NewtonDivergence(f"Bogomolny polish stalled at residual {worst:.3g}")
    gauge = GaugeField(g, np.exp(-1j * ax), np.exp(-1j * ay))
    zeros = tuple(ZeroDatum(p, m, m) for p, m in prob.zeros)
    higgs = HiggsConfig(g, phi, zeros, 1.0)
    return VortexSolution(prob, gauge, higgs, ax, ay, float(np.max(np.abs(r1))),
                          float(np.max(np.abs(r2))), iters, pit, kw_res,
                          discrete_energy(phi, ax, ay, prob.tau, h),
                          {"tau0": prob.tau0, "bogomolny_energy": 2 * math.pi * prob.tau * prob.degree})


# -------------------------------------------------------------- diagnostics


def zero_windings(sol: VortexSolution, half: int | None = None) -> list[int]:
    """Covariant winding of ``Phi`` around a lattice box centred on each zero."""
    g = sol.problem.grid
    h = g.h
    if half is None:
        half = max(2, int(0.25 * _min_separation(sol.problem) / h))
    out = []
    for p, _ in sol.problem.zeros:
        i0 = int(math.floor(p.real / h)) - half + 1
        j0 = int(math.floor(p.imag / h)) - half + 1
        out.append(covariant_winding(sol.phi, sol.gauge, (i0, j0), (2 * half - 1, 2 * half - 1)))
    return out


def _min_separation(prob: VortexProblem) -> float:
    g = prob.grid
    pts = [p for p, _ in prob.zeros]
    best = min(g.lx, g.ly)
    for i, a in enumerate(pts):
        for b in pts[i + 1:]:
            w = _reduce(g, np.asarray(a - b))
            best = min(best, float(abs(w)))
    return best


# ------------------------------------------------------------ JR transfer


def lift_link_angles(ax: np.ndarray, ay: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Add multiples of ``2 pi`` so that every plaquette excess is a multiple of ``4 pi``.

    The plaquette sum of the returned angles is ``flux + 4 pi n_p``, so
    halving them yields links whose plaquette flux is exactly half the
    original.  Odd plaquettes are paired along Dirac strings that run
    along each row to the last column, then up the last column; this
    needs an even total degree.
    """
    ax = np.array(ax, dtype=float)
    ay = np.array(ay, dtype=float)
    raw = _plaquette_angles(ax, ay)
    m = np.rint((raw - _wrap(raw)) / (2 * math.pi)).astype(int) % 2
    nx, ny = ax.shape
    for j in range(ny):
        for i in range(nx - 1):
            if m[i, j]:
                # shared link of plaquettes (i, j) and (i+1, j)
                ay[(i + 1) % nx, j] += 2 * math.pi
                m[i, j] ^= 1
                m[i + 1, j] ^= 1
    for j in range(ny - 1):
        if m[nx - 1, j]:
            ax[nx - 1, (j + 1) % ny] += 2 * math.pi
            m[nx - 1, j] ^= 1
            m[nx - 1, j + 1] ^= 1
    if m[nx - 1, ny - 1]:
        raise ValueError("odd total flux cannot be halved")
    return ax, ay


def vortex_to_jr(sol: VortexSolution, side: str = "jr") -> tuple[GaugeField, HiggsConfig]:
    """Gauge field of ``S_L`` and the JR perturbation built from a vortex.

    ``side="jr"``: ``L^2 = V^{-1}`` (degree ``-d/2``), ``Phi_JR = conj(Phi_V)``.
    ``side="rr"``: ``L^2 = V`` (degree ``+d/2``), ``Phi_JR = Phi_V``; used by
    the Riemann--Roch count.
    """
    d = sol.problem.degree
    if d % 2:
        raise ValueError("odd degree requires spin^c lattice realization (unsupported)")
    bx, by = lift_link_angles(sol.ax, sol.ay)
    g = sol.problem.grid
    if side == "jr":
        gauge = GaugeField(g, np.exp(0.5j * bx), np.exp(0.5j * by))
        phi = np.conj(sol.phi)
        k_sign = -1
    elif side == "rr":
        gauge = GaugeField(g, np.exp(-0.5j * bx), np.exp(-0.5j * by))
        phi = sol.phi
        k_sign = 1
    else:
        raise ValueError("side must be 'jr' or 'rr'")
    zeros = tuple(ZeroDatum(p, k_sign * m, m) for p, m in sol.problem.zeros)
    return gauge, HiggsConfig(g, phi, zeros, 1.0)


def vortex_rows(solutions: Sequence[VortexSolution]) -> list[tuple]:
    """Rows of ``vortex.csv``: d, tau, residual_1, residual_2, energy, iters."""
    return [(s.problem.degree, s.problem.tau, s.residual_1, s.residual_2, s.energy, s.newton_iters)
            for s in solutions]
