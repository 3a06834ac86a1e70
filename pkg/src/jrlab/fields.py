"""Discrete geometry and field containers.

Two kinds of grid are supported.  A ``PlanePatch`` is the square
``[-R, R]^2`` sampled at cell centres with a zero (Dirichlet) convention
outside; a ``Torus`` is a periodic rectangle sampled at ``x_i = i*h``.
Sites are enumerated row-major over arrays of shape ``(nx, ny)`` indexed
``[ix, iy]``, i.e. ``site = ix*ny + iy``.

Link convention: ``ux[ix, iy]`` transports from ``(ix+1, iy)`` back to
``(ix, iy)``, so a covariant forward difference reads
``(ux * psi(x + e_x) - psi) / h``.  With ``U ~ exp(-i h A)`` the plaquette
angle ``-arg(U_x U_y(x+e_x) conj(U_x(x+e_y)) conj(U_y))`` is ``h^2 B``.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class PlanePatch:
    """Square patch ``[-R, R]^2`` with ``n`` cell-centred sites per side."""

    radius: float
    n: int

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError("radius must be positive")
        if self.n < 2:
            raise ValueError("n must be at least 2")

    periodic = False

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def h(self) -> float:
        return 2.0 * self.radius / self.n

    @property
    def hx(self) -> float:
        return self.h

    @property
    def hy(self) -> float:
        return self.h

    @property
    def n_sites(self) -> int:
        return self.n * self.n

    @property
    def area(self) -> float:
        return (2.0 * self.radius) ** 2

    def axis(self, k: int = 0) -> np.ndarray:
        return -self.radius + (np.arange(self.n) + 0.5) * self.h

    def coords(self) -> np.ndarray:
        """Complex coordinates ``z = x + iy`` of shape ``(n, n)``."""
        x = self.axis()
        return x[:, None] + 1j * x[None, :]

    def header(self) -> dict:
        return {"kind": "plane", "radius": self.radius, "n": self.n}


@dataclass(frozen=True)
class Torus:
    """Flat torus ``[0, Lx) x [0, Ly)`` with ``nx x ny`` sites."""

    lx: float
    ly: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("torus side lengths must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("torus needs at least 2 sites per side")

    periodic = True

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def h(self) -> float:
        if not math.isclose(self.hx, self.hy, rel_tol=1e-12):
            raise ValueError("anisotropic torus spacing has no single h")
        return self.hx

    @property
    def n_sites(self) -> int:
        return self.nx * self.ny

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def axis(self, k: int = 0) -> np.ndarray:
        if k == 0:
            return np.arange(self.nx) * self.hx
        return np.arange(self.ny) * self.hy

    def coords(self) -> np.ndarray:
        return self.axis(0)[:, None] + 1j * self.axis(1)[None, :]

    def header(self) -> dict:
        return {"kind": "torus", "lx": self.lx, "ly": self.ly,
                "nx": self.nx, "ny": self.ny}


Grid2D = Union[PlanePatch, Torus]


def grid_from_header(hdr: Mapping) -> Grid2D:
    if hdr["kind"] == "plane":
        return PlanePatch(float(hdr["radius"]), int(hdr["n"]))
    if hdr["kind"] == "torus":
        return Torus(float(hdr["lx"]), float(hdr["ly"]), int(hdr["nx"]), int(hdr["ny"]))
    raise ValueError(f"unknown grid kind {hdr['kind']!r}")


def cell_area(grid: Grid2D) -> float:
    return grid.hx * grid.hy


# --------------------------------------------------------------- fields


def _check_shape(grid, *arrays):
    for a in arrays:
        if a.shape != grid.shape:
            raise ValueError(f"array shape {a.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("field values must be finite")


@dataclass(frozen=True, eq=False)
class SpinorField:
    """Two complex components per site, chirality + and -."""

    grid: Grid2D
    plus: np.ndarray
    minus: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "plus", np.asarray(self.plus, dtype=complex))
        object.__setattr__(self, "minus", np.asarray(self.minus, dtype=complex))
        _check_shape(self.grid, self.plus, self.minus)

    def norm(self) -> float:
        w = cell_area(self.grid)
        return math.sqrt(w * float(np.sum(np.abs(self.plus) ** 2 + np.abs(self.minus) ** 2)))

    def to_real(self) -> np.ndarray:
        """Realified vector, per site ``(Re+, Im+, Re-, Im-)``."""
        out = np.empty((self.grid.n_sites, 4))
        p, m = self.plus.ravel(), self.minus.ravel()
        out[:, 0], out[:, 1], out[:, 2], out[:, 3] = p.real, p.imag, m.real, m.imag
        return out.ravel()

    @classmethod
    def from_real(cls, grid: Grid2D, vec: np.ndarray) -> "SpinorField":
        v = np.asarray(vec, dtype=float).reshape(grid.n_sites, 4)
        plus = (v[:, 0] + 1j * v[:, 1]).reshape(grid.shape)
        minus = (v[:, 2] + 1j * v[:, 3]).reshape(grid.shape)
        return cls(grid, plus, minus)


@dataclass(frozen=True, eq=False)
class GaugeField:
    """U(1) link variables ``ux``, ``uy`` (one per site and direction).

    On a plane patch the links leaving the patch are never used.  Spin
    twists are folded into the seam links of a torus; ``twists`` records
    which ones were applied so that the plaquette flux can be reported
    without them.
    """

    grid: Grid2D
    ux: np.ndarray
    uy: np.ndarray
    twists: tuple[bool, bool] = (False, False)

    def __post_init__(self):
        object.__setattr__(self, "ux", np.asarray(self.ux, dtype=complex))
        object.__setattr__(self, "uy", np.asarray(self.uy, dtype=complex))
        _check_shape(self.grid, self.ux, self.uy)
        if (np.max(np.abs(np.abs(self.ux) - 1.0), initial=0.0) > 1e-12
                or np.max(np.abs(np.abs(self.uy) - 1.0), initial=0.0) > 1e-12):
            raise ValueError("link variables must have unit modulus")

    @classmethod
    def trivial(cls, grid: Grid2D) -> "GaugeField":
        one = np.ones(grid.shape, dtype=complex)
        return cls(grid, one, one.copy())

    def untwisted(self) -> "GaugeField":
        ux, uy = self.ux.copy(), self.uy.copy()
        if self.twists[0]:
            ux[-1, :] *= -1
        if self.twists[1]:
            uy[:, -1] *= -1
        return GaugeField(self.grid, ux, uy)

    def plaquette_flux(self) -> np.ndarray:
        """Flux ``h^2 B`` per plaquette, principal values in ``(-pi, pi]``.

        On a plane patch the last row and column of plaquettes leave the
        patch and are returned as zero.
        """
        g = self.untwisted()
        ux, uy = g.ux, g.uy
        prod = ux * np.roll(uy, -1, axis=0) * np.conj(np.roll(ux, -1, axis=1)) * np.conj(uy)
        flux = -np.angle(prod)
        if not self.grid.periodic:
            flux[-1, :] = 0.0
            flux[:, -1] = 0.0
        return flux

    def total_flux(self) -> float:
        return float(np.sum(self.plaquette_flux()))


def torus_gauge_field(grid: Torus, degree: int, spin_twists: tuple[bool, bool] = (False, False)) -> GaugeField:
    """Uniform-flux links of a degree ``degree`` line bundle on ``grid``.

    ``spin_twists`` flips the sign of the seam links in x and/or y, which
    selects one of the four spin structures (periodic-periodic default).
    """
    if not isinstance(grid, Torus):
        raise TypeError("torus_gauge_field needs a Torus grid")
    degree = int(degree)
    nx, ny = grid.shape
    theta = 2.0 * math.pi * degree / (nx * ny)
    ix = np.arange(nx)[:, None]
    iy = np.arange(ny)[None, :]
    uy = np.exp(-1j * theta * ix) * np.ones((1, ny))
    ux = np.ones((nx, ny), dtype=complex)
    ux[-1, :] = np.exp(1j * theta * nx * iy[0])
    if spin_twists[0]:
        ux[-1, :] *= -1
    if spin_twists[1]:
        uy[:, -1] *= -1
    return GaugeField(grid, ux, uy, tuple(bool(s) for s in spin_twists))


@dataclass(frozen=True)
class ZeroDatum:
    position: complex
    k: int
    m: int

    def __post_init__(self):
        if self.m < 1 or abs(self.k) > self.m or (self.m - self.k) % 2:
            raise ValueError(f"invalid zero data k={self.k}, m={self.m}")


@dataclass(frozen=True, eq=False)
class HiggsConfig:
    """Perturbation samples ``phi`` with declared zeros and scale ``t``.

    The operator uses ``t * phi``.
    """

    grid: Grid2D
    phi: np.ndarray
    zeros: tuple[ZeroDatum, ...] = ()
    t: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=complex))
        object.__setattr__(self, "zeros", tuple(self.zeros))
        _check_shape(self.grid, self.phi)
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValueError("scale t must be positive")

    @property
    def scaled(self) -> np.ndarray:
        return self.t * self.phi

    def with_scale(self, t: float) -> "HiggsConfig":
        return HiggsConfig(self.grid, self.phi, self.zeros, float(t))

    @property
    def max_degree(self) -> int:
        return max((z.m for z in self.zeros), default=0)

    @property
    def total_index(self) -> int:
        return sum(z.k for z in self.zeros)

    def delta(self) -> float:
        """Quarter of the minimal pairwise zero distance (inf for < 2 zeros)."""
        pos = [z.position for z in self.zeros]
        if len(pos) < 2:
            return math.inf
        return min(abs(a - b) for i, a in enumerate(pos) for b in pos[i + 1:]) / 4.0

    def validate(self, floor: float = 1e-10, radius: float | None = None) -> None:
        """Reject coincident zeros and unexpected vanishing of ``phi``.

        Off the union of balls of radius ``radius`` (default ``delta``,
        capped at a quarter of the domain) around the declared zeros,
        ``|phi|`` must stay above ``floor * max|phi|``.
        """
        d = self.delta()
        if d <= 0:
            raise ValueError("declared zeros must be distinct")
        if radius is None:
            span = min(self.grid.hx * self.grid.shape[0], self.grid.hy * self.grid.shape[1])
            radius = min(d, span / 8)
        if self.grid.periodic:
            dist = np.full(self.grid.shape, np.inf)
            for z in self.zeros:
                dist = np.minimum(dist, torus_distance(self.grid, z.position))
        else:
            zz = self.grid.coords()
            dist = np.full(self.grid.shape, np.inf)
            for z in self.zeros:
                dist = np.minimum(dist, np.abs(zz - z.position))
        off = dist > radius
        mag = np.abs(self.phi)
        top = float(mag.max()) if mag.size else 0.0
        if np.any(off) and top > 0 and float(mag[off].min()) <= floor * top:
            raise ValueError("phi vanishes away from the declared zeros")


def torus_distance(grid: Torus, w: complex) -> np.ndarray:
    """Distance on the torus from every site to the point ``w``."""
    d = grid.coords() - w
    dx = (d.real + grid.lx / 2) % grid.lx - grid.lx / 2
    dy = (d.imag + grid.ly / 2) % grid.ly - grid.ly / 2
    return np.hypot(dx, dy)


# ------------------------------------------------------ scaling schedule


@dataclass(frozen=True)
class ScalingSchedule:
    t_values: tuple[float, ...]
    M: int

    def __post_init__(self):
        t = np.asarray(self.t_values, dtype=float)
        if t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("t_values must be positive and strictly increasing")
        if self.M < 0:
            raise ValueError("M must be nonnegative")
        object.__setattr__(self, "t_values", tuple(float(x) for x in t))

    def tau(self, t) -> np.ndarray:
        return np.asarray(t, dtype=float) ** (1.0 / (self.M + 1))


# ------------------------------------------------------ model sampling


Perturbation = Mapping[tuple[int, int], complex]


def eval_polynomial(coeffs: Perturbation | None, z: np.ndarray) -> np.ndarray:
    """Evaluate ``sum c_ab z^a conj(z)^b``."""
    out = np.zeros(np.shape(z), dtype=complex)
    if not coeffs:
        return out
    zb = np.conj(z)
    for (a, b), c in coeffs.items():
        out = out + complex(c) * z ** int(a) * zb ** int(b)
    return out


def perturbation_margin(T: complex, m: int, coeffs: Perturbation | None, samples: int = 256) -> float:
    """Largest ``eps`` with ``|phi| <= |T|(1-eps)|z|^m`` on the unit circle."""
    z = np.exp(2j * np.pi * np.arange(samples) / samples)
    ratio = float(np.max(np.abs(eval_polynomial(coeffs, z)))) / abs(T)
    return 1.0 - ratio


def sample_model_phi(grid: Grid2D, T: complex, p: int, q: int,
                     perturbation: Perturbation | None = None, eps: float = 0.5,
                     t: float = 1.0) -> HiggsConfig:
    """Samples of ``T z^p conj(z)^q + phi(z)`` with its zero at the origin."""
    if p < 0 or q < 0:
        raise ValueError("p and q must be nonnegative")
    if T == 0:
        raise ValueError("T must be nonzero")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    m, k = p + q, p - q
    if perturbation and perturbation_margin(T, m, perturbation) < eps - 1e-12:
        raise ValueError("perturbation too large for the declared eps margin")
    z = grid.coords()
    phi = complex(T) * z ** p * np.conj(z) ** q + eval_polynomial(perturbation, z)
    zeros = (ZeroDatum(0j, k, m),) if m > 0 else ()
    return HiggsConfig(grid, phi, zeros, t)


def sample_phi(grid: Grid2D, fn, zeros: Sequence[ZeroDatum] = (), t: float = 1.0) -> HiggsConfig:
    """Samples of an arbitrary callable ``fn(z)``."""
    return HiggsConfig(grid, np.asarray(fn(grid.coords()), dtype=complex), tuple(zeros), t)


# -------------------------------------------------------------- winding


def lattice_circle(grid: Grid2D, center: complex, radius: float) -> list[tuple[int, int]]:
    """Closed loop of lattice sites nearest to a circle, duplicates removed."""
    x0 = grid.axis(0)[0]
    y0 = grid.axis(1)[0]
    npts = max(64, int(16 * 2 * math.pi * radius / min(grid.hx, grid.hy)))
    ang = 2 * math.pi * np.arange(npts) / npts
    pts = center + radius * np.exp(1j * ang)
    ix = np.rint((pts.real - x0) / grid.hx).astype(int)
    iy = np.rint((pts.imag - y0) / grid.hy).astype(int)
    nx, ny = grid.shape
    if grid.periodic:
        ix %= nx
        iy %= ny
    elif ix.min() < 0 or iy.min() < 0 or ix.max() >= nx or iy.max() >= ny:
        raise ValueError("loop leaves the grid")
    loop: list[tuple[int, int]] = []
    for a, b in zip(ix, iy):
        s = (int(a), int(b))
        if not loop or loop[-1] != s:
            loop.append(s)
    while len(loop) > 1 and loop[-1] == loop[0]:
        loop.pop()
    return loop


def winding_number(phi: np.ndarray, loop: Sequence[tuple[int, int]]) -> int:
    """Winding of ``phi`` along a closed loop of sites."""
    vals = np.array([phi[i, j] for i, j in loop], dtype=complex)
    if np.any(np.abs(vals) == 0) or not np.all(np.isfinite(vals)):
        raise ValueError("zero encountered on loop")
    inc = np.angle(np.roll(vals, -1) / vals)
    if np.max(np.abs(inc)) > 0.9 * math.pi:
        raise ValueError("loop too coarse to track the phase")
    w = float(np.sum(inc)) / (2 * math.pi)
    return int(round(w))


def covariant_winding(phi: np.ndarray, gauge: GaugeField, corner: tuple[int, int],
                      size: tuple[int, int], charge: int = 1) -> int:
    """Gauge-invariant winding of ``phi`` around a lattice rectangle.

    ``phi`` has charge ``charge`` (it transports with ``U**charge``).  The
    rectangle has lower-left site ``corner`` and ``size`` links per side;
    the result counts zeros inside, independent of gauge.
    """
    nx, ny = gauge.grid.shape
    ux, uy = gauge.untwisted().ux ** charge, gauge.untwisted().uy ** charge
    i0, j0 = corner
    a, b = size
    total = 0.0

    def step(x, y, direction):
        nonlocal total
        if direction == "x+":
            u, x2, y2 = ux[x % nx, y % ny], x + 1, y
            val = np.conj(phi[x % nx, y % ny]) * u * phi[x2 % nx, y2 % ny]
        elif direction == "y+":
            u, x2, y2 = uy[x % nx, y % ny], x, y + 1
            val = np.conj(phi[x % nx, y % ny]) * u * phi[x2 % nx, y2 % ny]
        elif direction == "x-":
            u, x2, y2 = ux[(x - 1) % nx, y % ny], x - 1, y
            val = np.conj(phi[x % nx, y % ny]) * np.conj(u) * phi[x2 % nx, y2 % ny]
        else:
            u, x2, y2 = uy[x % nx, (y - 1) % ny], x, y - 1
            val = np.conj(phi[x % nx, y % ny]) * np.conj(u) * phi[x2 % nx, y2 % ny]
        if val == 0:
            raise ValueError("zero encountered on loop")
        total += float(np.angle(val))
        return x2, y2

    x, y = i0, j0
    for _ in range(a):
        x, y = step(x, y, "x+")
    for _ in range(b):
        x, y = step(x, y, "y+")
    for _ in range(a):
        x, y = step(x, y, "x-")
    for _ in range(b):
        x, y = step(x, y, "y-")
    gflux = GaugeField(gauge.grid, ux, uy).plaquette_flux()
    rows = np.arange(i0, i0 + a) % nx
    cols = np.arange(j0, j0 + b) % ny
    total += float(np.sum(gflux[np.ix_(rows, cols)]))
    return int(round(total / (2 * math.pi)))


# ------------------------------------------------------------ file I/O

MAGIC = b"JRLF"
VERSION = 1
_KINDS = {"spinor": 1, "gauge": 2, "higgs": 3}
_HEAD = struct.Struct("<4sHBI")


def _payload(obj) -> tuple[str, list[np.ndarray], dict]:
    if isinstance(obj, SpinorField):
        return "spinor", [obj.plus, obj.minus], {}
    if isinstance(obj, GaugeField):
        return "gauge", [obj.ux, obj.uy], {"twists": list(obj.twists)}
    if isinstance(obj, HiggsConfig):
        zs = [[z.position.real, z.position.imag, z.k, z.m] for z in obj.zeros]
        return "higgs", [obj.phi], {"t": obj.t, "zeros": zs}
    raise TypeError(f"cannot save {type(obj).__name__}")


def save_field(path, obj) -> None:
    """Write a field as magic, version, kind, JSON header, then LE f64 pairs."""
    kind, arrays, extra = _payload(obj)
    meta = json.dumps({"grid": obj.grid.header(), "ncomp": len(arrays), **extra},
                      sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_HEAD.pack(MAGIC, VERSION, _KINDS[kind], len(meta)))
    buf.write(meta)
    for a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<c16").tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_field(path, grid: Grid2D | None = None):
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise ValueError("malformed field file")
    magic, version, kind, mlen = _HEAD.unpack_from(raw)
    if magic != MAGIC or version != VERSION or kind not in _KINDS.values():
        raise ValueError("malformed field file")
    try:
        meta = json.loads(raw[_HEAD.size:_HEAD.size + mlen])
        g = grid_from_header(meta["grid"])
    except (ValueError, KeyError) as exc:
        raise ValueError("malformed field file") from exc
    if grid is not None and g != grid:
        raise ValueError("grid mismatch")
    n = g.n_sites
    body = raw[_HEAD.size + mlen:]
    if len(body) != 16 * n * meta["ncomp"]:
        raise ValueError("malformed field file")
    arrs = [a.reshape(g.shape).astype(complex)
            for a in np.frombuffer(body, dtype="<c16").reshape(meta["ncomp"], n)]
    if kind == _KINDS["spinor"]:
        return SpinorField(g, *arrs)
    if kind == _KINDS["gauge"]:
        return GaugeField(g, *arrs, twists=tuple(meta.get("twists", (False, False))))
    zeros = tuple(ZeroDatum(complex(a, b), int(k), int(m)) for a, b, k, m in meta["zeros"])
    return HiggsConfig(g, arrs[0], zeros, float(meta["t"]))


def export_csv(path_stem, obj) -> list[Path]:
    """One CSV per component with columns ix, iy, re, im."""
    kind, arrays, _ = _payload(obj)
    names = {"spinor": ["plus", "minus"], "gauge": ["ux", "uy"], "higgs": ["phi"]}[kind]
    out = []
    for name, a in zip(names, arrays):
        p = Path(f"{path_stem}_{name}.csv")
        lines = ["ix,iy,re,im"]
        nx, ny = a.shape
        for i in range(nx):
            for j in range(ny):
                v = a[i, j]
                lines.append(f"{i},{j},{v.real:.17g},{v.imag:.17g}")
        p.write_text("\n".join(lines) + "\n")
        out.append(p)
    return out
