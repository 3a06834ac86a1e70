"""Complex spinor representations of CL_{t,s} and their conjugate-linear maps.

Generators satisfy ``g_i g_j + g_j g_i = -2 eta_ij`` with
``eta = diag(-1,...,-1, +1,...,+1)`` (``t`` timelike entries first), so
spacelike generators are skew-Hermitian and square to ``-1`` while
timelike ones are Hermitian and square to ``+1``.

A conjugate-linear map is stored as a matrix ``M`` acting by
``psi -> M @ conj(psi)``.  Composition rules used throughout::

    A cl(v) A^{-1} = sigma cl(v)   <=>   M conj(g) = sigma g M
    A^2 = s_sign                   <=>   M conj(M) = s_sign * I

The reference sign table is indexed by ``rho = (s - t) mod 8``.  With
the generator convention above this is the index under which the
classical table is valid (the 2D Jackiw--Rossi map with sigma = -1,
A^2 = +1 sits at rho = 2).
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

_S1 = np.array([[0, 1], [1, 0]], dtype=complex)
_S2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
_S3 = np.array([[1, 0], [0, -1]], dtype=complex)
_I2 = np.eye(2, dtype=complex)

MAX_DIM = 8


@dataclass(frozen=True)
class Signature:
    t: int
    s: int

    def __post_init__(self):
        if self.t < 0 or self.s < 0:
            raise ValueError("t and s must be nonnegative")
        if self.t + self.s > MAX_DIM:
            raise ValueError(f"signature ({self.t},{self.s}) out of supported range t+s <= {MAX_DIM}")
        if self.t + self.s == 0:
            raise ValueError("signature must have at least one direction")

    @property
    def d(self) -> int:
        return self.t + self.s

    @property
    def r(self) -> int:
        return self.t - self.s

    @property
    def rho(self) -> int:
        """Table index ``(s - t) mod 8``."""
        return (self.s - self.t) % 8

    def metric(self) -> np.ndarray:
        return np.array([-1.0] * self.t + [1.0] * self.s)


@dataclass(frozen=True, eq=False)
class SpinorRep:
    signature: Signature
    gammas: tuple
    parity: Optional[np.ndarray]

    @property
    def dim(self) -> int:
        return self.gammas[0].shape[0]

    def clifford(self, idx) -> np.ndarray:
        """Product ``g_{i1} ... g_{ik}`` for an increasing index tuple."""
        out = np.eye(self.dim, dtype=complex)
        for i in idx:
            out = out @ self.gammas[i]
        return out


@dataclass(frozen=True, eq=False)
class PairingMap:
    matrix: np.ndarray
    sigma: int
    s_sign: int
    sigma_choice: Optional[int]

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ np.conj(psi)


def _kron(*mats):
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def _hermitian_generators(d: int) -> list:
    k = d // 2
    out = []
    for j in range(k):
        pre, post = [_S3] * j, [_I2] * (k - j - 1)
        out.append(_kron(*pre, _S1, *post))
        out.append(_kron(*pre, _S2, *post))
    if d % 2:
        out.append(_kron(*([_S3] * k)))
    return out


def gamma_basis(sig: Signature) -> SpinorRep:
    """Tensor-product generators of CL_{t,s} on ``C^(2^(d//2))``.

    Parameters
    ----------
    sig : Signature
        ``t`` timelike directions come first.

    Returns
    -------
    SpinorRep
        Generators with entries in {0, +-1, +-i}; the grading operator is
        included in even dimension.
    """
    herm = _hermitian_generators(sig.d)
    gammas = tuple(herm[i] if i < sig.t else 1j * herm[i] for i in range(sig.d))
    parity = None
    if sig.d % 2 == 0:
        vol = np.eye(herm[0].shape[0], dtype=complex)
        for g in gammas:
            vol = vol @ g
        # choose the power of i that makes P an involution
        for c in (1, 1j, -1, -1j):
            cand = c * (1j ** (sig.d // 2)) * vol
            if np.array_equal(cand @ cand, np.eye(vol.shape[0])):
                parity = cand
                break
    return SpinorRep(sig, gammas, parity)


def check_relations(rep: SpinorRep) -> float:
    """Max-norm defect of the Clifford relations and of the grading."""
    eta = rep.signature.metric()
    n = rep.dim
    err = 0.0
    for i, gi in enumerate(rep.gammas):
        for j, gj in enumerate(rep.gammas):
            target = -2 * eta[i] * np.eye(n) if i == j else np.zeros((n, n))
            err = max(err, float(np.abs(gi @ gj + gj @ gi - target).max()))
        skew = gi + gi.conj().T if eta[i] > 0 else gi - gi.conj().T
        err = max(err, float(np.abs(skew).max()))
    if rep.parity is not None:
        P = rep.parity
        err = max(err, float(np.abs(P @ P - np.eye(n)).max()))
        for g in rep.gammas:
            err = max(err, float(np.abs(P @ g + g @ P).max()))
    return err


def _intertwiners(rep: SpinorRep, sigma: int) -> np.ndarray:
    """Null space of ``M -> M conj(g) - sigma g M`` over all generators."""
    n = rep.dim
    eye = np.eye(n)
    rows = [np.kron(np.conj(g).T, eye) - sigma * np.kron(eye, g) for g in rep.gammas]
    _, sv, vh = np.linalg.svd(np.vstack(rows), full_matrices=False)
    return vh[int(np.sum(sv > 1e-9)):].conj()


def _exact_unimodular(v: np.ndarray, n: int) -> np.ndarray:
    M = v.reshape((n, n), order="F")
    M = M / M.flat[int(np.argmax(np.abs(M)))]
    snapped = np.round(M.real) + 1j * np.round(M.imag)
    if np.abs(snapped - M).max() > 1e-9:
        raise ArithmeticError("intertwiner does not have unit entries")
    return snapped


def default_sigma(sig: Signature) -> Optional[int]:
    """Even-dimensional convention ``sigma_0 = sigma_2 = -1``, ``sigma_4 = sigma_6 = +1``."""
    if sig.d % 2:
        return None
    return {0: -1, 2: -1, 4: 1, 6: 1}[sig.rho]


def build_pairing(rep: SpinorRep, sigma_choice: Optional[int] = None) -> PairingMap:
    """Conjugate-linear map ``A`` with ``A cl(v) = sigma cl(v) A``.

    In even dimension both signs exist and ``sigma_choice`` selects one
    (default from :func:`default_sigma`); in odd dimension exactly one
    sign admits a solution and ``sigma_choice`` is ignored.
    """
    n = rep.dim
    if rep.signature.d % 2 == 0:
        want = default_sigma(rep.signature) if sigma_choice is None else int(sigma_choice)
        if want not in (-1, 1):
            raise ValueError("sigma_choice must be +1 or -1")
        candidates = [want]
    else:
        candidates = [1, -1]
    for sigma in candidates:
        null = _intertwiners(rep, sigma)
        if len(null) == 0:
            continue
        if len(null) != 1:
            raise ArithmeticError("intertwiner is not unique up to scale")
        M = _exact_unimodular(null[0], n)
        sq = M @ np.conj(M)
        s_sign = int(round(sq[0, 0].real))
        return PairingMap(M, sigma, s_sign, want if rep.signature.d % 2 == 0 else None)
    raise ArithmeticError("no conjugate-linear intertwiner found")


def pairing_defects(rep: SpinorRep, A: PairingMap) -> dict:
    """Exact residuals of the defining relations of ``A``."""
    M = A.matrix
    n = rep.dim
    comm = max(float(np.abs(M @ np.conj(g) - A.sigma * g @ M).max()) for g in rep.gammas)
    square = float(np.abs(M @ np.conj(M) - A.s_sign * np.eye(n)).max())
    unitary = float(np.abs(M @ M.conj().T - np.eye(n)).max())
    return {"commutation": comm, "square": square, "antiunitary": unitary}


def parity_type(rep: SpinorRep, A: PairingMap) -> Optional[str]:
    """``'even'`` or ``'odd'`` relative to the grading, None in odd dimension."""
    if rep.parity is None:
        return None
    P, M = rep.parity, A.matrix
    if np.array_equal(M @ np.conj(P), P @ M):
        return "even"
    if np.array_equal(M @ np.conj(P), -(P @ M)):
        return "odd"
    return "mixed"


# Reference list indexed by rho = (s - t) mod 8.  Entries are
# (sigma, s_sign, parity); None means "free" (sigma) or a function of it.
# For rho = 5 the square sign is -1 (quaternionic case, as for rho = 3).
def expected_row(rho: int, sigma: Optional[int] = None) -> dict:
    if rho == 0:
        return {"sigma": sigma, "s_sign": 1, "parity": "even"}
    if rho == 1:
        return {"sigma": -1, "s_sign": 1, "parity": None}
    if rho == 2:
        return {"sigma": sigma, "s_sign": -sigma, "parity": "odd"}
    if rho == 3:
        return {"sigma": 1, "s_sign": -1, "parity": None}
    if rho == 4:
        return {"sigma": sigma, "s_sign": -1, "parity": "even"}
    if rho == 5:
        return {"sigma": -1, "s_sign": -1, "parity": None}
    if rho == 6:
        return {"sigma": sigma, "s_sign": sigma, "parity": "odd"}
    if rho == 7:
        return {"sigma": 1, "s_sign": 1, "parity": None}
    raise ValueError(rho)


def _pattern(sigma: int) -> str:
    return "commutes" if sigma == 1 else "anticommutes"


def form_blocks(rep: SpinorRep, A: PairingMap, k: int) -> list:
    """Pairs ``(I, N_I)`` with ``B(cl(dx^I) x, y) = x^T N_I y``, ``|I| = k``."""
    Mh = A.matrix.conj().T
    return [(I, rep.clifford(I).T @ Mh) for I in itertools.combinations(range(rep.signature.d), k)]


def formula_sign(k: int, A: PairingMap) -> int:
    return (-1) ** (k * (k + 1) // 2) * A.s_sign * A.sigma ** k


def symmetry_sign(k: int, sig: Signature, sigma_choice: Optional[int] = None) -> int:
    """``(-1)^{k(k+1)/2} s_r sigma_r^k``, checked against the measured swap symmetry.

    The Hermitian form is the identity, so timelike generators are
    self-adjoint rather than skew-adjoint; each timelike index in ``I``
    flips the measured sign of the ``dx^I`` block relative to the formula.
    """
    d = sig.d
    if k < 0 or k > d or (d % 2 and k % 2):
        raise ValueError(f"invalid form degree {k} for d = {d}")
    rep = gamma_basis(sig)
    A = build_pairing(rep, sigma_choice)
    predicted = formula_sign(k, A)
    if not symmetry_matches(rep, A, k):
        raise ArithmeticError(f"degree {k} blocks do not have symmetry {predicted}")
    return predicted


def block_symmetry(N: np.ndarray) -> int:
    if np.array_equal(N.T, N):
        return 1
    if np.array_equal(N.T, -N):
        return -1
    return 0


def symmetry_matches(rep: SpinorRep, A: PairingMap, k: int) -> bool:
    t = rep.signature.t
    pred = formula_sign(k, A)
    for I, N in form_blocks(rep, A, k):
        timelike = sum(1 for i in I if i < t)
        if block_symmetry(N) != pred * (-1) ** timelike:
            return False
    return True


def bhat_rank_check(rep: SpinorRep, A: PairingMap) -> int:
    """Rank of ``x (x) y -> (B(cl(dx^I) x, y))_I`` over the admissible degrees."""
    d = rep.signature.d
    degrees = range(0, d + 1, 2) if d % 2 else range(d + 1)
    rows = [N.ravel() for k in degrees for _, N in form_blocks(rep, A, k)]
    return int(np.linalg.matrix_rank(np.array(rows)))


def verify_mod8_table(max_dim: int = MAX_DIM) -> list[dict]:
    """Check every signature with ``t + s <= max_dim`` against the sign list.

    Even dimensions are checked for both choices of sigma.
    """
    rows = []
    for d in range(1, max_dim + 1):
        for t in range(d + 1):
            sig = Signature(t, d - t)
            rep = gamma_basis(sig)
            choices = [None] if d % 2 else [-1, 1]
            for choice in choices:
                A = build_pairing(rep, choice)
                exp = expected_row(sig.rho, A.sigma)
                defects = pairing_defects(rep, A)
                ok = (A.sigma == exp["sigma"] and A.s_sign == exp["s_sign"]
                      and parity_type(rep, A) == exp["parity"]
                      and max(defects.values()) == 0.0
                      and check_relations(rep) == 0.0)
                degrees = range(0, d + 1, 2) if d % 2 else range(d + 1)
                for k in degrees:
                    ok = ok and symmetry_matches(rep, A, k)
                ok = ok and bhat_rank_check(rep, A) == rep.dim ** 2
                rows.append({"t": t, "s": d - t, "r": sig.r, "rho": sig.rho,
                             "sigma": A.sigma, "s_sign": A.s_sign,
                             "commute_pattern": _pattern(A.sigma),
                             "parity": parity_type(rep, A) or "-",
                             "pass": bool(ok)})
    return rows


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "s", "r", "sigma", "s_sign", "commute_pattern", "pass"])
    for row in rows:
        w.writerow([row["t"], row["s"], row["r"], row["sigma"], row["s_sign"],
                    row["commute_pattern"], "pass" if row["pass"] else "fail"])
    return buf.getvalue()
