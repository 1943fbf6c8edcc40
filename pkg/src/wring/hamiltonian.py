"""Rydberg Hamiltonian on L two-level atoms, kink basis and the coherence observable.

Conventions
-----------
* Site ``i`` of a bit-string is character ``i`` counted from the left, and bit
  ``i`` of the basis-state index (site 0 is the least-significant bit).
* ``g`` is bit 0 (spin down), ``r`` is bit 1 (spin up); ``n = (1 + σᶻ)/2``.
* The drive term is ``(Ω/2)(e^{iφ}|g⟩⟨r| + h.c.) = (Ω/2)(cos φ σˣ + sin φ σʸ)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapacityError, ParityError, ValidationError

MAX_SITES = 13
_DENSE_EIG_MAX_DIM = 1 << 10

Scalar = Union[float, int]


# --------------------------------------------------------------------------
# bit-strings

_ALIASES = str.maketrans({"0": "g", "1": "r"})


def normalize_bitstring(s: str, L: Optional[int] = None) -> str:
    """Canonical {g, r} form of a bit-string; ``0``/``1`` are accepted aliases."""
    out = s.strip().translate(_ALIASES)
    if not out or set(out) - {"g", "r"}:
        raise ValidationError(f"bit-string {s!r} must use the alphabet {{g, r}} or {{0, 1}}")
    if L is not None and len(out) != L:
        raise ValidationError(f"bit-string {s!r} has length {len(out)}, expected {L}")
    return out


def bitstring_to_index(s: str) -> int:
    s = normalize_bitstring(s)
    return sum(1 << i for i, c in enumerate(s) if c == "r")


def index_to_bitstring(index: int, L: int) -> str:
    return "".join("r" if (index >> i) & 1 else "g" for i in range(L))


@lru_cache(maxsize=None)
def occupations(L: int) -> np.ndarray:
    """(2**L, L) table of Rydberg occupations; row = basis index."""
    idx = np.arange(1 << L)
    occ = ((idx[:, None] >> np.arange(L)) & 1).astype(np.int8)
    occ.setflags(write=False)
    return occ


def _check_sites(L: int):
    if L > MAX_SITES:
        raise CapacityError(f"L={L} exceeds the exact-simulation limit of {MAX_SITES} sites")


# --------------------------------------------------------------------------
# states

@dataclass(frozen=True)
class QuantumState:
    """Pure amplitude vector or density matrix in the computational z-basis."""

    kind: str
    data: np.ndarray
    L: int

    def __post_init__(self):
        if self.kind not in ("pure", "density"):
            raise ValidationError(f"unknown state kind {self.kind!r}")
        data = np.asarray(self.data, dtype=complex)
        dim = 1 << self.L
        expected = (dim,) if self.kind == "pure" else (dim, dim)
        if data.shape != expected:
            raise ValidationError(f"{self.kind} state for L={self.L} needs shape {expected}, "
                                  f"got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def pure(cls, vec) -> "QuantumState":
        vec = np.asarray(vec, dtype=complex)
        return cls("pure", vec, int(round(math.log2(vec.shape[0]))))

    @classmethod
    def density(cls, rho) -> "QuantumState":
        rho = np.asarray(rho, dtype=complex)
        return cls("density", rho, int(round(math.log2(rho.shape[0]))))

    @classmethod
    def basis(cls, s: str) -> "QuantumState":
        s = normalize_bitstring(s)
        vec = np.zeros(1 << len(s), dtype=complex)
        vec[bitstring_to_index(s)] = 1.0
        return cls("pure", vec, len(s))

    @property
    def dim(self) -> int:
        return 1 << self.L

    def probabilities(self) -> np.ndarray:
        if self.kind == "pure":
            return np.abs(self.data) ** 2
        return np.clip(self.data.diagonal().real, 0.0, None)

    def as_density(self) -> "QuantumState":
        if self.kind == "density":
            return self
        return QuantumState("density", np.outer(self.data, self.data.conj()), self.L)

    def norm_error(self) -> float:
        if self.kind == "pure":
            return abs(np.linalg.norm(self.data) - 1.0)
        return abs(np.trace(self.data) - 1.0)

    def check(self, tol: float = 1e-9) -> None:
        if self.norm_error() > tol:
            raise ValidationError(f"state is not normalized (error {self.norm_error():.2e})")
        if self.kind == "density":
            rho = self.data
            if np.abs(rho - rho.conj().T).max() > tol:
                raise ValidationError("density matrix is not Hermitian")
            if np.linalg.eigvalsh(rho).min() < -tol:
                raise ValidationError("density matrix has negative eigenvalues")

    def overlap(self, other: "QuantumState") -> float:
        """⟨other|ρ|other⟩ for a pure ``other`` (|⟨other|ψ⟩|² when self is pure)."""
        phi = other.data
        if self.kind == "pure":
            return float(abs(np.vdot(phi, self.data)) ** 2)
        return float(np.real(np.vdot(phi, self.data @ phi)))


def ground_state(L: int) -> QuantumState:
    return QuantumState.basis("g" * L)


# --------------------------------------------------------------------------
# symmetry sector

class DihedralSector:
    """Fully symmetric sector of the ring's rotation and reflection group.

    Columns of ``basis`` are normalized uniform superpositions over orbits of
    basis states. An ideal ring with uniform fields commutes with the group, and
    both the all-ground initial state and the kink superposition live in this
    sector, so ideal preparation can be propagated there exactly.
    """

    def __init__(self, L: int):
        _check_sites(L)
        self.L = L
        dim = 1 << L
        idx = np.arange(dim)
        occ = occupations(L)
        images = []
        for shift in range(L):
            rolled = np.roll(occ, shift, axis=1)
            images.append(rolled)
            images.append(rolled[:, ::-1])
        weights = 1 << np.arange(L)
        codes = np.stack([im.astype(np.int64) @ weights for im in images])
        rep = codes.min(axis=0)
        reps, col = np.unique(rep, return_inverse=True)
        counts = np.bincount(col)
        vals = 1.0 / np.sqrt(counts[col])
        self.representatives = reps
        self.orbit_sizes = counts
        self.basis = sp.csr_matrix((vals, (idx, col)), shape=(dim, len(reps)))
        self._rep_col = col

    @property
    def dim(self) -> int:
        return len(self.representatives)

    def project(self, vec: np.ndarray) -> np.ndarray:
        return self.basis.T @ vec

    def embed(self, vec: np.ndarray) -> np.ndarray:
        return self.basis @ vec

    def reduce(self, op) -> sp.csr_matrix:
        return (self.basis.T @ sp.csr_matrix(op) @ self.basis).tocsr()

    def contains(self, vec: np.ndarray, tol: float = 1e-12) -> bool:
        return np.linalg.norm(self.embed(self.project(vec)) - vec) <= tol * max(1.0, np.linalg.norm(vec))


@lru_cache(maxsize=16)
def dihedral_sector(L: int) -> DihedralSector:
    return DihedralSector(L)


def is_dihedral_symmetric(U: np.ndarray, tol: float = 1e-9) -> bool:
    """True if the interaction matrix is invariant under ring rotations and reflections."""
    L = U.shape[0]
    perm_rot = np.roll(np.arange(L), 1)
    perm_ref = (-np.arange(L)) % L
    scale = max(1.0, np.abs(U).max())
    for perm in (perm_rot, perm_ref):
        if np.abs(U[np.ix_(perm, perm)] - U).max() > tol * scale:
            return False
    return True


# --------------------------------------------------------------------------
# Hamiltonian

def _as_site_array(x, L: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(x, dtype=float), (L,)).copy()
    if arr.shape != (L,):
        raise ValidationError(f"{name} must be a scalar or have length {L}")
    return arr


class RydbergModel:
    """Static pieces of ``H = Σ U n n + (Ω/2)Σ w_ℓ(e^{iφ}σ⁻ + h.c.) − Σ (Δ + δ_ℓ) n``.

    ``omega_weights`` (w_ℓ) and ``detuning_offsets`` (δ_ℓ) are frozen per
    instance; the time-dependent global amplitude Ω, detuning Δ and phase φ are
    supplied at evaluation. With ``symmetric=True`` everything is reduced to
    the dihedral sector.
    """

    def __init__(self, U: np.ndarray, omega_weights=1.0, detuning_offsets=0.0,
                 symmetric: bool = False):
        U = np.asarray(U, dtype=float)
        if U.ndim != 2 or U.shape[0] != U.shape[1]:
            raise ValidationError("interaction matrix must be square")
        if np.abs(U - U.T).max(initial=0.0) > 1e-9 * max(1.0, np.abs(U).max(initial=0.0)):
            raise ValidationError("interaction matrix must be symmetric")
        L = U.shape[0]
        _check_sites(L)
        self.L = L
        self.U = U
        w = _as_site_array(omega_weights, L, "omega_weights")
        off = _as_site_array(detuning_offsets, L, "detuning_offsets")
        self.omega_weights, self.detuning_offsets = w, off
        occ = occupations(L).astype(float)
        interaction = 0.5 * np.einsum("si,ij,sj->s", occ, U, occ) - occ @ off
        number = occ.sum(axis=1)
        lower = _lowering(L, w)
        if symmetric:
            if not self.ring_symmetric():
                raise ValidationError("register or fields break the ring symmetry")
            sector = dihedral_sector(L)
            reps = sector.representatives
            interaction, number = interaction[reps], number[reps]
            lower = sector.reduce(lower)
            self.sector = sector
        else:
            self.sector = None
        self.interaction = interaction
        self.number = number
        self.x_part = (lower + lower.T).tocsr()
        self.y_part = (lower - lower.T).tocsr()  # i·y_part is Σ w σʸ
        self.drive_rowsum = np.asarray(abs(self.x_part).sum(axis=1)).ravel()
        self.dim = len(interaction)

    def ring_symmetric(self) -> bool:
        return (is_dihedral_symmetric(self.U) and np.ptp(self.omega_weights) < 1e-12
                and np.ptp(self.detuning_offsets) < 1e-12)

    def diagonal(self, delta: Scalar) -> np.ndarray:
        return self.interaction - delta * self.number

    def drive(self, omega: Scalar, phi: Scalar = 0.0) -> sp.csr_matrix:
        c, s = math.cos(phi), math.sin(phi)
        out = (0.5 * omega * c) * self.x_part
        if abs(s) > 1e-15:
            out = out + (0.5j * omega * s) * self.y_part
        return out

    def dense_drive(self, omega: float, phi: float = 0.0) -> np.ndarray:
        """Dense drive matrix; the parts are cached on first use (small registers)."""
        if not hasattr(self, "_dense_parts"):
            self._dense_parts = (self.x_part.toarray().astype(complex),
                                 1j * self.y_part.toarray())
        X, Y = self._dense_parts
        return (0.5 * omega) * (math.cos(phi) * X + math.sin(phi) * Y)

    def matrix(self, omega: Scalar, delta: Scalar, phi: Scalar = 0.0) -> sp.csr_matrix:
        return (sp.diags(self.diagonal(delta)) + self.drive(omega, phi)).tocsr()

    def apply(self, psi: np.ndarray, omega: Scalar, delta, phi: Scalar = 0.0,
              diag: Optional[np.ndarray] = None) -> np.ndarray:
        """H·psi. ``psi`` may hold several states as columns; ``diag`` overrides the
        diagonal (used for batched detunings and non-Hermitian jump terms)."""
        d = self.diagonal(delta) if diag is None else diag
        if psi.ndim == 2 and d.ndim == 1:
            d = d[:, None]
        out = d * psi
        if omega != 0.0:
            c, s = math.cos(phi), math.sin(phi)
            if abs(c) > 1e-15:
                out += (0.5 * omega * c) * _real_matmul(self.x_part, psi)
            if abs(s) > 1e-15:
                out += (0.5j * omega * s) * _real_matmul(self.y_part, psi)
        return out

    def spectral_bounds(self, omega: Scalar, diag: np.ndarray):
        """Gershgorin interval enclosing the spectrum of the current generator."""
        rad = 0.5 * abs(omega) * self.drive_rowsum
        if diag.ndim == 2:
            rad = rad[:, None]
        dr = diag.real
        return float((dr - rad).min()), float((dr + rad).max())


def _real_matmul(M: sp.csr_matrix, psi: np.ndarray) -> np.ndarray:
    """Real sparse matrix times complex array without upcasting the matrix."""
    if not np.iscomplexobj(psi):
        return M @ psi
    psi = np.ascontiguousarray(psi)
    flat = psi.view(float).reshape(psi.shape[0], -1)
    return np.ascontiguousarray(M @ flat).view(complex).reshape(psi.shape)


def _lowering(L: int, weights: np.ndarray) -> sp.csr_matrix:
    """Σ_ℓ w_ℓ |g⟩⟨r|_ℓ in the full 2**L space."""
    dim = 1 << L
    idx = np.arange(dim)
    rows, cols, vals = [], [], []
    for site in range(L):
        src = idx[(idx >> site) & 1 == 1]
        rows.append(src ^ (1 << site))
        cols.append(src)
        vals.append(np.full(len(src), weights[site]))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(dim, dim))


@dataclass(frozen=True)
class HamiltonianOperator:
    matrix: sp.csr_matrix
    L: int
    metadata: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def hermiticity_error(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0


def build_hamiltonian(U: np.ndarray, omega=0.0, delta=0.0, phi: float = 0.0) -> HamiltonianOperator:
    """Rydberg Hamiltonian for a frozen register and fixed (possibly per-site) fields."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    L = U.shape[0]
    omega_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    delta_arr = np.atleast_1d(np.asarray(delta, dtype=float))
    for name, arr in (("omega", omega_arr), ("delta", delta_arr)):
        if arr.shape not in ((1,), (L,)):
            raise ValidationError(f"{name} has {arr.shape[0]} entries for {L} sites")
    if np.any(omega_arr < 0):
        raise ValidationError("Rabi amplitude must be non-negative")
    model = RydbergModel(U, omega_weights=omega_arr, detuning_offsets=delta_arr)
    H = model.matrix(1.0, 0.0, phi)
    return HamiltonianOperator(H, L, {"omega": omega_arr.tolist(), "delta": delta_arr.tolist(),
                                      "phi": phi})


# --------------------------------------------------------------------------
# kink basis

def _check_odd(L: int):
    if L < 3 or L % 2 == 0:
        raise ParityError(f"kink states need an odd ring with L >= 3, got L={L}")


def kink_string(L: int, k: int) -> str:
    """Néel string whose single ``gg`` defect sits on sites (k, k+1), 1-based, k=L wrapping to (L, 1)."""
    _check_odd(L)
    if not 1 <= k <= L:
        raise ValidationError(f"kink position must lie in 1..{L}, got {k}")
    chars = ["g"] * L
    # walk from site k+1 (0-based k) around the ring, alternating g, r, g, ...
    for offset in range(L):
        chars[(k + offset) % L] = "g" if offset % 2 == 0 else "r"
    return "".join(chars)


def kink_strings(L: int) -> list:
    return [kink_string(L, k) for k in range(1, L + 1)]


def kink_indices(L: int) -> np.ndarray:
    return np.array([bitstring_to_index(s) for s in kink_strings(L)])


def kink_superposition(L: int) -> QuantumState:
    vec = np.zeros(1 << L, dtype=complex)
    vec[kink_indices(L)] = 1.0 / math.sqrt(L)
    return QuantumState("pure", vec, L)


def max_independent_sets(L: int) -> list:
    """Brute-force maximum independent sets of the L-cycle, as bit-strings."""
    occ = occupations(L)
    ok = ~np.any(occ & np.roll(occ, -1, axis=1), axis=1)
    sizes = np.where(ok, occ.sum(axis=1), -1)
    best = sizes.max()
    return [index_to_bitstring(i, L) for i in np.flatnonzero(sizes == best)]


# --------------------------------------------------------------------------
# coherence observable

def px_masks(L: int) -> list:
    """Flip masks of the even-length contiguous σˣ strings (lengths 2..L-1, all start sites)."""
    masks = []
    for n in range(1, (L - 1) // 2 + 1):
        for a in range(L):
            m = 0
            for l in range(a, a + 2 * n):
                m |= 1 << (l % L)
            masks.append(m)
    return masks


def px_operator(L: int) -> sp.csr_matrix:
    dim = 1 << L
    idx = np.arange(dim)
    op = sp.csr_matrix((dim, dim))
    for m in px_masks(L):
        op = op + sp.csr_matrix((np.ones(dim), (idx ^ m, idx)), shape=(dim, dim))
    return op


def px_expectation(state: QuantumState, L: Optional[int] = None) -> float:
    """Tr(ρ 𝒫ₓ) evaluated by index permutation (each σˣ string is a bit-flip mask)."""
    L = state.L if L is None else L
    idx = np.arange(1 << L)
    total = 0.0
    for m in px_masks(L):
        if state.kind == "pure":
            psi = state.data
            total += np.real(np.vdot(psi, psi[idx ^ m]))
        else:
            total += np.real(state.data[idx ^ m, idx].sum())
    return float(total)


# --------------------------------------------------------------------------
# spectra

@dataclass(frozen=True)
class GapInfo:
    gap: float                      # E1 - E0
    energies: np.ndarray            # lowest levels, ascending
    ground_multiplicity: int
    gap_above_ground: float         # first level above the ground manifold


def lowest_levels(H, k: int = 6) -> np.ndarray:
    mat = H.matrix if isinstance(H, HamiltonianOperator) else H
    dim = mat.shape[0]
    if dim > (1 << MAX_SITES):
        raise CapacityError(f"dimension {dim} exceeds the exact-diagonalization limit")
    k = min(k, dim)
    if dim <= _DENSE_EIG_MAX_DIM or k >= dim - 1:
        dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        return np.linalg.eigvalsh(dense)[:k]
    vals = spla.eigsh(mat, k=k, which="SA", return_eigenvectors=False, tol=1e-12)
    return np.sort(vals)


def spectral_gap(H, k: int = 6, ground_multiplicity: Optional[int] = None,
                 degeneracy_tol: float = 1e-8) -> GapInfo:
    """E1 − E0 plus the gap above a (quasi-)degenerate ground manifold.

    The ground multiplicity is detected from levels within ``degeneracy_tol``
    of E0 unless given explicitly (e.g. 2 for the Néel doublet of even rings,
    whose finite-size splitting is not an excitation gap).
    """
    levels = lowest_levels(H, k)
    if len(levels) < 2:
        raise ValidationError("need at least two levels for a gap")
    if ground_multiplicity is None:
        scale = max(1.0, abs(levels[0]))
        ground_multiplicity = int(np.sum(levels - levels[0] <= degeneracy_tol * scale))
    if ground_multiplicity >= len(levels):
        raise ValidationError("ground manifold exhausts the computed levels; raise k")
    return GapInfo(gap=float(levels[1] - levels[0]), energies=levels,
                   ground_multiplicity=ground_multiplicity,
                   gap_above_ground=float(levels[ground_multiplicity] - levels[0]))
