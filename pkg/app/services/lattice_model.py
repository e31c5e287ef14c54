"""Chaîne XXZ désordonnée : base du secteur S^z_tot, hamiltoniens, états initiaux.

Convention : le site i (indexé à partir de 1) correspond au bit i-1 de la
configuration ; bit à 1 = spin ↑. Les configurations d'une base sont triées par
masque croissant.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from app.models.model_params import ModelParams

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
SPARSE_THRESHOLD = 5000   # stockage creux au-delà de cette dimension
HERMITIAN_TOL = 1e-12
MAX_BASIS_N = 20


# --- TYPES ---
@dataclass(frozen=True, eq=False)
class SectorBasis:
    N: int
    n_up: int | None          # None : espace complet 2^N
    states: np.ndarray        # masques triés (int64)

    @property
    def dim(self) -> int:
        return int(self.states.size)

    def lookup(self, config: int) -> int:
        i = int(np.searchsorted(self.states, config))
        if i >= self.dim or self.states[i] != config:
            raise KeyError(f"configuration {config:0{self.N}b} hors de la base")
        return i

    def lookup_many(self, configs: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.states, configs)

    def same_as(self, other: "SectorBasis") -> bool:
        return self is other or (
            self.N == other.N and self.n_up == other.n_up
            and np.array_equal(self.states, other.states)
        )


@dataclass(frozen=True, eq=False)
class SectorState:
    """Vecteur d'amplitudes complexes sur les configurations d'une base."""

    basis: SectorBasis
    amplitudes: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def with_amplitudes(self, amplitudes: np.ndarray) -> "SectorState":
        return SectorState(self.basis, np.asarray(amplitudes, dtype=complex))

    def to_full(self) -> np.ndarray:
        """Plonge l'état dans l'espace complet de dimension 2^N."""
        full = np.zeros(1 << self.basis.N, dtype=complex)
        full[self.basis.states] = self.amplitudes
        return full


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    matrix: np.ndarray | sparse.csr_matrix
    basis: SectorBasis
    is_real: bool = True

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.matrix)

    def dot(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def hermiticity_error(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        if sparse.issparse(diff):
            return float(abs(diff).max()) if diff.nnz else 0.0
        return float(np.max(np.abs(diff))) if diff.size else 0.0

    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        if not self.basis.same_as(other.basis):
            raise ValueError("opérateurs définis sur des bases différentes")
        return _wrap(self.matrix + other.matrix, self.basis)


@dataclass(frozen=True, eq=False)
class BlockOperators:
    """Découpage H = H_S + H_E + V_SE et H_S restreint au bloc (d_S × d_S)."""

    H_S: HermitianOperator
    H_E: HermitianOperator
    V_SE: HermitianOperator
    h_block: np.ndarray
    sites: tuple[int, ...]
    boundary_bonds: tuple[tuple[int, int], ...] = field(default=())


# --- BASE ---
def build_basis(N: int, n_up: int | None = None) -> SectorBasis:
    """Base d'un secteur de magnétisation (par défaut S^z_tot = 0)."""
    if n_up is None:
        if N % 2 or not 2 <= N <= MAX_BASIS_N:
            raise ValueError(f"N doit être pair et compris entre 2 et {MAX_BASIS_N}, reçu {N}")
        n_up = N // 2
    elif not (1 <= N <= MAX_BASIS_N and 0 <= n_up <= N):
        raise ValueError(f"secteur invalide : N={N}, n_up={n_up}")
    states = np.array(
        sorted(sum(1 << p for p in ups) for ups in itertools.combinations(range(N), n_up)),
        dtype=np.int64,
    )
    assert states.size == math.comb(N, n_up)
    return SectorBasis(N=N, n_up=n_up, states=states)


def full_basis(N: int) -> SectorBasis:
    if not 1 <= N <= 16:
        raise ValueError(f"espace complet limité à N <= 16, reçu {N}")
    return SectorBasis(N=N, n_up=None, states=np.arange(1 << N, dtype=np.int64))


# --- TERMES DU HAMILTONIEN ---
def _spin_z(states: np.ndarray, bit: int) -> np.ndarray:
    return ((states >> bit) & 1) - 0.5


def _assemble(basis: SectorBasis, J_perp: float, J_z: float,
              bonds: Iterable[tuple[int, int]], fields: dict[int, float]):
    """Éléments (lignes, colonnes, valeurs) des liens et champs demandés.

    `bonds` et les clés de `fields` sont des positions de bits (0-based).
    """
    states = basis.states
    diag = np.zeros(basis.dim)
    rows, cols, vals = [], [], []
    for a, b in bonds:
        if J_z:
            diag += J_z * _spin_z(states, a) * _spin_z(states, b)
        if J_perp:
            differ = (((states >> a) ^ (states >> b)) & 1).astype(bool)
            src = np.flatnonzero(differ)
            dst = basis.lookup_many(states[src] ^ ((1 << a) | (1 << b)))
            rows.append(src)
            cols.append(dst)
            vals.append(np.full(src.size, 0.5 * J_perp))
    for bit, h in fields.items():
        if h:
            diag += h * _spin_z(states, bit)
    rows.append(np.arange(basis.dim))
    cols.append(np.arange(basis.dim))
    vals.append(diag)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _wrap(matrix, basis: SectorBasis) -> HermitianOperator:
    if sparse.issparse(matrix) and basis.dim <= SPARSE_THRESHOLD:
        matrix = matrix.toarray()
    elif not sparse.issparse(matrix) and basis.dim > SPARSE_THRESHOLD:
        matrix = sparse.csr_matrix(matrix)
    return HermitianOperator(matrix=matrix, basis=basis, is_real=not np.iscomplexobj(matrix))


def _operator(basis: SectorBasis, params: ModelParams, bonds, field_sites) -> HermitianOperator:
    rows, cols, vals = _assemble(
        basis, params.J_perp, params.J_z,
        [(i - 1, j - 1) for i, j in bonds],
        {s - 1: params.h[s - 1] for s in field_sites},
    )
    matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim))
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    return _wrap(matrix, basis)


def _check_basis(params: ModelParams, basis: SectorBasis) -> None:
    if basis.N != params.N:
        raise ValueError(f"base à {basis.N} sites pour un modèle à {params.N} sites")


def build_hamiltonian(params: ModelParams, basis: SectorBasis) -> HermitianOperator:
    """H = (J_⊥/2) Σ (S⁺S⁻ + S⁻S⁺) + J_z Σ S^z S^z + Σ h_i S^z_i, bords libres."""
    _check_basis(params, basis)
    return _operator(basis, params, params.bonds, range(1, params.N + 1))


def split_bonds(params: ModelParams):
    """Répartit liens et sites entre S, E et l'interaction V_SE."""
    block = set(params.block_sites)
    s_bonds, e_bonds, v_bonds = [], [], []
    for i, j in params.bonds:
        inside = (i in block) + (j in block)
        (s_bonds if inside == 2 else e_bonds if inside == 0 else v_bonds).append((i, j))
    env_sites = [s for s in range(1, params.N + 1) if s not in block]
    return s_bonds, e_bonds, v_bonds, env_sites


def build_block_operators(params: ModelParams, basis: SectorBasis) -> BlockOperators:
    _check_basis(params, basis)
    if len(params.block_sites) > 2:
        raise ValueError("blocs de plus de 2 sites non supportés")
    s_bonds, e_bonds, v_bonds, env_sites = split_bonds(params)
    H_S = _operator(basis, params, s_bonds, params.block_sites)
    H_E = _operator(basis, params, e_bonds, env_sites)
    V_SE = _operator(basis, params, v_bonds, ())
    h_block = local_operator(params, params.block_sites, s_bonds, params.block_sites)
    return BlockOperators(H_S=H_S, H_E=H_E, V_SE=V_SE, h_block=h_block,
                          sites=params.block_sites, boundary_bonds=tuple(v_bonds))


def local_operator(params: ModelParams, sites: Sequence[int],
                   bonds: Iterable[tuple[int, int]], field_sites: Iterable[int]) -> np.ndarray:
    """Matrice dense (2^k × 2^k) des termes choisis sur quelques sites.

    Le j-ième site de `sites` occupe le bit local j.
    """
    sites = list(sites)
    position = {s: j for j, s in enumerate(sites)}
    basis = full_basis(len(sites))
    try:
        local_bonds = [(position[i], position[j]) for i, j in bonds]
        local_fields = {position[s]: params.h[s - 1] for s in field_sites}
    except KeyError as exc:
        raise ValueError(f"site {exc.args[0]} absent de {sites}") from None
    rows, cols, vals = _assemble(basis, params.J_perp, params.J_z, local_bonds, local_fields)
    matrix = np.zeros((basis.dim, basis.dim))
    np.add.at(matrix, (rows, cols), vals)
    return matrix


def extended_sites(params: ModelParams) -> tuple[int, ...]:
    """Bloc S augmenté des voisins reliés par un lien de V_SE."""
    start, end = params.block
    left = (start - 1,) if start > 1 else ()
    right = (end + 1,) if end < params.N else ()
    return left + params.block_sites + right


# --- ÉTATS INITIAUX ---
def product_state(basis: SectorBasis, up_sites: Iterable[int]) -> SectorState:
    config = sum(1 << (s - 1) for s in up_sites)
    amplitudes = np.zeros(basis.dim, dtype=complex)
    try:
        amplitudes[basis.lookup(config)] = 1.0
    except KeyError:
        raise ValueError("état produit hors du secteur de la base") from None
    return SectorState(basis, amplitudes)


def neel_state(basis: SectorBasis) -> SectorState:
    """|↑↓↑↓…⟩ : sites impairs ↑."""
    return product_state(basis, range(1, basis.N + 1, 2))


def bell_chain_state(basis: SectorBasis) -> SectorState:
    """|↑, Ψ⁻, …, Ψ⁻, ↓⟩ avec Ψ⁻ = (|↑↓⟩ − |↓↑⟩)/√2, site de gauche en premier."""
    N = basis.N
    if N % 2 or N < 4:
        raise ValueError(f"chaîne de singulets : N pair >= 4 requis, reçu {N}")
    pairs = [(s, s + 1) for s in range(2, N - 1, 2)]
    amplitudes = np.zeros(basis.dim, dtype=complex)
    weight = 2.0 ** (-len(pairs) / 2)
    for choice in itertools.product((0, 1), repeat=len(pairs)):
        config, sign = 1, 1.0   # site 1 ↑, site N ↓
        for (left, right), flipped in zip(pairs, choice):
            config |= 1 << ((right if flipped else left) - 1)
            sign *= -1.0 if flipped else 1.0
        amplitudes[basis.lookup(config)] = sign * weight
    return SectorState(basis, amplitudes)


# --- DÉSORDRE ET CORRESPONDANCE FERMIONIQUE ---
def sample_disorder(W: float, N: int, rng: np.random.Generator) -> tuple[float, ...]:
    """N champs indépendants uniformes sur [−W, W]."""
    if W < 0:
        raise ValueError(f"W doit être positif, reçu {W}")
    if W == 0:
        return (0.0,) * N
    return tuple(float(x) for x in rng.uniform(-W, W, size=N))


def jordan_wigner_params(t: float, V: float, H_list: Sequence[float],
                         block: tuple[int, int] = (1, 2)) -> ModelParams:
    """Fermions sans spin (saut t, interaction V, potentiels H_i) → XXZ."""
    return ModelParams(N=len(H_list), J_perp=2 * t, J_z=V,
                       h=tuple(float(x) for x in H_list), block=block)
