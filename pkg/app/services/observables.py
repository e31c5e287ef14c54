"""Matrices densité réduites, entropies d'intrication, imbalance, bilan énergétique."""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.exceptions import NumericalError
from app.services.lattice_model import BlockOperators, HermitianOperator, SectorState

logger = logging.getLogger(__name__)

CLAMP_TOL = 1e-10
MAX_RDM_SITES = 10


@dataclass(frozen=True, eq=False)
class ReducedDensityMatrix:
    sites: tuple[int, ...]
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        """Valeurs propres croissantes, négatifs d'arrondi ramenés à 0 puis renormalisées."""
        return clamp_spectrum(np.linalg.eigvalsh(self.matrix))


@dataclass(frozen=True)
class EnergySplit:
    e_S: float
    e_int: float
    e_E: float

    @property
    def total(self) -> float:
        return self.e_S + self.e_int + self.e_E


def clamp_spectrum(values: np.ndarray) -> np.ndarray:
    if values.size and values.min() < -CLAMP_TOL:
        raise NumericalError(f"matrice densité non positive (λ_min = {values.min():.2e})")
    values = np.clip(values, 0.0, None)
    return values / values.sum()


def full_vector(psi) -> tuple[np.ndarray, int]:
    if isinstance(psi, SectorState):
        return psi.to_full(), psi.basis.N
    vec = np.asarray(psi, dtype=complex)
    N = int(vec.size).bit_length() - 1
    if vec.size != 1 << N:
        raise ValueError("vecteur de taille différente de 2^N")
    return vec, N


def amplitude_matrix(vec: np.ndarray, N: int, sites: Sequence[int]) -> np.ndarray:
    """Réarrange ψ en matrice (bloc, reste) ; ligne b = Σ_j bit(site_j) 2^j."""
    tensor = vec.reshape((2,) * N)        # axe a ↔ bit N-1-a ↔ site N-a
    block_axes = [N - s for s in reversed(sites)]
    rest_axes = [a for a in range(N) if a not in block_axes]
    return np.transpose(tensor, block_axes + rest_axes).reshape(1 << len(sites), -1)


def _check_sites(sites: Sequence[int], N: int) -> tuple[int, ...]:
    sites = tuple(int(s) for s in sites)
    if (not sites or len(set(sites)) != len(sites) or len(sites) > MAX_RDM_SITES
            or min(sites) < 1 or max(sites) > N):
        raise ValueError(f"bloc {sites} non supporté pour N={N}")
    return sites


def reduced_density_matrix(psi, sites: Sequence[int]) -> ReducedDensityMatrix:
    """ρ_S = Tr_E |ψ⟩⟨ψ| ; accepte un état de secteur ou un vecteur de l'espace complet."""
    vec, N = full_vector(psi)
    sites = _check_sites(sites, N)
    M = amplitude_matrix(vec, N, sites)
    rho = M @ M.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return ReducedDensityMatrix(sites=sites, matrix=rho)


def entropy_from_probabilities(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def von_neumann_entropy(rho) -> float:
    """−Σ λ ln λ (logarithme naturel)."""
    if isinstance(rho, ReducedDensityMatrix):
        values = rho.eigenvalues()
    else:
        values = clamp_spectrum(np.linalg.eigvalsh(np.asarray(rho)))
    return entropy_from_probabilities(values)


def half_chain_entropy(psi: SectorState) -> float:
    """Entropie de la moitié gauche via les valeurs singulières de la matrice d'amplitudes."""
    N = psi.basis.N
    if N % 2:
        raise ValueError("N pair requis")
    half = N // 2
    states = psi.basis.states
    M = np.zeros((1 << half, 1 << half), dtype=complex)
    M[states >> half, states & ((1 << half) - 1)] = psi.amplitudes
    singular = np.linalg.svd(M, compute_uv=False)
    return entropy_from_probabilities(clamp_spectrum(singular ** 2))


def magnetization_profile(psi: SectorState) -> np.ndarray:
    """⟨S^z_i⟩ pour i = 1..N."""
    prob = np.abs(psi.amplitudes) ** 2
    bits = (psi.basis.states[:, None] >> np.arange(psi.basis.N)) & 1
    return prob @ (bits - 0.5)


def imbalance(psi: SectorState) -> float:
    """I = (⟨S^z_o⟩ − ⟨S^z_e⟩) / (⟨S^z_o⟩ + ⟨S^z_e⟩ + N/2), sites impairs comptés depuis 1."""
    sz = magnetization_profile(psi)
    odd, even = sz[0::2].sum(), sz[1::2].sum()
    return float((odd - even) / (odd + even + psi.basis.N / 2))


def _vector(psi) -> np.ndarray:
    return psi.amplitudes if isinstance(psi, SectorState) else np.asarray(psi)


def _apply(op, vec: np.ndarray) -> np.ndarray:
    if isinstance(op, HermitianOperator):
        return op.dot(vec)
    return op @ vec


def _applied(op, psi) -> tuple[np.ndarray, np.ndarray]:
    vec = _vector(psi)
    applied = _apply(op, vec)
    if applied.shape != vec.shape:
        raise ValueError("dimensions incompatibles")
    return vec, applied


def expectation(op, psi) -> float:
    vec, applied = _applied(op, psi)
    return float(np.vdot(vec, applied).real)


def second_moment(op, psi) -> float:
    """⟨op²⟩ = ‖op ψ‖² pour op hermitien."""
    _, applied = _applied(op, psi)
    return float(np.vdot(applied, applied).real)


def energy_split(psi: SectorState, ops: BlockOperators) -> EnergySplit:
    return EnergySplit(
        e_S=expectation(ops.H_S, psi),
        e_int=expectation(ops.V_SE, psi),
        e_E=expectation(ops.H_E, psi),
    )
