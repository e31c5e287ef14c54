"""Évolution temporelle exacte et états fondamentaux (diagonalisation ou Lanczos)."""
import functools
import hashlib
import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse.linalg import eigsh

from app.exceptions import KrylovBreakdown, NumericalError
from app.models.model_params import ModelParams
from app.services.lattice_model import (
    SPARSE_THRESHOLD,
    HermitianOperator,
    SectorBasis,
    SectorState,
    build_basis,
    build_hamiltonian,
)

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
DENSE_LIMIT = 13000
HERMITIAN_TOL = 1e-12
NORM_TOL = 1e-10
KRYLOV_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    basis: SectorBasis
    fingerprint: str


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("grille temporelle : t_0 = 0 et temps strictement croissants")
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return int(self.times.size)


def fingerprint(H: HermitianOperator) -> str:
    data = H.toarray() if H.dim <= SPARSE_THRESHOLD else H.matrix.data
    return hashlib.sha1(np.ascontiguousarray(data).tobytes()).hexdigest()[:16]


def _check_hermitian(H: HermitianOperator) -> None:
    err = H.hermiticity_error()
    if err > HERMITIAN_TOL * max(1.0, _max_abs(H)):
        raise ValueError(f"opérateur non hermitien (écart {err:.2e})")


def _max_abs(H: HermitianOperator) -> float:
    if H.is_sparse:
        return float(abs(H.matrix).max()) if H.matrix.nnz else 0.0
    return float(np.max(np.abs(H.matrix))) if H.dim else 0.0


def diagonalize(H: HermitianOperator) -> SpectralDecomposition:
    """Décomposition spectrale dense ; valeurs propres croissantes."""
    if H.dim > DENSE_LIMIT:
        raise ValueError(f"dimension {H.dim} trop grande pour la voie dense (max {DENSE_LIMIT})")
    _check_hermitian(H)
    eigenvalues, eigenvectors = np.linalg.eigh(H.toarray())
    return SpectralDecomposition(eigenvalues, eigenvectors, H.basis, fingerprint(H))


def _check_norm(amplitudes: np.ndarray, what: str) -> None:
    drift = abs(np.linalg.norm(amplitudes) - 1.0)
    if drift > NORM_TOL:
        raise NumericalError(f"{what} : norme non conservée (écart {drift:.2e})")


def evolve(spec: SpectralDecomposition, psi0: SectorState, t: float) -> SectorState:
    """ψ(t) = Q e^{−iΛt} Q† ψ0."""
    if not spec.basis.same_as(psi0.basis):
        raise ValueError("état et décomposition spectrale sur des bases différentes")
    if t < 0:
        raise ValueError(f"t doit être positif, reçu {t}")
    if t == 0:
        return psi0.with_amplitudes(psi0.amplitudes.copy())
    Q = spec.eigenvectors
    coeffs = Q.conj().T @ psi0.amplitudes
    amplitudes = Q @ (np.exp(-1j * spec.eigenvalues * t) * coeffs)
    _check_norm(amplitudes, "evolve")
    return psi0.with_amplitudes(amplitudes)


def _lanczos(H: HermitianOperator, v: np.ndarray, m: int):
    """Base de Krylov orthonormée (réorthogonalisation complète) et tridiagonale."""
    dim = v.size
    V = np.zeros((dim, m), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[:, 0] = v
    size = m
    for k in range(m):
        w = H.dot(V[:, k])
        alpha[k] = np.vdot(V[:, k], w).real
        w = w - V[:, : k + 1] @ (V[:, : k + 1].conj().T @ w)
        w = w - V[:, : k + 1] @ (V[:, : k + 1].conj().T @ w)
        beta[k] = np.linalg.norm(w)
        if beta[k] < 1e-13 * max(1.0, abs(alpha[k])):
            # sous-espace invariant : propagation exacte
            size = k + 1
            break
        if k + 1 < m:
            V[:, k + 1] = w / beta[k]
    V = V[:, :size]
    overlap = np.max(np.abs(V.conj().T @ V - np.eye(size)))
    if overlap > 1e-8:
        raise KrylovBreakdown(f"perte d'orthogonalité de Lanczos ({overlap:.1e})")
    return V, alpha[:size], beta[:size], size < m


def krylov_evolve(H: HermitianOperator, psi: SectorState, dt: float, m: int = 30,
                  tol: float = KRYLOV_TOL) -> SectorState:
    """e^{−iH dt} ψ par projection de Lanczos, avec sous-pas adaptatifs."""
    if m < 10:
        raise ValueError(f"dimension de Krylov m >= 10 requise, reçu {m}")
    if not H.basis.same_as(psi.basis):
        raise ValueError("état et hamiltonien sur des bases différentes")
    if dt < 0:
        raise ValueError(f"dt doit être positif, reçu {dt}")
    vec = psi.amplitudes.astype(complex)
    m = min(m, vec.size)
    remaining, tau = float(dt), float(dt)
    while remaining > 0:
        tau = min(tau, remaining)
        scale = np.linalg.norm(vec)
        V, alpha, beta, exact = _lanczos(H, vec / scale, m)
        if alpha.size == 1:
            theta, S = alpha, np.ones((1, 1))
        else:
            theta, S = sla.eigh_tridiagonal(alpha, beta[:-1])
        while True:
            coeffs = S @ (np.exp(-1j * theta * tau) * S[0, :])
            err = 0.0 if exact else beta[-1] * abs(coeffs[-1])
            if err <= tol:
                break
            tau /= 2
            if tau < dt * 1e-8:
                raise KrylovBreakdown(f"pas de Krylov trop petit (erreur {err:.1e})")
        vec = scale * (V @ coeffs)
        remaining -= tau
        tau *= 2
    _check_norm(vec, "krylov_evolve")
    return psi.with_amplitudes(vec)


def ground_state(H: HermitianOperator) -> tuple[float, SectorState]:
    """Paire propre de plus petite énergie du secteur."""
    _check_hermitian(H)
    if H.dim <= SPARSE_THRESHOLD:
        eigenvalues, eigenvectors = np.linalg.eigh(H.toarray())
        energy, vector = eigenvalues[0], eigenvectors[:, 0]
    else:
        v0 = np.ones(H.dim) / np.sqrt(H.dim)
        eigenvalues, eigenvectors = eigsh(H.matrix, k=1, which="SA", v0=v0, tol=1e-12)
        energy, vector = eigenvalues[0], eigenvectors[:, 0]
    vector = vector / np.linalg.norm(vector)
    return float(energy), SectorState(H.basis, vector.astype(complex))


@functools.lru_cache(maxsize=64)
def full_space_ground_energy(params: ModelParams) -> float:
    """Minimum du spectre sur l'espace complet, via les minima de chaque secteur."""
    energies = []
    for n_up in range(params.N + 1):
        H = build_hamiltonian(params, build_basis(params.N, n_up))
        if H.dim == 1:
            energies.append(float(H.toarray()[0, 0]))
        elif H.is_sparse:
            energies.append(float(eigsh(H.matrix, k=1, which="SA", tol=1e-12,
                                        v0=np.ones(H.dim) / np.sqrt(H.dim))[0][0]))
        else:
            energies.append(float(np.linalg.eigvalsh(H.toarray())[0]))
    return min(energies)


def make_time_grid(t_min: float, t_max: float, points: int, spacing: str = "log") -> TimeGrid:
    if not 0 < t_min < t_max:
        raise ValueError(f"intervalle invalide : 0 < t_min < t_max exigé, reçu ({t_min}, {t_max})")
    if points < 1:
        raise ValueError("au moins un point requis")
    if points == 1:
        samples = np.array([t_min])
    elif spacing == "log":
        samples = np.geomspace(t_min, t_max, points)
    elif spacing == "linear":
        samples = np.linspace(t_min, t_max, points)
    else:
        raise ValueError(f"espacement inconnu : {spacing!r}")
    return TimeGrid(np.concatenate(([0.0], samples)))


def evolve_on_grid(H: HermitianOperator, psi0: SectorState, grid: TimeGrid,
                   krylov_dim: int = 30) -> Iterator[tuple[float, SectorState]]:
    """Parcourt la grille : voie spectrale jusqu'à SPARSE_THRESHOLD, Krylov au-delà."""
    if H.dim <= SPARSE_THRESHOLD:
        spec = diagonalize(H)
        for t in grid.times:
            yield float(t), evolve(spec, psi0, float(t))
        return
    logger.debug("propagation de Krylov (dimension %d)", H.dim)
    psi, previous = psi0, 0.0
    for t in grid.times:
        if t > previous:
            psi = krylov_evolve(H, psi, float(t) - previous, m=krylov_dim)
            previous = float(t)
        yield float(t), psi
