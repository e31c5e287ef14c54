"""Ergotropies globale, locale, du sous-système, de déconnexion, et fluctuations du travail.

Deux voies d'évaluation :
  - espace complet (2^N) : `apply_local_unitary`, `extracted_work`,
    `work_fluctuations`, utilisées comme référence ;
  - voie locale (`LocalWorkEvaluator`) : seule la partie H_S + V_SE ne commute
    pas avec U_S ⊗ I_E, il suffit donc de la matrice densité réduite du bloc
    étendu à ses voisins de bord.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import unitary_group

from app.exceptions import NumericalError
from app.models.experiment_models import ObservableFlags, OptimizerConfig
from app.models.model_params import ModelParams
from app.services.lattice_model import (
    BlockOperators,
    HermitianOperator,
    SectorState,
    build_block_operators,
    extended_sites,
    full_basis,
    local_operator,
    split_bonds,
)
from app.services.observables import (
    expectation,
    full_vector,
    reduced_density_matrix,
    second_moment,
)
from app.services.propagator import full_space_ground_energy
from app.services.unitary_optimizer import (
    UNITARY_TOL,
    build_U1,
    build_U_AL,
    coefficients_from_unitary,
    n_parameters,
    optimize,
    riemannian_ascent,
    unitarity_error,
)

logger = logging.getLogger(__name__)

HIERARCHY_TOL = 1e-9
RELATIVE_FLOOR = 1e-6
ENV_CHECK_MAX_N = 10


# --- ERGOTROPIE D'UN ÉTAT ---
def passive_ergotropy(rho: np.ndarray, H: np.ndarray) -> float:
    """Tr[Hρ] − Σ_k r_k↓ ε_k↑."""
    rho, H = np.asarray(rho), np.asarray(H)
    if rho.shape != H.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"dimensions incompatibles : ρ {rho.shape}, H {H.shape}")
    r = np.sort(np.linalg.eigvalsh(rho))[::-1]
    e = np.linalg.eigvalsh(H)
    value = float(np.real(np.trace(H @ rho)) - np.dot(r, e))
    if value < -HIERARCHY_TOL:
        raise NumericalError(f"ergotropie passive négative ({value:.2e})")
    return max(value, 0.0)


def global_ergotropy(psi, H: HermitianOperator, params: ModelParams) -> float:
    """⟨H⟩ − E_min, E_min pris sur l'espace complet."""
    return expectation(H, psi) - full_space_ground_energy(params)


def global_quantum_fluctuation(psi, H: HermitianOperator) -> float:
    """√(⟨H²⟩ − ⟨H⟩²)."""
    mean = expectation(H, psi)
    return math.sqrt(max(second_moment(H, psi) - mean ** 2, 0.0))


# --- VOIE ESPACE COMPLET ---
def _check_unitary(U: np.ndarray, n_sites: int) -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if U.shape != (1 << n_sites, 1 << n_sites):
        raise ValueError(f"unitaire {U.shape} pour un bloc de {n_sites} sites")
    err = unitarity_error(U)
    if err > UNITARY_TOL:
        raise ValueError(f"U_S non unitaire (écart {err:.2e})")
    return U


def apply_local_unitary(psi, U: np.ndarray, sites: Sequence[int]) -> np.ndarray:
    """(U_S ⊗ I_E)ψ dans l'espace complet ; U_S indexé comme les matrices densité réduites."""
    vec, N = full_vector(psi)
    sites = list(sites)
    k = len(sites)
    U = _check_unitary(U, k)
    axes = [N - s for s in reversed(sites)]
    tensor = vec.reshape((2,) * N)
    out = np.tensordot(U.reshape((2,) * (2 * k)), tensor, axes=(list(range(k, 2 * k)), axes))
    return np.moveaxis(out, list(range(k)), axes).reshape(-1)


def _full_operator_check(H: HermitianOperator, vec: np.ndarray) -> None:
    if H.dim != vec.size:
        raise ValueError(f"hamiltonien de dimension {H.dim}, espace complet de dimension {vec.size}")


def extracted_work(psi, H_full: HermitianOperator, U: np.ndarray, sites: Sequence[int]) -> float:
    """⟨ψ|H|ψ⟩ − ⟨U_Sψ|H|U_Sψ⟩ ; H construit sur `full_basis(N)`."""
    vec, _ = full_vector(psi)
    _full_operator_check(H_full, vec)
    phi = apply_local_unitary(vec, U, sites)
    return expectation(H_full, vec) - expectation(H_full, phi)


def work_fluctuations(psi, H_full: HermitianOperator, U: np.ndarray, sites: Sequence[int]) -> float:
    """σ² = ⟨(H′−H)²⟩ − ⟨H′−H⟩², avec H′ψ = U_S†(H(U_Sψ))."""
    vec, _ = full_vector(psi)
    _full_operator_check(H_full, vec)
    U = np.asarray(U, dtype=complex)
    h_prime = apply_local_unitary(H_full.dot(apply_local_unitary(vec, U, sites)), U.conj().T, sites)
    delta = h_prime - H_full.dot(vec)
    mean = float(np.vdot(vec, delta).real)
    return float(np.vdot(delta, delta).real) - mean ** 2


@functools.lru_cache(maxsize=8)
def full_space_block_operators(params: ModelParams) -> BlockOperators:
    return build_block_operators(params, full_basis(params.N))


def environment_energy_change(psi, params: ModelParams, U: np.ndarray) -> float:
    """e_E^c − e_E^f, nul puisque U_S ⊗ I_E commute avec H_E."""
    vec, _ = full_vector(psi)
    H_E = full_space_block_operators(params).H_E
    phi = apply_local_unitary(vec, U, params.block_sites)
    return expectation(H_E, vec) - expectation(H_E, phi)


# --- VOIE LOCALE ---
class LocalWorkEvaluator:
    """Travail et fluctuations pour tout U_S à partir de ρ sur le bloc étendu X.

    K = (H_S + V_SE) restreint à X ; Ũ = I_droite ⊗ U_S ⊗ I_gauche (bit local 0 = premier site de X).
    """

    def __init__(self, psi, params: ModelParams):
        block = params.block_sites
        s_bonds, _, v_bonds, _ = split_bonds(params)
        self.params = params
        self.sites = extended_sites(params)
        self.rho = reduced_density_matrix(psi, self.sites).matrix
        self.rho_S = reduced_density_matrix(psi, block)
        self.h_block = local_operator(params, block, s_bonds, block)
        self.K_S = local_operator(params, self.sites, s_bonds, block)
        self.K_V = local_operator(params, self.sites, v_bonds, ())
        self.K = self.K_S + self.K_V
        self.energy = self._trace(self.K, self.rho)
        n_left = block[0] - self.sites[0]
        n_right = self.sites[-1] - block[-1]
        self._left = np.eye(1 << n_left)
        self._right = np.eye(1 << n_right)

    @staticmethod
    def _trace(op: np.ndarray, rho: np.ndarray) -> float:
        return float(np.real(np.einsum("ij,ji->", op, rho)))

    def embed(self, U: np.ndarray) -> np.ndarray:
        return np.kron(self._right, np.kron(U, self._left))

    def transformed_state(self, U: np.ndarray) -> np.ndarray:
        Ue = self.embed(U)
        return Ue @ self.rho @ Ue.conj().T

    def work(self, U: np.ndarray) -> float:
        return self.energy - self._trace(self.K, self.transformed_state(U))

    def work_gradient(self, U: np.ndarray) -> np.ndarray:
        """G = Tr_{X∖S}(i[σ, K]), σ = Ũ ρ Ũ† : pour U → exp(−iεX)·U, dW/dε = Tr(X G)."""
        sigma = self.transformed_state(U)
        M = 1j * (sigma @ self.K - self.K @ sigma)
        d, r, l = U.shape[0], self._right.shape[0], self._left.shape[0]
        G = np.einsum("aibajb->ij", M.reshape(r, d, l, r, d, l))
        return (G + G.conj().T) / 2

    def fluctuations(self, U: np.ndarray) -> float:
        Ue = self.embed(U)
        delta = Ue.conj().T @ self.K @ Ue - self.K
        mean = self._trace(delta, self.rho)
        return self._trace(delta @ delta, self.rho) - mean ** 2

    def energy_changes(self, U: np.ndarray) -> tuple[float, float]:
        """(e_S^c − e_S^f, e_int^c − e_int^f)."""
        after = self.transformed_state(U)
        return (self._trace(self.K_S, self.rho) - self._trace(self.K_S, after),
                self._trace(self.K_V, self.rho) - self._trace(self.K_V, after))

    def u_al(self) -> np.ndarray:
        return build_U_AL(self.rho_S.matrix, self.h_block)


# --- ERGOTROPIE LOCALE ---
@dataclass
class LocalErgotropyResult:
    value: float
    baseline: float
    unitary: np.ndarray
    params: np.ndarray
    evaluations: int
    evals_to_incumbent: int
    used_fallback: bool = False


def local_ergotropy_lower_bound(psi, params: ModelParams, cfg: OptimizerConfig,
                                warm_start: Optional[np.ndarray] = None,
                                optimize_unitary: bool = True,
                                evaluator: Optional[LocalWorkEvaluator] = None) -> LocalErgotropyResult:
    """Meilleur travail extrait par U_AL · U_1(a) ; a = 0 toujours évalué."""
    if cfg.budget < 1:
        raise ValueError("budget d'optimisation >= 1 requis")
    ev = evaluator or LocalWorkEvaluator(psi, params)
    u_al = ev.u_al()
    dim = n_parameters(params.d_S)
    if not optimize_unitary:
        baseline = ev.work(u_al)
        return LocalErgotropyResult(baseline, baseline, u_al, np.zeros(dim), 1, 1)

    result = optimize(lambda a: ev.work(u_al @ build_U1(a)), dim, cfg, warm_start)
    best_U, best_value, best_x = u_al @ build_U1(result.x), result.fx, result.x
    evaluations, evals_to_incumbent = result.nfev, result.evals_to_incumbent
    if cfg.polish_iterations:
        # départs : point retenu par le GP, U_AL, puis unitaires de Haar
        rng = np.random.default_rng(cfg.seed)
        starts = [best_U, u_al] + [unitary_group.rvs(params.d_S, random_state=rng)
                                   for _ in range(cfg.polish_starts)]
        polished = None
        for U0 in starts:
            U, value, nfev = riemannian_ascent(ev.work, ev.work_gradient, U0,
                                               cfg.polish_iterations, cfg.polish_tol)
            evaluations += nfev
            if value > best_value:
                best_U, best_value, polished = U, value, U
                evals_to_incumbent = evaluations
        if polished is not None:
            best_x = coefficients_from_unitary(u_al.conj().T @ polished)
    return LocalErgotropyResult(
        value=best_value, baseline=result.baseline, unitary=best_U, params=best_x,
        evaluations=evaluations, evals_to_incumbent=evals_to_incumbent,
        used_fallback=result.used_fallback,
    )


@dataclass(frozen=True)
class SwitchOff:
    delta_SO: float
    E_SS: float
    E_SO: float


def switch_off_ergotropy(psi, ops: BlockOperators) -> SwitchOff:
    """Δ_SO = −⟨V_SE⟩, E_SS = ergotropie passive de ρ_S pour H_S du bloc, E_SO = E_SS − Δ_SO."""
    delta = -expectation(ops.V_SE, psi)
    rho_S = reduced_density_matrix(psi, ops.sites).matrix
    e_ss = passive_ergotropy(rho_S, ops.h_block)
    return SwitchOff(delta_SO=delta, E_SS=e_ss, E_SO=e_ss - delta)


# --- ENREGISTREMENT PAR PAS DE TEMPS ---
@dataclass
class ErgotropyRecord:
    t: float
    energy: float
    E_global: float
    E_S_lower: float
    E_U_AL: float
    E_SS: float
    delta_SO: float
    E_SO: float
    sigma2: float = float("nan")
    sigma: float = float("nan")
    relative_sigma: float = float("nan")
    gain: float = float("nan")
    d_e_S: float = float("nan")
    d_e_int: float = float("nan")
    evaluations: int = 0
    evals_to_incumbent: int = 0
    used_fallback: bool = False
    best_params: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _check_hierarchy(rec: ErgotropyRecord) -> None:
    if rec.E_S_lower < rec.E_U_AL:
        raise NumericalError(f"t={rec.t:g} : E_U ({rec.E_S_lower:.6g}) < E_U_AL ({rec.E_U_AL:.6g})")
    if rec.E_S_lower > rec.E_global + HIERARCHY_TOL:
        logger.warning("⚠️ t=%g : E_S (%.6g) > E_global (%.6g)", rec.t, rec.E_S_lower, rec.E_global)
    if rec.E_S_lower < rec.E_SO - HIERARCHY_TOL:
        logger.warning("⚠️ t=%g : E_S (%.6g) < E_SO (%.6g)", rec.t, rec.E_S_lower, rec.E_SO)
    if rec.sigma2 < -HIERARCHY_TOL:
        raise NumericalError(f"t={rec.t:g} : σ² négatif ({rec.sigma2:.2e})")


def evaluate_ergotropies(psi: SectorState, t: float, params: ModelParams, ops: BlockOperators,
                         H: HermitianOperator, cfg: OptimizerConfig,
                         flags: ObservableFlags = ObservableFlags(),
                         warm_start: Optional[np.ndarray] = None) -> ErgotropyRecord:
    energy = expectation(H, psi)
    so = switch_off_ergotropy(psi, ops)
    ev = LocalWorkEvaluator(psi, params)
    local = local_ergotropy_lower_bound(psi, params, cfg, warm_start=warm_start,
                                        optimize_unitary=flags.optimize_unitary, evaluator=ev)
    rec = ErgotropyRecord(
        t=t, energy=energy, E_global=energy - full_space_ground_energy(params),
        E_S_lower=local.value, E_U_AL=local.baseline,
        E_SS=so.E_SS, delta_SO=so.delta_SO, E_SO=so.E_SO,
        evaluations=local.evaluations, evals_to_incumbent=local.evals_to_incumbent,
        used_fallback=local.used_fallback, best_params=local.params,
    )
    rec.d_e_S, rec.d_e_int = ev.energy_changes(local.unitary)
    if local.baseline > RELATIVE_FLOOR:
        rec.gain = (local.value - local.baseline) / local.baseline
    if flags.fluctuations:
        rec.sigma2 = ev.fluctuations(local.unitary)
        rec.sigma = math.sqrt(max(rec.sigma2, 0.0))
        if local.value > RELATIVE_FLOOR:
            rec.relative_sigma = rec.sigma / local.value
    _check_hierarchy(rec)
    if params.N <= ENV_CHECK_MAX_N and logger.isEnabledFor(logging.DEBUG):
        logger.debug("t=%g : e_E^c − e_E^f = %.2e, %d évaluations (meilleure à %d)",
                     t, environment_energy_change(psi, params, local.unitary),
                     local.evaluations, local.evals_to_incumbent)
    return rec
