"""Unitaires locaux U_S = U_AL · U_1 et recherche bayésienne des 15 coefficients a_ij.

U_1 = exp(−iA), A = Σ a_ij σ^i_1 ⊗ σ^j_2 avec (i, j) ≠ (0, 0). Le spin 1 est le
premier site du bloc, c'est-à-dire le bit local de poids faible.
"""
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import schur
from scipy.stats import norm, qmc, unitary_group
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF, ConstantKernel

from app.exceptions import NumericalError
from app.models.experiment_models import OptimizerConfig

logger = logging.getLogger(__name__)

UNITARY_TOL = 1e-10

PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
PAULI_NAMES = "0xyz"
TWO_SITE_LABELS = [(i, j) for i in range(4) for j in range(4) if (i, j) != (0, 0)]
ONE_SITE_LABELS = [1, 2, 3]


# --- PARAMÉTRAGE ---
@dataclass(frozen=True, eq=False)
class LocalUnitaryParams:
    coefficients: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=float).ravel()
        if a.size not in (3, 15):
            raise ValueError(f"3 ou 15 coefficients attendus, reçu {a.size}")
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficients non finis")
        object.__setattr__(self, "coefficients", a)

    @property
    def n_sites(self) -> int:
        return 2 if self.coefficients.size == 15 else 1

    @classmethod
    def zeros(cls, n_sites: int = 2) -> "LocalUnitaryParams":
        return cls(np.zeros(15 if n_sites == 2 else 3))

    def labels(self) -> list[str]:
        if self.n_sites == 1:
            return [f"a_{PAULI_NAMES[i]}" for i in ONE_SITE_LABELS]
        return [f"a_{PAULI_NAMES[i]}{PAULI_NAMES[j]}" for i, j in TWO_SITE_LABELS]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels(), self.coefficients.tolist()))


def n_parameters(d_S: int) -> int:
    return {2: 3, 4: 15}[d_S]


def two_site(op1: np.ndarray, op2: np.ndarray) -> np.ndarray:
    """op1 sur le spin 1 (bit local 0), op2 sur le spin 2."""
    return np.kron(op2, op1)


def generator(params) -> np.ndarray:
    a = params.coefficients if isinstance(params, LocalUnitaryParams) else \
        LocalUnitaryParams(params).coefficients
    if a.size == 3:
        return sum(c * PAULI[k] for c, k in zip(a, ONE_SITE_LABELS))
    return sum(c * two_site(PAULI[i], PAULI[j]) for c, (i, j) in zip(a, TWO_SITE_LABELS))


def build_U1(params) -> np.ndarray:
    """exp(−iA) par diagonalisation du générateur hermitien."""
    A = generator(params)
    if not np.any(A):
        return np.eye(A.shape[0], dtype=complex)
    w, V = np.linalg.eigh(A)
    return (V * np.exp(-1j * w)) @ V.conj().T


def build_U_AL(rho_S: np.ndarray, h_block: np.ndarray) -> np.ndarray:
    """U_AL = Σ_j |ε_j⟩⟨r_j| : r décroissants, ε croissants, égalités par indice d'origine."""
    r, R = np.linalg.eigh(np.asarray(rho_S))
    e, E = np.linalg.eigh(np.asarray(h_block))
    order_r = np.argsort(-r, kind="stable")
    order_e = np.argsort(e, kind="stable")
    return E[:, order_e] @ R[:, order_r].conj().T


def unitarity_error(U: np.ndarray) -> float:
    return float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))))


def coefficients_from_unitary(U1: np.ndarray) -> np.ndarray:
    """a tels que build_U1(a) = U1 à une phase globale près (logarithme principal)."""
    T, Z = schur(np.asarray(U1, dtype=complex), output="complex")
    A = (Z * -np.angle(np.diag(T))) @ Z.conj().T
    if A.shape[0] == 2:
        return np.array([np.trace(A @ PAULI[k]).real / 2 for k in ONE_SITE_LABELS])
    return np.array([np.trace(A @ two_site(PAULI[i], PAULI[j])).real / 4 for i, j in TWO_SITE_LABELS])


# --- RECHERCHE ---
@dataclass
class OptimizeResult:
    x: np.ndarray
    fx: float
    baseline: float
    history_x: np.ndarray
    history_f: np.ndarray
    evals_to_incumbent: int
    used_fallback: bool = False

    @property
    def nfev(self) -> int:
        return int(self.history_f.size)


def expected_improvement(mu: np.ndarray, s: np.ndarray, best: float, xi: float = 0.0) -> np.ndarray:
    """EI pour une maximisation."""
    improvement = mu - best - xi
    safe = np.where(s > 1e-12, s, 1.0)
    z = improvement / safe
    ei = improvement * norm.cdf(z) + safe * norm.pdf(z)
    return np.where(s > 1e-12, ei, np.maximum(improvement, 0.0))


def pattern_search(objective: Callable[[np.ndarray], float], x0: np.ndarray, budget: int,
                   bound: float, f0: Optional[float] = None, step: Optional[float] = None,
                   min_step: float = 1e-4) -> tuple[np.ndarray, float]:
    """Sondage ±pas sur chaque coordonnée, pas divisé par 2 sans amélioration (maximisation)."""
    x = np.array(x0, dtype=float)
    used = 0
    if f0 is None:
        f0 = float(objective(x))
        used = 1
    f = f0
    step = bound / 4 if step is None else step
    while used < budget and step >= min_step:
        changed = False
        for i in range(x.size):
            for sign in (1.0, -1.0):
                if used >= budget:
                    break
                trial = x.copy()
                trial[i] = np.clip(trial[i] + sign * step, -bound, bound)
                if trial[i] == x[i]:
                    continue
                ft = float(objective(trial))
                used += 1
                if ft > f:
                    x, f, changed = trial, ft, True
                    break
        if not changed:
            step /= 2
    return x, f


def _unitary_step(G: np.ndarray, eta: float) -> np.ndarray:
    w, V = np.linalg.eigh(G)
    return (V * np.exp(-1j * eta * w)) @ V.conj().T


def riemannian_ascent(work: Callable[[np.ndarray], float], gradient: Callable[[np.ndarray], np.ndarray],
                      U0: np.ndarray, max_iter: int, tol: float = 1e-9,
                      c1: float = 1e-4, max_step: float = 8.0) -> tuple[np.ndarray, float, int]:
    """Montée de gradient sur U(d) : U ← exp(−iηG)·U, pas réglé par la règle d'Armijo.

    Renvoie (U, travail, nombre d'évaluations de `work`).
    """
    U = np.array(U0, dtype=complex)
    f = float(work(U))
    nfev, eta = 1, 1.0
    for _ in range(max_iter):
        G = gradient(U)
        g2 = float(np.real(np.vdot(G, G)))
        if g2 <= tol ** 2:
            break
        while eta > 1e-12:
            trial = _unitary_step(G, eta) @ U
            ft = float(work(trial))
            nfev += 1
            if ft >= f + c1 * eta * g2:
                break
            eta /= 2
        else:
            break
        gained = ft - f
        U, f = trial, ft
        eta = min(2 * eta, max_step)
        if gained <= tol * 1e-3:
            break
    # projection polaire : efface la dérive numérique des produits successifs
    W, _, Vh = np.linalg.svd(U)
    U = W @ Vh
    return U, float(work(U)), nfev + 1


def _maximize_acquisition(acq, starts: np.ndarray, bound: float, sweeps: int) -> tuple[np.ndarray, float]:
    """Recherche par motifs vectorisée sur tous les points de départ à la fois."""
    x = starts.copy()
    n, dim = x.shape
    f = acq(x)
    step = np.full(n, bound / 4)
    offsets = np.concatenate([np.eye(dim), -np.eye(dim)])
    for _ in range(sweeps):
        cand = np.clip(x[:, None, :] + step[:, None, None] * offsets[None], -bound, bound)
        fc = acq(cand.reshape(-1, dim)).reshape(n, 2 * dim)
        pick = fc.argmax(axis=1)
        gain = fc[np.arange(n), pick]
        better = gain > f
        x[better] = cand[better, pick[better]]
        f[better] = gain[better]
        step[~better] /= 2
    i = int(np.argmax(f))
    return x[i], float(f[i])


def warm_start_policy(previous_best: Optional[np.ndarray], dim: int, cfg: OptimizerConfig) -> np.ndarray:
    """Plan initial : point nul, meilleur point du pas de temps précédent, puis Halton."""
    rows = [np.zeros(dim)]
    if previous_best is not None:
        prev = np.clip(np.asarray(previous_best, dtype=float), -cfg.bound, cfg.bound)
        if prev.shape == (dim,) and np.all(np.isfinite(prev)) and np.any(prev):
            rows.append(prev)
    n_fill = max(cfg.initial_design - len(rows), 0)
    if n_fill:
        sampler = qmc.Halton(d=dim, scramble=True, seed=cfg.seed)
        rows.extend(qmc.scale(sampler.random(n_fill), -cfg.bound, cfg.bound))
    return np.array(rows)


def _propose(X: np.ndarray, y: np.ndarray, cfg: OptimizerConfig, rng: np.random.Generator) -> np.ndarray:
    kernel = ConstantKernel(1.0, (1e-3, 1e3)) * RBF(cfg.length_scale, cfg.length_scale_bounds)
    gp = GaussianProcessRegressor(kernel=kernel, alpha=cfg.jitter, normalize_y=True,
                                  n_restarts_optimizer=0, random_state=cfg.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gp.fit(X, y)
    best = float(y.max())

    def acq(points):
        mu, s = gp.predict(points, return_std=True)
        return expected_improvement(mu, s, best, cfg.xi)

    dim = X.shape[1]
    starts = np.vstack([X[np.argmax(y)], rng.uniform(-cfg.bound, cfg.bound, (cfg.acquisition_starts - 1, dim))])
    x, ei = _maximize_acquisition(acq, starts, cfg.bound, cfg.acquisition_sweeps)
    if not np.isfinite(ei):
        raise ValueError("acquisition non finie")
    if np.min(np.linalg.norm(X - x, axis=1)) < 1e-9:
        # point déjà évalué : on explore au hasard
        x = rng.uniform(-cfg.bound, cfg.bound, dim)
    return x


def optimize(objective: Callable[[np.ndarray], float], dim: int, cfg: OptimizerConfig,
             warm_start: Optional[np.ndarray] = None) -> OptimizeResult:
    """Maximise `objective` sur [−bound, bound]^dim en au plus cfg.budget évaluations."""
    rng = np.random.default_rng(cfg.seed)
    xs: list[np.ndarray] = []
    fs: list[float] = []

    def evaluate(x):
        value = float(objective(x))
        xs.append(np.array(x, dtype=float))
        fs.append(value)
        return value

    for x in warm_start_policy(warm_start, dim, cfg)[: cfg.budget]:
        evaluate(x)

    used_fallback = False
    while len(fs) < cfg.budget:
        try:
            x_next = _propose(np.array(xs), np.array(fs), cfg, rng)
        except (np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("⚠️ GP inutilisable (%s) : recherche par motifs depuis le meilleur point", exc)
            if cfg.fallback == "none":
                break
            used_fallback = True
            i = int(np.argmax(fs))
            pattern_search(evaluate, xs[i], cfg.budget - len(fs), cfg.bound, f0=fs[i])
            break
        evaluate(x_next)

    history_f = np.array(fs)
    best = int(np.argmax(history_f))
    if history_f[best] < history_f[0]:
        raise NumericalError("la recherche a perdu le point de référence U_AL")
    return OptimizeResult(
        x=xs[best], fx=float(history_f[best]), baseline=float(history_f[0]),
        history_x=np.array(xs), history_f=history_f,
        evals_to_incumbent=best + 1, used_fallback=used_fallback,
    )


# --- ORACLE ---
def brute_force_local_ergotropy(psi, params, n: int, seed: int = 0, refine_budget: int = 300) -> float:
    """Maximum du travail sur U_AL puis n−1 unitaires de Haar.

    Chaque candidat est affiné par motifs sur les a_ij, puis par montée de gradient sur U(d_S).
    Les candidats sont tirés dans un ordre fixe : la valeur est croissante en n.
    """
    from app.services.ergotropy import LocalWorkEvaluator

    evaluator = LocalWorkEvaluator(psi, params)
    d_S = params.d_S
    dim = n_parameters(d_S)
    rng = np.random.default_rng(seed)
    u_al = build_U_AL(evaluator.rho_S.matrix, evaluator.h_block)
    best = -np.inf
    for k in range(max(n, 1)):
        seed_U = u_al if k == 0 else unitary_group.rvs(d_S, random_state=rng)
        budget = refine_budget * (10 if k == 0 else 1)

        def work(a, seed_U=seed_U):
            return evaluator.work(seed_U @ build_U1(a))

        x, value = pattern_search(work, np.zeros(dim), budget, np.pi,
                                  min_step=1e-6 if k == 0 else 1e-4)
        _, refined, _ = riemannian_ascent(evaluator.work, evaluator.work_gradient,
                                          seed_U @ build_U1(x), budget)
        best = max(best, value, refined)
    return float(best)
