"""Réalisations du désordre, exécution parallèle, moyennes d'ensemble et classification des phases."""
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats as sps

from app import config
from app.exceptions import RealizationError
from app.models.experiment_models import ClassifyThresholds, EnsembleConfig
from app.services.ergotropy import evaluate_ergotropies, global_quantum_fluctuation
from app.services.lattice_model import (
    SectorBasis,
    SectorState,
    bell_chain_state,
    build_basis,
    build_block_operators,
    build_hamiltonian,
    neel_state,
    sample_disorder,
)
from app.services.observables import (
    energy_split,
    expectation,
    half_chain_entropy,
    imbalance,
    reduced_density_matrix,
    von_neumann_entropy,
)
from app.services.propagator import evolve_on_grid, full_space_ground_energy, make_time_grid

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
OBSERVABLES = (
    "entropy_S", "entropy_half", "imbalance", "energy", "energy_drift", "norm_error",
    "e_S", "e_int", "e_E",
    "ergotropy_global", "ergotropy_S", "ergotropy_U_AL", "ergotropy_SS", "delta_SO", "ergotropy_SO",
    "sigma2", "sigma", "relative_sigma", "gain_U_vs_U_AL", "d_e_S", "d_e_int", "evaluations",
)
AXIS_FIELDS = {"W": "W", "Jz": "J_z", "N": "N"}
ENERGY_DRIFT_TOL = 1e-9
ZERO_SLOPE_ATOL = 1e-12
IMBALANCE_PLATEAU = 0.2
MIN_FIT_POINTS = 5


# --- RÉALISATION ---
@dataclass
class RealizationResult:
    index: int
    fields: tuple[float, ...]
    times: np.ndarray
    series: dict[str, np.ndarray]
    wall_time: float = 0.0


def realization_rng(master_seed: int, index: int) -> np.random.Generator:
    """Flux Philox propre à la réalisation, indépendant de l'ordre d'exécution."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


def optimizer_seed(cfg: EnsembleConfig, index: int, step: int) -> int:
    return int(np.random.SeedSequence(cfg.optimizer.seed, spawn_key=(index, step)).generate_state(1)[0])


def initial_state(cfg: EnsembleConfig, basis: SectorBasis) -> SectorState:
    return bell_chain_state(basis) if cfg.initial_state == "bell" else neel_state(basis)


def _run_realization(cfg: EnsembleConfig, index: int) -> RealizationResult:
    start = time.perf_counter()
    flags = cfg.observables
    h = sample_disorder(cfg.W, cfg.N, realization_rng(cfg.seed, index))
    params = cfg.model_params(h)
    basis = build_basis(cfg.N)
    H = build_hamiltonian(params, basis)
    ops = build_block_operators(params, basis)
    psi0 = initial_state(cfg, basis)
    grid = make_time_grid(cfg.grid.t_min, cfg.grid.t_max, cfg.grid.points, cfg.grid.spacing)
    series = {name: np.full(len(grid), np.nan) for name in OBSERVABLES}
    e0 = expectation(H, psi0)
    warm = None

    for k, (t, psi) in enumerate(evolve_on_grid(H, psi0, grid)):
        energy = expectation(H, psi)
        split = energy_split(psi, ops)
        row = {
            "entropy_S": von_neumann_entropy(reduced_density_matrix(psi, params.block_sites)),
            "energy": energy,
            "energy_drift": abs(energy - e0),
            "norm_error": abs(psi.norm() - 1.0),
            "e_S": split.e_S, "e_int": split.e_int, "e_E": split.e_E,
        }
        if row["energy_drift"] > ENERGY_DRIFT_TOL * (abs(e0) + 1):
            logger.warning("⚠️ réalisation %d, t=%g : dérive d'énergie %.2e", index, t, row["energy_drift"])
        if flags.entropy_half:
            row["entropy_half"] = half_chain_entropy(psi)
        if flags.imbalance:
            row["imbalance"] = imbalance(psi)
        if flags.ergotropy:
            opt_cfg = cfg.optimizer.model_copy(update={"seed": optimizer_seed(cfg, index, k)})
            rec = evaluate_ergotropies(psi, t, params, ops, H, opt_cfg, flags, warm_start=warm)
            warm = rec.best_params if flags.optimize_unitary else None
            row.update({
                "ergotropy_global": rec.E_global, "ergotropy_S": rec.E_S_lower,
                "ergotropy_U_AL": rec.E_U_AL, "ergotropy_SS": rec.E_SS,
                "delta_SO": rec.delta_SO, "ergotropy_SO": rec.E_SO,
                "sigma2": rec.sigma2, "sigma": rec.sigma, "relative_sigma": rec.relative_sigma,
                "gain_U_vs_U_AL": rec.gain, "d_e_S": rec.d_e_S, "d_e_int": rec.d_e_int,
                "evaluations": rec.evaluations,
            })
        for name, value in row.items():
            series[name][k] = value

    return RealizationResult(index=index, fields=h, times=grid.times, series=series,
                             wall_time=time.perf_counter() - start)


def run_realization(cfg: EnsembleConfig, index: int) -> RealizationResult:
    """Chaîne complète pour la réalisation `index` ; déterministe en (cfg, index)."""
    if not 0 <= index < cfg.R:
        raise ValueError(f"indice de réalisation {index} hors de [0, {cfg.R})")
    try:
        return _run_realization(cfg, index)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        raise RealizationError(index, exc) from exc


# --- STATISTIQUES ---
@dataclass
class TimeSeriesStats:
    times: np.ndarray
    mean: dict[str, np.ndarray]
    sigma_cl: dict[str, np.ndarray]
    sem: dict[str, np.ndarray]
    count: dict[str, np.ndarray]
    R: int
    raw: dict[str, np.ndarray] = field(default_factory=dict)   # R × T, ordre des indices
    fields: Optional[np.ndarray] = None                        # R × N
    wall_times: Optional[np.ndarray] = None                    # R, secondes

    @property
    def names(self) -> list[str]:
        return list(self.mean)

    @property
    def sigma_undefined(self) -> bool:
        """Une seule réalisation : σ_cl reporté à 0."""
        return self.R < 2

    def require(self, *names: str) -> None:
        missing = [n for n in names if n not in self.mean]
        if missing:
            raise ValueError(f"séries manquantes : {', '.join(missing)}")


def aggregate(results: Sequence[RealizationResult]) -> TimeSeriesStats:
    """Moyennes et écarts-types sur l'axe des réalisations, dans l'ordre des indices."""
    if not results:
        raise ValueError("aucune réalisation à agréger")
    results = sorted(results, key=lambda r: r.index)
    times = results[0].times
    mean, sigma, sem, count, raw = {}, {}, {}, {}, {}
    for name in OBSERVABLES:
        values = np.stack([r.series[name] for r in results])
        n = np.sum(np.isfinite(values), axis=0)
        if not n.any():
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            m = np.nanmean(values, axis=0)
            s = np.where(n >= 2, np.nanstd(values, axis=0, ddof=1), 0.0)
        raw[name], mean[name], sigma[name], count[name] = values, m, s, n
        sem[name] = np.where(n >= 1, s / np.sqrt(np.maximum(n, 1)), np.nan)
    return TimeSeriesStats(times=times, mean=mean, sigma_cl=sigma, sem=sem, count=count,
                           R=len(results), raw=raw,
                           fields=np.array([r.fields for r in results]),
                           wall_times=np.array([r.wall_time for r in results]))


@dataclass(frozen=True)
class DisorderFluctuations:
    sigma_cl: float
    sem: float
    relative: float


def disorder_fluctuations(values: Sequence[float]) -> DisorderFluctuations:
    """σ_cl = √(Σ(x − x̄)²/(R−1)), erreur standard σ_cl/√R, relatif σ_cl/x̄."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise ValueError("au moins 2 réalisations requises")
    sigma = float(np.std(x, ddof=1))
    m = float(np.mean(x))
    relative = sigma / m if abs(m) > 1e-9 else float("nan")
    return DisorderFluctuations(sigma_cl=sigma, sem=sigma / math.sqrt(x.size), relative=relative)


# --- EXÉCUTION ---
def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is not None:
        return workers
    return config.env_workers() or 1


def run_ensemble(cfg: EnsembleConfig, workers: Optional[int] = None,
                 on_failure: Optional[Callable[[list[RealizationResult]], None]] = None) -> TimeSeriesStats:
    """Toutes les réalisations, agrégées par indice croissant quel que soit le nombre de workers.

    Un échec interrompt l'ensemble ; les réalisations terminées sont passées à `on_failure`.
    """
    n_jobs = resolve_workers(workers)
    logger.info("🚀 %d réalisations (N=%d, W=%g, J_z=%g) sur %s worker(s)",
                cfg.R, cfg.N, cfg.W, cfg.J_z, n_jobs)
    step = max(cfg.R // 10, 1)
    done: list[RealizationResult] = []
    start = time.perf_counter()
    try:
        tasks = Parallel(n_jobs=n_jobs, return_as="generator")(
            delayed(run_realization)(cfg, i) for i in range(cfg.R)
        )
        for result in tasks:
            done.append(result)
            if len(done) % step == 0 or len(done) == cfg.R:
                logger.info("... %d/%d réalisations (%.1f s)", len(done), cfg.R, time.perf_counter() - start)
    except Exception as exc:
        logger.error("❌ ensemble interrompu après %d réalisations : %s", len(done), exc)
        if on_failure is not None and done:
            on_failure(done)
        raise
    return aggregate(done)


# --- AJUSTEMENTS ---
@dataclass(frozen=True)
class LogFit:
    slope: float
    intercept: float
    stderr: float
    n: int

    def consistent_with_zero(self, sigmas: float) -> bool:
        return abs(self.slope) <= sigmas * self.stderr + ZERO_SLOPE_ATOL

    def significant(self, sigmas: float = 3.0) -> bool:
        return abs(self.slope) > sigmas * self.stderr

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "stderr": self.stderr, "n": self.n}


def fit_log_slope(times: np.ndarray, values: np.ndarray,
                  window: tuple[float, float] = (2.0, 200.0)) -> LogFit:
    """Moindres carrés de `values` contre ln t sur la fenêtre."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    mask = (t >= window[0]) & (t <= window[1]) & (t > 0) & np.isfinite(v)
    n = int(mask.sum())
    if n < MIN_FIT_POINTS:
        raise ValueError(f"{n} points dans la fenêtre {window}, {MIN_FIT_POINTS} requis")
    fit = sps.linregress(np.log(t[mask]), v[mask])
    return LogFit(slope=float(fit.slope), intercept=float(fit.intercept),
                  stderr=float(fit.stderr), n=n)


def late_time_mean(stats: TimeSeriesStats, name: str, t_min: float) -> float:
    stats.require(name)
    values = stats.mean[name][stats.times >= t_min]
    values = values[np.isfinite(values)]
    if not values.size:
        raise ValueError(f"aucun point de {name} au-delà de t={t_min}")
    return float(np.mean(values))


# --- CLASSIFICATION ---
PhaseName = Literal["ERG", "AL", "MBL", "UNDETERMINED"]


@dataclass
class PhaseLabel:
    label: PhaseName
    fits: dict[str, LogFit]
    late_ergotropy: float
    erg_threshold: float
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "fits": {name: fit.to_dict() for name, fit in self.fits.items()},
            "late_ergotropy_S": self.late_ergotropy,
            "erg_threshold": self.erg_threshold,
            "diagnostics": self.diagnostics,
        }


def classify_phase(stats: TimeSeriesStats, thresholds: ClassifyThresholds,
                   W: float, J_perp: float = 1.0) -> PhaseLabel:
    """ERG : E_S tardif ≈ 0 ; AL : pente d'entropie nulle ; MBL : entropie ↑ et E_S ↓ en ln t."""
    stats.require("entropy_S", "ergotropy_S")
    window = thresholds.fit_window
    k = thresholds.zero_slope_sigmas
    fits = {"entropy_S": fit_log_slope(stats.times, stats.mean["entropy_S"], window),
            "ergotropy_S": fit_log_slope(stats.times, stats.mean["ergotropy_S"], window)}
    if "sigma" in stats.mean:
        fits["sigma"] = fit_log_slope(stats.times, stats.mean["sigma"], window)
    # plancher J_⊥ : sans désordre le seuil θ·W/2 serait nul
    threshold = thresholds.theta_erg * max(W / 2, abs(J_perp))
    late = late_time_mean(stats, "ergotropy_S", thresholds.late_time_min)
    diagnostics = []

    entropy, ergo = fits["entropy_S"], fits["ergotropy_S"]
    if late <= threshold:
        label = "ERG"
    elif entropy.consistent_with_zero(k):
        label = "AL"
    elif entropy.slope > 0 and ergo.slope < 0:
        label = "MBL"
    else:
        label = "UNDETERMINED"
        diagnostics.append(
            f"signaux contradictoires : pente S = {entropy.slope:.3g} ± {entropy.stderr:.2g}, "
            f"pente E_S = {ergo.slope:.3g} ± {ergo.stderr:.2g}"
        )

    if label == "AL" and "imbalance" in stats.mean:
        plateau = late_time_mean(stats, "imbalance", thresholds.late_time_min)
        if plateau <= IMBALANCE_PLATEAU:
            diagnostics.append(f"plateau d'imbalance faible pour une phase AL ({plateau:.3f})")
            logger.warning("⚠️ imbalance tardive %.3f <= %.1f en phase AL", plateau, IMBALANCE_PLATEAU)
    return PhaseLabel(label=label, fits=fits, late_ergotropy=late,
                      erg_threshold=threshold, diagnostics=diagnostics)


# --- BALAYAGES ---
def with_axis_value(cfg: EnsembleConfig, axis: str, value: float) -> EnsembleConfig:
    """Copie revalidée de la configuration avec un paramètre modifié."""
    try:
        key = AXIS_FIELDS[axis]
    except KeyError:
        raise ValueError(f"axe inconnu {axis!r} (attendu : {', '.join(AXIS_FIELDS)})") from None
    if key == "N":
        value = int(value)
    return EnsembleConfig.model_validate({**cfg.model_dump(), key: value})


@dataclass(frozen=True)
class GlobalSample:
    ergotropy_per_site: float
    fluctuation_per_site: float


def _global_sample(cfg: EnsembleConfig, index: int) -> GlobalSample:
    h = sample_disorder(cfg.W, cfg.N, realization_rng(cfg.seed, index))
    params = cfg.model_params(h)
    basis = build_basis(cfg.N)
    H = build_hamiltonian(params, basis)
    psi0 = initial_state(cfg, basis)
    ergotropy = expectation(H, psi0) - full_space_ground_energy(params)
    return GlobalSample(ergotropy / cfg.N, global_quantum_fluctuation(psi0, H) / cfg.N)


@dataclass
class GlobalSweep:
    axis: str
    rows: list[dict]
    inverse_size_fit: Optional[dict] = None


def run_global_ensemble(cfg: EnsembleConfig, axis: str, values: Sequence[float],
                        workers: Optional[int] = None) -> GlobalSweep:
    """Ergotropie globale et fluctuation quantique globale par site, sans évolution temporelle."""
    n_jobs = resolve_workers(workers)
    rows = []
    for value in values:
        point = with_axis_value(cfg, axis, value)
        samples = Parallel(n_jobs=n_jobs)(delayed(_global_sample)(point, i) for i in range(point.R))
        row = {"value": float(value), "R": point.R}
        for name in ("ergotropy_per_site", "fluctuation_per_site"):
            x = np.array([getattr(s, name) for s in samples])
            row[f"{name}_mean"] = float(np.mean(x))
            if x.size >= 2:
                fl = disorder_fluctuations(x)
                row[f"{name}_sigma_cl"], row[f"{name}_sem"] = fl.sigma_cl, fl.sem
            else:
                row[f"{name}_sigma_cl"], row[f"{name}_sem"] = 0.0, 0.0
        rows.append(row)
        logger.info("%s=%g : E/N = %.6g", axis, value, row["ergotropy_per_site_mean"])

    fit = None
    if axis == "N" and len(rows) >= 2:
        inv = np.array([1.0 / r["value"] for r in rows])
        res = sps.linregress(inv, [r["ergotropy_per_site_mean"] for r in rows])
        fit = {"slope": float(res.slope), "intercept": float(res.intercept), "stderr": float(res.stderr)}
    return GlobalSweep(axis=axis, rows=rows, inverse_size_fit=fit)
