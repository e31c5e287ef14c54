"""Commandes d'expérience : run, sweep, classify, plotdata, global, schema.

Un dossier de résultats (bundle) contient :
  config.json, manifest.json, un CSV par observable (t, mean, sigma_cl, sem, R),
  raw/ (optionnel, une colonne par réalisation) et plots/ (SVG optionnels).
"""
import copy
import json
import logging
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import joblib
import numpy as np
import scipy
import sklearn
from pydantic import ValidationError
from scipy import stats as sps

from app import __version__, config
from app.exceptions import BundleError, ConfigError
from app.models.experiment_models import ClassifyThresholds, ExperimentConfig
from app.services.ensemble_runner import (
    AXIS_FIELDS,
    PhaseLabel,
    RealizationResult,
    TimeSeriesStats,
    aggregate,
    classify_phase,
    fit_log_slope,
    late_time_mean,
    resolve_workers,
    run_ensemble,
    run_global_ensemble,
    with_axis_value,
)
from app.utils import bundle_io
from app.utils.plotting import Curve, line_plot_svg

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
DEFAULT_SVG_SERIES = ("entropy_S", "entropy_half", "imbalance", "ergotropy_S", "sigma")
PHASE_FILE = "phase.json"
SUMMARY_FILE = "summary.csv"


# --- CHARGEMENT DE LA CONFIGURATION ---
def deep_merge(base: dict, override: dict) -> dict:
    """Fusion récursive ; les clés de `override` l'emportent."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def list_presets() -> dict[str, str]:
    """Nom → description des presets disponibles."""
    presets = {}
    for path in sorted(config.presets_dir().glob("*.json")):
        try:
            presets[path.stem] = json.loads(path.read_text(encoding="utf-8")).get("description", "")
        except (OSError, json.JSONDecodeError):
            logger.warning("⚠️ preset illisible ignoré : %s", path)
    return presets


def load_preset(name: str) -> dict:
    path = config.presets_dir() / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"preset inconnu : {name!r}", [f"disponibles : {', '.join(list_presets()) or 'aucun'}"])
    return _parse_json(path.read_text(encoding="utf-8"), str(path))


def _parse_json(text: str, source: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON invalide dans {source}",
                          [f"ligne {exc.lineno}, colonne {exc.colno} : {exc.msg}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source} : un objet JSON est attendu à la racine")
    return data


def build_config(data: dict, source: str = "<dict>") -> ExperimentConfig:
    """Valide un dictionnaire de configuration, preset éventuel fusionné dessous."""
    if data.get("preset"):
        data = deep_merge(load_preset(data["preset"]), data)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        details = [f"{'.'.join(str(p) for p in err['loc']) or '<racine>'} : {err['msg']}"
                   for err in exc.errors()]
        raise ConfigError(f"configuration invalide ({source})", details) from None


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"lecture impossible : {path}", [str(exc)]) from None
    return build_config(_parse_json(text, str(path)), str(path))


def with_overrides(cfg: ExperimentConfig, seed: Optional[int] = None) -> ExperimentConfig:
    if seed is None:
        return cfg
    data = cfg.model_dump(mode="json")
    data["ensemble"]["seed"] = seed
    return build_config(data, "--seed")


def output_root(cfg: ExperimentConfig, out: Optional[Path | str] = None) -> Path:
    """Flag CLI > ERGOLOC_OUTPUT_DIR > fichier > défaut."""
    if out is not None:
        return Path(out)
    return config.env_output_dir() or Path(cfg.output.dir or config.DEFAULT_OUTPUT_DIR)


# --- ÉCRITURE DES BUNDLES ---
def _manifest(cfg: ExperimentConfig, wall_time: float, workers: int, stats: TimeSeriesStats,
              partial: bool = False) -> dict:
    per_run = stats.wall_times if stats.wall_times is not None else np.zeros(0)
    return {
        "name": cfg.name,
        "seed": cfg.ensemble.seed,
        "realizations": stats.R,
        # R = 1 : σ_cl reporté à 0, non défini
        "sigma_undefined": stats.sigma_undefined,
        "partial": partial,
        "workers": workers,
        "wall_time_s": round(wall_time, 3),
        "realization_wall_time_s": [round(float(w), 3) for w in per_run],
        "versions": {
            "ergoloc": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
            "joblib": joblib.__version__,
        },
        "config": cfg.model_dump(mode="json"),
    }


def write_bundle(target: Path, cfg: ExperimentConfig, stats: TimeSeriesStats, manifest: dict) -> Path:
    with bundle_io.atomic_dir(target) as tmp:
        bundle_io.write_json(tmp / bundle_io.CONFIG_FILE, cfg.model_dump(mode="json"))
        bundle_io.write_json(tmp / bundle_io.MANIFEST_FILE, manifest)
        for name in stats.names:
            bundle_io.write_series(tmp / f"{name}.csv", stats.times, stats.mean[name],
                                   stats.sigma_cl[name], stats.sem[name], stats.count[name])
        if cfg.output.write_raw:
            raw = tmp / "raw"
            raw.mkdir()
            columns = ["t"] + [f"r{i}" for i in range(stats.R)]
            for name, values in stats.raw.items():
                bundle_io.write_table(raw / f"{name}.csv", columns, np.column_stack([stats.times, values.T]))
            if stats.fields is not None:
                bundle_io.write_table(raw / "fields.csv", [f"h{i + 1}" for i in range(stats.fields.shape[1])],
                                      stats.fields)
        if cfg.output.write_svg:
            plots = tmp / "plots"
            plots.mkdir()
            for name in DEFAULT_SVG_SERIES:
                if name in stats.mean:
                    line_plot_svg(plots / f"{name}.svg",
                                  [Curve(cfg.name, stats.times, stats.mean[name], stats.sem[name])],
                                  ylabel=name, title=cfg.name)
    return target


def cmd_run(cfg: ExperimentConfig, workers: Optional[int] = None, out: Optional[Path | str] = None) -> Path:
    """Exécute l'ensemble et écrit le bundle `<racine>/<nom>` de façon atomique."""
    root = output_root(cfg, out)
    n_jobs = resolve_workers(workers)
    start = time.perf_counter()

    def persist_partial(done: list[RealizationResult]) -> None:
        target = root / f"{cfg.name}.partial"
        partial_stats = aggregate(done)
        manifest = _manifest(cfg, time.perf_counter() - start, n_jobs, partial_stats, partial=True)
        write_bundle(target, cfg, partial_stats, manifest)
        logger.warning("⚠️ résultats partiels (%d réalisations) : %s", len(done), target)

    stats = run_ensemble(cfg.ensemble, n_jobs, on_failure=persist_partial)
    manifest = _manifest(cfg, time.perf_counter() - start, n_jobs, stats)
    target = write_bundle(root / cfg.name, cfg, stats, manifest)
    logger.info("✅ %s terminé en %.1f s", cfg.name, manifest["wall_time_s"])
    return target


# --- LECTURE DES BUNDLES ---
@dataclass
class Bundle:
    path: Path
    config: ExperimentConfig
    stats: TimeSeriesStats


def load_bundle(path: Path | str) -> Bundle:
    path = Path(path)
    names = bundle_io.series_names(path)
    if not names:
        raise BundleError(f"aucune série dans {path}")
    try:
        cfg = ExperimentConfig.model_validate(bundle_io.read_json(path / bundle_io.CONFIG_FILE))
    except ValidationError as exc:
        raise BundleError(f"{path / bundle_io.CONFIG_FILE} invalide : {exc.error_count()} erreur(s)") from None
    columns = {name: bundle_io.read_series(path / f"{name}.csv") for name in names}
    times = columns[names[0]]["t"]
    for name, col in columns.items():
        if not np.array_equal(col["t"], times):
            raise BundleError(f"{name}.csv : grille temporelle différente")
    stats = TimeSeriesStats(
        times=times,
        mean={n: c["mean"] for n, c in columns.items()},
        sigma_cl={n: c["sigma_cl"] for n, c in columns.items()},
        sem={n: c["sem"] for n, c in columns.items()},
        count={n: c["R"] for n, c in columns.items()},
        R=int(np.nanmax(columns[names[0]]["R"])),
    )
    return Bundle(path=path, config=cfg, stats=stats)


# --- CLASSIFICATION ---
def cmd_classify(bundle_path: Path | str, thresholds: Optional[ClassifyThresholds] = None) -> PhaseLabel:
    """Classe la phase d'un bundle et écrit phase.json à côté des séries."""
    bundle = load_bundle(bundle_path)
    ens = bundle.config.ensemble
    try:
        label = classify_phase(bundle.stats, thresholds or bundle.config.classify, W=ens.W, J_perp=ens.J_perp)
    except ValueError as exc:
        raise BundleError(f"{bundle.path} : {exc}") from None
    bundle_io.write_json_atomic(bundle.path / PHASE_FILE, label.to_dict())
    logger.info("🏷️ %s : %s (E_S tardif %.4g, seuil %.4g)", bundle.path.name, label.label,
                label.late_ergotropy, label.erg_threshold)
    return label


def format_phase(label: PhaseLabel) -> str:
    lines = [f"phase : {label.label}",
             f"E_S tardif = {label.late_ergotropy:.6g} (seuil ERG {label.erg_threshold:.6g})"]
    for name, fit in label.fits.items():
        lines.append(f"pente {name} vs ln t = {fit.slope:+.4g} ± {fit.stderr:.2g} ({fit.n} points)")
    lines.extend(f"note : {d}" for d in label.diagnostics)
    return "\n".join(lines)


# --- BALAYAGES ---
def _safe_slope(stats: TimeSeriesStats, name: str, window) -> tuple[float, float]:
    if name not in stats.mean:
        return math.nan, math.nan
    try:
        fit = fit_log_slope(stats.times, stats.mean[name], window)
    except ValueError:
        return math.nan, math.nan
    return fit.slope, fit.stderr


def _safe_late(stats: TimeSeriesStats, name: str, t_min: float) -> float:
    try:
        return late_time_mean(stats, name, t_min)
    except ValueError:
        return math.nan


SUMMARY_COLUMNS = (
    "value", "ergotropy_SS_t0", "late_ergotropy_S", "late_entropy_S", "late_sigma", "late_imbalance",
    "slope_entropy_S", "stderr_entropy_S", "slope_ergotropy_S", "stderr_ergotropy_S",
)


def summary_row(value: float, stats: TimeSeriesStats, thresholds: ClassifyThresholds) -> list[float]:
    t_min, window = thresholds.late_time_min, thresholds.fit_window
    e_ss0 = float(stats.mean["ergotropy_SS"][0]) if "ergotropy_SS" in stats.mean else math.nan
    return [
        value, e_ss0,
        _safe_late(stats, "ergotropy_S", t_min), _safe_late(stats, "entropy_S", t_min),
        _safe_late(stats, "sigma", t_min), _safe_late(stats, "imbalance", t_min),
        *_safe_slope(stats, "entropy_S", window), *_safe_slope(stats, "ergotropy_S", window),
    ]


def cmd_sweep(cfg: ExperimentConfig, axis: str, values: Sequence[float], workers: Optional[int] = None,
              out: Optional[Path | str] = None) -> Path:
    """Un bundle par valeur de l'axe, plus summary.csv (et la loi en W/2 pour l'axe W)."""
    if axis not in AXIS_FIELDS:
        raise ConfigError(f"axe inconnu {axis!r}", [f"attendu : {', '.join(AXIS_FIELDS)}"])
    if not values:
        raise ConfigError("aucune valeur de balayage")
    root = output_root(cfg, out) / f"{cfg.name}-sweep-{axis}"
    rows = []
    for value in values:
        try:
            ensemble = with_axis_value(cfg.ensemble, axis, value)
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"{axis}={value:g} invalide", [str(exc)]) from None
        data = cfg.model_dump(mode="json")
        data.update(name=f"{cfg.name}-{axis}={value:g}", ensemble=ensemble.model_dump(mode="json"))
        point = build_config(data, f"{axis}={value:g}")
        bundle = cmd_run(point, workers, out=root)
        rows.append(summary_row(float(value), load_bundle(bundle).stats, cfg.classify))

    table = np.array(rows)
    bundle_io.write_table_atomic(root / SUMMARY_FILE, SUMMARY_COLUMNS, table)
    if axis == "W" and len(rows) >= 2 and np.all(np.isfinite(table[:, 1])):
        fit = sps.linregress(table[:, 0], table[:, 1])
        law = {"slope": float(fit.slope), "intercept": float(fit.intercept), "stderr": float(fit.stderr)}
        bundle_io.write_json_atomic(root / "ergotropy_SS_vs_W.json", law)
        logger.info("📈 E_SS(t=0) vs W : pente %.4f ± %.4f", law["slope"], law["stderr"])
    return root


def cmd_global(cfg: ExperimentConfig, axis: str, values: Sequence[float], workers: Optional[int] = None,
               out: Optional[Path | str] = None) -> Path:
    """Ergotropie globale et fluctuations par site en fonction de J_z ou de N."""
    if axis not in AXIS_FIELDS:
        raise ConfigError(f"axe inconnu {axis!r}", [f"attendu : {', '.join(AXIS_FIELDS)}"])
    try:
        sweep = run_global_ensemble(cfg.ensemble, axis, values, workers)
    except ValidationError as exc:
        raise ConfigError("valeur de balayage invalide", [str(exc)]) from None
    root = output_root(cfg, out)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{cfg.name}-global-{axis}.csv"
    columns = list(sweep.rows[0])
    bundle_io.write_table_atomic(path, columns, np.array([[row[c] for c in columns] for row in sweep.rows]))
    if sweep.inverse_size_fit is not None:
        bundle_io.write_json_atomic(path.with_suffix(".fit.json"), sweep.inverse_size_fit)
    return path


def cmd_schema() -> dict:
    return ExperimentConfig.model_json_schema()


# --- DONNÉES DE FIGURES ---
@dataclass(frozen=True)
class PlotColumn:
    name: str
    compute: Callable[[TimeSeriesStats], tuple[np.ndarray, np.ndarray]]
    requires: tuple[str, ...]


def _series(name: str, scale: float = 1.0) -> PlotColumn:
    return PlotColumn(name, lambda s: (scale * s.mean[name], scale * s.sem[name]), (name,))


def _difference(a: str, b: str) -> PlotColumn:
    # erreur standard sans la covariance entre les deux séries
    return PlotColumn(f"{a}-{b}",
                      lambda s: (s.mean[a] - s.mean[b], np.hypot(s.sem[a], s.sem[b])), (a, b))


def _sigma_cl(name: str) -> PlotColumn:
    return PlotColumn(f"{name}_sigma_cl", lambda s: (s.sigma_cl[name], s.sem[name]), (name,))


@dataclass(frozen=True)
class PlotPreset:
    columns: tuple[PlotColumn, ...]
    ylabel: str


PLOT_PRESETS: dict[str, PlotPreset] = {
    "fig1b": PlotPreset((_series("entropy_S"),), r"$S_{2,(N-2)}$"),
    "fig2": PlotPreset((_series("ergotropy_S"),), r"$\mathcal{E}_S / J_\perp$"),
    "fig3": PlotPreset((_series("ergotropy_S"), _series("ergotropy_SO"),
                        _difference("ergotropy_S", "ergotropy_SO")), r"$\mathcal{E} / J_\perp$"),
    "fig4": PlotPreset((_series("sigma"), _series("relative_sigma")), r"$\sigma$"),
    "figA-half": PlotPreset((_series("entropy_half"),), r"$S_{N/2,N/2}$"),
    "figB-imbalance": PlotPreset((_series("imbalance"),), r"$\mathcal{I}$"),
    "figC-fluct": PlotPreset((_series("sigma2"), _series("relative_sigma")), r"$\sigma^2$"),
    "figS1-disorder": PlotPreset((_series("ergotropy_S"), _sigma_cl("ergotropy_S")), r"$\mathcal{E}_S / J_\perp$"),
    "figS6-unitaries": PlotPreset(
        (_difference("ergotropy_S", "ergotropy_U_AL"), _difference("ergotropy_U_AL", "ergotropy_SO"),
         _difference("ergotropy_S", "ergotropy_SO"), PlotColumn(
             "gain_percent", lambda s: (100 * s.mean["gain_U_vs_U_AL"], 100 * s.sem["gain_U_vs_U_AL"]),
             ("gain_U_vs_U_AL",))),
        r"$\Delta\mathcal{E} / J_\perp$"),
}


def cmd_plotdata(bundle_paths: Sequence[Path | str], preset: str, out: Optional[Path | str] = None) -> Path:
    """CSV (et SVG) d'une figure : une colonne moyenne et une colonne sem par série et par bundle."""
    if preset not in PLOT_PRESETS:
        raise ConfigError(f"preset de figure inconnu : {preset!r}", [f"disponibles : {', '.join(PLOT_PRESETS)}"])
    if not bundle_paths:
        raise ConfigError("au moins un bundle requis")
    spec = PLOT_PRESETS[preset]
    bundles = [load_bundle(p) for p in bundle_paths]
    times = bundles[0].stats.times
    columns, data, curves = ["t"], [times], []
    for bundle in bundles:
        if not np.array_equal(bundle.stats.times, times):
            raise BundleError(f"{bundle.path} : grille temporelle différente de {bundles[0].path}")
        for col in spec.columns:
            missing = [n for n in col.requires if n not in bundle.stats.mean]
            if missing:
                raise BundleError(f"{bundle.path} : séries manquantes {', '.join(missing)}")
            mean, err = col.compute(bundle.stats)
            label = f"{bundle.config.name}:{col.name}"
            columns += [label, f"{label}:sem"]
            data += [mean, err]
            curves.append(Curve(label, times, mean, err))

    target = Path(out) if out is not None else bundles[0].path / "plots" / preset
    with bundle_io.atomic_dir(target) as tmp:
        bundle_io.write_table(tmp / f"{preset}.csv", columns, np.column_stack(data))
        bundle_io.write_json(tmp / "summary.json", {"preset": preset, "time_average": _time_averages(curves)})
        line_plot_svg(tmp / f"{preset}.svg", curves, ylabel=spec.ylabel, title=preset)
    return target


def _time_averages(curves: Sequence[Curve]) -> dict[str, Optional[float]]:
    """Moyenne temporelle (t > 0) de chaque courbe ; None si la série est entièrement NaN."""
    averages = {}
    for curve in curves:
        values = np.asarray(curve.y)[np.asarray(curve.x) > 0]
        finite = values[np.isfinite(values)]
        averages[curve.label] = float(finite.mean()) if finite.size else None
    return averages
