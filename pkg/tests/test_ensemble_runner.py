import math

import numpy as np
import pytest

from app.exceptions import NumericalError, RealizationError
from app.models.experiment_models import ClassifyThresholds
from app.services import ensemble_runner
from app.services.ensemble_runner import (
    aggregate,
    classify_phase,
    disorder_fluctuations,
    fit_log_slope,
    late_time_mean,
    optimizer_seed,
    realization_rng,
    resolve_workers,
    run_ensemble,
    run_global_ensemble,
    run_realization,
    with_axis_value,
)
from tests.conftest import small_config, synthetic_stats

THRESHOLDS = ClassifyThresholds()


# --- FLUX ALÉATOIRES ---
def test_realization_streams_are_reproducible_and_distinct():
    a = realization_rng(2024, 3).uniform(size=5)
    np.testing.assert_array_equal(a, realization_rng(2024, 3).uniform(size=5))
    assert not np.array_equal(a, realization_rng(2024, 4).uniform(size=5))
    assert not np.array_equal(a, realization_rng(2025, 3).uniform(size=5))


def test_optimizer_seeds_depend_on_index_and_step():
    cfg = small_config().ensemble
    seeds = {optimizer_seed(cfg, i, k) for i in range(3) for k in range(4)}
    assert len(seeds) == 12
    assert optimizer_seed(cfg, 1, 2) == optimizer_seed(cfg, 1, 2)


# --- RÉALISATION ---
def test_run_realization_is_deterministic():
    cfg = small_config().ensemble
    a, b = run_realization(cfg, 1), run_realization(cfg, 1)
    assert a.fields == b.fields
    for name in ensemble_runner.OBSERVABLES:
        np.testing.assert_array_equal(a.series[name], b.series[name])


def test_realization_series_are_consistent():
    cfg = small_config().ensemble
    result = run_realization(cfg, 0)
    s = result.series
    assert result.times[0] == 0.0 and len(result.times) == cfg.grid.points + 1
    assert s["imbalance"][0] == pytest.approx(1.0)
    assert s["entropy_S"][0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(s["ergotropy_S"] >= s["ergotropy_U_AL"])
    assert np.all(s["ergotropy_S"] <= s["ergotropy_global"] + 1e-9)
    assert np.all(s["evaluations"] > cfg.optimizer.budget)
    np.testing.assert_allclose(s["e_S"] + s["e_int"] + s["e_E"], s["energy"], atol=1e-12)
    assert max(abs(f) for f in result.fields) <= cfg.W


@pytest.mark.slow
def test_energy_conserved_over_long_run():
    cfg = small_config(N=8, W=5.0, R=1, grid={"t_min": 0.05, "t_max": 200.0, "points": 21},
                       observables={"ergotropy": False}).ensemble
    result = run_realization(cfg, 0)
    assert np.max(result.series["energy_drift"]) <= 1e-9
    assert np.max(result.series["norm_error"]) <= 1e-10
    assert np.all(np.isnan(result.series["ergotropy_S"]))


def test_clean_chain_gives_identical_realizations():
    cfg = small_config(W=0.0, R=3).ensemble
    first, third = run_realization(cfg, 0), run_realization(cfg, 2)
    for name in ("entropy_S", "ergotropy_SS", "ergotropy_U_AL", "imbalance"):
        np.testing.assert_allclose(first.series[name], third.series[name], atol=1e-12)


def test_bell_initial_state():
    cfg = small_config(initial_state="bell", R=1, observables={"ergotropy": False}).ensemble
    result = run_realization(cfg, 0)
    assert result.series["entropy_S"][0] == pytest.approx(math.log(2), abs=1e-12)


def test_realization_index_out_of_range():
    cfg = small_config(R=2).ensemble
    with pytest.raises(ValueError):
        run_realization(cfg, 2)


def test_numerical_failure_is_wrapped(monkeypatch):
    def broken(*args, **kwargs):
        raise NumericalError("norme non conservée")

    monkeypatch.setattr(ensemble_runner, "evolve_on_grid", broken)
    with pytest.raises(RealizationError) as info:
        run_realization(small_config().ensemble, 1)
    assert info.value.index == 1
    assert info.value.exit_code == 3


# --- AGRÉGATION ---
def test_disorder_fluctuations_two_values():
    fl = disorder_fluctuations([1.0, 3.0])
    assert fl.sigma_cl == pytest.approx(math.sqrt(2))
    assert fl.sem == pytest.approx(1.0)
    assert fl.relative == pytest.approx(math.sqrt(2) / 2)


def test_disorder_fluctuations_identical_and_too_few():
    assert disorder_fluctuations([0.4] * 5).sigma_cl == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        disorder_fluctuations([1.0])


def test_single_realization_has_zero_sigma():
    stats = run_ensemble(small_config(R=1, observables={"ergotropy": False}).ensemble, workers=1)
    assert stats.R == 1 and stats.sigma_undefined
    assert not np.any(stats.sigma_cl["entropy_S"])
    assert "ergotropy_S" not in stats.names


def test_clean_ensemble_has_no_disorder_spread():
    stats = run_ensemble(small_config(W=0.0, R=3).ensemble, workers=1)
    for name in ("entropy_S", "ergotropy_SS", "imbalance"):
        assert np.max(stats.sigma_cl[name]) <= 1e-12


def test_aggregate_matches_manual_statistics():
    cfg = small_config(R=3, observables={"ergotropy": False}).ensemble
    results = [run_realization(cfg, i) for i in (2, 0, 1)]
    stats = aggregate(results)
    values = np.stack([run_realization(cfg, i).series["entropy_S"] for i in range(3)])
    np.testing.assert_allclose(stats.mean["entropy_S"], values.mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(stats.sigma_cl["entropy_S"], values.std(axis=0, ddof=1), atol=1e-14)
    np.testing.assert_allclose(stats.sem["entropy_S"], stats.sigma_cl["entropy_S"] / math.sqrt(3))
    assert stats.fields.shape == (3, cfg.N)
    by_index = sorted(results, key=lambda r: r.index)
    np.testing.assert_array_equal(stats.wall_times, [r.wall_time for r in by_index])
    assert np.all(stats.wall_times > 0)


def test_aggregate_requires_results():
    with pytest.raises(ValueError):
        aggregate([])


def test_worker_count_does_not_change_results():
    cfg = small_config(R=3).ensemble
    serial = run_ensemble(cfg, workers=1)
    parallel = run_ensemble(cfg, workers=2)
    for name in serial.names:
        np.testing.assert_array_equal(serial.mean[name], parallel.mean[name])
        np.testing.assert_array_equal(serial.sigma_cl[name], parallel.sigma_cl[name])


def test_failure_hands_completed_realizations_to_callback(monkeypatch):
    original = ensemble_runner.run_realization

    def flaky(cfg, index):
        if index == 2:
            raise RealizationError(index, FloatingPointError("overflow"))
        return original(cfg, index)

    monkeypatch.setattr(ensemble_runner, "run_realization", flaky)
    received = []
    cfg = small_config(R=4, observables={"ergotropy": False}).ensemble
    with pytest.raises(RealizationError):
        run_ensemble(cfg, workers=1, on_failure=received.extend)
    assert [r.index for r in received] == [0, 1]


def test_resolve_workers(monkeypatch):
    assert resolve_workers(3) == 3
    assert resolve_workers() == 1
    monkeypatch.setenv("ERGOLOC_WORKERS", "4")
    assert resolve_workers() == 4
    monkeypatch.setenv("ERGOLOC_WORKERS", "deux")
    with pytest.raises(ValueError):
        resolve_workers()


# --- AJUSTEMENTS ---
def test_fit_log_slope_recovers_exact_law(log_times):
    t = log_times
    fit = fit_log_slope(t, 3.0 + 0.5 * np.log(np.where(t > 0, t, 1.0)))
    assert fit.slope == pytest.approx(0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(3.0, abs=1e-10)
    assert fit.stderr <= 1e-10
    assert fit.significant()


def test_fit_log_slope_constant(log_times):
    fit = fit_log_slope(log_times, np.full(log_times.size, 0.7))
    assert fit.slope == pytest.approx(0.0, abs=1e-14)
    assert fit.consistent_with_zero(2.0)


def test_fit_log_slope_needs_points():
    with pytest.raises(ValueError):
        fit_log_slope(np.array([0.0, 3.0, 5.0]), np.array([1.0, 2.0, 3.0]))


def test_late_time_mean(log_times):
    stats = synthetic_stats(log_times, {"ergotropy_S": np.where(log_times >= 10, 2.0, 5.0)})
    assert late_time_mean(stats, "ergotropy_S", 10.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        late_time_mean(stats, "entropy_S", 10.0)


# --- CLASSIFICATION ---
def _ln(t):
    return np.log(np.where(t > 0, t, 1e-3))


def test_classify_ergodic(log_times):
    stats = synthetic_stats(log_times, {
        "entropy_S": 0.2 + 0.1 * _ln(log_times),
        "ergotropy_S": np.where(log_times < 5, 0.4, 0.01),
    })
    label = classify_phase(stats, THRESHOLDS, W=0.0)
    assert label.label == "ERG"
    assert label.erg_threshold == pytest.approx(0.1)


def test_classify_anderson(log_times):
    stats = synthetic_stats(log_times, {
        "entropy_S": np.full(log_times.size, 0.5),
        "ergotropy_S": np.full(log_times.size, 1.0),
        "imbalance": np.full(log_times.size, 0.8),
    })
    label = classify_phase(stats, THRESHOLDS, W=5.0)
    assert label.label == "AL"
    assert label.erg_threshold == pytest.approx(0.25)
    assert label.diagnostics == []


def test_anderson_with_low_imbalance_is_flagged(log_times):
    stats = synthetic_stats(log_times, {
        "entropy_S": np.full(log_times.size, 0.5),
        "ergotropy_S": np.full(log_times.size, 1.0),
        "imbalance": np.full(log_times.size, 0.05),
    })
    label = classify_phase(stats, THRESHOLDS, W=5.0)
    assert label.label == "AL"
    assert len(label.diagnostics) == 1


def test_classify_many_body_localized(log_times):
    ln_t = _ln(log_times)
    stats = synthetic_stats(log_times, {
        "entropy_S": 0.2 + 0.05 * ln_t,
        "ergotropy_S": 1.2 - 0.02 * ln_t,
    })
    assert classify_phase(stats, THRESHOLDS, W=5.0).label == "MBL"


def test_classify_contradictory_signals(log_times):
    ln_t = _ln(log_times)
    stats = synthetic_stats(log_times, {
        "entropy_S": 0.9 - 0.05 * ln_t,
        "ergotropy_S": 1.2 + 0.02 * ln_t,
    })
    label = classify_phase(stats, THRESHOLDS, W=5.0)
    assert label.label == "UNDETERMINED"
    assert label.diagnostics


def test_classification_invariant_under_energy_rescaling(log_times):
    ln_t = _ln(log_times)
    series = {"entropy_S": 0.2 + 0.05 * ln_t, "ergotropy_S": 1.2 - 0.02 * ln_t}
    base = classify_phase(synthetic_stats(log_times, series), THRESHOLDS, W=5.0, J_perp=1.0)
    scaled = synthetic_stats(log_times / 3.0, {**series, "ergotropy_S": 3.0 * series["ergotropy_S"]})
    thresholds = ClassifyThresholds(fit_window=(2.0 / 3.0, 200.0 / 3.0), late_time_min=10.0 / 3.0)
    assert classify_phase(scaled, thresholds, W=15.0, J_perp=3.0).label == base.label


def test_classify_missing_series(log_times):
    stats = synthetic_stats(log_times, {"entropy_S": np.zeros(log_times.size)})
    with pytest.raises(ValueError):
        classify_phase(stats, THRESHOLDS, W=5.0)


# --- BALAYAGES ---
def test_with_axis_value_revalidates():
    cfg = small_config().ensemble
    assert with_axis_value(cfg, "W", 7.5).W == 7.5
    assert with_axis_value(cfg, "Jz", 0.4).J_z == 0.4
    assert with_axis_value(cfg, "N", 6.0).N == 6
    with pytest.raises(ValueError):
        with_axis_value(cfg, "J", 1.0)
    with pytest.raises(ValueError):
        with_axis_value(cfg, "N", 5)


def test_global_ensemble_two_sites():
    cfg = small_config(N=2, W=0.0, R=2).ensemble
    sweep = run_global_ensemble(cfg, "Jz", [0.2], workers=1)
    row = sweep.rows[0]
    # ⟨H⟩ = −0.05, E_min = −0.55
    assert row["ergotropy_per_site_mean"] == pytest.approx(0.25, abs=1e-12)
    assert row["ergotropy_per_site_sigma_cl"] == pytest.approx(0.0, abs=1e-15)
    assert row["fluctuation_per_site_mean"] == pytest.approx(0.25, abs=1e-12)
    assert sweep.inverse_size_fit is None


@pytest.mark.slow
def test_global_ensemble_size_extrapolation():
    cfg = small_config(W=1.0, R=3).ensemble
    sweep = run_global_ensemble(cfg, "N", [4, 6, 8], workers=1)
    assert [row["value"] for row in sweep.rows] == [4.0, 6.0, 8.0]
    assert set(sweep.inverse_size_fit) == {"slope", "intercept", "stderr"}
    assert all(row["ergotropy_per_site_mean"] > 0 for row in sweep.rows)
