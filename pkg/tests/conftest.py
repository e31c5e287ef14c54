import numpy as np
import pytest

from app.models.experiment_models import ExperimentConfig
from app.models.model_params import ModelParams
from app.services.ensemble_runner import TimeSeriesStats
from app.services.lattice_model import SectorState, build_basis

FAST_OPTIMIZER = {"budget": 12, "initial_design": 6, "acquisition_starts": 16, "acquisition_sweeps": 4,
                  "polish_starts": 2, "polish_iterations": 60}


def small_config(name: str = "test", output: dict | None = None, **ensemble) -> ExperimentConfig:
    data = {
        "N": 4, "J_z": 0.2, "W": 2.0, "R": 2, "seed": 7,
        "grid": {"t_min": 0.1, "t_max": 20.0, "points": 6},
        "optimizer": FAST_OPTIMIZER,
    }
    data.update(ensemble)
    return ExperimentConfig.model_validate(
        {"name": name, "ensemble": data, "output": output or {"write_svg": False}}
    )


def synthetic_stats(times: np.ndarray, series: dict[str, np.ndarray], R: int = 1) -> TimeSeriesStats:
    zeros = {name: np.zeros_like(values) for name, values in series.items()}
    return TimeSeriesStats(
        times=times,
        mean={name: np.asarray(values, dtype=float) for name, values in series.items()},
        sigma_cl=zeros,
        sem=dict(zeros),
        count={name: np.full(times.size, float(R)) for name in series},
        R=R,
    )


def random_state(N: int, seed: int = 0) -> SectorState:
    rng = np.random.default_rng(seed)
    basis = build_basis(N)
    amp = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return SectorState(basis, amp / np.linalg.norm(amp))


def disordered_params(N: int, W: float = 3.0, seed: int = 1, **kwargs) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(N=N, h=tuple(rng.uniform(-W, W, size=N)), **kwargs)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for var in ("ERGOLOC_WORKERS", "ERGOLOC_OUTPUT_DIR", "ERGOLOC_PRESETS_DIR"):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture
def log_times() -> np.ndarray:
    return np.concatenate(([0.0], np.geomspace(0.05, 200.0, 41)))
