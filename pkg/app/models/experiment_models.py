import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.model_params import ModelParams


class _Strict(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class OptimizerConfig(_Strict):
    """Recherche bayésienne (processus gaussien + expected improvement) sur les a_ij."""

    budget: int = Field(100, ge=1)
    initial_design: int = Field(20, ge=1)
    acquisition: Literal["ei"] = "ei"
    xi: float = Field(0.0, ge=0.0)
    length_scale: float = Field(1.0, gt=0.0)
    length_scale_bounds: tuple[float, float] = (1e-2, 1e2)
    jitter: float = Field(1e-10, gt=0.0)
    seed: int = Field(0, ge=0)
    acquisition_starts: int = Field(256, ge=1)
    acquisition_sweeps: int = Field(12, ge=1)
    fallback: Literal["pattern", "none"] = "pattern"
    bound: float = Field(math.pi, gt=0.0)
    # affinage par gradient sur U(d_S) après la phase bayésienne, hors budget ; 0 itération le désactive
    polish_starts: int = Field(8, ge=0)
    polish_iterations: int = Field(200, ge=0)
    polish_tol: float = Field(1e-9, gt=0.0)

    @model_validator(mode="after")
    def _check_budget(self):
        if self.budget < self.initial_design + 1:
            raise ValueError(
                f"budget ({self.budget}) doit dépasser le plan initial ({self.initial_design})"
            )
        return self


class TimeGridSpec(_Strict):
    t_min: float = Field(0.05, gt=0.0)
    t_max: float = Field(200.0, gt=0.0)
    points: int = Field(61, ge=1)
    spacing: Literal["log", "linear"] = "log"

    @model_validator(mode="after")
    def _check_range(self):
        if self.t_min >= self.t_max:
            raise ValueError("t_min doit être strictement inférieur à t_max")
        return self


class ObservableFlags(_Strict):
    entropy_half: bool = True
    imbalance: bool = True
    ergotropy: bool = True
    # False : ergotropie locale évaluée avec U_AL seul (sans recherche bayésienne)
    optimize_unitary: bool = True
    fluctuations: bool = True


class ClassifyThresholds(_Strict):
    fit_window: tuple[float, float] = (2.0, 200.0)
    late_time_min: float = Field(10.0, gt=0.0)
    theta_erg: float = Field(0.1, gt=0.0)
    zero_slope_sigmas: float = Field(2.0, gt=0.0)


class EnsembleConfig(_Strict):
    N: int = Field(8, ge=2, le=16)
    J_perp: float = 1.0
    J_z: float = 0.2
    block: tuple[int, int] = (1, 2)
    W: float = Field(5.0, ge=0.0)
    R: int = Field(100, ge=1)
    seed: int = Field(2024, ge=0, lt=2**64)
    grid: TimeGridSpec = TimeGridSpec()
    observables: ObservableFlags = ObservableFlags()
    optimizer: OptimizerConfig = OptimizerConfig()
    initial_state: Literal["neel", "bell"] = "neel"

    @model_validator(mode="after")
    def _check_model(self):
        # valide N pair, bloc, etc. une fois pour toutes
        self.model_params()
        if self.initial_state == "bell" and self.N < 4:
            raise ValueError("l'état en chaîne de singulets exige N >= 4")
        return self

    def model_params(self, h=None) -> ModelParams:
        data = dict(N=self.N, J_perp=self.J_perp, J_z=self.J_z, block=self.block)
        if h is not None:
            data["h"] = tuple(float(x) for x in h)
        return ModelParams(**data)


class OutputOptions(_Strict):
    dir: Optional[str] = None
    write_raw: bool = False
    write_svg: bool = True


class ExperimentConfig(_Strict):
    name: str = Field("run", pattern=r"^[A-Za-z0-9_.=+-]+$")
    preset: Optional[str] = None
    description: str = ""
    ensemble: EnsembleConfig = EnsembleConfig()
    classify: ClassifyThresholds = ClassifyThresholds()
    output: OutputOptions = OutputOptions()
