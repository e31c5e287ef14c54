from pathlib import Path
from typing import Optional

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel, Field

from app.exceptions import BundleError, ConfigError, ErgoLocError
from app.services import experiments

router = APIRouter()


class RunRequest(BaseModel):
    config: dict
    workers: Optional[int] = None
    out: Optional[str] = None


class BundleRequest(BaseModel):
    bundle: str


class PlotRequest(BaseModel):
    bundles: list[str] = Field(min_length=1)
    preset: str
    out: Optional[str] = None


def _http_error(exc: ErgoLocError) -> HTTPException:
    if isinstance(exc, ConfigError):
        return HTTPException(status_code=422, detail={"message": str(exc).splitlines()[0], "details": exc.details})
    if isinstance(exc, BundleError):
        return HTTPException(status_code=404, detail=str(exc))
    # NumericalError et autres erreurs internes
    return HTTPException(status_code=500, detail=str(exc))


@router.get("/presets")
def presets():
    return {"experiments": experiments.list_presets(), "figures": sorted(experiments.PLOT_PRESETS)}


# endpoints synchrones : FastAPI les exécute dans un pool de threads
@router.post("/run")
def run(req: RunRequest):
    try:
        cfg = experiments.build_config(req.config, "requête")
        bundle = experiments.cmd_run(cfg, req.workers, req.out)
        return {"bundle": str(bundle), "series": experiments.load_bundle(bundle).stats.names}
    except ErgoLocError as exc:
        raise _http_error(exc)


@router.post("/classify")
def classify(req: BundleRequest):
    try:
        return experiments.cmd_classify(Path(req.bundle)).to_dict()
    except ErgoLocError as exc:
        raise _http_error(exc)


@router.post("/plotdata")
def plotdata(req: PlotRequest):
    try:
        target = experiments.cmd_plotdata([Path(b) for b in req.bundles], req.preset, req.out)
    except ErgoLocError as exc:
        raise _http_error(exc)
    return {"dir": str(target), "csv": str(target / f"{req.preset}.csv"), "svg": str(target / f"{req.preset}.svg")}
