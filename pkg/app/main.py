from fastapi import FastAPI

from app import __version__
from app.routes import api
from app.utils.logging import setup_logging

setup_logging()

app = FastAPI(title="ErgoLoc", version=__version__)

# inclure routes
app.include_router(api.router)


@app.get("/")
def root():
    return {"message": "Ergotropie locale dans la chaîne XXZ désordonnée", "version": __version__}


@app.get("/health")
def health():
    return {"status": "ok"}
