# bundle_io.py : écriture atomique des dossiers de résultats (CSV, JSON)
import contextlib
import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from app.exceptions import BundleError

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
CSV_FORMAT = "%.17g"
SERIES_COLUMNS = ("t", "mean", "sigma_cl", "sem", "R")
CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"


@contextlib.contextmanager
def atomic_dir(target: Path) -> Iterator[Path]:
    """Écrit dans un dossier temporaire voisin puis le renomme en `target`.

    Un ancien dossier `target` est mis de côté puis supprimé après le renommage.
    """
    target = Path(target)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    except OSError as exc:
        raise BundleError(f"impossible de préparer {target} : {exc}") from exc
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    backup = None
    try:
        if target.exists():
            backup = target.with_name(f".{target.name}.old-{os.getpid()}")
            os.rename(target, backup)
        os.rename(tmp, target)
    except OSError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise BundleError(f"renommage de {tmp} en {target} impossible : {exc}") from exc
    if backup is not None:
        shutil.rmtree(backup, ignore_errors=True)
    logger.info("📁 %s", target)


def write_json(path: Path, data) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def write_json_atomic(path: Path, data) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        write_json(tmp, data)
        os.replace(tmp, path)
    except OSError as exc:
        raise BundleError(f"écriture de {path} impossible : {exc}") from exc


def read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise BundleError(f"fichier absent : {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleError(f"lecture de {path} impossible : {exc}") from exc


def write_table(path: Path, columns: Sequence[str], data: np.ndarray) -> None:
    """CSV avec en-tête, séparateur ',', 17 chiffres significatifs."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[None, :]
    if data.shape[1] != len(columns):
        raise ValueError(f"{len(columns)} colonnes annoncées, {data.shape[1]} fournies")
    np.savetxt(path, data, fmt=CSV_FORMAT, delimiter=",", header=",".join(columns),
               comments="", encoding="utf-8")


def write_table_atomic(path: Path, columns: Sequence[str], data: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        write_table(tmp, columns, data)
        os.replace(tmp, path)
    except OSError as exc:
        raise BundleError(f"écriture de {path} impossible : {exc}") from exc


def read_table(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    except FileNotFoundError:
        raise BundleError(f"fichier absent : {path}") from None
    except (OSError, ValueError) as exc:
        raise BundleError(f"lecture de {path} impossible : {exc}") from exc
    return header, data


def write_series(path: Path, times, mean, sigma_cl, sem, count) -> None:
    write_table(path, SERIES_COLUMNS, np.column_stack([times, mean, sigma_cl, sem, count]))


def read_series(path: Path) -> dict[str, np.ndarray]:
    header, data = read_table(path)
    if tuple(header) != SERIES_COLUMNS:
        raise BundleError(f"{path} : colonnes {header}, attendu {list(SERIES_COLUMNS)}")
    return {name: data[:, i] for i, name in enumerate(header)}


def series_names(bundle: Path) -> list[str]:
    """Observables présentes dans un dossier de résultats (un CSV par observable)."""
    bundle = Path(bundle)
    if not bundle.is_dir():
        raise BundleError(f"dossier de résultats introuvable : {bundle}")
    return sorted(p.stem for p in bundle.glob("*.csv"))
