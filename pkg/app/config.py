# config.py
import os
from pathlib import Path
from dotenv import load_dotenv

# Charger les variables d'environnement depuis le fichier .env
load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent.parent


# --- CONFIGURATION CHARGÉE DEPUIS OS.ENVIRON ---
# Lue à chaque appel : un flag CLI ou un test peut la modifier après l'import.
DEFAULT_OUTPUT_DIR = 'results'


def env_output_dir() -> Path | None:
    raw = os.environ.get('ERGOLOC_OUTPUT_DIR')
    return Path(raw) if raw else None


def presets_dir() -> Path:
    return Path(os.environ.get('ERGOLOC_PRESETS_DIR', PROJECT_ROOT / 'data' / 'presets'))


def log_level() -> str:
    return os.environ.get('ERGOLOC_LOG_LEVEL', 'INFO').upper()


def env_workers() -> int | None:
    """Nombre de workers imposé par ERGOLOC_WORKERS, None si absent."""
    raw = os.environ.get('ERGOLOC_WORKERS')
    if raw is None or not raw.strip():
        return None
    try:
        workers = int(raw)
    except ValueError:
        raise ValueError(f"ERGOLOC_WORKERS doit être un entier, reçu {raw!r}")
    if workers == 0:
        raise ValueError("ERGOLOC_WORKERS ne peut pas valoir 0")
    return workers
