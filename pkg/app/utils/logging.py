# logging.py : configuration des logs
import logging

from app import config

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

_configured = False


def setup_logging(level: str | None = None) -> None:
    """Configure le logger racine une seule fois (CLI, API ou tests)."""
    global _configured
    level = (level or config.log_level()).upper()
    if _configured:
        logging.getLogger().setLevel(level)
        return
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%H:%M:%S")
    # sklearn et matplotlib sont bavards en DEBUG
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    _configured = True
