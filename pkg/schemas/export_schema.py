import json
import sys
from pathlib import Path

from app.services.experiments import cmd_schema

# =========================================================================
# Export du schéma JSON des fichiers d'expérience
#   python -m schemas.export_schema [chemin]
# =========================================================================

DEFAULT_OUTPUT = Path(__file__).resolve().parent / "experiment.schema.json"


def export_schema(path: Path = DEFAULT_OUTPUT) -> Path:
    path.write_text(json.dumps(cmd_schema(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


if __name__ == "__main__":
    print(export_schema(Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_OUTPUT))
