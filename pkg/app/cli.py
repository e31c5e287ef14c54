"""Ligne de commande : python -m app {run,sweep,classify,plotdata,global,schema}."""
import argparse
import json
import logging
import sys
from pathlib import Path

from app import __version__
from app.exceptions import ErgoLocError
from app.services import experiments
from app.utils.logging import setup_logging

logger = logging.getLogger(__name__)


def _values(raw: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"liste de nombres attendue (ex. 2,4,6,8), reçu {raw!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergoloc", description="Ergotropie locale dans la chaîne XXZ désordonnée")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (défaut : ERGOLOC_LOG_LEVEL ou INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_run_options(p):
        p.add_argument("config", type=Path, help="fichier JSON d'expérience")
        p.add_argument("--seed", type=int, default=None, help="remplace la graine maîtresse")
        p.add_argument("--workers", type=int, default=None, help="nombre de workers (défaut : ERGOLOC_WORKERS ou 1)")
        p.add_argument("--out", type=Path, default=None, help="dossier racine des résultats")

    with_run_options(sub.add_parser("run", help="exécute un ensemble et écrit un bundle"))

    p = sub.add_parser("sweep", help="balaye W, Jz ou N")
    with_run_options(p)
    p.add_argument("--axis", choices=["W", "Jz", "N"], required=True)
    p.add_argument("--values", type=_values, required=True)

    p = sub.add_parser("global", help="ergotropie globale par site en fonction de Jz ou N")
    with_run_options(p)
    p.add_argument("--axis", choices=["Jz", "N"], required=True)
    p.add_argument("--values", type=_values, required=True)

    p = sub.add_parser("classify", help="classe la phase d'un bundle")
    p.add_argument("bundle", type=Path)
    p.add_argument("--json", action="store_true", help="affiche le rapport JSON")

    p = sub.add_parser("plotdata", help="données de figure (CSV + SVG)")
    p.add_argument("bundles", type=Path, nargs="+")
    p.add_argument("--preset", required=True, choices=sorted(experiments.PLOT_PRESETS))
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("schema", help="schéma JSON du fichier d'expérience")
    p.add_argument("--output", type=Path, default=None)
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command in ("run", "sweep", "global"):
        cfg = experiments.with_overrides(experiments.load_config(args.config), seed=args.seed)
        if args.command == "run":
            path = experiments.cmd_run(cfg, args.workers, args.out)
        elif args.command == "sweep":
            path = experiments.cmd_sweep(cfg, args.axis, args.values, args.workers, args.out)
        else:
            path = experiments.cmd_global(cfg, args.axis, args.values, args.workers, args.out)
        print(path)
    elif args.command == "classify":
        label = experiments.cmd_classify(args.bundle)
        print(json.dumps(label.to_dict(), indent=2) if args.json else experiments.format_phase(label))
    elif args.command == "plotdata":
        print(experiments.cmd_plotdata(args.bundles, args.preset, args.out))
    elif args.command == "schema":
        text = json.dumps(experiments.cmd_schema(), indent=2, ensure_ascii=False)
        if args.output:
            args.output.write_text(text + "\n", encoding="utf-8")
        else:
            print(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return run(args)
    except ErgoLocError as exc:
        logger.error("❌ %s", exc)
        return exc.exit_code
    except ValueError as exc:
        # variables d'environnement invalides (ERGOLOC_WORKERS, ...)
        logger.error("❌ %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
