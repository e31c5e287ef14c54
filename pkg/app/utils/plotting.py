# plotting.py : courbes SVG (axe des temps logarithmique)
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

matplotlib.use("Agg")

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
SVG_RC = {"svg.hashsalt": "ergoloc", "svg.fonttype": "none"}
FIGSIZE = (6.0, 4.0)


@dataclass
class Curve:
    label: str
    x: np.ndarray
    y: np.ndarray
    err: Optional[np.ndarray] = None


def line_plot_svg(path: Path, curves: Sequence[Curve], ylabel: str,
                  xlabel: str = r"$J_\perp t$", title: str = "", logx: bool = True) -> Path:
    """Une courbe par série ; bande ±err si fournie. Sortie reproductible (sans date)."""
    path = Path(path)
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=FIGSIZE)
        ax = fig.subplots()
        for c in curves:
            x, y = np.asarray(c.x, dtype=float), np.asarray(c.y, dtype=float)
            keep = np.isfinite(y) & ((x > 0) if logx else np.isfinite(x))
            ax.plot(x[keep], y[keep], label=c.label, linewidth=1.2)
            if c.err is not None:
                err = np.asarray(c.err, dtype=float)[keep]
                ax.fill_between(x[keep], y[keep] - err, y[keep] + err, alpha=0.25, linewidth=0)
        if logx:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(curves) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug("SVG écrit : %s", path)
    return path
