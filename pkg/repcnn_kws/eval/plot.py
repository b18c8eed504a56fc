""" DET and loss-curve figures

matplotlib is optional, install it with the ``plot`` extra::

    pip install "repcnn-kws[plot]"

Figures are drawn on the non-interactive Agg backend and written straight
to disk, so they also work on machines without a display.
"""

import logging
import math
import os
from typing import Mapping, Optional, Sequence

import numpy as np

from .._errors import ConfigError
from ..train import LossCurve, read_loss_curves
from .metrics import DetCurve, read_det_csv

log = logging.getLogger(__name__)

BACKEND = "Agg"
""" matplotlib backend used for every figure """

FIGSIZE = (6, 4)

DPI = 150
""" Resolution of the written PNG files """


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        raise ConfigError('plotting needs matplotlib, install it with pip install "repcnn-kws[plot]"') from None
    matplotlib.use(BACKEND)
    import matplotlib.pyplot as plt
    return plt


def _save(fig, plt, path: str) -> str:
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    log.debug(f"wrote {path}")
    return path


def plot_det(curves: Mapping[str, DetCurve], path: str, fa_target: Optional[float] = None) -> str:
    """ Draw one or more DET curves, FRR against FA/hr on a log axis

    Points at 0 FA/hr cannot sit on the log axis and are left out.

    Args:
        curves (dict): DetCurve by legend label
        path (str): Output image path, the format follows the extension
        fa_target (float, optional): Draw a vertical line at this FA/hr

    Returns:
        str: ``path``

    Raises:
        ConfigError: No curves, or matplotlib is missing
    """
    if not curves:
        raise ConfigError("plot_det needs at least one DET curve")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for label, curve in curves.items():
        fa = curve.fa_per_hour
        keep = fa > 0
        if not np.any(keep):
            log.warning(f"DET curve {label} has no point above 0 FA/hr, nothing to draw")
            continue
        ax.step(fa[keep], curve.frr_percent[keep], where="post", label=label)
    if fa_target is not None:
        ax.axvline(fa_target, color="gray", linestyle="--", linewidth=1, label=f"{fa_target:g} FA/hr")
    ax.set_xscale("log")
    ax.set_xlabel("false accepts per hour")
    ax.set_ylabel("false reject rate (%)")
    ax.set_ylim(0.0, 100.0)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, plt, path)


def plot_loss_curves(curves: Mapping[str, LossCurve], path: str) -> str:
    """ Draw the seed-averaged training and validation loss per epoch

    The training loss is a solid line; validated epochs are marked on a
    dashed line in the same color.

    Args:
        curves (dict): LossCurve by legend label
        path (str): Output image path

    Returns:
        str: ``path``

    Raises:
        ConfigError: No curves, an empty curve, or matplotlib is missing
    """
    if not curves:
        raise ConfigError("plot_loss_curves needs at least one loss curve")
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for label, curve in curves.items():
        points = curve.mean()
        if not points:
            plt.close(fig)
            raise ConfigError(f"loss curve {label} is empty")
        epochs = np.arange(1, len(points) + 1)
        train_loss = np.array([t for t, _ in points])
        val_loss = np.array([v for _, v in points])
        line, = ax.plot(epochs, train_loss, label=f"{label} train")
        validated = ~np.isnan(val_loss)
        if np.any(validated):
            ax.plot(epochs[validated], val_loss[validated], linestyle="--", marker="o", markersize=3,
                    color=line.get_color(), label=f"{label} val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, plt, path)


def label_of(path: str) -> str:
    """ Legend label of a CSV file: its name without the extension """
    return os.path.splitext(os.path.basename(path))[0]


def plot_files(det_paths: Sequence[str] = (), loss_paths: Sequence[str] = (), out: str = ".",
               fa_target: Optional[float] = None) -> list:
    """ Read DET and loss-curve CSV files and write ``det.png`` and ``loss.png``

    Args:
        det_paths (list, optional): DET CSV files, one curve each
        loss_paths (list, optional): Loss-curve CSV files, one curve each
        out (str, optional): Output directory, default is the working directory
        fa_target (float, optional): Operating point marked on the DET plot

    Returns:
        list: Written image paths
    """
    if not det_paths and not loss_paths:
        raise ConfigError("nothing to plot, give DET or loss-curve CSV files")
    if fa_target is not None and not (fa_target > 0 and math.isfinite(fa_target)):
        raise ConfigError(f"fa_target must be a positive number, got {fa_target}")
    written = []
    if det_paths:
        curves = {label_of(p): read_det_csv(p) for p in det_paths}
        written.append(plot_det(curves, os.path.join(out, "det.png"), fa_target))
    if loss_paths:
        curves = {label_of(p): read_loss_curves(p) for p in loss_paths}
        written.append(plot_loss_curves(curves, os.path.join(out, "loss.png")))
    return written
