"""Figure rendering: Mel heatmaps and training loss curves as PNG files.

Heatmaps are written pixel-exact: each matrix cell becomes a scale x scale
block, time runs left to right, frequency bottom to top, colors come from
the perceptual viridis map. Output size is (n_bands*scale) x (n_frames*scale)
pixels. Loss curves are rendered as a fixed 640x480 figure.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import colormaps
from matplotlib.image import imsave

from . import dsp

COLORMAP = "viridis"
DEFAULT_SCALE = 4
LOSS_FIGSIZE = (6.4, 4.8)
LOSS_DPI = 100


def heatmap_pixels(values: np.ndarray, scale: int = DEFAULT_SCALE) -> np.ndarray:
    """RGBA uint8 pixel grid for a [bands x frames] matrix.

    Values are min-max normalized (a constant matrix maps to the colormap
    origin), the frequency axis is flipped so low bands sit at the bottom,
    and each cell is expanded to a scale x scale block.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("expected a non-empty 2-d matrix")
    if scale < 1:
        raise ValueError("scale must be >= 1")
    vmin, vmax = values.min(), values.max()
    norm = np.zeros_like(values) if vmax <= vmin else (values - vmin) / (vmax - vmin)
    rgba = colormaps[COLORMAP](np.flipud(norm), bytes=True)
    return np.repeat(np.repeat(rgba, scale, axis=0), scale, axis=1)


def mel_heatmap(mel, out_path, scale: int = DEFAULT_SCALE) -> tuple:
    """Render a Mel matrix (or MelSpectrogram) to a PNG; returns (h, w)."""
    values = mel.values if isinstance(mel, dsp.MelSpectrogram) else mel
    pixels = heatmap_pixels(values, scale=scale)
    imsave(out_path, pixels, format="png")
    return pixels.shape[0], pixels.shape[1]


def read_loss_csv(path) -> tuple:
    """Parse a training loss CSV into (steps, losses) arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["step", "l1_loss"]:
        raise ValueError("not a loss CSV: %s" % path)
    if len(rows) < 2:
        raise ValueError("loss CSV has no data rows: %s" % path)
    steps = np.array([int(r[0]) for r in rows[1:]])
    losses = np.array([float(r[1]) for r in rows[1:]])
    return steps, losses


def loss_curve(csv_path, out_path) -> tuple:
    """Render a loss CSV as a fixed-size PNG figure; returns (h, w)."""
    steps, losses = read_loss_csv(csv_path)
    fig, ax = plt.subplots(figsize=LOSS_FIGSIZE, dpi=LOSS_DPI)
    try:
        ax.plot(steps, losses, color="#1f6f8b", linewidth=1.2)
        ax.set_xlabel("step")
        ax.set_ylabel("L1 loss")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(out_path, format="png", metadata={"Software": None})
    finally:
        plt.close(fig)
    return int(LOSS_FIGSIZE[1] * LOSS_DPI), int(LOSS_FIGSIZE[0] * LOSS_DPI)
