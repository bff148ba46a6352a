"""Figures and diagnostic rasters: convergence curves, alignment overlays, heatmaps."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import homography as hg  # noqa: E402
from .io import atomic_path  # noqa: E402
from .raster import ImageBuffer, warp_by_homography  # noqa: E402

OUTLINE = (1.0, 0.15, 0.1)


def save_figure(fig, path, dpi: int = 120) -> None:
    """Save atomically; the format follows the file suffix (png by default)."""
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower() or "png"
    with atomic_path(path) as tmp:
        fig.savefig(tmp, format=fmt, dpi=dpi, bbox_inches="tight")
    plt.close(fig)


def convergence_figure(report: dict, trial_curves=None):
    """Mean corner error per iteration (log scale), optional per-trial traces and the
    convergence threshold."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    if trial_curves:
        for c in trial_curves:
            ax.plot(range(len(c)), c, color="0.75", lw=0.5, zorder=1)
    curve = report.get("convergence_curve")
    if curve:
        ax.plot(range(len(curve)), curve, "o-", color="C0", lw=1.8, ms=4, label="mean", zorder=3)
    thr = report.get("threshold_cells")
    if thr:
        ax.axhline(thr, color="C3", ls="--", lw=1, label=f"{thr:g} cells")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean corner error [cells]")
    frac = report.get("converged_fraction")
    if frac is not None:
        ax.set_title(f"{report.get('trials', 0)} trials, {100 * frac:.1f}% converged", fontsize=9)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return fig


def _draw_polyline(data: np.ndarray, pts: np.ndarray, color, width: int = 1) -> None:
    h, w = data.shape[:2]
    for a, b in zip(pts, np.roll(pts, -1, axis=0)):
        n = int(np.ceil(np.abs(b - a).max())) + 1
        t = np.linspace(0.0, 1.0, max(n, 2))
        seg = a[None, :] + t[:, None] * (b - a)[None, :]
        for dx in range(-(width // 2), width // 2 + 1):
            for dy in range(-(width // 2), width // 2 + 1):
                x = np.rint(seg[:, 0] + dx).astype(int)
                y = np.rint(seg[:, 1] + dy).astype(int)
                ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
                data[y[ok], x[ok]] = color


def overlay(bev: ImageBuffer, sat: ImageBuffer, h_img, alpha: float = 0.5, outline=OUTLINE) -> ImageBuffer:
    """BEV warped into the satellite frame by ``h_img`` and blended over it, with the
    projected BEV border drawn in ``outline``."""
    base = sat.data if sat.channels == 3 else np.repeat(sat.data, 3, axis=2)
    src = bev.data if bev.channels == 3 else np.repeat(bev.data, 3, axis=2)
    size = (sat.width, sat.height)
    warped = warp_by_homography(ImageBuffer(src), h_img, size).data
    cover = warp_by_homography(ImageBuffer(np.ones(bev.shape[:2])), h_img, size).data
    m = alpha * cover
    out = base * (1.0 - m) + warped * m
    frame = (bev.width - 1, bev.height - 1)
    corners = hg.project_points(h_img, hg.frame_corners(frame).astype(np.float64))
    _draw_polyline(out, corners, outline, width=2)
    return ImageBuffer(out)


def heatmap(values: np.ndarray, cmap: str = "viridis", upscale: int = 16) -> ImageBuffer:
    """Colour-mapped raster of a 2-D array (min-max scaled), nearest-upscaled."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    norm = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    rgb = matplotlib.colormaps[cmap](norm)[..., :3]
    if upscale > 1:
        rgb = np.repeat(np.repeat(rgb, upscale, axis=0), upscale, axis=1)
    return ImageBuffer(rgb)
