"""Raster container, bilinear sampling and inverse warping."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import homography as hg
from .errors import ContractError, InputError


class ImageBuffer:
    """H x W x C image of float64 intensities in [0, 1].

    Values are clamped on construction; non-finite input is rejected.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.size == 0:
            raise ContractError(f"image data must be non-empty HxWxC, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractError("image data contains non-finite values")
        self.data = np.clip(arr, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def gray(self) -> np.ndarray:
        return self.data.mean(axis=2)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"ImageBuffer({self.height}x{self.width}x{self.channels})"


@dataclass(frozen=True)
class GridMap:
    """Per-output-pixel fractional source coordinates (``source_x`` is the column)."""

    source_x: np.ndarray
    source_y: np.ndarray

    def __post_init__(self):
        if self.source_x.shape != self.source_y.shape or self.source_x.ndim != 2:
            raise ContractError("grid coordinate arrays must be 2-D and equally shaped")

    @property
    def height(self) -> int:
        return self.source_x.shape[0]

    @property
    def width(self) -> int:
        return self.source_x.shape[1]


def sample_bilinear(data: np.ndarray, x, y) -> np.ndarray:
    """Bilinearly sample ``data`` (H x W x C) at fractional pixel coordinates.

    Neighbours outside ``[0, W-1] x [0, H-1]`` contribute zero. Returns an array of
    shape ``x.shape + (C,)``.
    """
    h, w = data.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    finite = np.isfinite(x) & np.isfinite(y)
    x = np.where(finite, x, -2.0)
    y = np.where(finite, y, -2.0)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(x.shape + data.shape[2:], dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = np.where(inside, wx * wy, 0.0)
            vals = data[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            if data.ndim == 3:
                out += wgt[..., None] * vals
            else:
                out += wgt * vals
    return out


def bilinear_sample(img: ImageBuffer, x: float, y: float) -> np.ndarray:
    """Channel vector at one fractional location; zero when fully outside."""
    return sample_bilinear(img.data, np.asarray(x), np.asarray(y))


def warp_by_grid(img: ImageBuffer, grid: GridMap, out_shape=None) -> ImageBuffer:
    if out_shape is not None and tuple(out_shape) != (grid.height, grid.width):
        raise ContractError(f"grid shape {(grid.height, grid.width)} != output shape {tuple(out_shape)}")
    return ImageBuffer(sample_bilinear(img.data, grid.source_x, grid.source_y))


def homography_grid(h, out_size) -> GridMap:
    """Grid sampling the source at ``h^-1 * target`` for a ``(width, height)`` output."""
    w, ht = out_size
    hinv = hg.invert(h)
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(ht, dtype=np.float64))
    den = hinv[2, 0] * u + hinv[2, 1] * v + hinv[2, 2]
    # pixels mapping to/behind the line at infinity fall outside the source
    bad = np.abs(den) < hg.W_EPS
    den = np.where(bad, 1.0, den)
    sx = (hinv[0, 0] * u + hinv[0, 1] * v + hinv[0, 2]) / den
    sy = (hinv[1, 0] * u + hinv[1, 1] * v + hinv[1, 2]) / den
    sx[bad] = -np.inf
    sy[bad] = -np.inf
    return GridMap(sx, sy)


def warp_by_homography(img: ImageBuffer, h, out_size=None) -> ImageBuffer:
    """Inverse-warp ``img`` so that output pixel ``p`` holds ``img(h^-1 p)``."""
    if out_size is None:
        out_size = (img.width, img.height)
    return warp_by_grid(img, homography_grid(h, out_size))


def rotate90(img: ImageBuffer, k: int) -> ImageBuffer:
    """Exact rotation by ``k`` quarter turns (counter-clockwise on screen)."""
    return ImageBuffer(np.rot90(img.data, k % 4, axes=(0, 1)).copy())


def load_image(path) -> ImageBuffer:
    """8-bit grayscale or RGB raster scaled to [0, 1]; other modes are converted to RGB."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: cannot read image ({exc})") from exc
    return ImageBuffer(arr)


def to_uint8(img: ImageBuffer) -> np.ndarray:
    arr = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    return arr[:, :, 0] if img.channels == 1 else arr


def save_image(img: ImageBuffer, path) -> None:
    """Write an 8-bit PNG atomically (temp file then rename)."""
    from .io import atomic_path

    if img.channels not in (1, 3):
        raise ContractError(f"can only save 1- or 3-channel images, got {img.channels}")
    with atomic_path(Path(path)) as tmp:
        Image.fromarray(to_uint8(img)).save(tmp, format="PNG")
