"""Dense features, all-pairs correlation volume, pooling and windowed lookup.

Feature maps are ``(D, H, W)`` arrays, correlation volumes ``(H, W, H', W')`` and
slices ``(H, W, 2r+1, 2r+1)``. Slice index ``[i, j, a, b]`` is the tap at offset
``(du, dv) = (b - r, a - r)`` around the looked-up point of cell ``(i, j)``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .raster import ImageBuffer, sample_bilinear

FEATURE_MODES = ("avgpool", "gradient", "patch")


def _blocks(a: np.ndarray, gh: int, gw: int) -> np.ndarray:
    """Reshape ``(H, W, ...)`` into ``(gh, sh, gw, sw, ...)`` blocks."""
    h, w = a.shape[:2]
    return a.reshape(gh, h // gh, gw, w // gw, *a.shape[2:])


def l2_normalize(f: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Unit-normalize each spatial position of a ``(D, H, W)`` map; zero vectors stay zero."""
    n = np.sqrt((f * f).sum(axis=0, keepdims=True))
    return np.where(n > eps, f / np.maximum(n, eps), 0.0)


def extract_features(img: ImageBuffer, grid=(16, 16), mode: str = "patch", normalize: bool = True,
                     cells: int = 8, support: float = 2.0, blur: float = 0.0, min_valid: float = 0.5,
                     taper: float = 0.0, outside: str = "blank") -> np.ndarray:
    """Hand-crafted feature map on a ``grid = (H, W)`` lattice of image blocks.

    ``avgpool``
        block mean of every channel.
    ``gradient``
        block mean intensity plus mean horizontal and vertical gradient magnitude.
    ``patch``
        the image sampled on a ``cells x cells`` lattice spanning ``support`` blocks
        around each block center (pre-smoothed to the lattice spacing, plus
        ``blur``), channel-wise mean-removed per block and optionally tapered by a
        Gaussian of relative width ``taper``. Samples outside the image, on
        unobservable pixels (exactly zero in every channel) or within smoothing
        reach of either are set to zero, so the dot product of two descriptors
        only compares samples observed in both. Blocks with fewer than
        ``min_valid`` valid samples, and flat blocks, get zero vectors.
        ``outside="reflect"`` instead extends the image by mirroring, for maps
        (such as a satellite tile) that continue past their border.
    """
    if outside not in ("blank", "reflect"):
        raise ContractError(f"outside must be 'blank' or 'reflect', got {outside!r}")
    gh, gw = grid
    if img.height % gh or img.width % gw:
        raise ContractError(f"image {img.height}x{img.width} is not divisible into a {gh}x{gw} grid")
    data = img.data
    if mode == "patch":
        f = _patch_features(data, gh, gw, cells, support, blur, min_valid, taper, outside)
    elif mode in ("avgpool", "gradient"):
        if blur > 0:
            data = ndimage.gaussian_filter(data, sigma=(blur, blur, 0), mode="constant")
        if mode == "avgpool":
            f = np.moveaxis(_blocks(data, gh, gw).mean(axis=(1, 3)), -1, 0)
        else:
            g = data.mean(axis=2)
            gx = np.zeros_like(g)
            gy = np.zeros_like(g)
            gx[:, 1:-1] = 0.5 * (g[:, 2:] - g[:, :-2])
            gy[1:-1, :] = 0.5 * (g[2:, :] - g[:-2, :])
            stack = np.stack([g, np.abs(gx), np.abs(gy)], axis=-1)
            f = np.moveaxis(_blocks(stack, gh, gw).mean(axis=(1, 3)), -1, 0)
    else:
        raise ContractError(f"unknown feature mode {mode!r}; choose from {FEATURE_MODES}")
    f = np.ascontiguousarray(f, dtype=np.float64)
    return l2_normalize(f) if normalize else f


def _patch_features(data, gh, gw, cells, support, blur, min_valid, taper, outside):
    sh, sw = data.shape[0] / gh, data.shape[1] / gw
    step_y, step_x = support * sh / cells, support * sw / cells
    sigma = (math.hypot(step_y / 2, blur), math.hypot(step_x / 2, blur))
    pad = 0
    if outside == "reflect":
        pad = int(math.ceil(support * max(sh, sw) / 2 + 4 * max(sigma))) + 2
        data = np.pad(data, ((pad, pad), (pad, pad), (0, 0)), mode="symmetric")
    seen = np.any(data != 0, axis=2).astype(np.float64)
    # smoothed image and smoothed observation mask share the zero-outside convention
    pre = ndimage.gaussian_filter(data * seen[..., None], sigma=sigma + (0,), mode="constant")
    cover = ndimage.gaussian_filter(seen, sigma=sigma, mode="constant")
    cy = (np.arange(gh) + 0.5) * sh - 0.5 + pad
    cx = (np.arange(gw) + 0.5) * sw - 0.5 + pad
    off_y = (np.arange(cells) - (cells - 1) / 2) * step_y
    off_x = (np.arange(cells) - (cells - 1) / 2) * step_x
    y = cy[:, None, None, None] + off_y[None, None, :, None]
    x = cx[None, :, None, None] + off_x[None, None, None, :]
    y, x = np.broadcast_arrays(y, x)  # (gh, gw, cells, cells)
    samples = sample_bilinear(pre, x, y)  # (gh, gw, cells, cells, C)
    valid = sample_bilinear(cover[..., None], x, y)[..., 0] > 0.98
    n = valid.sum(axis=(2, 3))
    mean = (samples * valid[..., None]).sum(axis=(2, 3)) / np.maximum(n, 1)[..., None]
    samples = np.where(valid[..., None], samples - mean[:, :, None, None, :], 0.0)
    samples[n < min_valid * cells * cells] = 0.0
    if taper > 0:
        k = (np.arange(cells) - (cells - 1) / 2) / (cells / 2)
        g = np.exp(-0.5 * (k[:, None] ** 2 + k[None, :] ** 2) / taper ** 2)
        samples = samples * g[..., None]
    return np.transpose(samples, (2, 3, 4, 0, 1)).reshape(-1, gh, gw)


def smooth(img: ImageBuffer, sigma: float) -> ImageBuffer:
    if sigma <= 0:
        return img
    return ImageBuffer(ndimage.gaussian_filter(img.data, sigma=(sigma, sigma, 0), mode="constant"))


def correlate(fg: np.ndarray, fs: np.ndarray) -> np.ndarray:
    """``C[i, j, k, l] = max(0, <fg[:, i, j], fs[:, k, l]>)``."""
    fg = np.asarray(fg, dtype=np.float64)
    fs = np.asarray(fs, dtype=np.float64)
    if fg.shape != fs.shape or fg.ndim != 3:
        raise ContractError(f"feature maps must share a (D, H, W) shape, got {fg.shape} and {fs.shape}")
    d, h, w = fg.shape
    c = fg.reshape(d, h * w).T @ fs.reshape(d, h * w)
    return np.maximum(c, 0.0).reshape(h, w, h, w)


def pool_half(c: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the last two dimensions."""
    c = np.asarray(c, dtype=np.float64)
    h2, w2 = c.shape[-2:]
    if h2 % 2 or w2 % 2:
        raise ContractError(f"pooled dimensions must be even, got {h2}x{w2}")
    return c.reshape(*c.shape[:-2], h2 // 2, 2, w2 // 2, 2).mean(axis=(-3, -1))


def window_offsets(r: int):
    """``(du, dv)`` offset arrays of shape ``(2r+1, 2r+1)``."""
    d = np.arange(-r, r + 1, dtype=np.float64)
    dv, du = np.meshgrid(d, d, indexing="ij")
    return du, dv


def sample_slices(c: np.ndarray, coords: np.ndarray, r: int, scale: float = 1.0) -> np.ndarray:
    """Bilinear look-up of a ``(2r+1)^2`` window around ``coords * scale`` per cell.

    ``coords`` is ``(H, W, 2)`` holding ``(u, v)`` in full-resolution cell units; taps
    falling outside the last two volume dimensions read zero.
    """
    if r < 1:
        raise ContractError(f"search radius must be >= 1, got {r}")
    h, w, h2, w2 = c.shape
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (h, w, 2):
        raise ContractError(f"coords must be ({h}, {w}, 2), got {coords.shape}")
    du, dv = window_offsets(r)
    x = coords[..., 0, None, None] * scale + du  # (h, w, 2r+1, 2r+1)
    y = coords[..., 1, None, None] * scale + dv
    flat = c.reshape(h * w, h2 * w2)
    cell = np.arange(h * w).reshape(h, w, 1, 1)

    finite = np.isfinite(x) & np.isfinite(y)
    x = np.where(finite, x, -2.0)
    y = np.where(finite, y, -2.0)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(x.shape)
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + ox
            yi = y0 + oy
            inside = (xi >= 0) & (xi < w2) & (yi >= 0) & (yi < h2)
            idx = np.clip(yi, 0, h2 - 1) * w2 + np.clip(xi, 0, w2 - 1)
            out += np.where(inside, wx * wy, 0.0) * flat[cell, idx]
    return out
