"""Web Mercator conversion between WGS84 GPS and global / patch pixel coordinates.

All arithmetic is float64; angles are degrees at the interface and radians inside.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

TILE_SIZE = 256
EARTH_RADIUS = 6378137.0
MAX_LAT = 85.05113
MAX_ZOOM = 23


def _check_lat(lat) -> None:
    lat = np.asarray(lat, dtype=np.float64)
    if not np.all(np.isfinite(lat)) or np.any(np.abs(lat) >= MAX_LAT):
        raise ContractError(f"latitude must lie in (-{MAX_LAT}, {MAX_LAT}) degrees")


def _check_zoom(zoom) -> None:
    if int(zoom) != zoom or not 0 <= zoom <= MAX_ZOOM:
        raise ContractError(f"zoom must be an integer in [0, {MAX_ZOOM}], got {zoom}")


def world_size(zoom: int) -> float:
    return TILE_SIZE * 2.0 ** zoom


def gps_to_global(lat, lon, zoom: int):
    """Global pixel ``(x, y)`` of a GPS position at ``zoom``."""
    _check_lat(lat)
    _check_zoom(zoom)
    lon = np.asarray(lon, dtype=np.float64)
    if not np.all(np.isfinite(lon)) or np.any(np.abs(lon) > 180.0):
        raise ContractError("longitude must lie in [-180, 180] degrees")
    k = TILE_SIZE / (2.0 * math.pi) * 2.0 ** zoom
    lat_r = np.radians(lat)
    lon_r = np.radians(lon)
    x = k * (lon_r + math.pi)
    y = k * (math.pi - np.log(np.tan(math.pi / 4.0 + lat_r / 2.0)))
    return _scalar(x), _scalar(y)


def global_to_gps(x, y, zoom: int):
    """Inverse of :func:`gps_to_global`; returns ``(lat, lon)`` in degrees."""
    _check_zoom(zoom)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    size = world_size(zoom)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ContractError("global pixel coordinates must be finite")
    if np.any(x < 0) or np.any(x > size) or np.any(y < 0) or np.any(y > size):
        raise ContractError(f"global pixel coordinates must lie in [0, {size}]")
    k = TILE_SIZE / (2.0 * math.pi) * 2.0 ** zoom
    lon_r = x / k - math.pi
    lat_r = 2.0 * np.arctan(np.exp(math.pi - y / k)) - math.pi / 2.0
    return _scalar(np.degrees(lat_r)), _scalar(np.degrees(lon_r))


def ground_resolution(lat, zoom: int):
    """Meters per pixel at latitude ``lat`` and ``zoom``."""
    _check_lat(lat)
    _check_zoom(zoom)
    res = 2.0 * math.pi * EARTH_RADIUS * np.cos(np.radians(lat)) / world_size(zoom)
    return _scalar(res)


def _scalar(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class PatchMeta:
    """A square satellite patch: center GPS, zoom level and side length in pixels."""

    center_lat: float
    center_lon: float
    zoom: int = 20
    size: float = 512.0

    def __post_init__(self):
        _check_lat(self.center_lat)
        if not -180.0 <= self.center_lon <= 180.0:
            raise ContractError("patch center longitude out of range")
        _check_zoom(self.zoom)
        if not self.size > 0:
            raise ContractError("patch size must be positive")

    @property
    def resolution(self) -> float:
        return ground_resolution(self.center_lat, self.zoom)


def gps_to_patch_pixel(meta: PatchMeta, lat, lon):
    """Patch pixel of a GPS position: patch center plus the global-pixel offset."""
    cx, cy = gps_to_global(meta.center_lat, meta.center_lon, meta.zoom)
    x, y = gps_to_global(lat, lon, meta.zoom)
    half = meta.size / 2.0
    return _scalar(half + (np.asarray(x) - cx)), _scalar(half + (np.asarray(y) - cy))


def patch_pixel_to_gps(meta: PatchMeta, u, v):
    cx, cy = gps_to_global(meta.center_lat, meta.center_lon, meta.zoom)
    half = meta.size / 2.0
    x = cx + (np.asarray(u, dtype=np.float64) - half)
    y = cy + (np.asarray(v, dtype=np.float64) - half)
    return global_to_gps(x, y, meta.zoom)


def correct_label(meta: PatchMeta, lat: float, lon: float, legacy_u: float, legacy_v: float):
    """Recompute a patch label from GPS; returns ``(u, v, correction_m)``.

    ``correction_m`` is the metric distance between the legacy and corrected labels
    at the patch-center latitude.
    """
    u, v = gps_to_patch_pixel(meta, lat, lon)
    dist_px = math.hypot(u - legacy_u, v - legacy_v)
    return u, v, dist_px * meta.resolution
