"""Camera models and the ground-image to bird's-eye-view projections.

Two projections are provided:

* panorama -> BEV through a tangent plane at the south pole of the viewing sphere,
  optionally after rotating the viewing rays by a roll/pitch/yaw attitude;
* front-view pinhole image -> BEV through a ground plane touching the bottom image
  edge, with a small camera tilt.

Angles are degrees at the API boundary. Pixel coordinates are ``(u, v)`` =
(column, row).
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import homography as hg
from .errors import ContractError
from .raster import GridMap, ImageBuffer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PanoCamera:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ContractError("panorama dimensions must be positive")
        if self.width != 2 * self.height:
            log.warning("panorama %dx%d is not 2:1 equirectangular", self.width, self.height)


@dataclass(frozen=True)
class BevCamera:
    width: int = 512
    height: int = 512
    fov: float = 85.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ContractError("BEV dimensions must be positive")
        if not 0.0 < self.fov < 90.0:
            raise ContractError(f"BEV fov must lie in (0, 90) degrees, got {self.fov}")

    @property
    def focal(self) -> float:
        return 0.5 * self.width / math.tan(math.radians(self.fov))


@dataclass(frozen=True)
class FrontCamera:
    """Forward-looking pinhole image of size ``width x height``; ``tilt`` leans the
    image plane away from vertical."""

    width: int = 1242
    height: int = 375
    fov: float = 17.5
    tilt: float = 0.8

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ContractError("front-view dimensions must be positive")
        if not 0.0 < self.fov < 90.0:
            raise ContractError(f"front-view fov must lie in (0, 90) degrees, got {self.fov}")

    @property
    def focal(self) -> float:
        return (self.height / 2.0) / math.tan(math.radians(self.fov))

    @property
    def varphi(self) -> float:
        return math.pi / 2.0 - math.radians(self.fov)

    @property
    def delta(self) -> float:
        return math.pi / 2.0 - (self.varphi - math.radians(self.tilt))

    @property
    def l0(self) -> float:
        return math.hypot(self.focal, self.height / 2.0)

    @property
    def plane_height(self) -> float:
        """Distance from the optical center to the BEV plane."""
        return self.l0 * math.sin(self.delta)

    @property
    def plane_offset(self) -> float:
        """Distance along the BEV plane from the camera foot point to the image bottom edge."""
        return self.l0 * math.cos(self.delta)

    @property
    def native_bev_size(self):
        return (6 * self.width, 6 * self.width)


@dataclass(frozen=True)
class Attitude:
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def matrix(self) -> np.ndarray:
        """Rotation applied to camera rays: ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
        a, b, g = np.radians([self.roll, self.pitch, self.yaw])
        ca, sa = math.cos(a), math.sin(a)
        cb, sb = math.cos(b), math.sin(b)
        cg, sg = math.cos(g), math.sin(g)
        return np.array([
            [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa],
            [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa],
            [-sb, cb * sa, cb * ca],
        ])

    @property
    def is_zero(self) -> bool:
        return self.roll == 0.0 and self.pitch == 0.0 and self.yaw == 0.0


ZERO_ATTITUDE = Attitude()


# ---------------------------------------------------------------------------
# panorama <-> sphere


def ray_to_spherical(x1, y1, z1):
    """Longitude ``phi`` in [-pi, pi] and latitude ``theta`` in [-pi/2, pi/2] of a ray."""
    x1, y1, z1 = (np.asarray(c, dtype=np.float64) for c in (x1, y1, z1))
    if np.any((x1 == 0) & (y1 == 0) & (z1 == 0)):
        raise ContractError("zero-length camera ray")
    phi = np.arctan2(y1, x1)
    theta = np.arctan2(z1, np.sqrt(x1 * x1 + y1 * y1))
    return phi, theta


def spherical_to_equirect(phi, theta):
    return -np.asarray(phi) / math.pi, np.asarray(theta) / (math.pi / 2.0)


def equirect_to_pano_pixel(x2, y2, pano: PanoCamera):
    u = (np.asarray(x2) + 1.0) * pano.width / 2.0
    v = (-np.asarray(y2) + 1.0) * pano.height / 2.0
    return u, v


def bev_pixel_to_ray(u_b, v_b, bev: BevCamera):
    u_b = np.asarray(u_b, dtype=np.float64)
    v_b = np.asarray(v_b, dtype=np.float64)
    x1 = -v_b + bev.height / 2.0
    y1 = -u_b + bev.width / 2.0
    z1 = np.full(np.broadcast(x1, y1).shape, -bev.focal)
    return x1, y1, z1


def spherical_map(u_b, v_b, bev: BevCamera, pano: PanoCamera, attitude: Attitude = ZERO_ATTITUDE):
    """Panorama pixel seen by BEV pixel ``(u_b, v_b)``, via the ray/sphere chain.

    The exact nadir ray maps to longitude 0 (``atan2(0, 0) == 0``).
    """
    x1, y1, z1 = bev_pixel_to_ray(u_b, v_b, bev)
    if not attitude.is_zero:
        r = attitude.matrix()
        x1, y1, z1 = (r[i, 0] * x1 + r[i, 1] * y1 + r[i, 2] * z1 for i in range(3))
    phi, theta = ray_to_spherical(x1, y1, z1)
    x2, y2 = spherical_to_equirect(phi, theta)
    return equirect_to_pano_pixel(x2, y2, pano)


def spherical_map_closed_form(u_b, v_b, bev: BevCamera, pano: PanoCamera):
    """Zero-attitude panorama coordinates written as one closed-form expression."""
    du = bev.width / 2.0 - np.asarray(u_b, dtype=np.float64)
    dv = bev.height / 2.0 - np.asarray(v_b, dtype=np.float64)
    u_p = (1.0 - np.arctan2(du, dv) / math.pi) * pano.width / 2.0
    v_p = (0.5 - np.arctan2(-bev.focal, np.sqrt(du * du + dv * dv)) / math.pi) * pano.height
    return u_p, v_p


def pano_pixel_to_bev(u_p, v_p, bev: BevCamera, pano: PanoCamera):
    """Inverse of the zero-attitude spherical map.

    Returns fractional BEV coordinates; pixels on or above the horizon give NaN.
    """
    x2 = 2.0 * np.asarray(u_p, dtype=np.float64) / pano.width - 1.0
    y2 = 1.0 - 2.0 * np.asarray(v_p, dtype=np.float64) / pano.height
    phi = -math.pi * x2
    theta = y2 * math.pi / 2.0
    below = theta < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        # ray (cos t cos p, cos t sin p, sin t) meets the plane z = -f at this horizontal range
        rng = np.where(below, -bev.focal * np.cos(theta) / np.sin(theta), np.nan)
    x1 = rng * np.cos(phi)
    y1 = rng * np.sin(phi)
    return bev.width / 2.0 - y1, bev.height / 2.0 - x1


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@functools.lru_cache(maxsize=32)
def build_bev_grid(bev: BevCamera, pano: PanoCamera, attitude: Attitude = ZERO_ATTITUDE) -> GridMap:
    """Sampling grid that turns a panorama into a ``bev.height x bev.width`` BEV.

    Grids depend only on the cameras, so they are cached and returned read-only.
    """
    u, v = np.meshgrid(np.arange(bev.width, dtype=np.float64), np.arange(bev.height, dtype=np.float64))
    up, vp = spherical_map(u, v, bev, pano, attitude)
    return GridMap(_readonly(up), _readonly(vp))


def pad_to_equirect(img: ImageBuffer, row_offset: int | None = None) -> ImageBuffer:
    """Zero-pad a horizontally complete, vertically cropped panorama to 2:1.

    ``row_offset`` is the row of the full panorama where the crop starts; by
    default the crop is centered on the horizon.
    """
    h, w = img.height, img.width
    if w % 2:
        raise ContractError("panorama width must be even to complete to 2:1")
    full_h = w // 2
    if h > full_h:
        raise ContractError(f"crop height {h} exceeds the full panorama height {full_h}")
    if row_offset is None:
        row_offset = (full_h - h) // 2
    if not 0 <= row_offset <= full_h - h:
        raise ContractError("row_offset places the crop outside the panorama")
    out = np.zeros((full_h, w, img.channels))
    out[row_offset:row_offset + h] = img.data
    return ImageBuffer(out)


def warp_pano(img: ImageBuffer, bev: BevCamera, attitude: Attitude = ZERO_ATTITUDE) -> ImageBuffer:
    from .raster import warp_by_grid

    pano = PanoCamera(img.width, img.height)
    return warp_by_grid(img, build_bev_grid(bev, pano, attitude))


# ---------------------------------------------------------------------------
# front view -> BEV


def front_view_map(u_b, v_b, front: FrontCamera, bev_size=None):
    """Front-view pixel ``(u_f, v_f)`` for BEV pixel ``(u_b, v_b)``.

    The BEV bottom row touches the bottom edge of the front image; rows further up
    lie further ahead. Grazing geometry yields non-finite or out-of-range values,
    which sampling treats as outside the image.
    """
    w_b, h_b = bev_size if bev_size is not None else front.native_bev_size
    u_b = np.asarray(u_b, dtype=np.float64)
    v_b = np.asarray(v_b, dtype=np.float64)
    tilt = math.radians(front.tilt)
    h, fp = front.plane_height, front.plane_offset
    hf, wf = float(front.height), float(front.width)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta2 = np.arctan(h / (fp + h_b - v_b))
        theta3 = math.pi / 2.0 + tilt - theta2
        v_f = hf - np.sin(theta2) / np.sin(theta3) * (h_b - v_b)
        ratio = (fp + (hf - v_f) * math.sin(tilt)) / (fp + hf / 2.0 - v_f)
        u_f = wf / 2.0 - ratio * (w_b / 2.0 - u_b)
    return u_f, v_f


def front_output_homography(front: FrontCamera, out_size, yaw: float = 0.0, bev_size=None) -> np.ndarray:
    """Native BEV pixels -> output BEV pixels: scale to ``out_size`` then rotate by ``yaw``
    about the output center."""
    w_b, h_b = bev_size if bev_size is not None else front.native_bev_size
    out_w, out_h = out_size
    if out_w * h_b != out_h * w_b:
        raise ContractError("output size must keep the native BEV aspect ratio")
    h1 = hg.scale_homography(out_w / w_b)
    h2 = hg.rotation_homography(yaw, (out_w / 2.0, out_h / 2.0))
    return hg.compose(h2, h1)


@functools.lru_cache(maxsize=16)
def build_front_grid(front: FrontCamera, out_size=None, yaw: float = 0.0, bev_size=None) -> GridMap:
    """Sampling grid from a front-view image to a BEV.

    Without ``out_size`` the grid covers the native BEV (``6*W_f`` square by default).
    With ``out_size`` the native BEV is composed with the scale and yaw-rotation
    homographies and evaluated directly at the output resolution, so the image is
    interpolated only once.
    """
    native = bev_size if bev_size is not None else front.native_bev_size
    if out_size is None:
        out_size = native
        h = None if yaw == 0.0 else hg.rotation_homography(yaw, (native[0] / 2.0, native[1] / 2.0))
    else:
        h = front_output_homography(front, out_size, yaw, native)
    u, v = np.meshgrid(np.arange(out_size[0], dtype=np.float64), np.arange(out_size[1], dtype=np.float64))
    if h is not None:
        nat = hg.project_points(hg.invert(h), np.stack([u, v], axis=-1))
        u, v = nat[..., 0], nat[..., 1]
    uf, vf = front_view_map(u, v, front, native)
    return GridMap(_readonly(uf), _readonly(vf))


def warp_front(img: ImageBuffer, front: FrontCamera, out_size=(512, 512), yaw: float = 0.0) -> ImageBuffer:
    from .raster import warp_by_grid

    if (img.width, img.height) != (front.width, front.height):
        raise ContractError(
            f"image is {img.width}x{img.height} but the camera expects {front.width}x{front.height}"
        )
    return warp_by_grid(img, build_front_grid(front, tuple(out_size), float(yaw)))
