"""Projective-map algebra on 3x3 numpy arrays.

Homographies are plain ``(3, 3)`` float arrays normalized so that ``h[2, 2] == 1``.
Point sets use a trailing coordinate axis: ``(..., 2)`` holding ``(u, v)``.

The four-corner parameterization uses corners in the order top-left, top-right,
bottom-right, bottom-left of a ``(width, height)`` frame, placed on the outermost
lattice points ``(0, 0), (W-1, 0), (W-1, H-1), (0, H-1)``.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, GeometryError

DET_EPS = 1e-12
W_EPS = 1e-12


def normalize(h) -> np.ndarray:
    """Check invertibility and rescale so the bottom-right entry is 1."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ContractError(f"homography must be 3x3, got {h.shape}")
    if not np.all(np.isfinite(h)):
        raise GeometryError("homography has non-finite entries")
    if abs(h[2, 2]) < W_EPS:
        raise GeometryError("homography has a zero bottom-right entry")
    h = h / h[2, 2]
    if abs(np.linalg.det(h)) <= DET_EPS:
        raise GeometryError("homography is singular")
    return h


def identity() -> np.ndarray:
    return np.eye(3)


def translation(tu: float, tv: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tu], [0.0, 1.0, tv], [0.0, 0.0, 1.0]])


def project_points(h, points) -> np.ndarray:
    """Map ``(..., 2)`` points through ``h`` (homogeneous multiply, perspective divide)."""
    h = np.asarray(h, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 2:
        raise ContractError(f"points need a trailing axis of size 2, got {pts.shape}")
    u, v = pts[..., 0], pts[..., 1]
    w = h[2, 0] * u + h[2, 1] * v + h[2, 2]
    if np.any(np.abs(w) < W_EPS):
        raise GeometryError("a point maps to the line at infinity")
    up = (h[0, 0] * u + h[0, 1] * v + h[0, 2]) / w
    vp = (h[1, 0] * u + h[1, 1] * v + h[1, 2]) / w
    return np.stack([up, vp], axis=-1)


def compose(a, b) -> np.ndarray:
    """Return the map ``x -> a(b(x))``."""
    return normalize(np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64))


def invert(h) -> np.ndarray:
    h = normalize(h)
    return normalize(np.linalg.inv(h))


def frame_corners(frame) -> np.ndarray:
    """Reference corners (TL, TR, BR, BL) of a ``(width, height)`` frame, shape (4, 2)."""
    w, h = frame
    if w < 2 or h < 2:
        raise ContractError(f"frame must be at least 2x2, got {frame}")
    return np.array([[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]])


def _check_quad(q: np.ndarray) -> None:
    # every triple of a non-degenerate quadrilateral spans a non-zero area
    scale = max(1.0, float(np.ptp(q, axis=0).max()))
    for i in range(4):
        a, b, c = q[i], q[(i + 1) % 4], q[(i + 2) % 4]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area) < 1e-9 * scale * scale:
            raise GeometryError("three corners of the quadrilateral are collinear")


def _solve_four(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        sol = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise GeometryError("corner system is singular") from exc
    return normalize(np.append(sol, 1.0).reshape(3, 3))


def dlt_from_corners(d, frame) -> np.ndarray:
    """Homography taking each frame corner ``c_i`` to ``c_i + d_i``.

    ``d`` is the (4, 2) displacement cube in TL, TR, BR, BL order.
    """
    d = np.asarray(d, dtype=np.float64).reshape(4, 2)
    if not np.all(np.isfinite(d)):
        raise GeometryError("displacement cube has non-finite entries")
    src = frame_corners(frame)
    dst = src + d
    _check_quad(dst)
    return _solve_four(src, dst)


def corners_from_homography(h, frame) -> np.ndarray:
    src = frame_corners(frame)
    return project_points(h, src) - src


def _hartley(pts: np.ndarray, w: np.ndarray) -> np.ndarray:
    c = (pts * w[:, None]).sum(axis=0) / w.sum()
    dist = np.sqrt(((pts - c) ** 2).sum(axis=1))
    mean_dist = (dist * w).sum() / w.sum()
    if mean_dist < 1e-15:
        raise GeometryError("points are coincident")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def weighted_dlt(src, dst, weights=None) -> np.ndarray:
    """Weighted least-squares homography from point correspondences.

    Minimizes the weighted algebraic error after Hartley normalization of both
    point sets. Points with zero weight are ignored entirely.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ContractError("src and dst must have the same number of points")
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if w.shape != (len(src),):
        raise ContractError("one weight per correspondence is required")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ContractError("weights must be finite and non-negative")
    keep = w > 0
    if keep.sum() < 4:
        raise GeometryError("need at least 4 correspondences with positive weight")
    src, dst, w = src[keep], dst[keep], w[keep]

    t_src = _hartley(src, w)
    t_dst = _hartley(dst, w)
    ps = project_points(t_src, src)
    pd = project_points(t_dst, dst)

    n = len(ps)
    a = np.zeros((2 * n, 9))
    x, y = ps[:, 0], ps[:, 1]
    u, v = pd[:, 0], pd[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    a *= np.repeat(np.sqrt(w), 2)[:, None]

    _, s, vt = np.linalg.svd(a)
    if len(s) < 9:
        s = np.append(s, np.zeros(9 - len(s)))
    # a second (near-)null direction means the configuration does not pin down h
    if s[7] <= 1e-10 * s[0]:
        raise GeometryError("design matrix is rank deficient")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    return normalize(h)


def scale_homography(scale: float) -> np.ndarray:
    if not scale > 0:
        raise ContractError(f"scale must be positive, got {scale}")
    return np.diag([float(scale), float(scale), 1.0])


def rotation_homography(gamma_deg: float, center) -> np.ndarray:
    """Rotation by ``gamma_deg`` about ``center = (u_c, v_c)``.

    In image coordinates (v pointing down) a positive angle turns +u toward +v,
    i.e. clockwise on screen.
    """
    g = np.radians(gamma_deg)
    c, s = np.cos(g), np.sin(g)
    uc, vc = center
    return np.array([
        [c, -s, uc * (1 - c) + vc * s],
        [s, c, vc * (1 - c) - uc * s],
        [0.0, 0.0, 1.0],
    ])


def stride_affine(stride: int) -> np.ndarray:
    """Affine map from feature-grid coordinates to image pixel coordinates.

    Feature cell ``j`` covers pixels ``[j*stride, (j+1)*stride)`` so its center
    sits at ``j*stride + (stride-1)/2``.
    """
    off = (stride - 1) / 2.0
    return np.array([[stride, 0.0, off], [0.0, stride, off], [0.0, 0.0, 1.0]], dtype=np.float64)


def feature_to_image(h, stride: int) -> np.ndarray:
    a = stride_affine(stride)
    return normalize(a @ np.asarray(h, dtype=np.float64) @ np.linalg.inv(a))


def image_to_feature(h, stride: int) -> np.ndarray:
    a = stride_affine(stride)
    return normalize(np.linalg.inv(a) @ np.asarray(h, dtype=np.float64) @ a)
