"""Iterative correlation-driven homography estimation and pose read-out.

The loop works on the feature grid: the homography maps BEV feature coordinates
to satellite feature coordinates and is parameterized by the displacement of
the four grid corners. Each iteration looks up correlation windows around the
currently projected lattice, asks a residual updater for a corner correction,
and re-solves the homography from the updated corners.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import homography as hg
from .correlation import correlate, extract_features, pool_half, sample_slices, window_offsets
from .errors import ContractError, GeometryError, InputError
from .georef import PatchMeta, patch_pixel_to_gps
from .raster import ImageBuffer, rotate90


@dataclass(frozen=True)
class EstimatorConfig:
    iterations: int = 6
    radius: int = 4
    grid: tuple = (16, 16)
    updater: str = "softargmax"
    temperature: float = 0.01
    feature_mode: str = "patch"
    blur: float = 0.0
    support: float = 3.0
    cells: int = 10
    taper: float = 0.4
    tolerance: float = 0.12
    confidence_temperature: float = 0.1
    border_margin: float = 0.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.radius < 1:
            raise ContractError("radius must be >= 1")
        if len(self.grid) != 2 or min(self.grid) < 2 or any(g % 2 for g in self.grid):
            raise ContractError("grid must be two even sizes >= 2")
        if self.tolerance < 0 or self.border_margin < 0:
            raise ContractError("tolerance and border margin must be non-negative")
        if not self.temperature > 0 or not self.confidence_temperature > 0:
            raise ContractError("temperatures must be positive")
        if self.updater not in UPDATERS:
            raise ContractError(f"unknown updater {self.updater!r}")

    @property
    def frame(self):
        return (self.grid[1], self.grid[0])


def estimator_config(doc: Optional[dict] = None, **overrides) -> EstimatorConfig:
    """Config from a key-value mapping plus overrides; unknown keys are rejected."""
    merged = dict(doc or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    known = set(EstimatorConfig.__dataclass_fields__)
    unknown = sorted(set(merged) - known)
    if unknown:
        raise InputError(f"unknown estimator settings {unknown}; known: {sorted(known)}")
    if "grid" in merged:
        merged["grid"] = tuple(int(g) for g in merged["grid"])
    return EstimatorConfig(**merged)


@dataclass(frozen=True)
class IterationState:
    step: int
    corners: np.ndarray
    homography: np.ndarray
    corner_error: Optional[float] = None


@dataclass
class Estimate:
    """Outcome of :func:`run`; ``homography`` lives on the feature grid."""

    homography: np.ndarray
    trace: list
    volume: np.ndarray
    stride: int

    @property
    def image_homography(self) -> np.ndarray:
        return hg.feature_to_image(self.homography, self.stride)

    @property
    def corner_errors(self) -> list:
        return [s.corner_error for s in self.trace]


class EstimationError(GeometryError):
    """Degenerate intermediate corner cube; ``trace`` holds the steps completed so far."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def lattice(grid) -> np.ndarray:
    """``(H, W, 2)`` array of cell coordinates ``(u, v) = (column, row)``."""
    h, w = grid
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([u, v], axis=-1)


def _corner_cells(points: np.ndarray) -> np.ndarray:
    return np.stack([points[0, 0], points[0, -1], points[-1, -1], points[-1, 0]])


def softmax_flow(s: np.ndarray, tau: float) -> np.ndarray:
    """Expected window offset ``(du, dv)`` under ``softmax(s / tau)``, per cell."""
    h, w, n, _ = s.shape
    r = (n - 1) // 2
    logits = s.reshape(h, w, -1) / tau
    logits = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    du, dv = window_offsets(r)
    return np.stack([p @ du.ravel(), p @ dv.ravel()], axis=-1)


def _parabola_offset(cm, c0, cp):
    """Vertex offset of the parabola through three equally spaced samples; 0 unless peaked."""
    curv = cm - 2.0 * c0 + cp
    ok = (curv < 0) & (c0 >= cm) & (c0 >= cp)
    return np.where(ok, 0.5 * (cm - cp) / np.where(ok, curv, -1.0), 0.0)


def _peak_offset(cm, c0, cp, eps: float = 1e-6):
    """Sub-tap peak offset. Correlation peaks are close to Gaussian, so the parabola
    is fitted to log values (exact for a Gaussian); non-positive taps fall back
    to the plain parabola."""
    pos = (cm > eps) & (c0 > eps) & (cp > eps)
    safe = lambda a: np.log(np.where(pos, a, 1.0))
    return np.where(pos, _parabola_offset(safe(cm), safe(c0), safe(cp)), _parabola_offset(cm, c0, cp))


def refine_flow(s: np.ndarray) -> np.ndarray:
    """Sub-cell flow from each cell's peak tap and a three-tap peak fit along each axis."""
    h, w, n, _ = s.shape
    r = (n - 1) // 2
    a, b = np.divmod(s.reshape(h, w, -1).argmax(axis=-1), n)
    a = np.clip(a, 1, n - 2)
    b = np.clip(b, 1, n - 2)
    i, j = np.indices((h, w))
    c0 = s[i, j, a, b]
    du = _peak_offset(s[i, j, a, b - 1], c0, s[i, j, a, b + 1])
    dv = _peak_offset(s[i, j, a - 1, b], c0, s[i, j, a + 1, b])
    return np.stack([b - r + du, a - r + dv], axis=-1).astype(np.float64)


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    return float(v[np.searchsorted(cum, 0.5 * cum[-1])])


def tukey(r: np.ndarray, c: float) -> np.ndarray:
    """Tukey biweight: ``(1 - (r/c)^2)^2`` inside ``|r| < c``, zero outside."""
    q = np.clip(1.0 - (r / c) ** 2, 0.0, None)
    return q * q


ROBUST_SCALES = (4.0, 2.0, 1.0, 0.5)


def fit_flow_homography(xp: np.ndarray, flow: np.ndarray, weights: np.ndarray,
                        scales=ROBUST_SCALES) -> np.ndarray:
    """Homography taking points ``xp`` to ``xp + flow``, robust to outlying flows.

    Starts from the weighted-median translation and re-fits a weighted DLT with
    Tukey weights around the previous fit, narrowing the inlier scale each round.
    Falls back to the translation when too few cells remain.
    """
    xp = xp.reshape(-1, 2)
    flow = flow.reshape(-1, 2)
    w0 = weights.ravel()
    t = np.array([weighted_median(flow[:, 0], w0), weighted_median(flow[:, 1], w0)])
    h = hg.translation(*t)
    pred = np.broadcast_to(t, flow.shape)
    for c in scales:
        w = w0 * tukey(np.linalg.norm(flow - pred, axis=1), c)
        if np.count_nonzero(w) < 8:
            break
        try:
            h = hg.weighted_dlt(xp, xp + flow, w)
        except GeometryError:
            break
        pred = hg.project_points(h, xp) - xp
    return h


def softargmax_flow_updater(x, xp, s, s_half, tau: float, refine: bool = True, tol: float = 0.0,
                            margin: float = 0.0) -> np.ndarray:
    """Classical residual updater: soft-argmax flow per cell, robust weighted DLT fit.

    With ``refine`` the flow is read from each cell's peak tap with a three-tap
    sub-cell fit (see :func:`refine_flow`). Cells whose full-resolution peak sits
    on the window rim take twice the
    half-resolution flow instead. Each cell is weighted by its peak correlation,
    so cells without any positive correlation, or with a flat window, have no
    say; with no such cells
    the update is zero. Corrections whose largest component is below ``tol``
    cells are treated as converged and returned as zero.
    """
    h, w, n, _ = s.shape
    zero = np.zeros((4, 2))
    flat = s.reshape(h, w, -1)
    peak = flat.max(axis=-1)
    if not np.any(peak > 0):
        return zero
    uniform = peak == flat.min(axis=-1)
    # a flat window says nothing about where the cell went
    peak = np.where(uniform, 0.0, peak)
    if not np.any(peak > 0):
        return zero
    flow = softmax_flow(s, tau)
    if refine:
        flow = np.where(uniform[..., None], flow, refine_flow(s))
    arg = s.reshape(h, w, -1).argmax(axis=-1)
    a, b = np.divmod(arg, n)
    rim = ((a == 0) | (a == n - 1) | (b == 0) | (b == n - 1)) & ~uniform
    if np.any(rim):
        half = refine_flow(s_half) if refine else softmax_flow(s_half, tau)
        flow[rim] = 2.0 * half[rim]
        peak = np.where(rim, s_half.reshape(h, w, -1).max(axis=-1), peak)
    if margin > 0:
        # satellite descriptors this close to the border are built partly from
        # content past the edge; matches landing there are biased inward
        tgt = xp + flow
        inside = np.all((tgt >= margin) & (tgt <= np.array([w, h]) - 1 - margin), axis=-1)
        if np.count_nonzero(peak * inside) >= 8:
            peak = peak * inside
    h_fit = fit_flow_homography(xp, flow, peak)
    cur = _corner_cells(xp)
    try:
        delta = hg.project_points(h_fit, cur) - cur
    except GeometryError:
        return zero
    return zero if np.abs(delta).max() < tol else delta


def _softargmax(cfg: EstimatorConfig) -> Callable:
    return lambda x, xp, s, s_half: softargmax_flow_updater(x, xp, s, s_half, cfg.temperature, tol=cfg.tolerance,
                                                            margin=cfg.border_margin)


UPDATERS = {"softargmax": _softargmax}


def _stride(img: ImageBuffer, grid) -> int:
    gh, gw = grid
    if img.height % gh or img.width % gw or img.height // gh != img.width // gw:
        raise ContractError(f"image {img.height}x{img.width} does not tile the {gh}x{gw} grid with square blocks")
    return img.height // gh


def features(img: ImageBuffer, cfg: EstimatorConfig, outside: str = "blank") -> np.ndarray:
    return extract_features(img, cfg.grid, cfg.feature_mode, cells=cfg.cells, support=cfg.support,
                            blur=cfg.blur, taper=cfg.taper, outside=outside)


def run(bev: ImageBuffer, sat: ImageBuffer, cfg: EstimatorConfig = EstimatorConfig(),
        gt=None, updater: Optional[Callable] = None) -> Estimate:
    """Estimate the BEV -> satellite homography on the feature grid.

    ``gt`` is an optional ground-truth feature-grid homography used only to record
    per-step corner errors. ``updater`` overrides ``cfg.updater`` with any callable
    ``(X, X', S, S_half) -> (4, 2) corner correction``.
    """
    if bev.shape != sat.shape:
        raise ContractError(f"BEV {bev.shape} and satellite {sat.shape} images must match")
    stride = _stride(bev, cfg.grid)
    vol = correlate(features(bev, cfg), features(sat, cfg, outside="reflect"))
    vol_half = pool_half(vol)
    update = updater if updater is not None else UPDATERS[cfg.updater](cfg)
    frame = cfg.frame
    gt_corners = None if gt is None else hg.corners_from_homography(gt, frame)

    def record(k, d, h):
        err = None if gt_corners is None else float(np.linalg.norm(d - gt_corners, axis=1).mean())
        return IterationState(k, d.copy(), h.copy(), err)

    x = lattice(cfg.grid)
    d = np.zeros((4, 2))
    h = hg.identity()
    trace = [record(0, d, h)]
    for k in range(1, cfg.iterations + 1):
        xp = hg.project_points(h, x)
        s = sample_slices(vol, xp, cfg.radius, 1.0)
        s_half = sample_slices(vol_half, xp, cfg.radius, 0.5)
        delta = np.asarray(update(x, xp, s, s_half), dtype=np.float64).reshape(4, 2)
        if not np.all(np.isfinite(delta)):
            raise EstimationError(f"updater returned a non-finite correction at step {k}", trace)
        if np.any(delta != 0):
            d = d + delta
            try:
                h = hg.dlt_from_corners(d, frame)
            except GeometryError as exc:
                raise EstimationError(f"degenerate corner cube at step {k}: {exc}", trace) from exc
        trace.append(record(k, d, h))
    return Estimate(h, trace, vol, stride)


# ---------------------------------------------------------------------------
# read-out


@dataclass
class LocalizationResult:
    u_s: float
    v_s: float
    lat: float
    lon: float
    theta: float
    homography: np.ndarray
    confidence: Optional[float] = None
    confidence_map: Optional[np.ndarray] = None
    rotation: int = 0
    trace: list = field(default_factory=list)
    volume: Optional[np.ndarray] = None

    def to_record(self) -> dict:
        return {
            "homography": [float(v) for v in self.homography.ravel()],
            "u_s": self.u_s,
            "v_s": self.v_s,
            "lat": self.lat,
            "lon": self.lon,
            "theta_deg": self.theta,
            "confidence": self.confidence,
            "rotation_deg": 90 * self.rotation,
            "per_step_corner_error": [s.corner_error for s in self.trace],
        }


def wrap_degrees(a: float) -> float:
    """Wrap into [-180, 180)."""
    return (a + 180.0) % 360.0 - 180.0


def heading(h_img, bev_size, axis_offset: Optional[float] = None):
    """Satellite pixel of the BEV center and the heading in degrees clockwise from north."""
    w, ht = bev_size
    if axis_offset is None:
        axis_offset = ht / 4.0
    pts = hg.project_points(h_img, np.array([[w / 2.0, ht / 2.0], [w / 2.0, ht / 2.0 - axis_offset]]))
    (u_s, v_s), (ua, va) = pts
    theta = wrap_degrees(math.degrees(math.atan2(ua - u_s, -(va - v_s))))
    return float(u_s), float(v_s), theta


def localize(h_img, meta: PatchMeta, bev_size, axis_offset: Optional[float] = None) -> LocalizationResult:
    """Project the BEV center (and a point above it on the center line) into the patch."""
    h_img = hg.normalize(h_img)
    u_s, v_s, theta = heading(h_img, bev_size, axis_offset)
    lat, lon = patch_pixel_to_gps(meta, u_s, v_s)
    return LocalizationResult(u_s, v_s, float(lat), float(lon), theta, h_img)


def confidence(vol: np.ndarray, tau: float, cell=None):
    """Softmax over satellite cells of the center BEV cell's correlations.

    Returns the probability map and, when ``cell = (row, col)`` is given, the mass
    at that cell.
    """
    h, w = vol.shape[:2]
    row = vol[h // 2, w // 2] / tau
    row = row - row.max()
    p = np.exp(row)
    p /= p.sum()
    if cell is None:
        return p, None
    return p, float(p[cell])


def predicted_cell(u_s: float, v_s: float, stride: int, shape):
    """Satellite feature cell (row, col) containing image pixel ``(u_s, v_s)``."""
    hh, ww = shape
    col = int(np.clip(math.floor(u_s / stride), 0, ww - 1))
    row = int(np.clip(math.floor(v_s / stride), 0, hh - 1))
    return row, col


def landing_cell(h_feat, grid):
    """Satellite feature cell (row, col) nearest to where the center BEV cell lands.

    With an even grid the BEV center pixel sits on a cell corner, half a cell
    away from the center cell whose correlations the confidence map uses, so
    the map is read where that cell itself projects.
    """
    gh, gw = grid
    u, v = hg.project_points(h_feat, np.array([gw // 2, gh // 2], dtype=np.float64))
    return int(np.clip(np.rint(v), 0, gh - 1)), int(np.clip(np.rint(u), 0, gw - 1))


def locate(bev: ImageBuffer, sat: ImageBuffer, meta: PatchMeta, cfg: EstimatorConfig = EstimatorConfig(),
           gt=None, axis_offset: Optional[float] = None, rotation: int = 0) -> LocalizationResult:
    """Run the estimator on ``bev`` turned by ``rotation`` quarter turns and read out the pose
    of the unrotated BEV."""
    if rotation % 4 and bev.height != bev.width:
        raise ContractError("quarter-turn rotations need a square BEV")
    turned = rotate90(bev, rotation) if rotation % 4 else bev
    n = bev.width
    turn = hg.rotation_homography(-90.0 * (rotation % 4), ((n - 1) / 2.0, (bev.height - 1) / 2.0))
    gt_turned = None
    if gt is not None:
        gt_turned = hg.compose(gt, hg.image_to_feature(hg.invert(turn), _stride(bev, cfg.grid)))
    est = run(turned, sat, cfg, gt=gt_turned)
    h_img = hg.compose(est.image_homography, turn)
    res = localize(h_img, meta, (bev.width, bev.height), axis_offset)
    try:
        cell = landing_cell(est.homography, cfg.grid)
    except GeometryError:
        cell = predicted_cell(res.u_s, res.v_s, est.stride, est.volume.shape[2:])
    cmap, conf = confidence(est.volume, cfg.confidence_temperature, cell)
    res.confidence = conf
    res.confidence_map = cmap
    res.rotation = rotation % 4
    res.trace = est.trace
    res.volume = est.volume
    return res


def disambiguate_rotations(bev: ImageBuffer, sat: ImageBuffer, meta: PatchMeta,
                           cfg: EstimatorConfig = EstimatorConfig(), axis_offset: Optional[float] = None,
                           gt=None):
    """Try the BEV at 0, 90, 180 and 270 degrees; keep the most confident read-out.

    Ties go to the smallest rotation. Returns ``(best, all_four)``.
    """
    results = [locate(bev, sat, meta, cfg, gt=gt, axis_offset=axis_offset, rotation=k) for k in range(4)]
    best = results[0]
    for r in results[1:]:
        if r.confidence > best.confidence:
            best = r
    return best, results
