"""Synthetic scenes, panorama rendering, perturbed pairs and the benchmark harness.

The satellite proxy is an overhead texture and the BEV proxy is that texture
warped by a known homography, so estimator accuracy is measured without any
learned features in the loop.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from . import homography as hg
from .errors import BevlocError, ContractError, GeometryError, InputError
from .estimator import EstimatorConfig, heading, locate
from .geometry import BevCamera, PanoCamera, pano_pixel_to_bev
from .georef import PatchMeta, patch_pixel_to_gps
from .losses import EvalRecord, summarize
from .raster import ImageBuffer, sample_bilinear, warp_by_homography

log = logging.getLogger(__name__)

STYLES = ("checker", "blob", "road")
SKY = 0.8
SCENE_KEYS = ("size", "style", "noise", "occlusion")
TRIAL_KEYS = ("perturbation", "center_lat", "center_lon", "zoom", "flip")


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    size: int = 256
    style: str = "blob"
    noise: float = 0.0
    occlusion: float = 0.0

    def __post_init__(self):
        if self.style not in STYLES:
            raise ContractError(f"unknown texture style {self.style!r}; choose from {STYLES}")
        if self.noise < 0:
            raise ContractError("noise sigma must be non-negative")
        if not 0.0 <= self.occlusion <= 0.5:
            raise ContractError("occlusion fraction must lie in [0, 0.5]")
        if self.size < 8:
            raise ContractError("texture size must be at least 8")


@dataclass(frozen=True)
class TrialSpec:
    scene: SceneSpec = SceneSpec()
    perturbation: float = 4.0
    center_lat: float = 41.8781
    center_lon: float = -87.6298
    zoom: int = 20
    flip: bool = False
    config: EstimatorConfig = EstimatorConfig()

    def __post_init__(self):
        if self.perturbation < 0:
            raise ContractError("perturbation must be non-negative")


def _rescale(a: np.ndarray, lo=0.05, hi=0.95) -> np.ndarray:
    a = a - a.mean()
    spread = np.abs(a).max()
    if spread == 0:
        return np.full_like(a, 0.5)
    return 0.5 + a / spread * (hi - lo) / 2.0


def _smooth_noise(rng, size, sigma, channels=3):
    """Periodic Gaussian-filtered white noise (filtered in the Fourier domain)."""
    n = rng.standard_normal((size, size, channels))
    spec = ndimage.fourier_gaussian(np.fft.rfft2(n, axes=(0, 1)), sigma=(sigma, sigma, 0), n=size, axis=1)
    return np.fft.irfft2(spec, s=(size, size), axes=(0, 1))


def make_overhead(spec: SceneSpec) -> ImageBuffer:
    """Deterministic RGB overhead texture for ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    if spec.style == "checker":
        period = max(2, n // 8)
        u, v = np.meshgrid(np.arange(n), np.arange(n))
        parity = ((u // period) + (v // period)) % 2
        c0, c1 = rng.uniform(0.1, 0.4, 3), rng.uniform(0.6, 0.9, 3)
        img = np.where(parity[..., None] == 1, c1, c0)
    elif spec.style == "blob":
        layers = [_smooth_noise(rng, n, n * s) for s in (1 / 64, 1 / 32, 1 / 16)]
        a = sum(w * _rescale(x) for w, x in zip((0.25, 0.35, 0.4), layers))
        img = _rescale(a)
    else:
        base = 0.3 + 0.4 * _rescale(_smooth_noise(rng, n, n / 32))
        road = np.zeros((n, n))
        for axis in (0, 1):
            for _ in range(int(rng.integers(2, 5))):
                c = int(rng.integers(n // 10, n - n // 10))
                half = int(rng.integers(max(1, n // 80), max(2, n // 30)))
                sl = slice(max(0, c - half), c + half + 1)
                if axis == 0:
                    road[sl, :] = 1.0
                else:
                    road[:, sl] = 1.0
        img = np.where(road[..., None] > 0, rng.uniform(0.15, 0.3), base)
    return ImageBuffer(img)


def render_pano(overhead: ImageBuffer, bev: BevCamera, pano: PanoCamera, sky: float = SKY) -> ImageBuffer:
    """Panorama a camera at the overhead center would see of the textured ground plane.

    The overhead is treated as the BEV image plane (same pixel size as ``bev``);
    lower-hemisphere rays sample it, the rest is a flat sky.
    """
    if (overhead.width, overhead.height) != (bev.width, bev.height):
        raise ContractError("overhead texture must match the BEV camera size")
    u, v = np.meshgrid(np.arange(pano.width, dtype=np.float64), np.arange(pano.height, dtype=np.float64))
    ub, vb = pano_pixel_to_bev(u, v, bev, pano)
    out = sample_bilinear(overhead.data, ub, vb)
    out[~np.isfinite(ub)] = sky
    return ImageBuffer(out)


@dataclass
class GroundTruth:
    h_feat: np.ndarray
    h_img: np.ndarray
    meta: PatchMeta
    u_s: float
    v_s: float
    lat: float
    lon: float
    theta: float
    occlusion_mask: Optional[np.ndarray] = None


@dataclass
class Pair:
    bev: ImageBuffer
    sat: ImageBuffer
    gt: GroundTruth


def random_perturbation(rng, magnitude: float, frame, tries: int = 100) -> np.ndarray:
    """Corner cube with each coordinate uniform in ``[-magnitude, magnitude]``."""
    for _ in range(tries):
        d = rng.uniform(-magnitude, magnitude, size=(4, 2))
        try:
            hg.dlt_from_corners(d, frame)
            return d
        except GeometryError:
            continue
    raise GeometryError("could not draw a non-degenerate perturbation")


def make_pair(overhead: ImageBuffer, trial: TrialSpec) -> Pair:
    """Satellite = overhead; BEV = overhead warped by a random ground-truth homography,
    then noised and occluded."""
    cfg = trial.config
    scene = trial.scene
    n = overhead.width
    if overhead.height != n:
        raise ContractError("overhead must be square")
    stride = n // cfg.grid[1]
    # distinct stream from the texture generator
    rng = np.random.default_rng([scene.seed, 1])
    d = random_perturbation(rng, trial.perturbation, cfg.frame)
    h_feat = hg.dlt_from_corners(d, cfg.frame)
    h_img = hg.feature_to_image(h_feat, stride)
    bev = warp_by_homography(overhead, hg.invert(h_img), (n, n)).data

    if scene.noise > 0:
        bev = bev + rng.normal(0.0, scene.noise, bev.shape)
    mask = np.zeros((n, n), dtype=bool)
    if scene.occlusion > 0:
        side = int(round(n * math.sqrt(scene.occlusion)))
        r0 = int(rng.integers(0, n - side + 1))
        c0 = int(rng.integers(0, n - side + 1))
        mask[r0:r0 + side, c0:c0 + side] = True
        bev = np.where(mask[..., None], 0.0, bev)

    meta = PatchMeta(trial.center_lat, trial.center_lon, trial.zoom, float(n))
    bev_img = ImageBuffer(bev)
    if trial.flip:
        # BEV handed over upside down: the true map gains a half turn
        bev_img = ImageBuffer(np.rot90(bev_img.data, 2, axes=(0, 1)).copy())
        half = hg.rotation_homography(180.0, ((n - 1) / 2.0, (n - 1) / 2.0))
        h_img = hg.compose(h_img, half)
        h_feat = hg.image_to_feature(h_img, stride)
        mask = np.rot90(mask, 2).copy()
    u_s, v_s, theta = heading(h_img, (n, n))
    lat, lon = patch_pixel_to_gps(meta, u_s, v_s)
    gt = GroundTruth(h_feat, h_img, meta, u_s, v_s, float(lat), float(lon), theta, mask)
    return Pair(bev_img, overhead, gt)


def corner_error(h_est_feat, h_gt_feat, frame) -> float:
    """Mean distance between estimated and true positions of the four frame corners."""
    a = hg.corners_from_homography(h_est_feat, frame)
    b = hg.corners_from_homography(h_gt_feat, frame)
    return float(np.linalg.norm(a - b, axis=1).mean())


@dataclass
class TrialResult:
    seed: int
    corner_errors: list
    final_error: float
    location_error_px: float
    record: Optional[EvalRecord]
    confidence: Optional[float] = None
    rotation: int = 0
    error: Optional[str] = None
    homography: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_trial(trial: TrialSpec, rotations: int = 1) -> TrialResult:
    overhead = make_overhead(trial.scene)
    pair = make_pair(overhead, trial)
    gt = pair.gt
    try:
        if rotations == 4:
            from .estimator import disambiguate_rotations

            res, _ = disambiguate_rotations(pair.bev, pair.sat, gt.meta, trial.config, gt=gt.h_feat)
        else:
            # ground truth in the turned frame is handled inside locate
            res = locate(pair.bev, pair.sat, gt.meta, trial.config, gt=gt.h_feat)
    except BevlocError as exc:
        return TrialResult(trial.scene.seed, [], math.inf, math.inf, None, error=str(exc))
    stride = pair.bev.width // trial.config.grid[1]
    final = corner_error(hg.image_to_feature(res.homography, stride), gt.h_feat, trial.config.frame)
    errs = [s.corner_error for s in res.trace]
    record = EvalRecord(res.lat, res.lon, res.theta, gt.lat, gt.lon, gt.theta, gt.meta.center_lat, gt.meta.zoom)
    loc_px = math.hypot(res.u_s - gt.u_s, res.v_s - gt.v_s)
    return TrialResult(trial.scene.seed, errs, final, loc_px, record, res.confidence, res.rotation,
                       homography=res.homography)


def make_suite(n: int, first_seed: int = 0, **kwargs) -> list:
    """``n`` trials with consecutive seeds; keyword arguments go to SceneSpec/TrialSpec."""
    scene_kw = {k: v for k, v in kwargs.items() if k in SCENE_KEYS}
    trial_kw = {k: v for k, v in kwargs.items() if k not in SCENE_KEYS}
    return [TrialSpec(scene=SceneSpec(seed=first_seed + i, **scene_kw), **trial_kw) for i in range(n)]


def suite_from_dict(doc: dict) -> tuple:
    """Trials and run options from a suite document.

    Top-level keys: ``trials`` (count), ``first_seed``, ``threshold``, ``rotations``,
    ``estimator`` (config mapping), scene/trial defaults, and optionally
    ``records``, a list of per-trial mappings (each may set ``seed`` and any
    scene/trial key) that replaces the consecutive-seed suite.
    Returns ``(suite, options)``.
    """
    from .estimator import estimator_config

    allowed = {"trials", "first_seed", "threshold", "rotations", "estimator", "records", *SCENE_KEYS, *TRIAL_KEYS}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise InputError(f"unknown suite keys {unknown}")
    cfg = estimator_config(doc.get("estimator") or {})
    defaults = {k: doc[k] for k in (*SCENE_KEYS, *TRIAL_KEYS) if k in doc}
    options = {"threshold": float(doc.get("threshold", 0.25)), "rotations": int(doc.get("rotations", 1))}
    if options["rotations"] not in (1, 4):
        raise ContractError("rotations must be 1 or 4")
    if "records" in doc:
        suite = []
        for i, rec in enumerate(doc["records"] or []):
            if not isinstance(rec, dict):
                raise InputError(f"suite record {i} is not a mapping")
            bad = sorted(set(rec) - {"seed", *SCENE_KEYS, *TRIAL_KEYS})
            if bad:
                raise InputError(f"suite record {i}: unknown keys {bad}")
            merged = {**defaults, **rec}
            seed = int(merged.pop("seed", i))
            scene = SceneSpec(seed=seed, **{k: merged[k] for k in SCENE_KEYS if k in merged})
            suite.append(TrialSpec(scene=scene, config=cfg, **{k: merged[k] for k in TRIAL_KEYS if k in merged}))
    else:
        n = int(doc.get("trials", 200))
        if n < 1:
            raise ContractError("trials must be >= 1")
        suite = make_suite(n, int(doc.get("first_seed", 0)), config=cfg, **defaults)
    return suite, options


def run_benchmark(suite, threshold: float = 0.25, rotations: int = 1, workers: int = 1) -> dict:
    """Run every trial and aggregate.

    Failed trials are recorded (``failures``) and count as not converged; the
    convergence curve averages per-step corner errors over successful trials.
    """
    suite = list(suite)
    if not suite:
        raise ContractError("benchmark suite is empty")
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run_trial, suite, [rotations] * len(suite)))
    else:
        results = [run_trial(t, rotations) for t in suite]

    ok = [r for r in results if r.ok]
    finals = np.array([r.final_error for r in results])
    report = {
        "trials": len(results),
        "failures": [{"seed": r.seed, "error": r.error} for r in results if not r.ok],
        "threshold_cells": threshold,
        "converged_fraction": float(np.mean(finals < threshold)),
        "final_error_mean": float(np.mean([r.final_error for r in ok])) if ok else math.nan,
        "final_error_median": float(np.median([r.final_error for r in ok])) if ok else math.nan,
        "final_errors": [float(x) for x in finals],
        "location_error_px": [float(r.location_error_px) for r in results],
        "rotations_deg": [90 * r.rotation for r in results],
        "per_trial": [
            {"seed": r.seed, "final_error": r.final_error, "corner_errors": r.corner_errors,
             "rotation_deg": 90 * r.rotation, "confidence": r.confidence,
             "homography": None if r.homography is None else [float(v) for v in r.homography.ravel()]}
            for r in results
        ],
    }
    curves = [r.corner_errors for r in ok if r.corner_errors and None not in r.corner_errors]
    if curves:
        report["convergence_curve"] = [float(x) for x in np.mean(np.array(curves), axis=0)]
    if ok:
        report["metrics"] = summarize([r.record for r in ok])
    return report
