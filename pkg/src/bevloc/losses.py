"""Training objective terms and evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .georef import gps_to_global, ground_resolution


@dataclass(frozen=True)
class LossWeights:
    dis: float = 0.1
    ori: float = 10.0
    info: float = 1.0
    tau: float = 4.0

    def __post_init__(self):
        if min(self.dis, self.ori, self.info) < 0:
            raise ContractError("loss weights must be non-negative")
        if not self.tau > 0:
            raise ContractError("temperature must be positive")


def loss_dis(pred, gt) -> float:
    """Squared pixel distance between predicted and true patch locations."""
    du = pred[0] - gt[0]
    dv = pred[1] - gt[1]
    return float(du * du + dv * dv)


def angle_diff(a: float, b: float) -> float:
    """``a - b`` wrapped into (-180, 180]."""
    d = (a - b) % 360.0
    return d - 360.0 if d > 180.0 else d


def loss_ori(theta: float, theta_gt: float) -> float:
    return abs(angle_diff(theta, theta_gt))


def loss_info(vol: np.ndarray, gt_cell, tau: float = 4.0) -> float:
    """Contrastive loss of the center BEV cell against the true satellite cell."""
    h, w, h2, w2 = vol.shape
    k, l = gt_cell
    if not (0 <= k < h2 and 0 <= l < w2):
        raise ContractError(f"ground-truth cell {gt_cell} outside the {h2}x{w2} map")
    z = vol[h // 2, w // 2] / tau
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()) - z[k, l])


def hybrid_loss(l_dis: float, l_ori: float, l_info: float, weights: LossWeights = LossWeights()) -> float:
    return weights.dis * l_dis + weights.ori * l_ori + weights.info * l_info


# ---------------------------------------------------------------------------
# evaluation


def enu_offset_m(pred, gt, lat_ref: float, zoom: int = 20):
    """East/north offset in meters of ``pred`` from ``gt`` (both ``(lat, lon)``),
    in the local Web Mercator metric at ``lat_ref``."""
    px, py = gps_to_global(pred[0], pred[1], zoom)
    gx, gy = gps_to_global(gt[0], gt[1], zoom)
    res = ground_resolution(lat_ref, zoom)
    return (px - gx) * res, -(py - gy) * res


def localization_error_m(pred, gt, lat_ref: float, zoom: int = 20) -> float:
    east, north = enu_offset_m(pred, gt, lat_ref, zoom)
    return math.hypot(east, north)


def lateral_longitudinal(err_east: float, err_north: float, heading_deg: float):
    """Split an error vector into (lateral, longitudinal) magnitudes w.r.t. a heading
    given in degrees clockwise from north."""
    t = math.radians(heading_deg)
    along = err_east * math.sin(t) + err_north * math.cos(t)
    across = err_east * math.cos(t) - err_north * math.sin(t)
    return abs(across), abs(along)


@dataclass(frozen=True)
class EvalRecord:
    pred_lat: float
    pred_lon: float
    pred_theta: float
    gt_lat: float
    gt_lon: float
    gt_theta: float
    lat_ref: float
    zoom: int = 20

    @property
    def errors(self):
        """(distance m, lateral m, longitudinal m, orientation deg)."""
        east, north = enu_offset_m((self.pred_lat, self.pred_lon), (self.gt_lat, self.gt_lon),
                                   self.lat_ref, self.zoom)
        lat_e, lon_e = lateral_longitudinal(east, north, self.gt_theta)
        return math.hypot(east, north), lat_e, lon_e, loss_ori(self.pred_theta, self.gt_theta)


def summarize(records, distance_thresholds=(1.0, 5.0), angle_thresholds=(1.0, 5.0)) -> dict:
    """Mean/median errors and recall percentages (share of records strictly below a threshold).

    The median of an even-sized sample is the midpoint of the two central values.
    """
    records = list(records)
    if not records:
        raise ContractError("cannot summarize an empty record list")
    err = np.array([r.errors for r in records], dtype=np.float64)
    dist, lat_e, lon_e, ori = err.T

    def recall(x, t):
        return float(100.0 * np.mean(x < t))

    report = {
        "count": len(records),
        "location_mean_m": float(dist.mean()),
        "location_median_m": float(np.median(dist)),
    }
    for t in distance_thresholds:
        report[f"lateral_recall_{t:g}m"] = recall(lat_e, t)
    for t in distance_thresholds:
        report[f"longitudinal_recall_{t:g}m"] = recall(lon_e, t)
    report["orientation_mean_deg"] = float(ori.mean())
    report["orientation_median_deg"] = float(np.median(ori))
    for t in angle_thresholds:
        report[f"orientation_recall_{t:g}deg"] = recall(ori, t)
    return report
