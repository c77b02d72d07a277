"""Dense flow, disparity and depth metrics over jointly valid pixels.

Every dense metric takes an optional ``region`` mask (non-occluded areas,
foreground/background splits) that is intersected with validity.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union
import math
import numpy as np

from .core import DepthMap, DisparityMap, DisplacementField
from .errors import ArgumentError, EvaluationError, ValidationError

Dense = Union[DisplacementField, DisparityMap]

OUTLIER_PX = 3.0
OUTLIER_REL = 0.05


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    unit: str
    count: int

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "count", int(self.count))
        if self.count <= 0:
            raise ValidationError(f"metric {self.name} computed over no pixels")
        if not math.isfinite(self.value):
            raise ValidationError(f"metric {self.name} is not finite")


def _joint_mask(est, gt, region: Optional[np.ndarray]) -> np.ndarray:
    if est.shape != gt.shape:
        raise ArgumentError(f"estimate {est.shape} and ground truth {gt.shape} differ in size")
    mask = est.valid & gt.valid
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != gt.shape:
            raise ArgumentError(f"region mask {region.shape} does not match grid {gt.shape}")
        mask = mask & region
    if not mask.any():
        raise EvaluationError("no jointly valid pixels to evaluate")
    return mask


def _errors(est: Dense, gt: Dense, region: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel endpoint error and ground-truth magnitude on the evaluated pixels."""
    if type(est) is not type(gt):
        raise ArgumentError(f"cannot compare {type(est).__name__} with {type(gt).__name__}")
    mask = _joint_mask(est, gt, region)
    if isinstance(gt, DisparityMap):
        return np.abs(est.d[mask] - gt.d[mask]), np.abs(gt.d[mask])
    du = est.du[mask] - gt.du[mask]
    dv = est.dv[mask] - gt.dv[mask]
    return np.sqrt(du * du + dv * dv), np.sqrt(gt.du[mask] ** 2 + gt.dv[mask] ** 2)


def epe(est: Dense, gt: Dense, region: Optional[np.ndarray] = None) -> MetricReport:
    err, _ = _errors(est, gt, region)
    return MetricReport("epe", float(err.mean()), "px", err.size)


def avg_error(est: DisparityMap, gt: DisparityMap, region: Optional[np.ndarray] = None) -> MetricReport:
    """Mean absolute disparity error (EPE on disparity maps)."""
    err, _ = _errors(est, gt, region)
    return MetricReport("avg_error", float(err.mean()), "px", err.size)


def _check_tau(tau: float):
    if not (tau >= 0):
        raise ArgumentError(f"threshold must be >= 0, got {tau}")


def bad_tau(est: Dense, gt: Dense, tau: float, region: Optional[np.ndarray] = None) -> MetricReport:
    """Percentage of evaluated pixels with error > tau."""
    _check_tau(tau)
    err, _ = _errors(est, gt, region)
    return MetricReport(f"bad_{tau:g}", 100.0 * float((err > tau).sum()) / err.size, "%", err.size)


def pca(est: Dense, gt: Dense, tau: float, region: Optional[np.ndarray] = None) -> MetricReport:
    bad = bad_tau(est, gt, tau, region)
    return MetricReport(f"pca_{tau:g}", 100.0 - bad.value, "%", bad.count)


def d1_f1_all(est: Dense, gt: Dense, region: Optional[np.ndarray] = None) -> MetricReport:
    """Outlier rate: error > 3 px and > 5% of the ground-truth magnitude."""
    err, mag = _errors(est, gt, region)
    outlier = (err > OUTLIER_PX) & (err > OUTLIER_REL * mag)
    name = "d1_all" if isinstance(gt, DisparityMap) else "f1_all"
    return MetricReport(name, 100.0 * float(outlier.sum()) / err.size, "%", err.size)


def depth_metrics(est: DepthMap, gt: DepthMap, region: Optional[np.ndarray] = None) -> List[MetricReport]:
    mask = _joint_mask(est, gt, region)
    z_hat, z = est.z[mask], gt.z[mask]
    diff = z_hat - z
    n = z.size
    return [
        MetricReport("abs_rel", float(np.mean(np.abs(diff) / z)), "", n),
        MetricReport("sq_rel", float(np.mean(diff * diff / z)), "", n),
        MetricReport("rmse", float(np.sqrt(np.mean(diff * diff))), "scene", n),
        MetricReport("rmse_log", float(np.sqrt(np.mean((np.log(z_hat) - np.log(z)) ** 2))), "", n),
    ]


def flow_metrics(est: DisplacementField, gt: DisplacementField, taus=(1.0, 3.0, 5.0),
                 region: Optional[np.ndarray] = None) -> List[MetricReport]:
    return [epe(est, gt, region), *(bad_tau(est, gt, t, region) for t in taus), d1_f1_all(est, gt, region)]


def stereo_metrics(est: DisparityMap, gt: DisparityMap, taus=(1.0, 2.0, 3.0),
                   region: Optional[np.ndarray] = None) -> List[MetricReport]:
    return [avg_error(est, gt, region), *(bad_tau(est, gt, t, region) for t in taus), d1_f1_all(est, gt, region)]
