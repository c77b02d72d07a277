"""Fundamental matrices: ground truth from cameras, robust estimation from
matches (normalized eight-point inside RANSAC) and epipolar mAA scoring."""
from __future__ import annotations
from dataclasses import dataclass
from typing import Optional, Tuple
import logging
import math
import numpy as np

from .core import CameraModel, MatchSet, _frozen
from .errors import ArgumentError, EstimationError, EvaluationError, ValidationError
from .metrics import MetricReport

logger = logging.getLogger(__name__)

MIN_MATCHES = 8
RANK_TOL = 1e-8
MAA_THRESHOLDS = tuple(range(1, 11))


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """Rank-2 3x3 matrix with unit Frobenius norm; ``x2^T F x1 = 0`` for matches."""
    F: np.ndarray

    def __post_init__(self):
        F = np.array(self.F, dtype=np.float64)
        if F.shape != (3, 3) or not np.isfinite(F).all():
            raise ValidationError("fundamental matrix must be a finite 3x3 matrix")
        norm = np.linalg.norm(F)
        if norm == 0:
            raise ValidationError("fundamental matrix is zero")
        F = F / norm
        if np.linalg.svd(F, compute_uv=False)[-1] >= RANK_TOL:
            raise ValidationError("fundamental matrix must have rank 2")
        object.__setattr__(self, "F", _frozen(F))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "FundamentalMatrix":
        """Project onto rank 2 by zeroing the smallest singular value; the
        largest-magnitude entry is made positive."""
        M = np.asarray(M, dtype=np.float64)
        U, s, Vt = np.linalg.svd(M)
        s[2] = 0.0
        F = U @ np.diag(s) @ Vt
        F = F / np.linalg.norm(F)
        if F.flat[np.argmax(np.abs(F))] < 0:
            F = -F
        return cls(F)


def _skew(t: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])


def fundamental_from_cameras(cam1: CameraModel, cam2: CameraModel) -> FundamentalMatrix:
    """F = K2^-T [t]x M K1^-1 with M = R2 R1^T and t = T2 - M T1."""
    M = cam2.R @ cam1.R.T
    t = cam2.T - M @ cam1.T
    if np.linalg.norm(t) < 1e-12:
        raise ArgumentError("cameras share a centre; the epipolar geometry is undefined")
    F = np.linalg.inv(cam2.K).T @ _skew(t) @ M @ np.linalg.inv(cam1.K)
    return FundamentalMatrix.from_matrix(F)


def _homogeneous(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x, np.ones(len(x))])


def sampson_distance(F, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """First-order geometric error of each correspondence, in pixels."""
    F = F.F if isinstance(F, FundamentalMatrix) else np.asarray(F, dtype=np.float64)
    h1 = _homogeneous(np.asarray(x1, dtype=np.float64))
    h2 = _homogeneous(np.asarray(x2, dtype=np.float64))
    Fx1 = h1 @ F.T
    Ftx2 = h2 @ F
    err = np.einsum("ij,ij->i", h2, Fx1)
    denom = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    d2 = np.divide(err * err, denom, out=np.where(err == 0, 0.0, np.inf), where=denom > 0)
    return np.sqrt(d2)


def _normalization(x: np.ndarray) -> Optional[np.ndarray]:
    centroid = x.mean(axis=0)
    mean_dist = np.sqrt(((x - centroid) ** 2).sum(axis=1)).mean()
    if mean_dist < 1e-12:
        return None
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _collinear(h: np.ndarray) -> bool:
    return np.linalg.matrix_rank(h, tol=1e-9 * max(1.0, np.abs(h).max())) < 3


def eight_point(x1: np.ndarray, x2: np.ndarray) -> Optional[np.ndarray]:
    """Hartley-normalized linear estimate from >= 8 matches; None when degenerate."""
    T1, T2 = _normalization(x1), _normalization(x2)
    if T1 is None or T2 is None:
        return None
    n1 = _homogeneous(x1) @ T1.T
    n2 = _homogeneous(x2) @ T2.T
    if _collinear(n1) or _collinear(n2):
        return None
    A = np.column_stack([n2[:, 0] * n1[:, 0], n2[:, 0] * n1[:, 1], n2[:, 0],
                         n2[:, 1] * n1[:, 0], n2[:, 1] * n1[:, 1], n2[:, 1],
                         n1[:, 0], n1[:, 1], np.ones(len(n1))])
    _, s, Vt = np.linalg.svd(A)
    if s[7] < 1e-10 * s[0]:
        return None
    U, sf, Vtf = np.linalg.svd(Vt[-1].reshape(3, 3))
    sf[2] = 0.0
    F = T2.T @ (U @ np.diag(sf) @ Vtf) @ T1
    norm = np.linalg.norm(F)
    return F / norm if norm > 0 else None


def _trials_needed(inlier_ratio: float, confidence: float, sample: int = MIN_MATCHES) -> float:
    good = inlier_ratio ** sample
    if good >= 1.0:
        return 0.0
    if good <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - good)


def estimate_fundamental(matches: MatchSet, iters: int = 2000, inlier_tau: float = 1.0, seed: int = 0,
                         confidence: float = 0.999) -> Tuple[FundamentalMatrix, np.ndarray]:
    """RANSAC over minimal eight-point samples scored by Sampson distance,
    then a least-squares refit on the inliers.

    Stops once enough trials have been run for ``confidence`` at the current
    inlier ratio, or after ``iters`` trials. Degenerate samples are redrawn.
    """
    n = len(matches)
    if n < MIN_MATCHES:
        raise EstimationError(f"need at least {MIN_MATCHES} matches, got {n}")
    if iters < 1 or not (inlier_tau > 0) or not (0.0 < confidence < 1.0):
        raise ArgumentError("RANSAC needs iters >= 1, inlier_tau > 0 and 0 < confidence < 1")
    x1, x2 = matches.points1(), matches.points2()
    rng = np.random.default_rng(seed)
    best_F, best_mask, best_count = None, None, -1
    needed = math.inf
    trials = draws = 0
    while trials < min(iters, needed) and draws < 10 * iters:
        draws += 1
        idx = rng.choice(n, MIN_MATCHES, replace=False)
        F = eight_point(x1[idx], x2[idx])
        if F is None:
            continue
        trials += 1
        mask = sampson_distance(F, x1, x2) <= inlier_tau
        count = int(mask.sum())
        if count > best_count:
            best_F, best_mask, best_count = F, mask, count
            needed = _trials_needed(count / n, confidence)
    if best_F is None:
        raise EstimationError(f"all {draws} samples were degenerate")
    logger.debug("RANSAC: %d trials (%d draws), %d/%d inliers", trials, draws, best_count, n)
    refit = eight_point(x1[best_mask], x2[best_mask]) if best_count >= MIN_MATCHES else None
    F = FundamentalMatrix.from_matrix(refit if refit is not None else best_F)
    mask = sampson_distance(F, x1, x2) <= inlier_tau
    if mask.sum() < best_count:
        # the refit lost support; fall back to the minimal-sample model
        F = FundamentalMatrix.from_matrix(best_F)
        mask = sampson_distance(F, x1, x2) <= inlier_tau
    return F, mask


def maa_epipolar(gt_matches: MatchSet, F: FundamentalMatrix, thresholds=MAA_THRESHOLDS) -> MetricReport:
    """Mean over thresholds of the percentage of matches with Sampson distance below it."""
    if len(gt_matches) == 0:
        raise EvaluationError("no ground-truth correspondences to score")
    d = sampson_distance(F, gt_matches.points1(), gt_matches.points2())
    accs = [float((d < t).mean()) for t in thresholds]
    return MetricReport(f"maa@{max(thresholds):g}", 100.0 * float(np.mean(accs)), "%", len(gt_matches))
