"""Forward-backward cycle consistency, sparse match extraction and flow warping."""
from __future__ import annotations
from typing import Optional, Tuple
import logging
import numpy as np

from .core import ConfidenceMap, DisplacementField, MatchSet
from .errors import ArgumentError

logger = logging.getLogger(__name__)

DEFAULT_TAU_C = 1.0


def bilinear_sample(values: np.ndarray, u, v, valid: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Sample a (H, W) or (H, W, C) grid at fractional (u, v).

    Returns (samples, ok). A sample is not ok when it falls outside
    ``[0, W-1] x [0, H-1]`` or when any neighbour with non-zero weight is invalid.
    """
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    inside = np.isfinite(u) & np.isfinite(v) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    u0 = np.clip(np.floor(uc), 0, max(w - 2, 0)).astype(np.int64)
    v0 = np.clip(np.floor(vc), 0, max(h - 2, 0)).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    a = uc - u0
    b = vc - v0
    corners = ((v0, u0, (1 - a) * (1 - b)), (v0, u1, a * (1 - b)), (v1, u0, (1 - a) * b), (v1, u1, a * b))
    ok = inside.copy()
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        for vi, ui, wt in corners:
            ok &= ~((wt > 0) & ~valid[vi, ui])
    clean = np.where(np.isfinite(values), values, 0.0)
    out = None
    for vi, ui, wt in corners:
        term = clean[vi, ui] * (wt[..., None] if values.ndim == 3 else wt)
        out = term if out is None else out + term
    mask = ok[..., None] if values.ndim == 3 else ok
    return np.where(mask, out, np.nan), ok


def cycle_consistency(fwd: DisplacementField, bwd: DisplacementField, tau_c: float = DEFAULT_TAU_C,
                      relative: float = 0.0) -> ConfidenceMap:
    """Confidence 1 where p + fwd(p) lands inside the target grid and
    ||fwd(p) + bwd(p + fwd(p))|| <= tau_c + relative * (||fwd|| + ||bwd_sampled||)."""
    if not (tau_c >= 0):
        raise ArgumentError(f"tau_c must be >= 0, got {tau_c}")
    if not (relative >= 0):
        raise ArgumentError(f"relative tolerance must be >= 0, got {relative}")
    v, u = np.mgrid[0:fwd.height, 0:fwd.width].astype(np.float64)
    u2 = np.where(fwd.valid, u + fwd.du, np.nan)
    v2 = np.where(fwd.valid, v + fwd.dv, np.nan)
    back, ok = bilinear_sample(bwd.stacked(), u2, v2, valid=bwd.valid)
    ok &= fwd.valid
    fu = np.where(ok, fwd.du, 0.0)
    fv = np.where(ok, fwd.dv, 0.0)
    bu = np.where(ok, back[..., 0], 0.0)
    bv = np.where(ok, back[..., 1], 0.0)
    residual = np.hypot(fu + bu, fv + bv)
    limit = tau_c + relative * (np.hypot(fu, fv) + np.hypot(bu, bv))
    conf = ok & (residual <= limit)
    logger.debug("cycle consistency: %d/%d pixels confident", int(conf.sum()), conf.size)
    return ConfidenceMap(conf.astype(np.float64))


def extract_matches(flow: DisplacementField, conf: ConfidenceMap, stride: int = 1,
                    tar_shape: Optional[Tuple[int, int]] = None) -> MatchSet:
    """One (u1, v1, u2, v2, c) record per confident pixel on the stride grid, row-major."""
    if int(stride) < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    if conf.shape != flow.shape:
        raise ArgumentError(f"confidence {conf.shape} does not match flow {flow.shape}")
    stride = int(stride)
    tar_shape = flow.shape if tar_shape is None else tuple(tar_shape)
    v, u = np.mgrid[0:flow.height:stride, 0:flow.width:stride]
    du = flow.du[::stride, ::stride]
    dv = flow.dv[::stride, ::stride]
    c = conf.c[::stride, ::stride]
    u2 = u + np.where(flow.valid[::stride, ::stride], du, -np.inf)
    v2 = v + np.where(flow.valid[::stride, ::stride], dv, -np.inf)
    keep = (c > 0) & (u2 >= 0) & (v2 >= 0) & (u2 <= tar_shape[1] - 1) & (v2 <= tar_shape[0] - 1)
    records = np.stack([u[keep], v[keep], u2[keep], v2[keep], c[keep]], axis=-1)
    return MatchSet(records, ref_shape=flow.shape, tar_shape=tar_shape)


def warp_by_flow(target_image, flow: DisplacementField) -> Tuple[np.ndarray, np.ndarray]:
    """Backward-warp the target image onto the reference grid; NaN where the
    flow is invalid or lands outside the image."""
    img = np.asarray(target_image, dtype=np.float64)
    v, u = np.mgrid[0:flow.height, 0:flow.width].astype(np.float64)
    u2 = np.where(flow.valid, u + flow.du, np.nan)
    v2 = np.where(flow.valid, v + flow.dv, np.nan)
    return bilinear_sample(img, u2, v2)
