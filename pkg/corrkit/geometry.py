"""Conversions between displacement, disparity and depth.

A reference pixel (u1, v1) at depth Z lands at (u2, v2) in the target view via

    s2 [u2 v2 1]^T = H [u1 v1 1]^T Z + B

with H, B from ``compose_camera_pair``. Solving either image row for Z gives
the per-axis depths Zu / Zv; stacking both rows gives a 2x1 least-squares system.
"""
from __future__ import annotations
from typing import Tuple, Union
import logging
import numpy as np

from .core import (CameraModel, DepthMap, DepthVariant, DisparityMap, DisplacementField, LsmSystem,
                   compose_camera_pair, project_pixels)
from .errors import ArgumentError

logger = logging.getLogger(__name__)

EPS_DEN = 1e-6
EPS_S = 1e-9


def flow_to_disparity(field: DisplacementField, v_tol: float = 0.0) -> DisparityMap:
    """d = -du where |dv| <= v_tol and d >= 0; everything else is invalid."""
    if v_tol < 0:
        raise ArgumentError(f"v_tol must be >= 0, got {v_tol}")
    d = -field.du + 0.0
    ok = field.valid & (np.abs(field.dv) <= v_tol) & (d >= 0)
    return DisparityMap(np.where(ok, d, np.nan), ok)


def disparity_to_flow(disp: DisparityMap) -> DisplacementField:
    du = np.where(disp.valid, -disp.d, np.nan)
    dv = np.where(disp.valid, 0.0, np.nan)
    return DisplacementField(du, dv, disp.valid)


def _pixel_grid(shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    return u, v


def project_depth_to_flow(depth: DepthMap, cam_ref: CameraModel, cam_tar: CameraModel,
                          eps_s: float = EPS_S) -> DisplacementField:
    """Back-project z-depth with the reference camera and reproject into the target.

    Pixels with invalid depth or target scale ``s2 <= eps_s`` are invalid.
    """
    warp = compose_camera_pair(cam_ref, cam_tar)
    u1, v1 = _pixel_grid(depth.shape)
    z = np.where(depth.valid, depth.z, 1.0)
    proj = project_pixels(warp, u1, v1, z, eps_s=eps_s)
    ok = depth.valid & proj.in_front & np.isfinite(proj.u2) & np.isfinite(proj.v2)
    du = np.where(ok, proj.u2 - u1, np.nan)
    dv = np.where(ok, proj.v2 - v1, np.nan)
    return DisplacementField(du, dv, ok)


def lsm_system(field: DisplacementField, cam_ref: CameraModel, cam_tar: CameraModel) -> LsmSystem:
    """Rows a_i Z = b_i from the u and v equations of the pinhole warp."""
    warp = compose_camera_pair(cam_ref, cam_tar)
    H, B = warp.H, warp.B
    u1, v1 = _pixel_grid(field.shape)
    u2, v2 = field.target_coords()
    h1 = H[0, 0] * u1 + H[0, 1] * v1 + H[0, 2]
    h2 = H[1, 0] * u1 + H[1, 1] * v1 + H[1, 2]
    h3 = H[2, 0] * u1 + H[2, 1] * v1 + H[2, 2]
    A = np.stack([h1 - h3 * u2, h2 - h3 * v2], axis=-1)
    b = np.stack([B[2] * u2 - B[0], B[2] * v2 - B[1]], axis=-1)
    return LsmSystem(A=A, b=b)


def flow_to_depth(field: DisplacementField, cam_ref: CameraModel, cam_tar: CameraModel,
                  mode: Union[DepthVariant, str] = DepthVariant.ZLSM, eps_den: float = EPS_DEN) -> DepthMap:
    """Per-pixel depth from displacement; the depth validity check marks a pixel
    invalid when its denominator is below ``eps_den`` or the depth is not positive."""
    mode = DepthVariant(mode)
    system = lsm_system(field, cam_ref, cam_tar)
    with np.errstate(divide="ignore", invalid="ignore"):
        if mode == DepthVariant.ZU or mode == DepthVariant.ZV:
            i = 0 if mode == DepthVariant.ZU else 1
            a, b = system.A[..., i], system.b[..., i]
            ok = np.abs(a) >= eps_den
            z = np.where(ok, b / np.where(ok, a, 1.0), np.nan)
        elif mode == DepthVariant.ZLSM:
            z, ok = system.solve(eps_den)
        else:
            raise ArgumentError(f"unsupported depth mode {mode.value!r}")
    ok = ok & field.valid & np.isfinite(z) & (z > 0)
    logger.debug("flow_to_depth(%s): %.1f%% valid", mode.value, 100.0 * ok.mean())
    return DepthMap(np.where(ok, z, np.nan), ok, mode)
