"""Scene and camera generators with exactly known correspondences.

Used as oracles by the tests and by CLI smoke runs; every generator takes a
``numpy.random.Generator`` so results depend only on the seed.
"""
from __future__ import annotations
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union
import logging
import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .core import CameraModel, DepthMap, DisparityMap, DisplacementField, MatchSet

logger = logging.getLogger(__name__)


def random_camera(rng: np.random.Generator, width: int = 64, height: int = 64, focal=(50.0, 80.0),
                  max_angle_deg: float = 0.0, translation: float = 0.0) -> CameraModel:
    """Principal point at the image centre, a random rotation up to
    ``max_angle_deg`` and a translation of norm ``translation``."""
    f = rng.uniform(*focal)
    fy = f * rng.uniform(0.95, 1.05)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = Rotation.from_rotvec(axis * np.radians(rng.uniform(0.0, max_angle_deg))).as_matrix()
    t = rng.normal(size=3)
    T = translation * t / np.linalg.norm(t)
    return CameraModel.from_intrinsics(f, fy, (width - 1) / 2.0, (height - 1) / 2.0, R=R, T=T)


def random_camera_pair(rng: np.random.Generator, width: int = 64, height: int = 64,
                       max_angle_deg: float = 5.0, baseline=(0.2, 0.6)) -> Tuple[CameraModel, CameraModel]:
    cam1 = random_camera(rng, width, height)
    cam2 = random_camera(rng, width, height, max_angle_deg=max_angle_deg, translation=rng.uniform(*baseline))
    return cam1, cam2


def rectified_rig(focal: float = 100.0, baseline: float = 0.5, cx: float = 31.5,
                  cy: float = 31.5) -> Tuple[CameraModel, CameraModel]:
    """Left camera at the origin, right camera shifted by ``baseline`` along +x."""
    left = CameraModel.from_intrinsics(focal, focal, cx, cy)
    right = CameraModel.from_intrinsics(focal, focal, cx, cy, T=[-baseline, 0.0, 0.0])
    return left, right


def random_depth_map(rng: np.random.Generator, height: int = 64, width: int = 64, z_range=(2.0, 10.0),
                     smooth: float = 4.0) -> DepthMap:
    """Smooth positive depth: Gaussian-filtered noise rescaled into ``z_range``."""
    noise = ndimage.gaussian_filter(rng.normal(size=(height, width)), smooth, mode="reflect")
    lo, hi = noise.min(), noise.max()
    t = (noise - lo) / (hi - lo) if hi > lo else np.zeros_like(noise)
    return DepthMap(z_range[0] + t * (z_range[1] - z_range[0]))


@dataclass(frozen=True, eq=False)
class StereoScene:
    left: np.ndarray
    right: np.ndarray
    disparity: DisparityMap
    occluded: np.ndarray


def random_dot_stereogram(rng: np.random.Generator, size: int = 128, shift: int = 5, fg_shift: int = 20,
                          occlusion: float = 0.10) -> StereoScene:
    """Fronto-parallel background at disparity ``shift`` with a foreground band
    at ``fg_shift``. The band height is chosen so roughly ``occlusion`` of the
    left image is occluded or out of view."""
    h = w = size
    extra = max(0.0, occlusion * h * w - shift * h)
    rows = int(np.clip(round(extra / max(fg_shift - shift, 1)), 0, h))
    top = (h - rows) // 2
    a = fg_shift + (w - 2 * fg_shift) // 4
    b = w - (w - 2 * fg_shift) // 4
    bg_tex = rng.random((h, w + shift))
    fg_tex = rng.random((h, b - a))
    x = np.arange(w)
    left = bg_tex[:, :w].copy()
    right = bg_tex[:, x + shift].copy()
    d = np.full((h, w), float(shift))
    fg_rows = slice(top, top + rows)
    left[fg_rows, a:b] = fg_tex[fg_rows]
    right[fg_rows, a - fg_shift:b - fg_shift] = fg_tex[fg_rows]
    d[fg_rows, a:b] = fg_shift
    occluded = np.zeros((h, w), dtype=bool)
    occluded[:, :shift] = True
    covered = (x - shift >= a - fg_shift) & (x - shift < b - fg_shift) & ((x < a) | (x >= b))
    occluded[fg_rows] |= covered[None, :]
    return StereoScene(left, right, DisparityMap(d, ~occluded), occluded)


@dataclass(frozen=True, eq=False)
class OcclusionScene:
    reference: np.ndarray
    target: np.ndarray
    fwd: DisplacementField
    bwd: DisplacementField
    occluded: np.ndarray


def translated_square_scene(rng: np.random.Generator, size: int = 64, square: int = 16,
                            shift: Tuple[int, int] = (6, 4)) -> OcclusionScene:
    """Static textured background with a square translated by ``shift`` = (du, dv).

    Background pixels the square covers in the target view are occluded.
    """
    tu, tv = shift
    y0 = x0 = (size - square) // 2
    bg = rng.random((size, size))
    fg = rng.random((square, square))
    ref = bg.copy()
    ref[y0:y0 + square, x0:x0 + square] = fg
    tar = bg.copy()
    tar[y0 + tv:y0 + tv + square, x0 + tu:x0 + tu + square] = fg
    in_ref = np.zeros((size, size), dtype=bool)
    in_ref[y0:y0 + square, x0:x0 + square] = True
    in_tar = np.zeros((size, size), dtype=bool)
    in_tar[y0 + tv:y0 + tv + square, x0 + tu:x0 + tu + square] = True
    fwd = DisplacementField(np.where(in_ref, float(tu), 0.0), np.where(in_ref, float(tv), 0.0))
    bwd = DisplacementField(np.where(in_tar, float(-tu), 0.0), np.where(in_tar, float(-tv), 0.0))
    return OcclusionScene(ref, tar, fwd, bwd, in_tar & ~in_ref)


def epipolar_correspondences(rng: np.random.Generator, n: int = 200, outlier_ratio: float = 0.0,
                             width: int = 640, height: int = 480
                             ) -> Tuple[CameraModel, CameraModel, MatchSet, np.ndarray]:
    """Exact matches of random 3D points seen by two cameras; a fraction is
    replaced by uniform random target points. Returns the inlier mask too."""
    cam1 = CameraModel.from_intrinsics(500.0, 500.0, width / 2.0, height / 2.0)
    cam2 = random_camera(rng, width, height, focal=(450.0, 550.0), max_angle_deg=8.0, translation=1.0)
    rows: List[np.ndarray] = []
    while sum(len(r) for r in rows) < n:
        u1 = rng.uniform(0, width - 1, size=n)
        v1 = rng.uniform(0, height - 1, size=n)
        z = rng.uniform(4.0, 12.0, size=n)
        rays = np.linalg.inv(cam1.K) @ np.stack([u1, v1, np.ones(n)])
        X = cam1.R.T @ (rays * z - cam1.T[:, None])
        p = cam2.K @ (cam2.R @ X + cam2.T[:, None])
        front = p[2] > 1e-6
        u2 = np.where(front, p[0] / np.where(front, p[2], 1.0), -1.0)
        v2 = np.where(front, p[1] / np.where(front, p[2], 1.0), -1.0)
        ok = front & (u2 >= 0) & (u2 <= width - 1) & (v2 >= 0) & (v2 <= height - 1)
        rows.append(np.stack([u1[ok], v1[ok], u2[ok], v2[ok], np.ones(int(ok.sum()))], axis=-1))
    records = np.concatenate(rows)[:n]
    inliers = np.ones(n, dtype=bool)
    n_out = int(round(outlier_ratio * n))
    if n_out:
        idx = rng.choice(n, n_out, replace=False)
        records[idx, 2] = rng.uniform(0, width - 1, size=n_out)
        records[idx, 3] = rng.uniform(0, height - 1, size=n_out)
        inliers[idx] = False
    shape = (height, width)
    return cam1, cam2, MatchSet(records, shape, shape), inliers


def depth_pose_scene(rng: np.random.Generator, frames: int = 3, height: int = 32, width: int = 32
                     ) -> Tuple[List[CameraModel], List[DepthMap]]:
    """A short trajectory of nearby cameras, each with its own depth map."""
    base = random_camera(rng, width, height)
    cams = [base]
    for _ in range(frames - 1):
        step = random_camera(rng, width, height, max_angle_deg=3.0, translation=0.2)
        cams.append(CameraModel(base.K, step.R @ cams[-1].R, step.R @ cams[-1].T + step.T))
    depths = [random_depth_map(rng, height, width) for _ in range(frames)]
    return cams, depths


def write_depth_pose_tree(root: Union[str, Path], scenes: int = 1, frames: int = 3, seed: int = 0,
                          height: int = 32, width: int = 32) -> Path:
    """Lay out ``<root>/scene_<k>/cams.txt`` and ``depth_<i>.pfm`` files."""
    from .formats import write_cameras, write_pfm
    root = Path(root)
    rng = np.random.default_rng(seed)
    for k in range(scenes):
        scene = root / f"scene_{k:03d}"
        scene.mkdir(parents=True, exist_ok=True)
        cams, depths = depth_pose_scene(rng, frames, height, width)
        (scene / "cams.txt").write_text(write_cameras(cams), encoding="utf-8")
        for i, depth in enumerate(depths):
            (scene / f"depth_{i}.pfm").write_bytes(write_pfm(depth))
    return root
