"""Stereo-pair augmentations that move displacement mass off the horizontal axis.

Vertical jitter shifts the target crop window so rectified pairs gain a
vertical component; quarter-turn rotation swaps the roles of the two axes.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Optional, Tuple
import math
import numpy as np
from scipy import ndimage

from .core import DisplacementField
from .errors import ArgumentError, ValidationError

Image = Optional[np.ndarray]
Sample = Tuple[Image, Image, DisplacementField]


@dataclass(frozen=True)
class AugmentSpec:
    vertical_jitter_dy: float = 0.0
    rotate_quarter_turns: int = 0
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.vertical_jitter_dy):
            raise ValidationError("vertical jitter must be finite")
        if self.rotate_quarter_turns not in (0, 1, 2, 3):
            raise ValidationError(f"quarter turns must be 0..3, got {self.rotate_quarter_turns}")

    @classmethod
    def sample(cls, seed: int, max_dy: int = 0, rotate: bool = False) -> "AugmentSpec":
        """Integer jitter in [-max_dy, max_dy] and, optionally, a random quarter turn."""
        rng = np.random.default_rng(seed)
        dy = int(rng.integers(-max_dy, max_dy + 1)) if max_dy > 0 else 0
        turns = int(rng.integers(0, 4)) if rotate else 0
        return cls(float(dy), turns, seed)


def _shift_rows(img: np.ndarray, start: float, count: int) -> np.ndarray:
    if float(start).is_integer():
        s = int(start)
        return np.array(img[s:s + count])
    flat = img.reshape(img.shape[0], img.shape[1], -1).astype(np.float64)
    vv, uu = np.meshgrid(start + np.arange(count, dtype=np.float64),
                         np.arange(img.shape[1], dtype=np.float64), indexing="ij")
    planes = [ndimage.map_coordinates(flat[..., c], [vv, uu], order=1, mode="nearest")
              for c in range(flat.shape[2])]
    return np.stack(planes, axis=-1).reshape((count,) + img.shape[1:])


def augment_vertical_jitter(left: Image, right: Image, flow_gt: DisplacementField, dy: float,
                            margin: Optional[int] = None) -> Sample:
    """Crop rows [m, H-m) of the reference and rows shifted by ``dy`` of the target.

    Target coordinates move up by ``dy`` inside the shifted window, so dv' = dv - dy.
    """
    if not math.isfinite(dy):
        raise ArgumentError("dy must be finite")
    m = int(math.ceil(abs(dy))) if margin is None else int(margin)
    if abs(dy) > m:
        raise ArgumentError(f"|dy| = {abs(dy)} exceeds crop margin {m}")
    h = flow_gt.height
    if 2 * m >= h:
        raise ArgumentError(f"crop margin {m} leaves no rows of {h}")
    rows = slice(m, h - m)
    count = h - 2 * m
    flow = DisplacementField(flow_gt.du[rows], flow_gt.dv[rows] - dy, flow_gt.valid[rows])
    new_left = None if left is None else np.array(left[rows])
    new_right = None if right is None else _shift_rows(np.asarray(right), m + dy, count)
    return new_left, new_right, flow


def _rot_cw(a: np.ndarray) -> np.ndarray:
    return np.rot90(a, k=-1, axes=(0, 1))


def augment_rotate_quarter(left: Image, right: Image, flow_gt: DisplacementField, turns: int) -> Sample:
    """Rotate the pair clockwise by 90 deg per turn.

    Per turn, grid (u, v) -> (H-1-v, u) and vector (du, dv) -> (-dv, du).
    """
    if turns not in (0, 1, 2, 3):
        raise ArgumentError(f"quarter turns must be 0..3, got {turns}")
    du, dv, valid = flow_gt.du, flow_gt.dv, flow_gt.valid
    for _ in range(turns):
        du, dv = _rot_cw(-dv), _rot_cw(du)
        valid = _rot_cw(valid)
        left = None if left is None else _rot_cw(left)
        right = None if right is None else _rot_cw(right)
    flow = DisplacementField(du, dv, valid) if turns else flow_gt
    copy = lambda img: None if img is None else np.ascontiguousarray(img)
    return copy(left), copy(right), flow


def apply_augment(spec: AugmentSpec, left: Image, right: Image, flow_gt: DisplacementField,
                  margin: Optional[int] = None) -> Sample:
    """Jitter, then rotate. A fixed ``margin`` crops even when dy is 0 so output sizes agree."""
    if spec.vertical_jitter_dy != 0.0 or margin is not None:
        left, right, flow_gt = augment_vertical_jitter(left, right, flow_gt, spec.vertical_jitter_dy, margin)
    return augment_rotate_quarter(left, right, flow_gt, spec.rotate_quarter_turns)
