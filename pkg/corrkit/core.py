"""Shared domain types for dense correspondence.

Pixel convention: (u, v) = (column, row), origin at the top-left pixel centre,
u rightward, v downward. Arrays are indexed ``[v, u]``.

Extrinsics are world-to-camera: ``x_cam = R @ x_world + T``.

Invalid pixels hold NaN in float storage; the boolean ``valid`` mask is
authoritative. All types are immutable: arrays are copied on construction and
marked read-only.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple
import numpy as np

from .errors import ValidationError

ORTHO_TOL = 1e-9
INVALID = None


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _grid_mask(valid, shape: Tuple[int, int]) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(valid, dtype=bool)
    if m.shape != shape:
        raise ValidationError(f"mask shape {m.shape} does not match grid {shape}")
    return m


def _check_grid(name: str, a: np.ndarray):
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValidationError(f"{name} must be a non-empty 2D grid, got shape {a.shape}")


class DepthVariant(str, Enum):
    ZU = "Zu"
    ZV = "Zv"
    ZLSM = "Zlsm"
    SOURCE = "source"


@dataclass(frozen=True, eq=False)
class DisplacementField:
    du: np.ndarray
    dv: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        du = np.array(self.du, dtype=np.float64)
        dv = np.array(self.dv, dtype=np.float64)
        _check_grid("du", du)
        if dv.shape != du.shape:
            raise ValidationError(f"du {du.shape} and dv {dv.shape} differ in shape")
        valid = _grid_mask(self.valid, du.shape)
        if not (np.isfinite(du[valid]).all() and np.isfinite(dv[valid]).all()):
            raise ValidationError("non-finite displacement at a valid pixel")
        du[~valid] = np.nan
        dv[~valid] = np.nan
        object.__setattr__(self, "du", _frozen(du))
        object.__setattr__(self, "dv", _frozen(dv))
        object.__setattr__(self, "valid", _frozen(valid, dtype=bool))

    @property
    def height(self) -> int:
        return self.du.shape[0]

    @property
    def width(self) -> int:
        return self.du.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.du.shape

    def target_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        v1, u1 = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return u1 + self.du, v1 + self.dv

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.du, self.dv)

    def stacked(self) -> np.ndarray:
        return np.stack([self.du, self.dv], axis=-1)

    def valid_ratio(self) -> float:
        return float(self.valid.mean())


@dataclass(frozen=True, eq=False)
class DisparityMap:
    d: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.array(self.d, dtype=np.float64)
        _check_grid("d", d)
        valid = _grid_mask(self.valid, d.shape)
        dv = d[valid]
        if not np.isfinite(dv).all():
            raise ValidationError("non-finite disparity at a valid pixel")
        if (dv < 0).any():
            raise ValidationError("negative disparity at a valid pixel")
        d[~valid] = np.nan
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "valid", _frozen(valid, dtype=bool))

    @property
    def height(self) -> int:
        return self.d.shape[0]

    @property
    def width(self) -> int:
        return self.d.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.d.shape

    def valid_ratio(self) -> float:
        return float(self.valid.mean())


@dataclass(frozen=True, eq=False)
class DepthMap:
    z: np.ndarray
    valid: Optional[np.ndarray] = None
    variant: DepthVariant = DepthVariant.SOURCE

    def __post_init__(self):
        z = np.array(self.z, dtype=np.float64)
        _check_grid("z", z)
        valid = _grid_mask(self.valid, z.shape)
        zv = z[valid]
        if not np.isfinite(zv).all():
            raise ValidationError("non-finite depth at a valid pixel")
        if (zv <= 0).any():
            raise ValidationError("non-positive depth at a valid pixel")
        z[~valid] = np.nan
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "valid", _frozen(valid, dtype=bool))
        object.__setattr__(self, "variant", DepthVariant(self.variant))

    @property
    def height(self) -> int:
        return self.z.shape[0]

    @property
    def width(self) -> int:
        return self.z.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.z.shape

    def valid_ratio(self) -> float:
        return float(self.valid.mean())


def check_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> Optional[str]:
    """Return a reason string when R is not a proper rotation within tol."""
    if R.shape != (3, 3) or not np.isfinite(R).all():
        return "rotation must be a finite 3x3 matrix"
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        return "rotation is not orthonormal"
    if abs(np.linalg.det(R) - 1.0) > tol:
        return "rotation determinant is not +1"
    return None


@dataclass(frozen=True, eq=False)
class CameraModel:
    K: np.ndarray
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    T: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64)
        R = np.array(self.R, dtype=np.float64)
        T = np.array(self.T, dtype=np.float64).reshape(-1)
        if K.shape != (3, 3) or not np.isfinite(K).all():
            raise ValidationError("intrinsics must be a finite 3x3 matrix")
        if not np.array_equal(K[2], [0.0, 0.0, 1.0]) or K[1, 0] != 0.0:
            raise ValidationError("intrinsics must be upper triangular with K[2] = (0, 0, 1)")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValidationError("focal lengths must be positive")
        reason = check_rotation(R)
        if reason:
            raise ValidationError(reason)
        if T.shape != (3,) or not np.isfinite(T).all():
            raise ValidationError("translation must be a finite 3-vector")
        object.__setattr__(self, "K", _frozen(K))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "T", _frozen(T))

    @classmethod
    def from_intrinsics(cls, fx: float, fy: float, cx: float, cy: float, skew: float = 0.0,
                        R=None, T=None) -> "CameraModel":
        K = [[fx, skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]]
        return cls(K=K, R=np.eye(3) if R is None else R, T=np.zeros(3) if T is None else T)

    @property
    def fx(self) -> float:
        return float(self.K[0, 0])

    @property
    def fy(self) -> float:
        return float(self.K[1, 1])

    @property
    def cx(self) -> float:
        return float(self.K[0, 2])

    @property
    def cy(self) -> float:
        return float(self.K[1, 2])

    @property
    def skew(self) -> float:
        return float(self.K[0, 1])

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.T

    @property
    def optical_axis(self) -> np.ndarray:
        return self.R[2].copy()


@dataclass(frozen=True, eq=False)
class PoseWarp:
    """Reference pixel with depth Z maps to ``s2 [u2 v2 1]^T = H [u1 v1 1]^T Z + B``."""
    H: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H", _frozen(np.asarray(self.H, dtype=np.float64).reshape(3, 3)))
        object.__setattr__(self, "B", _frozen(np.asarray(self.B, dtype=np.float64).reshape(3)))


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    u2: np.ndarray
    v2: np.ndarray
    s2: np.ndarray
    in_front: np.ndarray


@dataclass(frozen=True, eq=False)
class LsmSystem:
    """Per-pixel 2x1 design ``A`` and right-hand side ``b`` with ``A z = b``."""
    A: np.ndarray
    b: np.ndarray

    def normal(self) -> np.ndarray:
        return (self.A ** 2).sum(axis=-1)

    def solve(self, eps_den: float = 1e-6) -> Tuple[np.ndarray, np.ndarray]:
        ata = self.normal()
        ok = ata >= eps_den
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(ok, (self.A * self.b).sum(axis=-1) / np.where(ok, ata, 1.0), np.nan)
        return z, ok

    def residual(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return ((self.A * z[..., None] - self.b) ** 2).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64)
        _check_grid("c", c)
        if not np.isfinite(c).all() or c.min() < 0.0 or c.max() > 1.0:
            raise ValidationError("confidence must lie in [0, 1]")
        object.__setattr__(self, "c", _frozen(c))

    @property
    def height(self) -> int:
        return self.c.shape[0]

    @property
    def width(self) -> int:
        return self.c.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.c.shape


@dataclass(frozen=True, eq=False)
class MatchSet:
    """Rows of (u1, v1, u2, v2, confidence) in pixels.

    Image shapes are (height, width); when given, coordinates must fall inside
    ``[0, width-1] x [0, height-1]``.
    """
    records: np.ndarray
    ref_shape: Optional[Tuple[int, int]] = None
    tar_shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        r = np.array(self.records, dtype=np.float64).reshape(-1, 5)
        if not np.isfinite(r).all():
            raise ValidationError("match records must be finite")
        if len(r) and (r[:, 4].min() < 0.0 or r[:, 4].max() > 1.0):
            raise ValidationError("match confidence must lie in [0, 1]")
        for shape, cols, label in ((self.ref_shape, (0, 1), "reference"), (self.tar_shape, (2, 3), "target")):
            if shape is None or not len(r):
                continue
            h, w = shape
            u, v = r[:, cols[0]], r[:, cols[1]]
            if u.min() < 0 or v.min() < 0 or u.max() > w - 1 or v.max() > h - 1:
                raise ValidationError(f"match outside {label} image bounds")
        object.__setattr__(self, "records", _frozen(r))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def u1(self) -> np.ndarray:
        return self.records[:, 0]

    @property
    def v1(self) -> np.ndarray:
        return self.records[:, 1]

    @property
    def u2(self) -> np.ndarray:
        return self.records[:, 2]

    @property
    def v2(self) -> np.ndarray:
        return self.records[:, 3]

    @property
    def confidence(self) -> np.ndarray:
        return self.records[:, 4]

    def points1(self) -> np.ndarray:
        return self.records[:, 0:2]

    def points2(self) -> np.ndarray:
        return self.records[:, 2:4]

    def subset(self, mask) -> "MatchSet":
        return MatchSet(self.records[np.asarray(mask, dtype=bool)], self.ref_shape, self.tar_shape)


def make_displacement_field(width: int, height: int, fill: Optional[Sequence[float]] = (0.0, 0.0)) -> DisplacementField:
    """Constant field; ``fill=INVALID`` yields an all-invalid field."""
    if int(width) < 1 or int(height) < 1:
        raise ValidationError(f"field dimensions must be >= 1, got {width}x{height}")
    shape = (int(height), int(width))
    if fill is INVALID:
        nan = np.full(shape, np.nan)
        return DisplacementField(nan, nan, np.zeros(shape, dtype=bool))
    du, dv = (float(x) for x in fill)
    return DisplacementField(np.full(shape, du), np.full(shape, dv))


def compose_camera_pair(cam1: CameraModel, cam2: CameraModel) -> PoseWarp:
    """H = K2 R2 R1^-1 K1^-1, B = -K2 R2 R1^-1 T1 + K2 T2."""
    for cam in (cam1, cam2):
        reason = check_rotation(np.asarray(cam.R))
        if reason:
            raise ValidationError(reason)
    M = cam2.R @ cam1.R.T
    H = cam2.K @ M @ np.linalg.inv(cam1.K)
    B = cam2.K @ (cam2.T - M @ cam1.T)
    return PoseWarp(H=H, B=B)


def compose_warps(w12: PoseWarp, w23: PoseWarp) -> PoseWarp:
    """Warp 1->3 from 1->2 and 2->3: H13 = H23 H12, B13 = H23 B12 + B23."""
    return PoseWarp(H=w23.H @ w12.H, B=w23.H @ w12.B + w23.B)


def project_pixels(warp: PoseWarp, u, v, z, eps_s: float = 1e-9) -> ProjectionResult:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    H, B = warp.H, warp.B
    p = [(H[i, 0] * u + H[i, 1] * v + H[i, 2]) * z + B[i] for i in range(3)]
    s2 = p[2]
    nonzero = s2 != 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u2 = np.where(nonzero, p[0] / np.where(nonzero, s2, 1.0), np.nan)
        v2 = np.where(nonzero, p[1] / np.where(nonzero, s2, 1.0), np.nan)
    in_front = np.isfinite(s2) & (s2 > eps_s)
    return ProjectionResult(u2=u2, v2=v2, s2=s2, in_front=in_front)
