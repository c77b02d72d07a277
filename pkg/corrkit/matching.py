"""Cost-volume matching: descriptors, cosine score volumes, argmax regression
and volume interpolation."""
from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple, Union
import logging
import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import softmax

from .core import DisparityMap, DisplacementField, _frozen
from .errors import ArgumentError, ValidationError

logger = logging.getLogger(__name__)

STRIDES = (1, 2, 4, 8, 16)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """C-vectors on a grid at scale ``1/stride`` of the image."""
    data: np.ndarray
    stride: int = 1

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[..., None]
        if a.ndim != 3 or min(a.shape) < 1:
            raise ValidationError(f"feature map must be (H, W, C), got {a.shape}")
        if not np.isfinite(a).all():
            raise ValidationError("feature map entries must be finite")
        if int(self.stride) not in STRIDES:
            raise ValidationError(f"stride must be one of {STRIDES}, got {self.stride}")
        object.__setattr__(self, "data", _frozen(a))
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def scale(self) -> float:
        return 1.0 / self.stride

    def matches_image(self, image_shape: Tuple[int, int]) -> bool:
        h, w = image_shape
        return h % self.stride == 0 and w % self.stride == 0 and (h // self.stride, w // self.stride) == self.data.shape[:2]


class ProposalKind(str, Enum):
    DISPARITY = "disparity_range"
    FULL_2D = "full_2d"
    WINDOW = "window"


def _axis(values) -> np.ndarray:
    a = np.array(values, dtype=np.int64).reshape(-1)
    if a.size == 0:
        raise ValidationError("proposal axis is empty")
    if a.size > 1:
        step = np.diff(a)
        if not (np.all(step == 1) or np.all(step == -1)):
            raise ValidationError("proposal axis must be a contiguous integer run")
    return _frozen(a, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class ProposalSet:
    """Rectangular grid of integer displacements ``u_values x v_values``.

    Flattened order is v outer, u inner.
    """
    u_values: np.ndarray
    v_values: np.ndarray
    kind: ProposalKind = ProposalKind.WINDOW

    def __post_init__(self):
        object.__setattr__(self, "u_values", _axis(self.u_values))
        object.__setattr__(self, "v_values", _axis(self.v_values))
        object.__setattr__(self, "kind", ProposalKind(self.kind))
        if self.kind == ProposalKind.DISPARITY and not np.array_equal(self.v_values, [0]):
            raise ValidationError("disparity proposals must have f_v = 0")

    @classmethod
    def disparity_range(cls, levels: int) -> "ProposalSet":
        if levels < 1:
            raise ArgumentError("disparity range needs at least one level")
        return cls(-np.arange(levels), [0], ProposalKind.DISPARITY)

    @classmethod
    def window(cls, radius: int) -> "ProposalSet":
        if radius < 0:
            raise ArgumentError("window radius must be >= 0")
        r = np.arange(-radius, radius + 1)
        return cls(r, r, ProposalKind.WINDOW)

    @classmethod
    def full_2d(cls, height: int, width: int) -> "ProposalSet":
        return cls(np.arange(-(width - 1), width), np.arange(-(height - 1), height), ProposalKind.FULL_2D)

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return len(self.v_values), len(self.u_values)

    def __len__(self) -> int:
        return len(self.u_values) * len(self.v_values)

    @property
    def fu(self) -> np.ndarray:
        return np.tile(self.u_values, len(self.v_values))

    @property
    def fv(self) -> np.ndarray:
        return np.repeat(self.v_values, len(self.u_values))

    @property
    def proposals(self) -> np.ndarray:
        return np.stack([self.fu, self.fv], axis=-1)

    def _axis_index(self, values: np.ndarray, x) -> np.ndarray:
        step = int(values[1] - values[0]) if len(values) > 1 else 1
        idx = (np.asarray(x, dtype=np.int64) - values[0]) * step
        return np.where((idx >= 0) & (idx < len(values)), idx, -1)

    def index_of(self, fu, fv) -> np.ndarray:
        """Flat proposal index, -1 where the offset is not in the set."""
        iu = self._axis_index(self.u_values, fu)
        iv = self._axis_index(self.v_values, fv)
        return np.where((iu >= 0) & (iv >= 0), iv * len(self.u_values) + iu, -1)

    def scaled(self, k: int) -> "ProposalSet":
        def grow(values):
            if len(values) == 1:
                return values * k
            step = int(values[1] - values[0])
            return np.arange(k * values[0], k * values[-1] + step, step)
        return ProposalSet(grow(self.u_values), grow(self.v_values), self.kind)


@dataclass(frozen=True, eq=False)
class ScoreVolume:
    scores: np.ndarray
    proposals: ProposalSet
    stride: int = 1

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 3 or s.shape[2] != len(self.proposals):
            raise ValidationError(f"score volume {s.shape} does not match {len(self.proposals)} proposals")
        if not np.isfinite(s).all():
            raise ValidationError("score volume entries must be finite")
        object.__setattr__(self, "scores", _frozen(s))

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


def to_grayscale(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    if img.ndim == 3 and img.shape[2] in (3, 4):
        return img[..., :3] @ np.array([0.299, 0.587, 0.114])
    raise ArgumentError(f"cannot convert image of shape {img.shape} to grayscale")


def census_descriptor(image, window: int = 5) -> FeatureMap:
    """Census signs: +1 where the neighbour is >= the window centre, else -1.

    Channels run over the window row-major, centre skipped; borders replicate.
    """
    if window < 3 or window % 2 == 0:
        raise ArgumentError(f"census window must be odd and >= 3, got {window}")
    img = to_grayscale(image)
    h, w = img.shape
    r = window // 2
    padded = np.pad(img, r, mode="edge")
    bits = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[r + dy:r + dy + h, r + dx:r + dx + w]
            bits.append(np.where(nb >= img, 1.0, -1.0))
    return FeatureMap(np.stack(bits, axis=-1), stride=1)


def l2_normalize(data: np.ndarray) -> np.ndarray:
    norm = np.sqrt((data ** 2).sum(axis=-1, keepdims=True))
    return np.divide(data, norm, out=np.zeros_like(data), where=norm > 0)


def cosine_score_volume(F_ref: FeatureMap, F_tar: FeatureMap, proposals: ProposalSet) -> ScoreVolume:
    """S(u, v, f) = <F_ref(u, v), F_tar(u + f_u, v + f_v)> on unit vectors.

    Targets outside the grid score -1; zero vectors score 0.
    """
    if F_ref.channels != F_tar.channels:
        raise ArgumentError(f"channel mismatch: {F_ref.channels} vs {F_tar.channels}")
    if F_ref.data.shape[:2] != F_tar.data.shape[:2]:
        raise ArgumentError(f"grid mismatch: {F_ref.data.shape[:2]} vs {F_tar.data.shape[:2]}")
    a = l2_normalize(F_ref.data)
    b = l2_normalize(F_tar.data)
    h, w, _ = a.shape
    S = np.full((h, w, len(proposals)), -1.0)
    for k, (fu, fv) in enumerate(proposals.proposals):
        u0, u1 = max(0, -fu), min(w, w - fu)
        v0, v1 = max(0, -fv), min(h, h - fv)
        if u0 >= u1 or v0 >= v1:
            continue
        S[v0:v1, u0:u1, k] = np.einsum("ijc,ijc->ij", a[v0:v1, u0:u1], b[v0 + fv:v1 + fv, u0 + fu:u1 + fu])
    return ScoreVolume(S, proposals, stride=F_ref.stride)


def tie_break_order(proposals: ProposalSet) -> np.ndarray:
    """Proposal indices by |f|, then f_u, then f_v."""
    fu, fv = proposals.fu, proposals.fv
    return np.lexsort((fv, fu, fu * fu + fv * fv))


def argmax_regress(volume: ScoreVolume) -> Union[DisplacementField, DisparityMap]:
    props = volume.proposals
    order = tie_break_order(props)
    best = order[np.argmax(volume.scores[..., order], axis=-1)]
    fu = props.fu[best].astype(np.float64)
    fv = props.fv[best].astype(np.float64)
    if props.kind == ProposalKind.DISPARITY:
        return DisparityMap(-fu + 0.0)
    return DisplacementField(fu, fv)


def _interpolate(values: np.ndarray, axes: Sequence[np.ndarray]) -> np.ndarray:
    """Multilinear interpolation of ``values`` at the outer product of fractional indices."""
    keep = [i for i, n in enumerate(values.shape) if n > 1]
    out_shape = tuple(len(a) for a in axes)
    if not keep:
        return np.broadcast_to(values.reshape(-1)[0], out_shape).copy()
    squeezed = values.reshape([values.shape[i] for i in keep])
    grid = [np.arange(values.shape[i], dtype=np.float64) for i in keep]
    interp = RegularGridInterpolator(grid, squeezed, method="linear")
    mesh = np.meshgrid(*[axes[i] for i in keep], indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    sub = interp(pts).reshape([len(axes[i]) for i in keep])
    expand = [len(axes[i]) if i in keep else 1 for i in range(len(axes))]
    return np.broadcast_to(sub.reshape(expand), out_shape).copy()


def _spatial_coords(n: int, k: int) -> np.ndarray:
    return np.clip((np.arange(n * k) + 0.5) / k - 0.5, 0.0, n - 1)


def upsample_volume_trilinear(volume: ScoreVolume, factor: int) -> ScoreVolume:
    """Bilinear in space, linear along proposals; proposal values grow by ``factor``."""
    k = int(factor)
    if k != factor or k < 1:
        raise ArgumentError(f"upsampling factor must be a positive integer, got {factor}")
    if k == 1:
        return volume
    if volume.stride % k:
        raise ArgumentError(f"volume at stride {volume.stride} cannot be upsampled by {k}")
    props = volume.proposals
    up = props.scaled(k)
    h, w = volume.height, volume.width
    nv, nu = props.grid_shape

    def prop_coords(old: np.ndarray, new: np.ndarray) -> np.ndarray:
        if len(old) == 1:
            return np.zeros(len(new))
        step = old[1] - old[0]
        return np.clip((new / k - old[0]) * step, 0.0, len(old) - 1)

    vol4 = volume.scores.reshape(h, w, nv, nu)
    axes = [_spatial_coords(h, k), _spatial_coords(w, k),
            prop_coords(props.v_values, up.v_values), prop_coords(props.u_values, up.u_values)]
    out = _interpolate(vol4, axes)
    return ScoreVolume(out.reshape(h * k, w * k, len(up)), up, stride=volume.stride // k)


def upsample_features_bilinear(F: FeatureMap, factor: int) -> FeatureMap:
    k = int(factor)
    if k < 1 or F.stride % k:
        raise ArgumentError(f"cannot upsample stride {F.stride} features by {factor}")
    if k == 1:
        return F
    out = _interpolate(F.data, [_spatial_coords(F.height, k), _spatial_coords(F.width, k),
                                np.arange(F.channels, dtype=np.float64)])
    return FeatureMap(out, stride=F.stride // k)


def downsample_features(F: FeatureMap, factor: int) -> FeatureMap:
    """Average-pool k x k blocks; trailing rows/columns that do not fill a block are dropped."""
    k = int(factor)
    if k < 1 or F.stride * k not in STRIDES:
        raise ArgumentError(f"cannot downsample stride {F.stride} features by {factor}")
    if k == 1:
        return F
    h, w = F.height // k, F.width // k
    if h < 1 or w < 1:
        raise ArgumentError("feature map smaller than one pooling block")
    blocks = F.data[:h * k, :w * k].reshape(h, k, w, k, F.channels)
    return FeatureMap(blocks.mean(axis=(1, 3)), stride=F.stride * k)


def fuse_volumes(volumes: List[ScoreVolume], mode: str = "product") -> ScoreVolume:
    """Elementwise product of same-shaped volumes; ``softmax_product`` normalizes each first."""
    if not volumes:
        raise ArgumentError("nothing to fuse")
    first = volumes[0]
    for vol in volumes[1:]:
        if vol.scores.shape != first.scores.shape or not (
                np.array_equal(vol.proposals.u_values, first.proposals.u_values)
                and np.array_equal(vol.proposals.v_values, first.proposals.v_values)):
            raise ArgumentError("fused volumes must share grid and proposals")
    if mode == "product":
        parts = [v.scores for v in volumes]
    elif mode == "softmax_product":
        parts = [softmax(v.scores, axis=-1) for v in volumes]
    else:
        raise ArgumentError(f"unknown fusion mode {mode!r}")
    out = parts[0].copy()
    for p in parts[1:]:
        out = out * p
    return ScoreVolume(out, first.proposals, stride=first.stride)


def match_images(img_ref, img_tar, proposals: ProposalSet, window: int = 5, scale: int = 1):
    """Census descriptors -> (optional pooling) -> cosine volume -> trilinear -> argmax."""
    F_ref = census_descriptor(img_ref, window)
    F_tar = census_descriptor(img_tar, window)
    if scale > 1:
        F_ref = downsample_features(F_ref, scale)
        F_tar = downsample_features(F_tar, scale)
    volume = cosine_score_volume(F_ref, F_tar, proposals)
    if scale > 1:
        volume = upsample_volume_trilinear(volume, scale)
    logger.debug("matched %dx%d with %d proposals", volume.width, volume.height, len(volume.proposals))
    return argmax_regress(volume), volume
