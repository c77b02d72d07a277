"""Forward feature transforms: attention-guided upsampling and multi-scale
patch embedding.

Parameters are plain float64 arrays applied on the right (``x @ W``), either
supplied by the caller, loaded through ``corrkit.params`` or drawn from a
seeded generator. Nothing here is trained.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union
import logging
import math
import numpy as np
from scipy.special import erf, softmax

from .core import _frozen
from .errors import ArgumentError, ValidationError
from .matching import FeatureMap

logger = logging.getLogger(__name__)

NEIGHBORHOOD = 3
# stride -> patch size used to fold that level onto the stride-8 grid
PATCH_SIZES: Dict[int, float] = {2: 4, 4: 2, 8: 1, 16: 0.5}
ACTIVATIONS = ("gelu", "relu")


def _matrix(name: str, w, rows: Optional[int] = None) -> np.ndarray:
    a = np.array(w, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError(f"{name} must be a matrix, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise ValidationError(f"{name} expects {rows} input rows, got {a.shape[0]}")
    if not np.isfinite(a).all():
        raise ValidationError(f"{name} has non-finite weights")
    return _frozen(a)


def _vector(name: str, b, size: int) -> np.ndarray:
    a = np.zeros(size) if b is None else np.array(b, dtype=np.float64).reshape(-1)
    if a.shape != (size,) or not np.isfinite(a).all():
        raise ValidationError(f"{name} must be {size} finite values")
    return _frozen(a)


@dataclass(frozen=True, eq=False)
class UpsampleAttention:
    """Multi-head attention over the 3x3 low-res neighbourhood of each fine cell.

    W_Q, W_K, W_V are (C, C); W_out is (C, C_out). Heads split C into equal
    contiguous blocks.
    """
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_out: np.ndarray
    heads: int = 1
    scale: int = 2

    def __post_init__(self):
        wq = _matrix("W_Q", self.W_Q)
        c = wq.shape[0]
        if wq.shape != (c, c):
            raise ValidationError(f"W_Q must be square, got {wq.shape}")
        for name in ("W_K", "W_V"):
            w = _matrix(name, getattr(self, name))
            if w.shape != (c, c):
                raise ValidationError(f"{name} must be {c}x{c}, got {w.shape}")
            object.__setattr__(self, name, w)
        object.__setattr__(self, "W_Q", wq)
        object.__setattr__(self, "W_out", _matrix("W_out", self.W_out, rows=c))
        if int(self.heads) < 1 or c % int(self.heads):
            raise ValidationError(f"{c} channels do not split into {self.heads} heads")
        if int(self.scale) < 1:
            raise ValidationError(f"scale must be >= 1, got {self.scale}")
        object.__setattr__(self, "heads", int(self.heads))
        object.__setattr__(self, "scale", int(self.scale))

    @property
    def channels(self) -> int:
        return self.W_Q.shape[0]

    @property
    def out_channels(self) -> int:
        return self.W_out.shape[1]

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @classmethod
    def identity(cls, channels: int, heads: int = 1, scale: int = 2) -> "UpsampleAttention":
        eye = np.eye(channels)
        return cls(eye, eye, eye, eye, heads, scale)

    @classmethod
    def seeded(cls, channels: int, heads: int = 1, scale: int = 2, seed: int = 0,
               out_channels: Optional[int] = None) -> "UpsampleAttention":
        """Gaussian weights with std 1/sqrt(C) from ``default_rng(seed)``."""
        rng = np.random.default_rng(seed)
        std = 1.0 / math.sqrt(channels)
        out_channels = channels if out_channels is None else out_channels
        ws = [rng.normal(0.0, std, size=(channels, channels)) for _ in range(3)]
        w_out = rng.normal(0.0, std, size=(channels, out_channels))
        return cls(*ws, w_out, heads=heads, scale=scale)

    def to_blocks(self, prefix: str = "upsample") -> Dict[str, np.ndarray]:
        return {f"{prefix}.{k}": getattr(self, k) for k in ("W_Q", "W_K", "W_V", "W_out")}

    @classmethod
    def from_blocks(cls, blocks: Mapping[str, np.ndarray], heads: int, scale: int,
                    prefix: str = "upsample") -> "UpsampleAttention":
        try:
            ws = [blocks[f"{prefix}.{k}"] for k in ("W_Q", "W_K", "W_V", "W_out")]
        except KeyError as e:
            raise ArgumentError(f"missing parameter block {e.args[0]!r}") from None
        return cls(*ws, heads=heads, scale=scale)


def unfold_neighbors(F: Union[FeatureMap, np.ndarray], kernel: int = NEIGHBORHOOD, scale: int = 1) -> np.ndarray:
    """Gather the k x k neighbourhood of every fine cell's low-res anchor.

    Returns (H*scale, W*scale, k*k, C). Fine cell p maps to anchor floor(p / scale);
    neighbours run row-major and borders replicate.
    """
    if kernel != NEIGHBORHOOD:
        raise ArgumentError(f"only a {NEIGHBORHOOD}x{NEIGHBORHOOD} neighbourhood is supported")
    if int(scale) < 1:
        raise ArgumentError(f"scale must be >= 1, got {scale}")
    data = F.data if isinstance(F, FeatureMap) else np.asarray(F, dtype=np.float64)
    h, w = data.shape[:2]
    r = kernel // 2
    padded = np.pad(data, ((r, r), (r, r), (0, 0)), mode="edge")
    rows = np.arange(h * scale) // scale
    cols = np.arange(w * scale) // scale
    out = np.empty((h * scale, w * scale, kernel * kernel, data.shape[2]))
    k = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            out[:, :, k] = padded[(rows + r + dy)[:, None], (cols + r + dx)[None, :]]
            k += 1
    return out


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    return x.reshape(x.shape[:-1] + (heads, x.shape[-1] // heads))


def upsample_weights(F_low: FeatureMap, guide: FeatureMap, attn: UpsampleAttention) -> Tuple[np.ndarray, np.ndarray]:
    """Attention weights (H, W, heads, 9) and the per-head values (H, W, 9, heads, d)."""
    s = attn.scale
    if guide.data.shape[:2] != (F_low.height * s, F_low.width * s):
        raise ArgumentError(f"guide grid {guide.data.shape[:2]} is not {s}x the low-res grid "
                            f"{F_low.data.shape[:2]}")
    c = attn.channels
    if F_low.channels != c or guide.channels != c:
        raise ArgumentError(f"attention expects {c} channels, got {F_low.channels} and {guide.channels}")
    q = _split_heads(guide.data @ attn.W_Q, attn.heads)
    k = _split_heads(unfold_neighbors(F_low.data @ attn.W_K, scale=s), attn.heads)
    v = _split_heads(unfold_neighbors(F_low.data @ attn.W_V, scale=s), attn.heads)
    logits = np.einsum("hwnd,hwknd->hwnk", q, k) / math.sqrt(attn.head_dim)
    return softmax(logits, axis=-1), v


def guided_upsample(F_low: FeatureMap, guide: FeatureMap, attn: UpsampleAttention) -> FeatureMap:
    """Upsample ``F_low`` by ``attn.scale`` as a per-head convex combination of
    its 3x3 neighbourhood, weighted by query/key similarity against ``guide``."""
    weights, v = upsample_weights(F_low, guide, attn)
    mixed = np.einsum("hwnk,hwknd->hwnd", weights, v)
    out = mixed.reshape(mixed.shape[:2] + (attn.channels,)) @ attn.W_out
    return FeatureMap(out, stride=guide.stride)


# ----------------------------------------------------------------- patch embedding

def activate(x: np.ndarray, name: str = "gelu") -> np.ndarray:
    if name == "gelu":
        return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))
    if name == "relu":
        return np.maximum(x, 0.0)
    raise ArgumentError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def fold_patches(F: FeatureMap, patch: float) -> FeatureMap:
    """Space-to-depth by ``patch`` (channels ordered dy, dx, c); a patch below 1
    duplicates each cell into a (1/patch)^2 block instead."""
    if patch >= 1:
        p = int(patch)
        if p != patch:
            raise ArgumentError(f"patch size must be an integer or 1/n, got {patch}")
        if F.height % p or F.width % p:
            raise ArgumentError(f"{F.height}x{F.width} grid does not fold into {p}x{p} patches")
        h, w, c = F.height // p, F.width // p, F.channels
        blocks = F.data.reshape(h, p, w, p, c).transpose(0, 2, 1, 3, 4).reshape(h, w, p * p * c)
        return FeatureMap(blocks, stride=F.stride * p)
    if patch <= 0:
        raise ArgumentError(f"patch size must be positive, got {patch}")
    k = int(round(1.0 / patch))
    if not math.isclose(k * patch, 1.0) or F.stride % k:
        raise ArgumentError(f"cannot expand stride {F.stride} features by patch {patch}")
    dup = np.repeat(np.repeat(F.data, k, axis=0), k, axis=1)
    return FeatureMap(dup, stride=F.stride // k)


def _folded_channels(stride: int, channels: int) -> int:
    p = PATCH_SIZES[stride]
    return channels * int(p * p) if p >= 1 else channels


@dataclass(frozen=True, eq=False)
class PatchEmbedSpec:
    """Per-stride linear projections followed by a two-layer fusion map.

    ``proj_w[i]`` / ``proj_b[i]`` belong to stride ``STRIDE_ORDER[i]``.
    """
    proj_w: Tuple[np.ndarray, ...]
    proj_b: Tuple[np.ndarray, ...]
    fuse_w1: np.ndarray
    fuse_b1: np.ndarray
    fuse_w2: np.ndarray
    fuse_b2: np.ndarray
    activation: str = "gelu"

    STRIDE_ORDER = (2, 4, 8, 16)

    def __post_init__(self):
        if len(self.proj_w) != 4 or len(self.proj_b) != 4:
            raise ValidationError("patch embedding needs one projection per stride (2, 4, 8, 16)")
        ws = tuple(_matrix(f"proj_w[{s}]", w) for s, w in zip(self.STRIDE_ORDER, self.proj_w))
        bs = tuple(_vector(f"proj_b[{s}]", b, w.shape[1]) for s, b, w in zip(self.STRIDE_ORDER, self.proj_b, ws))
        concat = sum(w.shape[1] for w in ws)
        w1 = _matrix("fuse_w1", self.fuse_w1, rows=concat)
        w2 = _matrix("fuse_w2", self.fuse_w2, rows=w1.shape[1])
        object.__setattr__(self, "proj_w", ws)
        object.__setattr__(self, "proj_b", bs)
        object.__setattr__(self, "fuse_w1", w1)
        object.__setattr__(self, "fuse_b1", _vector("fuse_b1", self.fuse_b1, w1.shape[1]))
        object.__setattr__(self, "fuse_w2", w2)
        object.__setattr__(self, "fuse_b2", _vector("fuse_b2", self.fuse_b2, w2.shape[1]))
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def in_channels(self) -> Dict[int, int]:
        """Channels each stride level must carry before folding."""
        out = {}
        for s, w in zip(self.STRIDE_ORDER, self.proj_w):
            p = PATCH_SIZES[s]
            out[s] = w.shape[0] // int(p * p) if p >= 1 else w.shape[0]
        return out

    @property
    def out_channels(self) -> int:
        return self.fuse_w2.shape[1]

    @classmethod
    def seeded(cls, in_channels: Union[int, Mapping[int, int]], embed_dim: int = 32,
               out_channels: int = 64, hidden: Optional[int] = None, seed: int = 0,
               activation: str = "gelu", bias: bool = True) -> "PatchEmbedSpec":
        """Gaussian weights (std 1/sqrt(fan_in)); the fusion hidden width defaults to 2 * out_channels."""
        if isinstance(in_channels, int):
            in_channels = {s: in_channels for s in cls.STRIDE_ORDER}
        hidden = 2 * out_channels if hidden is None else hidden
        rng = np.random.default_rng(seed)

        def layer(fan_in, fan_out):
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))
            b = rng.normal(0.0, 0.1, size=fan_out) if bias else np.zeros(fan_out)
            return w, b

        projs = [layer(_folded_channels(s, in_channels[s]), embed_dim) for s in cls.STRIDE_ORDER]
        w1, b1 = layer(4 * embed_dim, hidden)
        w2, b2 = layer(hidden, out_channels)
        return cls(tuple(p[0] for p in projs), tuple(p[1] for p in projs), w1, b1, w2, b2, activation)

    def to_blocks(self, prefix: str = "embed") -> Dict[str, np.ndarray]:
        blocks = {}
        for s, w, b in zip(self.STRIDE_ORDER, self.proj_w, self.proj_b):
            blocks[f"{prefix}.proj{s}.weight"] = w
            blocks[f"{prefix}.proj{s}.bias"] = b
        blocks.update({f"{prefix}.fuse1.weight": self.fuse_w1, f"{prefix}.fuse1.bias": self.fuse_b1,
                       f"{prefix}.fuse2.weight": self.fuse_w2, f"{prefix}.fuse2.bias": self.fuse_b2})
        return blocks

    @classmethod
    def from_blocks(cls, blocks: Mapping[str, np.ndarray], activation: str = "gelu",
                    prefix: str = "embed") -> "PatchEmbedSpec":
        try:
            ws = tuple(blocks[f"{prefix}.proj{s}.weight"] for s in cls.STRIDE_ORDER)
            bs = tuple(blocks[f"{prefix}.proj{s}.bias"] for s in cls.STRIDE_ORDER)
            rest = [blocks[f"{prefix}.{n}"] for n in ("fuse1.weight", "fuse1.bias", "fuse2.weight", "fuse2.bias")]
        except KeyError as e:
            raise ArgumentError(f"missing parameter block {e.args[0]!r}") from None
        return cls(ws, bs, *rest, activation=activation)


def _pyramid_levels(pyramid: Union[Mapping[int, FeatureMap], Sequence[FeatureMap]]) -> Dict[int, FeatureMap]:
    if isinstance(pyramid, Mapping):
        levels = dict(pyramid)
    else:
        levels = {F.stride: F for F in pyramid}
    missing = [s for s in PatchEmbedSpec.STRIDE_ORDER if s not in levels]
    if missing:
        raise ArgumentError(f"pyramid is missing stride level(s) {missing}")
    for s in PatchEmbedSpec.STRIDE_ORDER:
        if levels[s].stride != s:
            raise ArgumentError(f"level keyed {s} carries stride {levels[s].stride}")
    return levels


def multiscale_patch_embed(pyramid: Union[Mapping[int, FeatureMap], Sequence[FeatureMap]],
                           spec: PatchEmbedSpec) -> FeatureMap:
    """Fold strides 2/4/8/16 onto the stride-8 grid, project, concatenate and fuse."""
    levels = _pyramid_levels(pyramid)
    target = levels[8].data.shape[:2]
    expected = spec.in_channels
    parts = []
    for s, w, b in zip(spec.STRIDE_ORDER, spec.proj_w, spec.proj_b):
        F = levels[s]
        if F.channels != expected[s]:
            raise ArgumentError(f"stride {s} level has {F.channels} channels, projection expects {expected[s]}")
        try:
            folded = fold_patches(F, PATCH_SIZES[s])
        except ArgumentError as e:
            raise ArgumentError(f"inconsistent pyramid at stride {s}: {e}") from None
        if folded.data.shape[:2] != target:
            raise ArgumentError(f"inconsistent pyramid: stride {s} folds to {folded.data.shape[:2]}, "
                                f"stride 8 grid is {target}")
        parts.append(folded.data @ w + b)
    x = np.concatenate(parts, axis=-1)
    hidden = activate(x @ spec.fuse_w1 + spec.fuse_b1, spec.activation)
    out = hidden @ spec.fuse_w2 + spec.fuse_b2
    logger.debug("patch embedding %s -> %s", target, out.shape)
    return FeatureMap(out, stride=8)
