"""Inspection artifacts: flow colour wheel, scalar colormaps, score-volume
heatmaps, feature PCA previews and confidence images.

PNG bytes written through pypng are byte-stable for identical inputs;
matplotlib figures are meant for eyes only.
"""
from __future__ import annotations
from pathlib import Path
from typing import Optional, Sequence, Union
import io
import logging
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import png

from .core import ConfidenceMap, DisplacementField
from .errors import ArgumentError
from .matching import FeatureMap, ScoreVolume

logger = logging.getLogger(__name__)


def _color_wheel() -> np.ndarray:
    """55 hues: red-yellow-green-cyan-blue-magenta segments of 15, 6, 4, 11, 13, 6."""
    segments = [(15, (255, 0, 0), (255, 255, 0)), (6, (255, 255, 0), (0, 255, 0)),
                (4, (0, 255, 0), (0, 255, 255)), (11, (0, 255, 255), (0, 0, 255)),
                (13, (0, 0, 255), (255, 0, 255)), (6, (255, 0, 255), (255, 0, 0))]
    rows = []
    for n, start, end in segments:
        t = np.arange(n)[:, None] / n
        rows.append(np.array(start) + t * (np.array(end) - np.array(start)))
    return np.floor(np.concatenate(rows, axis=0)) / 255.0


COLOR_WHEEL = _color_wheel()


def flow_to_color(field: DisplacementField, max_flow: Optional[float] = None) -> np.ndarray:
    """(H, W, 3) uint8; hue encodes direction, saturation magnitude over
    ``max_flow`` (default: largest valid magnitude). Invalid pixels are black."""
    du = np.where(field.valid, field.du, 0.0)
    dv = np.where(field.valid, field.dv, 0.0)
    mag = np.hypot(du, dv)
    scale = max_flow if max_flow is not None else (float(mag.max()) if field.valid.any() else 0.0)
    if scale > 0:
        du, dv, mag = du / scale, dv / scale, mag / scale
    ncols = len(COLOR_WHEEL)
    angle = np.arctan2(-dv, -du) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = (1 - f) * COLOR_WHEEL[k0] + f * COLOR_WHEEL[k1]
    small = (mag <= 1)[..., None]
    col = np.where(small, 1 - mag[..., None] * (1 - col), col * 0.75)
    rgb = np.floor(255.0 * np.clip(col, 0.0, 1.0)).astype(np.uint8)
    rgb[~field.valid] = 0
    return rgb


def colorize(values: np.ndarray, cmap: str = "viridis", vmin: Optional[float] = None,
             vmax: Optional[float] = None, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Map a scalar grid through a matplotlib colormap to (H, W, 3) uint8; invalid pixels black."""
    values = np.asarray(values, dtype=np.float64)
    valid = np.isfinite(values) if valid is None else np.asarray(valid, dtype=bool) & np.isfinite(values)
    if valid.any():
        lo = float(values[valid].min()) if vmin is None else vmin
        hi = float(values[valid].max()) if vmax is None else vmax
    else:
        lo, hi = 0.0, 1.0
    span = hi - lo if hi > lo else 1.0
    norm = np.clip((np.where(valid, values, lo) - lo) / span, 0.0, 1.0)
    rgba = matplotlib.colormaps[cmap](norm)
    rgb = np.floor(255.0 * rgba[..., :3] + 0.5).astype(np.uint8)
    rgb[~valid] = 0
    return rgb


def encode_png(image: np.ndarray) -> bytes:
    """8-bit greyscale (H, W) or RGB (H, W, 3) PNG bytes."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ArgumentError(f"PNG emission expects uint8 pixels, got {img.dtype}")
    if img.ndim == 2:
        writer = png.Writer(img.shape[1], img.shape[0], greyscale=True, bitdepth=8)
    elif img.ndim == 3 and img.shape[2] == 3:
        writer = png.Writer(img.shape[1], img.shape[0], greyscale=False, bitdepth=8)
    else:
        raise ArgumentError(f"cannot encode image of shape {img.shape} as PNG")
    buf = io.BytesIO()
    writer.write(buf, img.reshape(img.shape[0], -1).tolist())
    return buf.getvalue()


def confidence_png(conf: ConfidenceMap) -> bytes:
    """Confident pixels white, rejected pixels black."""
    return encode_png(np.floor(255.0 * conf.c + 0.5).astype(np.uint8))


def pca_preview(F: FeatureMap) -> np.ndarray:
    """Project channels on their top three principal components, min-max scaled to RGB."""
    x = F.data.reshape(-1, F.channels)
    x = x - x.mean(axis=0)
    k = min(3, F.channels)
    if np.allclose(x, 0):
        comps = np.zeros((x.shape[0], k))
    else:
        _, _, Vt = np.linalg.svd(x, full_matrices=False)
        comps = x @ Vt[:k].T
    if k < 3:
        comps = np.concatenate([comps, np.zeros((comps.shape[0], 3 - k))], axis=1)
    lo, hi = comps.min(axis=0), comps.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    rgb = np.floor(255.0 * (comps - lo) / span + 0.5).astype(np.uint8)
    return rgb.reshape(F.height, F.width, 3)


def save_volume_slices(volume: ScoreVolume, path: Union[str, Path],
                       indices: Optional[Sequence[int]] = None, cmap: str = "magma") -> str:
    """Heatmaps of score-volume slices S(:, :, f), one panel per proposal index."""
    props = volume.proposals
    if indices is None:
        count = min(4, len(props))
        indices = np.linspace(0, len(props) - 1, count).round().astype(int).tolist()
    plt.figure(figsize=(4 * len(indices), 4))
    for i, k in enumerate(indices):
        ax = plt.subplot(1, len(indices), i + 1)
        ax.imshow(volume.scores[..., k], cmap=cmap, vmin=-1.0, vmax=1.0)
        ax.set_title(f"f = ({props.fu[k]}, {props.fv[k]})")
        ax.axis("off")
    plt.tight_layout()
    plt.savefig(str(path), dpi=220)
    plt.close()
    logger.debug("wrote %d volume slices to %s", len(indices), path)
    return str(path)


def save_image(image: np.ndarray, path: Union[str, Path]) -> str:
    Path(path).write_bytes(encode_png(image))
    return str(path)
