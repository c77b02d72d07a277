"""Readers and writers for on-disk correspondence annotations.

Every reader takes ``bytes`` (or text for cameras) and raises ``FormatError``
with a byte offset, or ``ParseError`` with a line number, on malformed input.
"""
from __future__ import annotations
from typing import List, Tuple, Union
import io
import logging
import struct
import numpy as np
import png

from .core import CameraModel, DepthMap, DepthVariant, DisparityMap, DisplacementField, MatchSet, check_rotation
from .errors import FormatError, ParseError, ValidationError
from .matching import FeatureMap

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
FLO_TAG = b"PIEH"
FLO_INVALID_ABS = 1e9
MAX_PIXELS = 1 << 28
CAMERA_FIELDS = 17
CAMERA_READ_TOL = 1e-6


# ----------------------------------------------------------------- .flo

def read_flo(data: bytes) -> DisplacementField:
    data = bytes(data)
    if len(data) < 12:
        raise FormatError("truncated .flo header", offset=len(data))
    if data[:4] != FLO_TAG or struct.unpack("<f", data[:4])[0] != FLO_MAGIC:
        raise FormatError("bad .flo magic", offset=0)
    width, height = struct.unpack("<ii", data[4:12])
    if width < 1 or height < 1:
        raise FormatError(f"bad .flo dimensions {width}x{height}", offset=4)
    if width * height > MAX_PIXELS:
        raise FormatError(f".flo dimensions {width}x{height} overflow", offset=4)
    need = 12 + 8 * width * height
    if len(data) < need:
        raise FormatError(f"truncated .flo payload: need {need} bytes, have {len(data)}", offset=len(data))
    uv = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=12).reshape(height, width, 2)
    uv = uv.astype(np.float64)
    valid = np.isfinite(uv).all(axis=-1) & (np.abs(uv) <= FLO_INVALID_ABS).all(axis=-1)
    return DisplacementField(uv[..., 0], uv[..., 1], valid)


def write_flo(field: DisplacementField) -> bytes:
    uv = np.stack([field.du, field.dv], axis=-1).astype("<f4")
    uv[~field.valid] = np.nan
    return FLO_TAG + struct.pack("<ii", field.width, field.height) + uv.tobytes()


# ----------------------------------------------------------------- PFM

def _next_line(data: bytes, pos: int) -> Tuple[bytes, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise FormatError("truncated PFM header", offset=len(data))
    return data[pos:end].strip(), end + 1


def read_pfm_array(data: bytes) -> np.ndarray:
    """Decode to a top-down float64 array of shape (H, W) or (H, W, 3)."""
    data = bytes(data)
    tag, pos = _next_line(data, 0)
    if tag == b"Pf":
        channels = 1
    elif tag == b"PF":
        channels = 3
    else:
        raise FormatError(f"bad PFM header {tag[:8]!r}", offset=0)
    dims_at = pos
    dims, pos = _next_line(data, pos)
    try:
        width, height = (int(x) for x in dims.split())
    except ValueError:
        raise FormatError(f"malformed PFM dimensions {dims[:32]!r}", offset=dims_at) from None
    if width < 1 or height < 1 or width * height > MAX_PIXELS:
        raise FormatError(f"bad PFM dimensions {width}x{height}", offset=dims_at)
    scale_at = pos
    scale_line, pos = _next_line(data, pos)
    try:
        scale = float(scale_line)
    except ValueError:
        raise FormatError(f"non-numeric PFM scale {scale_line[:32]!r}", offset=scale_at) from None
    if scale == 0 or not np.isfinite(scale):
        raise FormatError("PFM scale must be finite and non-zero", offset=scale_at)
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(data) - pos < 4 * count:
        raise FormatError(f"truncated PFM payload: need {4 * count} bytes", offset=len(data))
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    arr = arr.reshape((height, width, channels) if channels == 3 else (height, width))
    return np.ascontiguousarray(arr[::-1])


def write_pfm_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    elif arr.ndim == 2:
        tag = b"Pf"
    else:
        raise FormatError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    height, width = arr.shape[:2]
    header = tag + b"\n" + f"{width} {height}\n".encode() + b"-1.0\n"
    return header + np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes()


def read_pfm(data: bytes) -> Union[DisparityMap, FeatureMap]:
    """``Pf`` -> DisparityMap (+inf invalid), ``PF`` -> 3-channel FeatureMap."""
    arr = read_pfm_array(data)
    if arr.ndim == 3:
        if not np.isfinite(arr).all():
            raise FormatError("non-finite value in 3-channel PFM")
        return FeatureMap(arr)
    valid = np.isfinite(arr) & (arr >= 0)
    return DisparityMap(arr, valid)


def read_pfm_depth(data: bytes) -> DepthMap:
    arr = read_pfm_array(data)
    if arr.ndim != 2:
        raise FormatError("depth PFM must have one channel")
    valid = np.isfinite(arr) & (arr > 0)
    return DepthMap(arr, valid, DepthVariant.SOURCE)


def write_pfm(obj: Union[DisparityMap, DepthMap, FeatureMap]) -> bytes:
    if isinstance(obj, FeatureMap):
        if obj.channels not in (1, 3):
            raise FormatError(f"PFM holds 1 or 3 channels, got {obj.channels}")
        return write_pfm_array(obj.data if obj.channels == 3 else obj.data[..., 0])
    values = obj.d if isinstance(obj, DisparityMap) else obj.z
    arr = np.where(obj.valid, values, np.inf)
    return write_pfm_array(arr)


# ----------------------------------------------------------------- KITTI PNG

def _decode_png16(data: bytes, planes: int) -> np.ndarray:
    try:
        width, height, rows, info = png.Reader(bytes=bytes(data)).asDirect()
        if info.get("bitdepth") != 16:
            raise FormatError(f"KITTI annotations are 16-bit, got {info.get('bitdepth')}-bit")
        got = info.get("planes")
        if got != planes:
            raise FormatError(f"expected {planes} channel(s), got {got}")
        arr = np.array([np.asarray(r, dtype=np.uint16) for r in rows], dtype=np.uint16)
    except FormatError:
        raise
    except Exception as e:
        raise FormatError(f"undecodable PNG: {e}") from e
    if arr.shape != (height, width * planes):
        raise FormatError("PNG row data does not match header dimensions")
    return arr.reshape(height, width, planes) if planes > 1 else arr


def _encode_png16(arr: np.ndarray, greyscale: bool) -> bytes:
    height, width = arr.shape[:2]
    writer = png.Writer(width, height, greyscale=greyscale, bitdepth=16)
    buf = io.BytesIO()
    writer.write(buf, arr.reshape(height, -1).astype(np.uint16).tolist())
    return buf.getvalue()


def read_kitti_disp(data: bytes) -> DisparityMap:
    raw = _decode_png16(data, 1)
    valid = raw > 0
    return DisparityMap(raw.astype(np.float64) / 256.0, valid)


def _check_range(raw: np.ndarray, valid: np.ndarray, what: str):
    bad = int((valid & ((raw < 0) | (raw > 65535))).sum())
    if bad:
        raise FormatError(f"{bad} valid {what} value(s) do not fit the 16-bit KITTI encoding")


def write_kitti_disp(disp: DisparityMap) -> bytes:
    """round(d * 256); raw 0 is reserved for invalid so valid values encode to >= 1."""
    d = np.where(disp.valid, disp.d, 0.0)
    raw = np.floor(d * 256.0 + 0.5)
    _check_range(raw, disp.valid, "disparity")
    raw = np.where(disp.valid, np.maximum(raw, 1), 0).astype(np.uint16)
    return _encode_png16(raw, greyscale=True)


def read_kitti_flow(data: bytes) -> DisplacementField:
    raw = _decode_png16(data, 3).astype(np.float64)
    valid = raw[..., 2] > 0
    du = (raw[..., 0] - 2 ** 15) / 64.0
    dv = (raw[..., 1] - 2 ** 15) / 64.0
    return DisplacementField(du, dv, valid)


def write_kitti_flow(field: DisplacementField) -> bytes:
    def enc(x):
        raw = np.floor(np.where(field.valid, x, 0.0) * 64.0 + 0.5) + 2 ** 15
        _check_range(raw, field.valid, "flow")
        return raw
    raw = np.stack([enc(field.du), enc(field.dv), np.ones(field.shape)], axis=-1)
    raw[~field.valid] = 0
    return _encode_png16(raw.astype(np.uint16), greyscale=False)


# ----------------------------------------------------------------- cameras

def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt


def read_cameras(text: str) -> List[CameraModel]:
    """One camera per line: fx fy cx cy skew, R row-major (9), T (3)."""
    cams: List[CameraModel] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != CAMERA_FIELDS:
            raise ParseError(f"expected {CAMERA_FIELDS} fields, got {len(parts)}", line=lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(f"non-numeric field: {e}", line=lineno) from None
        if not np.isfinite(vals).all():
            raise ParseError("non-finite field", line=lineno)
        fx, fy, cx, cy, skew = vals[:5]
        R = np.array(vals[5:14]).reshape(3, 3)
        T = np.array(vals[14:17])
        reason = check_rotation(R, tol=CAMERA_READ_TOL)
        if reason:
            raise ParseError(reason, line=lineno)
        if check_rotation(R) is not None:
            logger.debug("re-orthonormalizing rotation on line %d", lineno)
            R = _orthonormalize(R)
        if fx <= 0 or fy <= 0:
            raise ParseError("focal lengths must be positive", line=lineno)
        cams.append(CameraModel.from_intrinsics(fx, fy, cx, cy, skew, R=R, T=T))
    return cams


def write_cameras(cams: List[CameraModel]) -> str:
    lines = ["# fx fy cx cy skew | R (row-major) | T   (world-to-camera)"]
    for cam in cams:
        vals = [cam.fx, cam.fy, cam.cx, cam.cy, cam.skew, *cam.R.reshape(-1), *cam.T]
        lines.append(" ".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- match lists

def read_matches(text: str, ref_shape=None, tar_shape=None) -> MatchSet:
    """Whitespace-separated ``u1 v1 u2 v2 [confidence]`` rows; confidence defaults to 1."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise ParseError(f"expected 4 or 5 fields, got {len(parts)}", line=lineno)
        try:
            vals = [float(p) for p in parts]
        except ValueError as e:
            raise ParseError(f"non-numeric field: {e}", line=lineno) from None
        if len(vals) == 4:
            vals.append(1.0)
        rows.append(vals)
    try:
        return MatchSet(np.array(rows, dtype=np.float64).reshape(-1, 5), ref_shape, tar_shape)
    except ValidationError as e:
        raise ParseError(str(e)) from None


def write_matches(matches: MatchSet) -> str:
    lines = ["# u1 v1 u2 v2 confidence"]
    for rec in matches.records:
        lines.append(" ".join(repr(float(x)) for x in rec))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- images

def read_png_image(data: bytes) -> np.ndarray:
    """8- or 16-bit PNG as float64 in [0, 1]; (H, W) for grey, (H, W, C) otherwise."""
    try:
        width, height, rows, info = png.Reader(bytes=bytes(data)).asDirect()
        arr = np.array([np.asarray(r, dtype=np.float64) for r in rows])
    except Exception as e:
        raise FormatError(f"undecodable PNG: {e}") from e
    planes = info.get("planes", 1)
    arr = arr.reshape(height, width, planes) / float(2 ** info.get("bitdepth", 8) - 1)
    return arr[..., 0] if planes == 1 else arr


def read_image(data: bytes, suffix: str) -> np.ndarray:
    """PNG or PFM image; PFM keeps its float values."""
    suffix = suffix.lower()
    if suffix == ".png":
        return read_png_image(data)
    if suffix == ".pfm":
        return read_pfm_array(data)
    raise FormatError(f"unsupported image type {suffix!r}")
