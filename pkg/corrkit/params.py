"""Parameter container: a flat little-endian float64 payload plus a JSON
manifest that registers every block's name, shape and element offset.

    {"format": "corrkit-params", "version": 1, "dtype": "<f8",
     "blocks": [{"name": "upsample.W_Q", "shape": [32, 32], "offset": 0}, ...]}

Blocks are stored in manifest order with no padding; ``offset`` counts
elements, not bytes.
"""
from __future__ import annotations
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union
import json
import logging
import numpy as np

from .errors import FormatError

logger = logging.getLogger(__name__)

FORMAT_NAME = "corrkit-params"
FORMAT_VERSION = 1
DTYPE = "<f8"


def encode_params(blocks: Mapping[str, np.ndarray]) -> Tuple[bytes, str]:
    entries = []
    chunks = []
    offset = 0
    for name, arr in blocks.items():
        a = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(a).astype(DTYPE).tobytes())
        offset += a.size
    manifest = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "dtype": DTYPE, "blocks": entries}
    return b"".join(chunks), json.dumps(manifest, indent=2)


def decode_params(payload: bytes, manifest: str) -> Dict[str, np.ndarray]:
    try:
        meta = json.loads(manifest)
    except json.JSONDecodeError as e:
        raise FormatError(f"parameter manifest is not JSON: {e.msg}", offset=e.pos) from None
    if not isinstance(meta, dict) or meta.get("format") != FORMAT_NAME:
        raise FormatError("not a corrkit parameter manifest")
    if meta.get("version") != FORMAT_VERSION or meta.get("dtype") != DTYPE:
        raise FormatError(f"unsupported parameter container version {meta.get('version')!r} "
                          f"dtype {meta.get('dtype')!r}")
    total = len(payload) // 8
    if len(payload) % 8:
        raise FormatError("parameter payload is not a whole number of float64 values", offset=len(payload))
    flat = np.frombuffer(payload, dtype=DTYPE)
    out: Dict[str, np.ndarray] = {}
    for entry in meta.get("blocks", []):
        try:
            name = str(entry["name"])
            shape = tuple(int(n) for n in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"malformed block entry {entry!r}") from None
        size = int(np.prod(shape)) if shape else 1
        if offset < 0 or any(n < 0 for n in shape) or offset + size > total:
            raise FormatError(f"block {name!r} overruns the payload", offset=8 * offset)
        if name in out:
            raise FormatError(f"duplicate block {name!r}")
        out[name] = flat[offset:offset + size].astype(np.float64).reshape(shape)
    return out


def save_params(path: Union[str, Path], blocks: Mapping[str, np.ndarray]) -> Tuple[Path, Path]:
    """Write ``<path>.bin`` and ``<path>.json``; returns both paths."""
    base = Path(path)
    payload, manifest = encode_params(blocks)
    bin_path, json_path = base.with_suffix(".bin"), base.with_suffix(".json")
    bin_path.write_bytes(payload)
    json_path.write_text(manifest, encoding="utf-8")
    logger.debug("saved %d parameter blocks to %s", len(blocks), bin_path)
    return bin_path, json_path


def load_params(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    base = Path(path)
    return decode_params(base.with_suffix(".bin").read_bytes(),
                         base.with_suffix(".json").read_text(encoding="utf-8"))
