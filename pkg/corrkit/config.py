"""Job options shared by every subcommand.

Precedence: model defaults < ``--config`` file < flags given on the command line.
"""
from __future__ import annotations
from pathlib import Path
from typing import Any, Dict, List, Optional
import logging

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator

from .errors import ParseError, UsageError

logger = logging.getLogger(__name__)


class JobConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    command: str = Field("", description="convert|reorg|match|filter|eval|fmat")
    inputs: List[Path] = Field(default_factory=list, description="Input files or directories, resolved")
    output: Optional[Path] = Field(None, description="Output file or directory, resolved")
    fmt: Optional[str] = Field(None, description="Output format hint: flo|pfm|kitti")

    seed: int = Field(0, description="Seed for every random draw")
    threads: int = Field(1, ge=1, description="Worker pool size for batch commands")
    emit_visuals: bool = Field(False, description="Write heatmaps and colour-coded images next to outputs")

    v_tol: float = Field(0.0, ge=0.0, description="Max |dv| accepted as rectified when converting to disparity")
    tau: float = Field(3.0, ge=0.0, description="Bad-pixel threshold in px")
    tau_c: float = Field(1.0, ge=0.0, description="Cycle-consistency threshold in px")
    relative_c: float = Field(0.0, ge=0.0, description="Cycle-consistency tolerance relative to flow magnitude")
    patch: Optional[int] = Field(None, description="Ground-truth patch size for the matching loss; defaults to the pooling scale")
    temperature: float = Field(0.07, gt=0.0, description="InfoNCE temperature")
    ransac_iters: int = Field(2000, ge=1, description="RANSAC trial cap")
    ransac_inlier_tau: float = Field(1.0, gt=0.0, description="RANSAC inlier threshold (Sampson, px)")
    ransac_confidence: float = Field(0.999, gt=0.0, lt=1.0, description="RANSAC early-stop confidence")
    eps_den: float = Field(1e-6, gt=0.0, description="Depth denominator cutoff")
    eps_s: float = Field(1e-9, gt=0.0, description="Projection scale cutoff")
    census_window: int = Field(5, description="Census window side (odd, >= 3)")
    stride: int = Field(1, ge=1, description="Sampling stride for match extraction")
    max_disparity: int = Field(32, ge=1, description="Disparity proposal levels")
    window_radius: int = Field(4, ge=0, description="2D proposal window radius")
    scale: int = Field(1, description="Descriptor pooling factor before matching (1, 2, 4, 8 or 16)")
    jitter_max: int = Field(0, ge=0, description="Max vertical jitter (px) applied during reorg")
    rotate: bool = Field(False, description="Random quarter-turn rotation during reorg")
    max_angle_deg: float = Field(30.0, gt=0.0, description="Max optical-axis angle for posed pairs")

    @field_validator("census_window")
    @classmethod
    def _odd_window(cls, v: int) -> int:
        if v < 3 or v % 2 == 0:
            raise ValueError("census window must be odd and >= 3")
        return v

    @field_validator("scale")
    @classmethod
    def _pool_scale(cls, v: int) -> int:
        if v not in (1, 2, 4, 8, 16):
            raise ValueError("scale must be one of 1, 2, 4, 8, 16")
        return v

    @field_validator("patch")
    @classmethod
    def _loss_patch(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v not in (1, 2, 4, 8, 16):
            raise ValueError("patch must be one of 1, 2, 4, 8, 16")
        return v

    @field_validator("inputs")
    @classmethod
    def _resolve_inputs(cls, v: List[Path]) -> List[Path]:
        return [Path(p).expanduser().resolve() for p in v]

    @field_validator("output")
    @classmethod
    def _resolve_output(cls, v: Optional[Path]) -> Optional[Path]:
        return None if v is None else Path(v).expanduser().resolve()

    @field_validator("fmt")
    @classmethod
    def _known_format(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and v not in ("flo", "pfm", "kitti"):
            raise ValueError("format must be flo, pfm or kitti")
        return v


def parse_config_text(text: str) -> Dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ParseError(f"expected key=value, got {line!r}", line=lineno)
        if key not in JobConfig.model_fields:
            raise ParseError(f"unknown option {key!r}", line=lineno)
        values[key] = value.strip()
    return values


def load_config_file(path) -> Dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def build_config(file_values: Optional[Dict[str, Any]] = None, overrides: Optional[Dict[str, Any]] = None) -> JobConfig:
    """Layer file values and explicit overrides over the defaults; ``None`` overrides are ignored."""
    merged: Dict[str, Any] = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return JobConfig(**merged)
    except PydanticValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise UsageError(f"invalid options: {problems}") from None
