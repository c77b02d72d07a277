"""Cross-view matching objective: ground-truth offset distributions built from
full-resolution flow, and the pixel-wise InfoNCE loss with its analytic gradient.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import List, Tuple, Union
import logging
import numpy as np
from scipy.special import logsumexp

from .core import DisplacementField, _frozen
from .errors import ArgumentError, ValidationError
from .matching import ProposalSet, ScoreVolume

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.07
OUT_OF_BOUNDS_SCORE = -1.0
SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GtFlowDistribution:
    """Sparse per-pixel distributions over integer offsets on the low-res grid.

    Entry i gives probability ``p[i]`` to offset ``(fu[i], fv[i])`` at low-res
    pixel ``pix[i]`` (flat, row-major). Entries are grouped by pixel; within a
    pixel v is outer and u inner. Pixels without entries are empty.
    """
    shape: Tuple[int, int]
    patch: int
    pix: np.ndarray
    fu: np.ndarray
    fv: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        h, w = (int(n) for n in self.shape)
        pix = np.asarray(self.pix, dtype=np.int64).reshape(-1)
        fu = np.asarray(self.fu, dtype=np.int64).reshape(-1)
        fv = np.asarray(self.fv, dtype=np.int64).reshape(-1)
        p = np.asarray(self.p, dtype=np.float64).reshape(-1)
        if not (len(pix) == len(fu) == len(fv) == len(p)):
            raise ValidationError("distribution entry arrays differ in length")
        if len(pix) and (pix.min() < 0 or pix.max() >= h * w):
            raise ValidationError("distribution entry outside the grid")
        if not np.isfinite(p).all() or (p < 0).any():
            raise ValidationError("probabilities must be finite and non-negative")
        sums = np.bincount(pix, weights=p, minlength=h * w)
        used = np.bincount(pix, minlength=h * w) > 0
        if np.any(np.abs(sums[used] - 1.0) > SUM_TOL):
            raise ValidationError("per-pixel probabilities must sum to 1")
        object.__setattr__(self, "shape", (h, w))
        object.__setattr__(self, "patch", int(self.patch))
        object.__setattr__(self, "pix", _frozen(pix, dtype=np.int64))
        object.__setattr__(self, "fu", _frozen(fu, dtype=np.int64))
        object.__setattr__(self, "fv", _frozen(fv, dtype=np.int64))
        object.__setattr__(self, "p", _frozen(p))

    @property
    def nonempty(self) -> np.ndarray:
        h, w = self.shape
        return (np.bincount(self.pix, minlength=h * w) > 0).reshape(h, w)

    def entries(self, v: int, u: int) -> List[Tuple[int, int, float]]:
        sel = self.pix == v * self.shape[1] + u
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.fu[sel], self.fv[sel], self.p[sel])]

    def to_dense(self, proposals: ProposalSet) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(H, W, P) probabilities indexed like ``proposals``, plus per-pixel mass
        and entry count of offsets outside the set. Each outside entry stands for
        one extra proposal scored at the out-of-bounds minimum."""
        h, w = self.shape
        idx = proposals.index_of(self.fu, self.fv)
        keep = idx >= 0
        dense = np.zeros((h * w, len(proposals)))
        np.add.at(dense, (self.pix[keep], idx[keep]), self.p[keep])
        out_mass = np.bincount(self.pix[~keep], weights=self.p[~keep], minlength=h * w)
        out_count = np.bincount(self.pix[~keep], minlength=h * w)
        if out_count.any():
            logger.debug("%d distribution entries fall outside the proposal set", int(out_count.sum()))
        return dense.reshape(h, w, -1), out_mass.reshape(h, w), out_count.reshape(h, w)


def _quantize_offsets(pos: np.ndarray, cell: np.ndarray, s: int) -> np.ndarray:
    """Nearest low-res index of full-res coordinate ``pos``, ties toward -inf, minus the cell index."""
    y = (pos - (s - 1) / 2.0) / s
    return np.ceil(y - 0.5).astype(np.int64) - cell


def _marginal(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    support, counts = np.unique(values, return_counts=True)
    return support, counts / counts.sum()


def quantize_gt_distribution(flow_gt: DisplacementField, patch: int) -> GtFlowDistribution:
    """Per s x s patch: quantize each valid target coordinate to the low-res
    grid, count offset frequencies along u and v, take their outer product.

    Partial patches at the right and bottom edges use the pixels they have.
    """
    s = int(patch)
    if s != patch or s < 1:
        raise ArgumentError(f"patch size must be a positive integer, got {patch}")
    H, W = flow_gt.shape
    h, w = -(-H // s), -(-W // s)
    v1, u1 = np.mgrid[0:H, 0:W]
    ok = flow_gt.valid
    u2 = u1[ok] + flow_gt.du[ok]
    v2 = v1[ok] + flow_gt.dv[ok]
    cu, cv = u1[ok] // s, v1[ok] // s
    ou = _quantize_offsets(u2, cu, s)
    ov = _quantize_offsets(v2, cv, s)
    cell = cv * w + cu
    order = np.argsort(cell, kind="stable")
    cell, ou, ov = cell[order], ou[order], ov[order]
    cells, starts = np.unique(cell, return_index=True)
    ends = np.append(starts[1:], len(cell))
    pix, fus, fvs, ps = [], [], [], []
    for c, a, b in zip(cells, starts, ends):
        su, pu = _marginal(ou[a:b])
        sv, pv = _marginal(ov[a:b])
        joint = np.outer(pv, pu).reshape(-1)
        pix.append(np.full(joint.size, c))
        fus.append(np.tile(su, len(sv)))
        fvs.append(np.repeat(sv, len(su)))
        ps.append(joint)
    if not pix:
        empty = np.zeros(0)
        return GtFlowDistribution((h, w), s, empty, empty, empty, empty)
    return GtFlowDistribution((h, w), s, np.concatenate(pix), np.concatenate(fus),
                              np.concatenate(fvs), np.concatenate(ps))


@dataclass(frozen=True)
class LossConfig:
    temperature: float = DEFAULT_TEMPERATURE
    reduction: str = "mean"

    def __post_init__(self):
        if not (self.temperature > 0) or not np.isfinite(self.temperature):
            raise ArgumentError(f"temperature must be > 0, got {self.temperature}")
        if self.reduction != "mean":
            raise ArgumentError(f"unsupported reduction {self.reduction!r}")


@dataclass(frozen=True, eq=False)
class LossReport:
    """``per_pixel`` is NaN where the target distribution is empty; ``grad`` is
    d(loss)/dS for the whole volume."""
    loss: float
    per_pixel: np.ndarray
    grad: np.ndarray
    counted: int

    @property
    def counted_mask(self) -> np.ndarray:
        return np.isfinite(self.per_pixel)


def info_nce_loss(S: ScoreVolume, P: Union[GtFlowDistribution, np.ndarray],
                  cfg: LossConfig = LossConfig()) -> LossReport:
    """Mean over non-empty pixels of -sum_f p(f) log softmax(S / tau)_f.

    Target offsets outside the proposal set join the softmax as extra columns
    fixed at the out-of-bounds score; they take no gradient.
    """
    scores = S.scores
    if isinstance(P, GtFlowDistribution):
        if P.shape != scores.shape[:2]:
            raise ArgumentError(f"distribution grid {P.shape} does not match volume grid {scores.shape[:2]}")
        probs, out_mass, out_count = P.to_dense(S.proposals)
        mask = P.nonempty
    else:
        probs = np.asarray(P, dtype=np.float64)
        if probs.shape != scores.shape:
            raise ArgumentError(f"target distribution {probs.shape} does not match volume {scores.shape}")
        out_mass = np.zeros(scores.shape[:2])
        out_count = np.zeros(scores.shape[:2], dtype=np.int64)
        mask = probs.sum(axis=-1) > 0
    tau = cfg.temperature
    logits = scores / tau
    out_logit = OUT_OF_BOUNDS_SCORE / tau
    extra = np.full(out_count.shape, -np.inf)
    has_out = out_count > 0
    extra[has_out] = np.log(out_count[has_out]) + out_logit
    log_z = np.logaddexp(logsumexp(logits, axis=-1), extra)
    log_q = logits - log_z[..., None]
    per_pixel = -(probs * log_q).sum(axis=-1) - out_mass * (out_logit - log_z)
    n = int(mask.sum())
    grad = np.zeros_like(scores)
    if n == 0:
        logger.warning("InfoNCE: no pixel carries a target distribution")
        return LossReport(0.0, np.full(mask.shape, np.nan), grad, 0)
    mass = probs[mask].sum(axis=-1, keepdims=True) + out_mass[mask][:, None]
    grad[mask] = (np.exp(log_q[mask]) * mass - probs[mask]) / (tau * n)
    loss = float(np.sum(per_pixel[mask]) / n)
    return LossReport(loss, np.where(mask, per_pixel, np.nan), grad, n)


def total_loss(disp_loss: float, report: LossReport) -> float:
    """Displacement loss (computed elsewhere) plus the InfoNCE term."""
    return float(disp_loss) + report.loss
