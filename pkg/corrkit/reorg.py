"""Dataset reorganization: walk a source tree, convert every sample to a
displacement field, write ``<name>.flo`` files and a tab-separated manifest.

Layouts:
  disparity   ``*.pfm`` (Pf) or ``*.png`` (KITTI 16-bit) disparity maps
  flow        ``*.flo`` or ``*.png`` (KITTI 16-bit) flow maps
  depth_pose  scene directories holding ``cams.txt`` and ``depth_<i>.pfm``;
              posed pairs are chosen by viewing-direction similarity
"""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union
import logging
import os
import re

import numpy as np

from .augment import AugmentSpec, apply_augment
from .core import DisplacementField
from .formats import (read_cameras, read_flo, read_kitti_disp, read_kitti_flow, read_pfm, read_pfm_depth,
                      write_flo)
from .errors import ArgumentError, FormatError
from .geometry import disparity_to_flow, project_depth_to_flow
from .matching import FeatureMap
from .rig import PoseGraph

logger = logging.getLogger(__name__)

LAYOUTS = ("disparity", "flow", "depth_pose")
MANIFEST_NAME = "manifest.tsv"
MANIFEST_HEADER = "# sample\tsource\tmode\tvalid_ratio\toutput"
_DEPTH_FILE = re.compile(r"^depth_(\d+)\.pfm$")


@dataclass
class Sample:
    name: str
    source: str
    mode: str
    load: Callable[[], DisplacementField]


@dataclass
class ManifestRow:
    sample: str
    source: str
    mode: str
    valid_ratio: float
    output: str

    def to_line(self) -> str:
        return f"{self.sample}\t{self.source}\t{self.mode}\t{self.valid_ratio:.6f}\t{self.output}"


@dataclass
class ReorgResult:
    rows: List[ManifestRow] = field(default_factory=list)
    failed: List[Tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed or bool(self.rows)


def _sample_name(rel: Path) -> str:
    return "__".join(rel.with_suffix("").parts)


def _walk(root: Path, skip: Optional[Path]) -> List[Path]:
    paths = []
    for dirpath, dirnames, filenames in os.walk(root):
        here = Path(dirpath)
        if skip is not None:
            dirnames[:] = [d for d in dirnames if (here / d).resolve() != skip]
        paths.extend(here / fn for fn in filenames)
    return sorted(paths)


def _load_disparity(path: Path) -> DisplacementField:
    data = path.read_bytes()
    disp = read_kitti_disp(data) if path.suffix.lower() == ".png" else read_pfm(data)
    if isinstance(disp, FeatureMap):
        raise FormatError(f"{path.name}: 3-channel PFM is not a disparity map")
    return disparity_to_flow(disp)


def _load_flow(path: Path) -> DisplacementField:
    data = path.read_bytes()
    return read_kitti_flow(data) if path.suffix.lower() == ".png" else read_flo(data)


def _depth_pair_loader(depth_path: Path, cams_path: Path, ref: int, tar: int) -> Callable[[], DisplacementField]:
    def load() -> DisplacementField:
        cams = read_cameras(cams_path.read_text(encoding="utf-8"))
        if max(ref, tar) >= len(cams):
            raise FormatError(f"{cams_path.name} lists {len(cams)} cameras, frame {max(ref, tar)} requested")
        depth = read_pfm_depth(depth_path.read_bytes())
        return project_depth_to_flow(depth, cams[ref], cams[tar])
    return load


def _depth_pose_samples(root: Path, files: List[Path], max_angle_deg: float) -> List[Sample]:
    samples = []
    scenes = sorted({p.parent for p in files if p.name == "cams.txt"})
    for scene in scenes:
        cams_path = scene / "cams.txt"
        rel_scene = scene.relative_to(root)
        depth_files = {int(m.group(1)): scene / fn for fn in os.listdir(scene)
                       if (m := _DEPTH_FILE.match(fn))}
        try:
            cams = read_cameras(cams_path.read_text(encoding="utf-8"))
        except (OSError, FormatError) as e:
            logger.warning("skipping scene %s: %s", rel_scene, e)
            continue
        graph = PoseGraph()
        for i, cam in enumerate(cams):
            graph.add_camera(str(i), cam)
        graph.link_similar(max_angle_deg=max_angle_deg, min_baseline=1e-9)
        for a, b in graph.pairs():
            ref, tar = int(a), int(b)
            if ref not in depth_files:
                continue
            rel = depth_files[ref].relative_to(root)
            name = "__".join(rel_scene.parts + (f"{ref}_{tar}",))
            samples.append(Sample(name, rel.as_posix(), f"depth2flow:{tar}",
                                  _depth_pair_loader(depth_files[ref], cams_path, ref, tar)))
    return samples


def discover_samples(root: Union[str, Path], layout: str, max_angle_deg: float = 30.0,
                     skip: Optional[Path] = None) -> List[Sample]:
    if layout not in LAYOUTS:
        raise ArgumentError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    root = Path(root)
    files = _walk(root, None if skip is None else Path(skip).resolve())
    if layout == "depth_pose":
        return _depth_pose_samples(root, files, max_angle_deg)
    samples = []
    for path in files:
        ext = path.suffix.lower()
        rel = path.relative_to(root)
        if layout == "disparity" and ext in (".pfm", ".png"):
            samples.append(Sample(_sample_name(rel), rel.as_posix(), "disp2flow",
                                  lambda p=path: _load_disparity(p)))
        elif layout == "flow" and ext in (".flo", ".png"):
            samples.append(Sample(_sample_name(rel), rel.as_posix(), "flow",
                                  lambda p=path: _load_flow(p)))
    return samples


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def convert_sample(sample: Sample, out_dir: Path, augment: Optional[AugmentSpec] = None,
                   margin: Optional[int] = None) -> ManifestRow:
    flow = sample.load()
    if augment is not None:
        _, _, flow = apply_augment(augment, None, None, flow, margin=margin)
    out_name = f"{sample.name}.flo"
    (out_dir / out_name).write_bytes(write_flo(flow))
    return ManifestRow(sample.name, sample.source, sample.mode, flow.valid_ratio(), out_name)


def format_manifest(rows: List[ManifestRow]) -> str:
    return "\n".join([MANIFEST_HEADER] + [r.to_line() for r in rows]) + "\n"


def reorganize(root: Union[str, Path], out_dir: Union[str, Path], layout: str, seed: int = 0, threads: int = 1,
               jitter_max: int = 0, rotate: bool = False, max_angle_deg: float = 30.0) -> ReorgResult:
    """Convert every discovered sample; failures are logged and skipped.

    Output order follows the sorted sample list regardless of ``threads``.
    """
    root, out_dir = Path(root), Path(out_dir)
    if not root.is_dir():
        raise ArgumentError(f"dataset root {root} is not a directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = discover_samples(root, layout, max_angle_deg, skip=out_dir)
    augmenting = jitter_max > 0 or rotate
    margin = jitter_max if jitter_max > 0 else None

    def work(item: Tuple[int, Sample]):
        index, sample = item
        spec = AugmentSpec.sample(sample_seed(seed, index), jitter_max, rotate) if augmenting else None
        try:
            return convert_sample(sample, out_dir, spec, margin), None
        except Exception as e:
            logger.warning("skipping %s: %s", sample.source, e)
            return None, (sample.source, str(e))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(work, enumerate(samples)))
    result = ReorgResult()
    for row, failure in outcomes:
        if row is not None:
            result.rows.append(row)
        else:
            result.failed.append(failure)
    (out_dir / MANIFEST_NAME).write_text(format_manifest(result.rows), encoding="utf-8")
    logger.info("reorg: %d converted, %d failed", len(result.rows), len(result.failed))
    return result
