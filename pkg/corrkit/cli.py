"""Command-line frontend.

    corrkit [--seed N] [--threads N] [--emit-visuals] [--config FILE] [-v|-q] COMMAND ...

Exit codes: 0 success, 1 work failed, 2 usage error, 3 malformed input file.
Results go to files and standard output; diagnostics go to standard error.
"""
from __future__ import annotations
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import argparse
import logging
import sys

import numpy as np

from . import __version__
from .config import JobConfig, build_config, load_config_file
from .consistency import cycle_consistency, extract_matches
from .core import DepthVariant, DisparityMap, DisplacementField
from .epipolar import estimate_fundamental, maa_epipolar
from .errors import ArgumentError, CorrkitError, EvaluationError, FormatError, UsageError
from .formats import (read_cameras, read_flo, read_image, read_kitti_disp, read_kitti_flow, read_matches,
                      read_pfm, read_pfm_depth, read_png_image, write_flo, write_kitti_disp, write_kitti_flow,
                      write_matches, write_pfm)
from .geometry import disparity_to_flow, flow_to_depth, flow_to_disparity, project_depth_to_flow
from .matching import (FeatureMap, ProposalKind, ProposalSet, census_descriptor, cosine_score_volume,
                       downsample_features, match_images)
from .metrics import MetricReport, depth_metrics, epe, flow_metrics, stereo_metrics
from .objective import LossConfig, info_nce_loss, quantize_gt_distribution, total_loss
from .reorg import LAYOUTS, reorganize
from .reports import export_json, format_kv, format_table

logger = logging.getLogger("corrkit")

LOG_FORMAT = "[corrkit] %(levelname)s %(message)s"
EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_FORMAT = 0, 1, 2, 3
CONVERT_MODES = ("flow2disp", "disp2flow", "flow2depth", "depth2flow")
EVAL_TASKS = ("flow", "stereo", "depth", "fmat")
_SUFFIX_FORMATS = {".flo": "flo", ".pfm": "pfm", ".png": "kitti"}


# ----------------------------------------------------------------- file helpers

def _format_of(path: Path, hint: Optional[str]) -> str:
    if hint:
        return hint
    fmt = _SUFFIX_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise UsageError(f"cannot infer the format of {path.name}; pass --from/--to")
    return fmt


def read_flow_file(path: Path, fmt: Optional[str] = None) -> DisplacementField:
    fmt = _format_of(path, fmt)
    data = path.read_bytes()
    if fmt == "flo":
        return read_flo(data)
    if fmt == "kitti":
        return read_kitti_flow(data)
    raise FormatError(f"{path.name}: {fmt} does not hold a displacement field")


def read_disparity_file(path: Path, fmt: Optional[str] = None) -> DisparityMap:
    fmt = _format_of(path, fmt)
    data = path.read_bytes()
    if fmt == "kitti":
        return read_kitti_disp(data)
    if fmt == "pfm":
        disp = read_pfm(data)
        if isinstance(disp, FeatureMap):
            raise FormatError(f"{path.name}: 3-channel PFM is not a disparity map")
        return disp
    raise FormatError(f"{path.name}: {fmt} does not hold a disparity map")


def write_flow_file(field: DisplacementField, path: Path, fmt: Optional[str] = None):
    fmt = _format_of(path, fmt)
    if fmt == "flo":
        path.write_bytes(write_flo(field))
    elif fmt == "kitti":
        path.write_bytes(write_kitti_flow(field))
    else:
        raise FormatError(f"cannot write a displacement field as {fmt}")


def write_disparity_file(disp: DisparityMap, path: Path, fmt: Optional[str] = None):
    fmt = _format_of(path, fmt)
    if fmt == "pfm":
        path.write_bytes(write_pfm(disp))
    elif fmt == "kitti":
        path.write_bytes(write_kitti_disp(disp))
    else:
        raise FormatError(f"cannot write a disparity map as {fmt}")


def _load_cameras(args) -> Tuple:
    if not args.cams:
        raise UsageError("depth conversion needs --cams")
    cams = read_cameras(Path(args.cams).read_text(encoding="utf-8"))
    try:
        return cams[args.ref_index], cams[args.tar_index]
    except IndexError:
        raise UsageError(f"camera file lists {len(cams)} cameras; "
                         f"indices {args.ref_index}, {args.tar_index} requested") from None


def _sibling(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}_{tag}.png")


# ----------------------------------------------------------------- commands

def cmd_convert(cfg: JobConfig, args) -> int:
    src, dst = cfg.inputs[0], cfg.output
    mode = args.mode
    if mode == "flow2disp":
        out = flow_to_disparity(read_flow_file(src, args.src_format), v_tol=cfg.v_tol)
        write_disparity_file(out, dst, cfg.fmt)
    elif mode == "disp2flow":
        out = disparity_to_flow(read_disparity_file(src, args.src_format))
        write_flow_file(out, dst, cfg.fmt)
    elif mode == "flow2depth":
        cam_ref, cam_tar = _load_cameras(args)
        flow = read_flow_file(src, args.src_format)
        out = flow_to_depth(flow, cam_ref, cam_tar, mode=DepthVariant(args.depth_mode), eps_den=cfg.eps_den)
        if _format_of(dst, cfg.fmt) != "pfm":
            raise FormatError("depth maps are written as PFM")
        dst.write_bytes(write_pfm(out))
    else:
        cam_ref, cam_tar = _load_cameras(args)
        depth = read_pfm_depth(src.read_bytes())
        out = project_depth_to_flow(depth, cam_ref, cam_tar, eps_s=cfg.eps_s)
        write_flow_file(out, dst, cfg.fmt)
    if cfg.emit_visuals:
        from .visuals import colorize, flow_to_color, save_image
        if isinstance(out, DisplacementField):
            preview = flow_to_color(out)
        else:
            preview = colorize(out.d if isinstance(out, DisparityMap) else out.z, valid=out.valid)
        save_image(preview, _sibling(dst, "preview"))
    print(f"{mode}: valid_ratio={out.valid_ratio():.4f} -> {dst}")
    return EXIT_OK


def cmd_reorg(cfg: JobConfig, args) -> int:
    result = reorganize(cfg.inputs[0], cfg.output, args.layout, seed=cfg.seed, threads=cfg.threads,
                        jitter_max=cfg.jitter_max, rotate=cfg.rotate, max_angle_deg=cfg.max_angle_deg)
    print(f"reorg: {len(result.rows)} converted, {len(result.failed)} failed -> {cfg.output}")
    return EXIT_OK if result.ok else EXIT_FAILED


def _proposals(cfg: JobConfig, kind: str, shape: Tuple[int, int], k: Optional[int] = None) -> ProposalSet:
    # ranges are given at full resolution; pooled matching searches the coarse grid
    k = k or cfg.scale
    if kind == "disparity":
        return ProposalSet.disparity_range(-(-(cfg.max_disparity - 1) // k) + 1)
    if kind == "window":
        return ProposalSet.window(-(-cfg.window_radius // k))
    h, w = shape
    return ProposalSet.full_2d(h // k, w // k)


def matching_loss(cfg: JobConfig, kind: str, img_ref, img_tar, estimate: DisplacementField,
                  gt: DisplacementField) -> List[MetricReport]:
    """Displacement EPE, InfoNCE on the patch-pooled census volume, and their sum."""
    s = cfg.patch or cfg.scale
    F_ref = downsample_features(census_descriptor(img_ref, cfg.census_window), s)
    F_tar = downsample_features(census_descriptor(img_tar, cfg.census_window), s)
    volume = cosine_score_volume(F_ref, F_tar, _proposals(cfg, kind, gt.shape, s))
    h, w = F_ref.height * s, F_ref.width * s
    cropped = DisplacementField(gt.du[:h, :w], gt.dv[:h, :w], gt.valid[:h, :w])
    nce = info_nce_loss(volume, quantize_gt_distribution(cropped, s), LossConfig(cfg.temperature))
    if nce.counted == 0:
        raise EvaluationError("ground truth has no valid pixel on the loss grid")
    disp = epe(estimate, gt)
    return [MetricReport("l_disp", disp.value, disp.unit, disp.count),
            MetricReport("l_nce", nce.loss, "", nce.counted),
            MetricReport("loss", total_loss(disp.value, nce), "", nce.counted)]


def cmd_match(cfg: JobConfig, args) -> int:
    img_ref = read_image(cfg.inputs[0].read_bytes(), cfg.inputs[0].suffix)
    img_tar = read_image(cfg.inputs[1].read_bytes(), cfg.inputs[1].suffix)
    props = _proposals(cfg, args.proposals, img_ref.shape[:2])
    result, volume = match_images(img_ref, img_tar, props, window=cfg.census_window, scale=cfg.scale)
    dst = cfg.output
    if props.kind == ProposalKind.DISPARITY:
        write_disparity_file(result, dst, cfg.fmt)
        field = disparity_to_flow(result)
    else:
        write_flow_file(result, dst, cfg.fmt)
        field = result
    if cfg.emit_visuals:
        from .visuals import flow_to_color, pca_preview, save_image, save_volume_slices
        save_volume_slices(volume, _sibling(dst, "slices"))
        save_image(flow_to_color(field), _sibling(dst, "color"))
        save_image(pca_preview(census_descriptor(img_ref, cfg.census_window)), _sibling(dst, "features"))
    print(f"match: {len(props)} proposals, {volume.width}x{volume.height} -> {dst}")
    if args.gt:
        gt = read_flow_file(Path(args.gt))
        sys.stdout.write(format_kv(matching_loss(cfg, args.proposals, img_ref, img_tar, field, gt)))
    return EXIT_OK


def cmd_filter(cfg: JobConfig, args) -> int:
    fwd = read_flow_file(cfg.inputs[0])
    bwd = read_flow_file(cfg.inputs[1])
    conf = cycle_consistency(fwd, bwd, tau_c=cfg.tau_c, relative=cfg.relative_c)
    matches = extract_matches(fwd, conf, stride=cfg.stride, tar_shape=bwd.shape)
    from .visuals import confidence_png, flow_to_color, save_image
    conf_path = Path(args.conf_out) if args.conf_out else _sibling(cfg.inputs[0], "conf")
    conf_path.write_bytes(confidence_png(conf))
    if cfg.output is not None:
        cfg.output.write_text(write_matches(matches), encoding="utf-8")
    if cfg.emit_visuals:
        save_image(flow_to_color(fwd), _sibling(conf_path, "flow"))
    print(f"filter: {int(conf.c.sum())}/{conf.c.size} confident, {len(matches)} matches")
    return EXIT_OK


def _region(args, shape) -> Optional[np.ndarray]:
    if not args.region:
        return None
    mask = read_png_image(Path(args.region).read_bytes())
    if mask.ndim == 3:
        mask = mask.max(axis=-1)
    if mask.shape != shape:
        raise UsageError(f"region mask {mask.shape} does not match grid {shape}")
    return mask > 0


def evaluate_pair(cfg: JobConfig, args, est_path: Path, gt_path: Path) -> List[MetricReport]:
    task = args.task
    if task == "flow":
        est, gt = read_flow_file(est_path), read_flow_file(gt_path)
        taus = sorted({1.0, 3.0, 5.0, cfg.tau})
        return flow_metrics(est, gt, taus=taus, region=_region(args, gt.shape))
    if task == "stereo":
        est, gt = read_disparity_file(est_path), read_disparity_file(gt_path)
        taus = sorted({1.0, 2.0, 3.0, cfg.tau})
        return stereo_metrics(est, gt, taus=taus, region=_region(args, gt.shape))
    if task == "depth":
        est, gt = read_pfm_depth(est_path.read_bytes()), read_pfm_depth(gt_path.read_bytes())
        return depth_metrics(est, gt, region=_region(args, gt.shape))
    matches = read_matches(est_path.read_text(encoding="utf-8"))
    gt_matches = read_matches(gt_path.read_text(encoding="utf-8"))
    F, inliers = estimate_fundamental(matches, iters=cfg.ransac_iters, inlier_tau=cfg.ransac_inlier_tau,
                                      seed=cfg.seed, confidence=cfg.ransac_confidence)
    return [maa_epipolar(gt_matches, F),
            MetricReport("inlier_ratio", 100.0 * float(inliers.mean()), "%", len(matches))]


def _eval_pairs(est: Path, gt: Path) -> List[Tuple[str, Path, Path]]:
    if est.is_dir() != gt.is_dir():
        raise UsageError("estimate and ground truth must both be files or both be directories")
    if not est.is_dir():
        return [(est.name, est, gt)]
    est_files = {p.name: p for p in est.iterdir() if p.is_file()}
    gt_files = {p.name: p for p in gt.iterdir() if p.is_file()}
    for name in sorted(set(est_files) ^ set(gt_files)):
        logger.warning("no counterpart for %s; skipped", name)
    return [(n, est_files[n], gt_files[n]) for n in sorted(set(est_files) & set(gt_files))]


def cmd_eval(cfg: JobConfig, args) -> int:
    pairs = _eval_pairs(cfg.inputs[0], cfg.inputs[1])
    single = len(pairs) == 1 and not cfg.inputs[0].is_dir()

    def work(pair):
        name, est_path, gt_path = pair
        if single:
            return name, evaluate_pair(cfg, args, est_path, gt_path), None
        try:
            return name, evaluate_pair(cfg, args, est_path, gt_path), None
        except CorrkitError as e:
            logger.warning("evaluation of %s failed: %s", name, e)
            return name, [], str(e)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        outcomes = list(pool.map(work, pairs))
    everything: List[MetricReport] = []
    for name, reports, error in outcomes:
        if error is not None:
            continue
        everything.extend(reports)
        if args.kv:
            sys.stdout.write(format_kv(reports, prefix="" if single else f"{name}."))
        else:
            sys.stdout.write(format_table(reports, title="" if single else name))
    if args.json:
        export_json(everything, args.json)
    failed = sum(1 for *_, error in outcomes if error is not None)
    return EXIT_FAILED if failed or not pairs else EXIT_OK


def cmd_fmat(cfg: JobConfig, args) -> int:
    matches = read_matches(cfg.inputs[0].read_text(encoding="utf-8"))
    F, inliers = estimate_fundamental(matches, iters=cfg.ransac_iters, inlier_tau=cfg.ransac_inlier_tau,
                                      seed=cfg.seed, confidence=cfg.ransac_confidence)
    text = "\n".join(" ".join(repr(float(x)) for x in row) for row in F.F) + "\n"
    if cfg.output is not None:
        cfg.output.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.inliers:
        Path(args.inliers).write_text("".join(f"{int(b)}\n" for b in inliers), encoding="utf-8")
    print(f"fmat: {int(inliers.sum())}/{len(matches)} inliers")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[JobConfig, argparse.Namespace], int]] = {
    "convert": cmd_convert, "reorg": cmd_reorg, "match": cmd_match,
    "filter": cmd_filter, "eval": cmd_eval, "fmat": cmd_fmat,
}


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="corrkit", description="Dense correspondence conversion, matching and evaluation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--emit-visuals", dest="emit_visuals", action="store_true", default=None)
    p.add_argument("--config", default=None, help="key=value option file")
    verbosity = p.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="convert between flow, disparity and depth")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--mode", required=True, choices=CONVERT_MODES)
    c.add_argument("--from", dest="src_format", choices=("flo", "pfm", "kitti"), default=None)
    c.add_argument("--to", dest="fmt", choices=("flo", "pfm", "kitti"), default=None)
    c.add_argument("--cams", default=None, help="camera file (depth modes)")
    c.add_argument("--ref-index", type=int, default=0)
    c.add_argument("--tar-index", type=int, default=1)
    c.add_argument("--v-tol", dest="v_tol", type=float, default=None)
    c.add_argument("--depth-mode", choices=[v.value for v in (DepthVariant.ZU, DepthVariant.ZV, DepthVariant.ZLSM)],
                   default=DepthVariant.ZLSM.value)

    r = sub.add_parser("reorg", help="convert a dataset tree to .flo files plus a manifest")
    r.add_argument("input")
    r.add_argument("output")
    r.add_argument("--layout", required=True, choices=LAYOUTS)
    r.add_argument("--jitter-max", dest="jitter_max", type=int, default=None)
    r.add_argument("--rotate", action="store_true", default=None)
    r.add_argument("--max-angle", dest="max_angle_deg", type=float, default=None)

    m = sub.add_parser("match", help="census matching of an image pair")
    m.add_argument("reference")
    m.add_argument("target")
    m.add_argument("output")
    m.add_argument("--proposals", choices=("disparity", "window", "full"), default="disparity")
    m.add_argument("--max-disparity", dest="max_disparity", type=int, default=None)
    m.add_argument("--radius", dest="window_radius", type=int, default=None)
    m.add_argument("--census-window", dest="census_window", type=int, default=None)
    m.add_argument("--scale", type=int, default=None)
    m.add_argument("--to", dest="fmt", choices=("flo", "pfm", "kitti"), default=None)
    m.add_argument("--gt", default=None, help="ground-truth flow; reports the matching loss")
    m.add_argument("--patch", type=int, default=None)
    m.add_argument("--temperature", type=float, default=None)

    f = sub.add_parser("filter", help="forward-backward consistency filtering")
    f.add_argument("forward")
    f.add_argument("backward")
    f.add_argument("--tau-c", dest="tau_c", type=float, default=None)
    f.add_argument("--relative", dest="relative_c", type=float, default=None)
    f.add_argument("--stride", type=int, default=None)
    f.add_argument("--conf-out", default=None, help="confidence PNG path")
    f.add_argument("--matches-out", dest="output", default=None, help="match list path")

    e = sub.add_parser("eval", help="metrics of an estimate against ground truth")
    e.add_argument("estimate")
    e.add_argument("ground_truth")
    e.add_argument("--task", required=True, choices=EVAL_TASKS)
    e.add_argument("--tau", type=float, default=None)
    e.add_argument("--region", default=None, help="PNG mask; non-zero pixels are evaluated")
    e.add_argument("--kv", action="store_true", help="key=value output")
    e.add_argument("--json", default=None, help="also write the metrics as JSON")

    fm = sub.add_parser("fmat", help="robust fundamental matrix from a match list")
    fm.add_argument("matches")
    fm.add_argument("--out", dest="output", default=None)
    fm.add_argument("--inliers", default=None, help="write a 0/1 inlier mask, one line per match")
    for sp in (fm, e):
        sp.add_argument("--ransac-iters", dest="ransac_iters", type=int, default=None)
        sp.add_argument("--inlier-tau", dest="ransac_inlier_tau", type=float, default=None)
    return p


_INPUTS = {"convert": ("input",), "reorg": ("input",), "match": ("reference", "target"),
           "filter": ("forward", "backward"), "eval": ("estimate", "ground_truth"), "fmat": ("matches",)}
_OPTION_KEYS = ("seed", "threads", "emit_visuals", "v_tol", "tau", "tau_c", "relative_c", "stride",
                "max_disparity", "window_radius", "census_window", "scale", "jitter_max", "rotate",
                "max_angle_deg", "ransac_iters", "ransac_inlier_tau", "patch", "temperature", "fmt")


def config_from_args(args: argparse.Namespace) -> JobConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in _OPTION_KEYS if hasattr(args, k)}
    overrides["command"] = args.command
    overrides["inputs"] = [getattr(args, k) for k in _INPUTS[args.command]]
    overrides["output"] = getattr(args, "output", None)
    cfg = build_config(file_values, overrides)
    for path in cfg.inputs:
        if not path.exists():
            raise UsageError(f"input {path} does not exist")
    return cfg


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    configure_logging(args.verbose, args.quiet)
    try:
        cfg = config_from_args(args)
        logger.debug("options: %s", cfg.model_dump(exclude={"inputs", "output"}))
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ArgumentError) as e:
        logger.error("%s", e)
        return EXIT_USAGE
    except FormatError as e:
        logger.error("%s", e)
        return EXIT_FORMAT
    except CorrkitError as e:
        logger.error("%s", e)
        return EXIT_FAILED
    except OSError as e:
        logger.error("%s", e)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
