"""Command-line entry point.

Exit codes: 0 success, 1 computation error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Iterable, List, Sequence, Tuple

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .errors import (
    ConfigError,
    FiniteValueError,
    FormatError,
    IoError,
    LabelDomainError,
    ShapeError,
    TumorSegError,
    UnsupportedDatatype,
)
from .labels import labels_to_regions, read_region_probs, threshold_cascade
from .losses import LOSS_FUNCTIONS, channel_average, compound_loss
from .metrics import CSV_COLUMNS, EvalReport, evaluate_case
from .nifti import write_array, read_nifti, write_nifti
from .postprocess import clean_ground_truth, postprocess_prediction
from .preprocess import brain_mask, run_plan
from .volume import percentile

log = logging.getLogger("tumorseg")

INPUT_ERRORS = (IoError, FormatError, UnsupportedDatatype, LabelDomainError, FiniteValueError, ConfigError, ShapeError)
NIFTI_RE = re.compile(r"\.nii(\.gz)?$")


class UsageError(TumorSegError):
    pass


def subject_id(filename: str) -> str:
    """``BraTS-GLI-00001-000-seg.nii.gz`` -> ``BraTS-GLI-00001-000``.

    The extension is dropped, then a trailing ``-suffix`` segment is dropped
    when it is not purely numeric.
    """
    stem = NIFTI_RE.sub("", os.path.basename(filename))
    head, sep, tail = stem.rpartition("-")
    if sep and head and not tail.isdigit():
        return head
    return stem


def _nifti_files(directory: str) -> List[str]:
    return sorted(f for f in os.listdir(directory) if NIFTI_RE.search(f))


def _require(path: str) -> None:
    if not os.path.exists(path):
        raise IoError(f"no such file or directory: {path}")


def _io_pairs(src: str, dst: str) -> List[Tuple[str, str]]:
    _require(src)
    if os.path.isdir(src):
        os.makedirs(dst, exist_ok=True)
        return [(os.path.join(src, f), os.path.join(dst, f)) for f in _nifti_files(src)]
    return [(src, dst)]


def _run_all(fn: Callable, items: Sequence, jobs: int, ordered: bool = True) -> List:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        if ordered:
            return list(pool.map(fn, items))
        futures = [pool.submit(fn, item) for item in items]
        return [f.result() for f in as_completed(futures)]


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6f}"


# ---------------------------------------------------------------- subcommands


def cmd_preprocess(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(plan_text=args.plan, reference=args.reference, n_quantiles=args.n_quantiles)
    plan = cfg.plan

    def one(pair):
        src, dst = pair
        vol = read_nifti(src, labels=False)
        out = run_plan(plan, vol)
        if plan:
            write_nifti(out, dst)
        else:
            shutil.copyfile(src, dst)
        mask = brain_mask(vol)
        if mask.count:
            vals = np.asarray(out.data, dtype=np.float64)[mask.data]
            stats = (vals.mean(), vals.std(), percentile(out, 2, mask), percentile(out, 98, mask))
        else:
            stats = (float("nan"),) * 4
        if args.figures:
            from .plotting import plot_intensity_histograms

            os.makedirs(args.figures, exist_ok=True)
            name = NIFTI_RE.sub("", os.path.basename(src)) + "_hist.png"
            plot_intensity_histograms(
                np.asarray(vol.data)[mask.data], np.asarray(out.data)[mask.data],
                os.path.join(args.figures, name), os.path.basename(src),
            )
        return src, stats

    for src, (mean, std, p2, p98) in _run_all(one, _io_pairs(args.input, args.output), cfg.jobs):
        print(f"{src}\tmean={mean:.6f}\tstd={std:.6f}\tp2={p2:.6f}\tp98={p98:.6f}")
    return 0


def cmd_threshold(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(**{"thresholds.wt": args.wt, "thresholds.tc": args.tc, "thresholds.et": args.et})

    def one(pair):
        src, dst = pair
        write_nifti(threshold_cascade(read_region_probs(src), cfg.thresholds), dst)

    _run_all(one, _io_pairs(args.input, args.output), cfg.jobs)
    return 0


def cmd_postprocess(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(**{
        "postprocess.dust_max": args.dust_max,
        "postprocess.foreground_connectivity": args.fg_connectivity,
        "postprocess.hole_background_connectivity": args.hole_connectivity,
    })

    def one(pair):
        src, dst = pair
        write_nifti(postprocess_prediction(read_nifti(src, labels=True), cfg.postprocess), dst)

    _run_all(one, _io_pairs(args.input, args.output), cfg.jobs)
    return 0


def cmd_clean_gt(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(**{
        "postprocess.dust_max": args.dust_max,
        "lesion_match.dilation_iters": args.dilation_iters,
    })

    def one(pair):
        src, dst = pair
        lab = read_nifti(src, labels=True)
        write_nifti(clean_ground_truth(lab, cfg.postprocess, cfg.lesion_match.dilation_iters), dst)

    _run_all(one, _io_pairs(args.input, args.output), cfg.jobs)
    return 0


def cmd_loss(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(loss_spec=args.spec, gamma=args.gamma)
    spec = cfg.loss
    _require(args.pred)
    _require(args.gt)
    probs = read_region_probs(args.pred)
    gt = labels_to_regions(read_nifti(args.gt, labels=True))
    if probs.wt.data.shape != gt.wt.data.shape:
        raise ShapeError(f"prediction {probs.wt.data.shape} and ground truth {gt.wt.data.shape} differ")
    total = compound_loss(spec, probs, gt, gamma=cfg.gamma)
    for kind, weight in spec.terms:
        extra = {"gamma": cfg.gamma} if kind.value == "focal" else {}
        part = channel_average(LOSS_FUNCTIONS[kind], probs, gt, **extra)
        print(f"{kind.value}\tweight={weight:g}\tvalue={part.value:.10g}")
    print(f"loss={total.value:.10g}")
    if args.grad_out:
        write_array(total.gradient, args.grad_out, probs.wt.spacing, "float32")
    return 0


def _pair_subjects(pred: str, gt: str) -> List[Tuple[str, str, str]]:
    _require(pred)
    _require(gt)
    if os.path.isdir(pred) != os.path.isdir(gt):
        raise UsageError("prediction and ground truth must both be files or both be directories")
    if not os.path.isdir(pred):
        return [(subject_id(pred), pred, gt)]
    preds = {subject_id(f): os.path.join(pred, f) for f in _nifti_files(pred)}
    gts = {subject_id(f): os.path.join(gt, f) for f in _nifti_files(gt)}
    unmatched = sorted(set(preds) ^ set(gts))
    if unmatched:
        raise UsageError("unmatched subjects: " + ", ".join(unmatched))
    return [(sid, preds[sid], gts[sid]) for sid in sorted(preds)]


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    rows = [r.as_row() for r in reports]
    for row in rows:
        writer.writerow([row["subject"]] + [_fmt(row[c]) for c in CSV_COLUMNS[1:]])
    if rows:
        means = [_fmt(float(np.mean([float(row[c]) for row in rows]))) for c in CSV_COLUMNS[1:]]
        writer.writerow(["MEAN"] + means)
    return buf.getvalue()


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    cfg = cfg.override(**{
        "lesion_match.dilation_iters": args.dilation_iters,
        "lesion_match.gt_min_size": args.gt_min_size,
        "lesion_match.fp_hd95_penalty": args.fp_penalty,
        "lesion_match.fn_hd95_penalty": args.fn_penalty,
        "jobs": args.jobs,
        "deterministic": args.deterministic,
    })
    subjects = _pair_subjects(args.pred, args.gt)

    def one(item):
        sid, p, g = item
        pred, gt = read_nifti(p, labels=True), read_nifti(g, labels=True)
        return evaluate_case(pred, gt, cfg.lesion_match, gt.spacing, subject=sid)

    reports = _run_all(one, subjects, cfg.jobs, ordered=cfg.deterministic)
    text = reports_to_csv(reports)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.json:
        payload = [
            {"subject": r.subject, **{k: vars(v) for k, v in r.regions.items()},
             "mean_lesion_dice": r.mean_lesion_dice, "mean_lesion_hd95": r.mean_lesion_hd95}
            for r in reports
        ]
        with open(args.json, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.figures:
        from .plotting import plot_evaluation

        plot_evaluation(reports, args.figures)
    return 0


# --------------------------------------------------------------------- parser


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"threshold must lie in (0, 1), got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML pipeline config; flags override it")
    common.add_argument("--jobs", type=int, default=None, help="subjects processed concurrently")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="tumorseg", description="Tumor segmentation pre/post-processing, losses and lesion-wise evaluation."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="intensity normalisation")
    p.add_argument("--plan", default=None, help='comma list of zscore, rescale[:lo:hi], hist[:ref] ("" = copy)')
    p.add_argument("--reference", default=None, help="reference volume for histogram matching")
    p.add_argument("--n-quantiles", type=int, default=None)
    p.add_argument("--figures", default=None, help="directory for before/after histograms")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("threshold", parents=[common], help="region probabilities -> labels")
    p.add_argument("--wt", type=_probability, default=None, help="default 0.45")
    p.add_argument("--tc", type=_probability, default=None, help="default 0.4")
    p.add_argument("--et", type=_probability, default=None, help="default 0.45")
    p.add_argument("input", help="[x,y,z,3] NIfTI in (ET, TC, WT) order, or a directory")
    p.add_argument("output")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("postprocess", parents=[common], help="dust removal and hole filling")
    p.add_argument("--dust-max", type=int, default=None, help="default 50 voxels")
    p.add_argument("--fg-connectivity", type=int, choices=(6, 18, 26), default=None)
    p.add_argument("--hole-connectivity", type=int, choices=(6, 18, 26), default=None)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("clean-gt", parents=[common], help="drop small ground-truth lesions")
    p.add_argument("--dust-max", type=int, default=None)
    p.add_argument("--dilation-iters", type=int, default=None)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_clean_gt)

    p = sub.add_parser("loss", parents=[common], help="compound loss of a prediction")
    p.add_argument("--spec", default=None, help="COMBO1/COMBO2/COMBO3 or kind=weight,...")
    p.add_argument("--gamma", type=float, default=None, help="focal exponent, default 2")
    p.add_argument("--grad-out", default=None, help="write the [x,y,z,3] gradient here")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("evaluate", parents=[common], help="lesion-wise and legacy Dice/HD95")
    p.add_argument("--csv", default=None, help="output CSV (default stdout)")
    p.add_argument("--json", default=None, help="also write a JSON report")
    p.add_argument("--figures", default=None, help="directory for PNG summaries")
    p.add_argument("--dilation-iters", type=int, default=None)
    p.add_argument("--gt-min-size", type=int, default=None)
    p.add_argument("--fp-penalty", type=float, default=None)
    p.add_argument("--fn-penalty", type=float, default=None)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                   help="keep subject order in the output (default on)")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Iterable[str] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.jobs is not None:
            cfg = cfg.override(jobs=args.jobs)
        return args.func(args, cfg)
    except (UsageError,) + INPUT_ERRORS as exc:
        print(f"tumorseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TumorSegError, FloatingPointError, ValueError) as exc:
        print(f"tumorseg {args.command}: failed: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())
