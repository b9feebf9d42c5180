"""Command-line entry point: the full pipeline and the experiments.

Every run writes a machine-readable run manifest (inputs' digests, seeds,
package version) into the output directory, so results are reproducible
from the manifest alone. Exit codes: 0 success, 1 data error, 2 usage.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .calibrate import CalibrationAmbiguousError, calibrate_threshold
from .cleanse import apply_cleaning, diff_reports, hc_from_verdicts, removals_from_flags
from .detect import (
    apply_threshold,
    build_features,
    fit_forest,
    flag,
    save_forest,
    score_verdicts,
    verdicts_from_json,
    verdicts_to_csv,
    verdicts_to_json,
)
from .ingest import (
    ParseError,
    file_digest,
    parse_coco,
    parse_mpii,
    parse_predictions,
    write_bundle,
)
from .metrics import MetricReport, coco_eval, extract_distances, pckh
from .review.store import ReviewQueue, ReviewVerdict, VerdictStore, enqueue_tasks
from .skeleton import COCO17
from .statslab import (
    error_frequency,
    inject_jitter,
    jitter_compression_curve,
    outside_rates_payload,
    removal_distribution,
    sample_size,
    significance,
)

DEFAULT_SEED = 1729
ENV_PREFIX = "KPCLEAN_"
FORMATS = ("json", "csv", "text")


def _env(name: str, default):
    return os.environ.get(ENV_PREFIX + name, default)


@dataclass
class RunContext:
    command: str
    output_dir: Path
    fmt: str
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    extra: Dict[str, object] = field(default_factory=dict)

    def register_input(self, path) -> None:
        p = Path(path)
        self.inputs[str(p)] = file_digest(p)

    def write_manifest(self) -> None:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "tool": "kpclean",
            "version": __version__,
            "command": self.command,
            "format": self.fmt,
            "seed": self.seed,
            "inputs": self.inputs,
            "parameters": self.extra,
        }
        (self.output_dir / "run_manifest.json").write_text(json.dumps(doc, indent=2, default=str))

    def write_json(self, name: str, payload) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        if hasattr(payload, "to_json"):
            path.write_text(payload.to_json())
        else:
            path.write_text(json.dumps(payload, indent=2))
        return path

    def write_text(self, name: str, text: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        path.write_text(text)
        return path


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--coco", metavar="PATH", help="COCO person-keypoints JSON")
    group.add_argument("--mpii", metavar="PATH", help="converted MPII JSON")
    p.add_argument("--headboxes", metavar="PATH", help="companion MPII head-box JSON")


def _add_common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-o", "--output-dir", default=_env("OUTPUT_DIR", "kpclean_out"))
    p.add_argument("--format", choices=FORMATS, default=_env("FORMAT", "json"))
    p.add_argument("--seed", type=int, default=int(_env("SEED", DEFAULT_SEED)))


def _load_dataset(args, ctx: RunContext):
    if args.coco:
        ctx.register_input(args.coco)
        return parse_coco(args.coco)
    ctx.register_input(args.mpii)
    if args.headboxes:
        ctx.register_input(args.headboxes)
    return parse_mpii(args.mpii, headbox_path=args.headboxes)


def _load_predictions(paths: Sequence[str], convention, ctx: RunContext):
    psets = []
    for path in paths:
        ctx.register_input(path)
        psets.append(parse_predictions(path, convention))
    return psets


def _load_verdict_log(path: str) -> List[ReviewVerdict]:
    verdicts = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            verdicts.append(ReviewVerdict.from_dict(json.loads(line)))
    return verdicts


def _eval_report(bundle, pset, label="RAW") -> MetricReport:
    if bundle.convention is COCO17:
        return coco_eval(bundle, pset, label=label)
    return pckh(bundle, pset, label=label)


def cmd_ingest(args, ctx: RunContext) -> int:
    bundle = _load_dataset(args, ctx)
    payload = {
        "convention": bundle.convention.name,
        "poses": len(bundle),
        "usable_poses": len(bundle.usable),
        "labeled_keypoints": bundle.labeled_keypoint_count(),
        "images": len(bundle.images),
        "source_digest": bundle.source_digest,
        "warnings": list(bundle.warnings),
        "outside_bbox": outside_rates_payload(bundle),
    }
    ctx.write_json("dataset_summary.json", payload)
    print(json.dumps(payload, indent=2 if ctx.fmt != "text" else None))
    return 0


def cmd_eval(args, ctx: RunContext) -> int:
    bundle = _load_dataset(args, ctx)
    reports = {}
    for pset in _load_predictions(args.pred, bundle.convention, ctx):
        report = _eval_report(bundle, pset, label=args.label)
        reports[pset.model_id] = report
        ctx.write_json(f"report_{pset.model_id}.json", report)
        if ctx.fmt == "text":
            print(f"== {pset.model_id} ==")
            print(report.to_text())
        else:
            print(report.to_json())
    ctx.extra["models"] = sorted(reports)
    return 0


def _score_chain(args, ctx: RunContext):
    bundle = _load_dataset(args, ctx)
    psets = _load_predictions(args.pred, bundle.convention, ctx)
    records = extract_distances(
        bundle, psets, iou_threshold=args.iou_threshold, feature_norm=args.feature_norm
    )
    vectors = build_features(records, len(psets), feature_dim=args.feature_dim)
    model = fit_forest(vectors, t=args.trees, psi=args.psi, seed=args.seed)
    verdicts = score_verdicts(model, vectors)
    ctx.extra.update(
        {
            "models": [p.model_id for p in psets],
            "trees": args.trees,
            "psi": args.psi,
            "feature_norm": args.feature_norm,
            "feature_dim": args.feature_dim,
            "iou_threshold": args.iou_threshold,
        }
    )
    return bundle, model, verdicts


def cmd_score(args, ctx: RunContext) -> int:
    _, model, verdicts = _score_chain(args, ctx)
    save_forest(model, ctx.output_dir / "forest.json")
    ctx.write_text("scores.csv", verdicts_to_csv(verdicts))
    ctx.write_text("scores.json", verdicts_to_json(verdicts))
    print(f"scored {len(verdicts)} keypoints; artifacts in {ctx.output_dir}")
    return 0


def cmd_calibrate(args, ctx: RunContext) -> int:
    ctx.register_input(args.scores)
    verdicts = verdicts_from_json(Path(args.scores).read_text())
    result = calibrate_threshold(verdicts, bin_width=args.bin_width, strategy=args.strategy)
    ctx.write_json("calibration.json", result)
    print(json.dumps({"threshold": result.threshold, "strategy": result.strategy}))
    return 0


def cmd_clean(args, ctx: RunContext) -> int:
    if args.verdicts:
        bundle = _load_dataset(args, ctx)
        ctx.register_input(args.verdicts)
        removals = hc_from_verdicts(bundle, _load_verdict_log(args.verdicts))
        variant = "HC"
    else:
        bundle, model, verdicts = _score_chain(args, ctx)
        if args.threshold is not None:
            threshold = args.threshold
            ctx.extra["threshold_source"] = "override"
        else:
            result = calibrate_threshold(verdicts, strategy=args.strategy)
            threshold = result.threshold
            ctx.write_json("calibration.json", result)
            ctx.extra["threshold_source"] = "calibrated"
        ctx.extra["threshold"] = threshold
        flagged = flag(verdicts, threshold)
        ctx.write_text("scores.csv", verdicts_to_csv(apply_threshold(verdicts, threshold)))
        removals = removals_from_flags(flagged)
        variant = args.variant
    cleaned, manifest = apply_cleaning(bundle, removals, variant=variant)
    suffix = ".json"
    out_name = f"cleaned_{variant.lower()}{suffix}"
    write_bundle(cleaned, ctx.output_dir / out_name)
    ctx.write_json("cleaning_manifest.json", manifest)
    print(
        f"removed {manifest.count} of {manifest.annotated_total} labeled keypoints "
        f"({100.0 * manifest.fraction:.2f}%); cleaned file: {out_name}"
    )
    return 0


def cmd_diff(args, ctx: RunContext) -> int:
    def load(path):
        ctx.register_input(path)
        doc = json.loads(Path(path).read_text())
        if "metrics" in doc:
            return MetricReport.from_dict(doc)
        return {model: MetricReport.from_dict(rep) for model, rep in doc.items()}

    diff = diff_reports(load(args.raw), load(args.cleaned))
    ctx.write_json("diff.json", diff)
    if ctx.fmt == "text":
        for model, deltas in diff.deltas.items():
            for metric, delta in deltas.items():
                print(f"{model:20s} {metric:12s} {delta:+7.3f}")
        if diff.order_changed:
            print("leaderboard order changed:", diff.leaderboard_before, "->", diff.leaderboard_after)
    else:
        print(diff.to_json())
    return 0


def cmd_mc_removal(args, ctx: RunContext) -> int:
    bundle = _load_dataset(args, ctx)
    (pset,) = _load_predictions([args.pred], bundle.convention, ctx)
    dist = removal_distribution(
        bundle, pset, args.metric, k=args.k, reps=args.reps, seed=args.seed
    )
    ctx.extra.update({"metric": args.metric, "k": args.k, "reps": args.reps})
    ctx.write_json("removal_distribution.json", dist)
    ctx.write_text("removal_distribution.csv", dist.to_csv())
    out = {"metric": args.metric, "k": args.k, "mean": dist.mean, "std": dist.std}
    if args.cleaned_score is not None:
        out["sigma_multiples"] = significance(args.cleaned_score, dist)
    print(json.dumps(out))
    return 0


def cmd_sample_size(args, ctx: RunContext) -> int:
    n = sample_size(args.population, confidence=args.confidence, margin=args.margin)
    ctx.extra.update(
        {"population": args.population, "confidence": args.confidence, "margin": args.margin}
    )
    ctx.write_json("sample_size.json", {"population": args.population, "sample_size": n})
    print(n)
    return 0


def cmd_freq(args, ctx: RunContext) -> int:
    ctx.register_input(args.verdicts)
    table = error_frequency(_load_verdict_log(args.verdicts))
    ctx.write_json("error_frequency.json", table)
    if ctx.fmt == "csv":
        lines = ["error_class,count,fraction"]
        for cls, count in table.class_counts.items():
            lines.append(f"{cls},{count},{table.class_fractions[cls]:.6f}")
        ctx.write_text("error_frequency.csv", "\n".join(lines) + "\n")
    print(table.to_json())
    return 0


def cmd_jitter(args, ctx: RunContext) -> int:
    bundle = _load_dataset(args, ctx)
    jittered = inject_jitter(bundle, args.sigma_pct, seed=args.seed)
    out_name = f"jittered_{args.sigma_pct:g}.json"
    write_bundle(jittered, ctx.output_dir / out_name)
    ctx.extra["sigma_pct"] = args.sigma_pct
    print(f"jittered dataset written to {out_name}")
    return 0


def cmd_heatmap_ratio(args, ctx: RunContext) -> int:
    bundle = _load_dataset(args, ctx)
    sigmas = [float(s) for s in args.sigmas.split(",")]
    curve = jitter_compression_curve(
        bundle, sigmas, seed=args.seed, replicas=args.replicas
    )
    ctx.extra.update({"sigmas": sigmas, "replicas": args.replicas})
    ctx.write_json("compression_curve.json", {f"{s:g}": r for s, r in curve.items()})
    lines = ["sigma_pct,compression_ratio"]
    lines += [f"{s:g},{r:.8f}" for s, r in curve.items()]
    ctx.write_text("compression_curve.csv", "\n".join(lines) + "\n")
    print(json.dumps({f"{s:g}": r for s, r in curve.items()}))
    return 0


def cmd_serve(args, ctx: RunContext) -> int:
    import uvicorn

    from .review.service import create_app

    bundle = _load_dataset(args, ctx)
    flagged_keys = None
    if args.scores:
        ctx.register_input(args.scores)
        verdicts = verdicts_from_json(Path(args.scores).read_text())
        flagged = [v for v in verdicts if v.flagged]
        flagged_keys = {(v.pose_id, v.joint_index) for v in flagged}
        by_pose: Dict[str, List[int]] = {}
        for v in flagged:
            by_pose.setdefault(v.pose_id, []).append(v.joint_index)
        tasks = enqueue_tasks(bundle, "flagged", flagged=by_pose)
    else:
        tasks = enqueue_tasks(bundle, "random_sample", n=args.sample, seed=args.seed)
    store = VerdictStore(Path(args.verdict_dir))
    queue = ReviewQueue(tasks)
    files = {img_id: info.file_name for img_id, info in bundle.images.items()}
    app = create_app(
        store,
        queue,
        image_root=Path(args.images_root) if args.images_root else None,
        image_files=files,
        flagged_keys=flagged_keys,
    )
    print(f"serving {len(tasks)} review tasks on port {args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpclean",
        description="Detect, review and remove faulty keypoint annotations.",
    )
    parser.add_argument("--version", action="version", version=f"kpclean {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a dataset and summarize it")
    _add_dataset_args(p)
    _add_common_args(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("eval", help="evaluate predictions (AP/AR or PCKh)")
    _add_dataset_args(p)
    p.add_argument("--pred", action="append", required=True, metavar="PATH")
    p.add_argument("--label", default="RAW")
    _add_common_args(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("score", help="score keypoints with the outlier detector")
    _add_dataset_args(p)
    p.add_argument("--pred", action="append", required=True, metavar="PATH")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--psi", type=int, default=256)
    p.add_argument("--feature-norm", choices=("headsize", "pixel"), default="headsize")
    p.add_argument("--feature-dim", choices=("scalar", "xy"), default="scalar")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    _add_common_args(p)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("calibrate", help="derive the flagging threshold from scores")
    p.add_argument("--scores", required=True, metavar="PATH", help="scores.json from `score`")
    p.add_argument("--bin-width", type=float, default=0.01)
    p.add_argument("--strategy", choices=("mode", "valley"), default="mode")
    _add_common_args(p)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("clean", help="produce a cleaned dataset variant")
    _add_dataset_args(p)
    p.add_argument("--pred", action="append", metavar="PATH", default=[])
    p.add_argument("--verdicts", metavar="PATH", help="verdict JSONL for hand cleaning (HC)")
    p.add_argument("--threshold", type=float, help="override the calibrated threshold")
    p.add_argument("--strategy", choices=("mode", "valley"), default="mode")
    p.add_argument("--variant", choices=("AC", "TC"), default="AC")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--psi", type=int, default=256)
    p.add_argument("--feature-norm", choices=("headsize", "pixel"), default="headsize")
    p.add_argument("--feature-dim", choices=("scalar", "xy"), default="scalar")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    _add_common_args(p)
    p.set_defaults(fn=cmd_clean)

    p = sub.add_parser("diff", help="compare two metric reports")
    p.add_argument("--raw", required=True, metavar="PATH")
    p.add_argument("--cleaned", required=True, metavar="PATH")
    _add_common_args(p)
    p.set_defaults(fn=cmd_diff)

    p = sub.add_parser("mc-removal", help="random-removal metric distribution")
    _add_dataset_args(p)
    p.add_argument("--pred", required=True, metavar="PATH")
    p.add_argument("--metric", default="PCKh@0.5")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--cleaned-score", type=float)
    _add_common_args(p)
    p.set_defaults(fn=cmd_mc_removal)

    p = sub.add_parser("sample-size", help="finite-population review sample size")
    p.add_argument("--population", type=int, required=True)
    p.add_argument("--confidence", type=float, default=0.99)
    p.add_argument("--margin", type=float, default=0.10)
    _add_common_args(p)
    p.set_defaults(fn=cmd_sample_size)

    p = sub.add_parser("freq", help="error-class frequency tables from verdicts")
    p.add_argument("--verdicts", required=True, metavar="PATH")
    _add_common_args(p)
    p.set_defaults(fn=cmd_freq)

    p = sub.add_parser("jitter", help="inject annotation jitter")
    _add_dataset_args(p)
    p.add_argument("--sigma-pct", type=float, required=True)
    _add_common_args(p)
    p.set_defaults(fn=cmd_jitter)

    p = sub.add_parser("heatmap-ratio", help="compression ratio vs jitter level")
    _add_dataset_args(p)
    p.add_argument("--sigmas", default="0,0.005,0.01,0.02")
    p.add_argument("--replicas", type=int, default=16)
    _add_common_args(p)
    p.set_defaults(fn=cmd_heatmap_ratio)

    p = sub.add_parser("serve", help="run the review service")
    _add_dataset_args(p)
    p.add_argument("--scores", metavar="PATH", help="scores.json; serves flagged poses")
    p.add_argument("--sample", type=int, default=0, help="random sample size when no scores")
    p.add_argument("--images-root", metavar="DIR")
    p.add_argument("--verdict-dir", default="kpclean_verdicts")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    _add_common_args(p)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    ctx = RunContext(
        command=args.command,
        output_dir=Path(args.output_dir),
        fmt=args.format,
        seed=args.seed,
    )
    ctx.output_dir.mkdir(parents=True, exist_ok=True)
    try:
        code = args.fn(args, ctx)
    except (ParseError, CalibrationAmbiguousError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        ctx.extra["error"] = str(exc)
        ctx.write_manifest()
        return 1
    ctx.write_manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
