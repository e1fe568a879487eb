"""Command line interface.

Subcommands cover the full pipeline: dataset statistics, the three attacks,
plan application, the uniformization defense, detector evaluation, and plan
verification.  Every run records its configuration next to its outputs and
fails with a single-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import (
    FLAG_ATTACKED,
    ScalePlan,
    blind_attack,
    distribution_aware_attack,
    model_aware_attack,
    verify_plan,
)
from .dataset_io import load_dataset, iter_class_annotations, write_frame, write_manifest
from .defense import DefenseConfig, defense_plan, materialize_defense, pre_scales
from .detector import detector_from_spec
from .errors import ScaleAdvError
from .evaluate import asr, evaluate_detector
from .stats import build_histogram, js_divergence

DEFAULT_SCALE_SWEEP = "0.8,0.9,1.1,1.2"


@dataclass
class RunConfig:
    """A parsed invocation: subcommand name plus its options."""

    command: str
    options: dict


def _parse_classes(value: str):
    if value.strip().lower() in ("all", "*"):
        return None
    classes = tuple(c.strip() for c in value.split(",") if c.strip())
    if not classes:
        raise ValueError(f"no class names in {value!r}")
    return classes


def _out_dir(options) -> Path:
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_config(out: Path, config: RunConfig):
    payload = {"command": config.command, "version": __version__,
               "options": {k: str(v) if isinstance(v, Path) else v for k, v in config.options.items()}}
    (out / "run_config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_tsv(path: Path, header: list, rows: list):
    lines = ["\t".join(str(c) for c in header)]
    lines += ["\t".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _load_frames(options):
    return load_dataset(options["manifest"], workers=options.get("workers", 1))


def _detector(options, out: Path):
    workdir = os.environ.get("SCALEADV_WORKDIR") or out / "detector_io"
    return detector_from_spec(options["detector"], workdir=workdir, timeout=options.get("timeout", 300.0))


def _plan_summary(out: Path, plan: ScalePlan):
    attacked = sum(e.flag == FLAG_ATTACKED for e in plan.entries.values())
    lines = [
        f"attack: {plan.attack}",
        f"entries: {len(plan.entries)}",
        f"attacked: {attacked}",
        f"unattacked: {len(plan.entries) - attacked}",
        f"mean_abs_sigma: {plan.mean_abs_sigma:.6f}",
    ]
    lines += [f"param {k}: {plan.params[k]}" for k in sorted(plan.params)]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def cmd_stats(config: RunConfig) -> int:
    from .plots import save_mass_histogram

    options = config.options
    out = _out_dir(options)
    frames = _load_frames(options)
    volumes = np.array([ann.box.volume
                        for _, _, ann in iter_class_annotations(frames, options["classes"])])
    if volumes.size == 0:
        raise ScaleAdvError("no annotations matching the requested classes")
    hist = build_histogram(volumes, options["bins"])
    _write_tsv(out / "histogram.tsv", ["bin_lo", "bin_hi", "mass"],
               [(repr(float(lo)), repr(float(hi)), repr(float(m)))
                for lo, hi, m in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.masses)])

    rows = []
    overlays = {"original": hist}
    for scale in options["scales"]:
        scaled = volumes * scale**3
        lo, hi = min(volumes.min(), scaled.min()), max(volumes.max(), scaled.max())
        p = build_histogram(volumes, options["bins"], (lo, hi))
        q = build_histogram(scaled, options["bins"], (lo, hi))
        rows.append((repr(scale), repr(js_divergence(p, q))))
        overlays[f"x{scale}"] = q
    _write_tsv(out / "js_table.tsv", ["scale", "js_divergence"], rows)

    stats_rows = [("count", volumes.size), ("mean", repr(float(volumes.mean()))),
                  ("std", repr(float(volumes.std()))), ("min", repr(float(volumes.min()))),
                  ("max", repr(float(volumes.max())))]
    _write_tsv(out / "stats.tsv", ["statistic", "value"], stats_rows)
    save_mass_histogram(out / "size_hist.svg", overlays, title="instance volumes under scaling")
    _write_run_config(out, config)
    return 0


def cmd_attack_m(config: RunConfig) -> int:
    from .plots import save_scale_histogram

    options = config.options
    out = _out_dir(options)
    frames = _load_frames(options)
    detector = _detector(options, out)
    plan = model_aware_attack(frames, detector, options["sigma_m"], options["step"],
                              options["thr"], options["classes"])
    plan.save(out / "plan.txt")
    _plan_summary(out, plan)
    save_scale_histogram(out / "scale_hist.svg", [e.scale for e in plan.entries.values()])
    _write_run_config(out, config)
    return 0


def cmd_attack_d(config: RunConfig) -> int:
    from .plots import save_mass_histogram, save_scale_histogram

    options = config.options
    out = _out_dir(options)
    frames = _load_frames(options)
    plan = distribution_aware_attack(frames, options["phi"], options["bins"],
                                     options["seed"], options["tol"], options["classes"])
    plan.save(out / "plan.txt")
    _plan_summary(out, plan)
    volumes = np.array([ann.box.volume
                        for _, _, ann in iter_class_annotations(frames, options["classes"])])
    realized = np.array([plan.scale_for(f.id, idx)**3 * ann.box.volume
                         for f, idx, ann in iter_class_annotations(frames, options["classes"])])
    lo, hi = min(volumes.min(), realized.min()), max(volumes.max(), realized.max())
    save_mass_histogram(out / "hist_compare.svg",
                        {"original": build_histogram(volumes, options["bins"], (lo, hi)),
                         "attacked": build_histogram(realized, options["bins"], (lo, hi))},
                        title=f"volume distribution deviation (phi={options['phi']})")
    save_scale_histogram(out / "scale_hist.svg", [e.scale for e in plan.entries.values()])
    _write_run_config(out, config)
    return 0


def cmd_attack_b(config: RunConfig) -> int:
    options = config.options
    out = _out_dir(options)
    frames = _load_frames(options)
    plan = blind_attack(frames, options["sigma_b"], options["classes"])
    plan.save(out / "plan.txt")
    _plan_summary(out, plan)
    _write_run_config(out, config)
    return 0


def cmd_apply(config: RunConfig) -> int:
    from .attacks import apply_scale_plan

    options = config.options
    out = _out_dir(options)
    frames = _load_frames(options)
    plan = ScalePlan.load(options["plan"])
    modified = apply_scale_plan(frames, plan)
    records = [write_frame(frame, out / "dataset") for frame in modified]
    manifest = write_manifest(records, out / "dataset" / "manifest.txt")
    (out / "summary.txt").write_text(
        f"frames: {len(records)}\nplan: {options['plan']}\nmanifest: {manifest}\n")
    _write_run_config(out, config)
    return 0


def cmd_defend(config: RunConfig) -> int:
    from .plots import save_mass_histogram

    options = config.options
    out = _out_dir(options)
    frames = _load_frames(options)
    dconf = DefenseConfig(options["sigma"], options["scales"], options["seed"], options["mean_size"])
    plans = defense_plan(frames, dconf, options["classes"])
    for replica, plan in enumerate(plans):
        plan.save(out / f"plan_{replica}.txt")
    manifest = materialize_defense(frames, plans, out / "dataset", workers=options.get("workers", 1))

    volumes = np.array([ann.box.volume
                        for _, _, ann in iter_class_annotations(frames, options["classes"])])
    factors = pre_scales(dconf)
    pooled = (volumes[None, :] * factors[:, None]**3).ravel()
    defended = np.array([plan.scale_for(f.id, idx)**3 * ann.box.volume
                         for plan in plans
                         for f, idx, ann in iter_class_annotations(frames, options["classes"])])
    lo, hi = min(pooled.min(), defended.min()), max(pooled.max(), defended.max())
    save_mass_histogram(out / "hist_defense.svg",
                        {"pooled replicas": build_histogram(pooled, 50, (lo, hi)),
                         "defended": build_histogram(defended, 50, (lo, hi))},
                        title=f"defense uniformization (sigma={dconf.sigma}, k={dconf.k_scales})")
    (out / "summary.txt").write_text(
        f"frames in: {len(frames)}\nreplicas: {dconf.k_scales}\n"
        f"frames out: {len(frames) * dconf.k_scales}\nmanifest: {manifest}\n")
    _write_run_config(out, config)
    return 0


def cmd_eval(config: RunConfig) -> int:
    from .plots import save_pr_curve
    from .evaluate import pr_curve

    options = config.options
    out = _out_dir(options)
    frames = _load_frames(options)
    detector = _detector(options, out)
    report = evaluate_detector(detector, frames, options["iou_thr"], options["classes"],
                               options["ap_points"])
    metrics = [("recall", report["recall"], f"iou_thr={options['iou_thr']}"),
               ("ap", report["ap"], f"iou_thr={options['iou_thr']};points={options['ap_points']}")]
    if options.get("baseline_manifest"):
        baseline = load_dataset(options["baseline_manifest"], workers=options.get("workers", 1))
        base_report = evaluate_detector(detector, baseline, options["iou_thr"],
                                        options["classes"], options["ap_points"])
        value = asr(base_report["results"], report["results"], options["asr_denominator"])
        metrics.append(("asr", value, f"iou_thr={options['iou_thr']};denominator={options['asr_denominator']}"))
        metrics.append(("baseline_recall", base_report["recall"], f"iou_thr={options['iou_thr']}"))

    _write_tsv(out / "metrics.tsv", ["metric", "value", "params"],
               [(name, repr(float(value)), params) for name, value, params in metrics])
    width = max(len(name) for name, _, _ in metrics)
    table = [f"{name:<{width}}  {value:>8.3f}  {params}" for name, value, params in metrics]
    (out / "metrics.txt").write_text("\n".join(table) + "\n")
    recalls, precisions = pr_curve(report["pairs"], options["iou_thr"])
    save_pr_curve(out / "pr_curve.svg", recalls, precisions, report["ap"])
    _write_run_config(out, config)
    return 0


def cmd_verify_plan(config: RunConfig) -> int:
    options = config.options
    frames = _load_frames(options)
    plan = ScalePlan.load(options["plan"])
    detector = None
    out = _out_dir(options) if options.get("out") else None
    if options.get("detector"):
        detector = _detector(options, out or Path("."))
    report = verify_plan(frames, plan, detector, options["sample"], options["seed"])
    lines = [f"ok: {report['ok']}", f"entries: {report['entries']}",
             f"behavioral_checked: {report['behavioral_checked']}"]
    lines += [f"violation: {v}" for v in report["violations"]]
    text = "\n".join(lines) + "\n"
    if out is not None:
        (out / "verify_report.txt").write_text(text)
        _write_run_config(out, config)
    sys.stdout.write(text)
    if not report["ok"]:
        raise ScaleAdvError(f"plan verification failed with {len(report['violations'])} violations")
    return 0


_COMMANDS = {
    "stats": cmd_stats,
    "attack-m": cmd_attack_m,
    "attack-d": cmd_attack_d,
    "attack-b": cmd_attack_b,
    "apply": cmd_apply,
    "defend": cmd_defend,
    "eval": cmd_eval,
    "verify-plan": cmd_verify_plan,
}


def _common(sub, out_required=True):
    sub.add_argument("--manifest", required=True, type=Path, help="dataset manifest file")
    if out_required:
        sub.add_argument("--out", required=True, type=Path, help="output directory for artifacts")
    sub.add_argument("--classes", type=_parse_classes, default=("Car",),
                     help="comma-separated class filter, or 'all' (default: Car)")
    sub.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
    sub.add_argument("--workers", type=int, default=1, help="parallel I/O workers (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scaleadv",
        description="Scaling attacks and a size-uniformization defense for LiDAR detection datasets.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("stats", help="size-distribution statistics and JS sensitivity table")
    _common(sub)
    sub.add_argument("--bins", type=int, default=50)
    sub.add_argument("--scales", default=DEFAULT_SCALE_SWEEP,
                     help=f"comma-separated scale sweep (default: {DEFAULT_SCALE_SWEEP})")

    sub = subs.add_parser("attack-m", help="model-aware attack against a detector")
    _common(sub)
    sub.add_argument("--detector", required=True, help="oracle | size-prior:... | external:<command>")
    sub.add_argument("--sigma-m", type=float, required=True, help="scale perturbation bound")
    sub.add_argument("--step", type=float, default=0.01, help="grid step (default: 0.01)")
    sub.add_argument("--thr", type=float, default=0.7, help="IoU threshold for the 0/1 loss")
    sub.add_argument("--timeout", type=float, default=300.0, help="external detector timeout seconds")

    sub = subs.add_parser("attack-d", help="distribution-aware attack")
    _common(sub)
    sub.add_argument("--phi", type=float, required=True, help="target JS divergence")
    sub.add_argument("--bins", type=int, default=50)
    sub.add_argument("--tol", type=float, default=1e-3, help="JS matching tolerance")

    sub = subs.add_parser("attack-b", help="blind constant-scale attack")
    _common(sub)
    sub.add_argument("--sigma-b", type=float, required=True, help="constant scale offset, > -1")

    sub = subs.add_parser("apply", help="apply a scale plan and write the modified dataset")
    _common(sub)
    sub.add_argument("--plan", required=True, type=Path)

    sub = subs.add_parser("defend", help="uniformize sizes into k replicas per frame")
    _common(sub)
    sub.add_argument("--sigma", type=float, required=True, help="uniform range half-width in (0, 1)")
    sub.add_argument("--scales", dest="scales", type=int, default=5, help="replicas per frame (default: 5)")
    sub.add_argument("--mean-size", type=float, default=None, help="override mean volume in m^3")

    sub = subs.add_parser("eval", help="Recall/AP (and ASR against a baseline) for a detector")
    _common(sub)
    sub.add_argument("--detector", required=True)
    sub.add_argument("--iou-thr", type=float, default=0.7)
    sub.add_argument("--ap-points", type=int, default=40, choices=(40, 11))
    sub.add_argument("--baseline-manifest", type=Path, default=None,
                     help="clean dataset to compute attack success rate against")
    sub.add_argument("--asr-denominator", choices=("detected", "all"), default="detected")
    sub.add_argument("--timeout", type=float, default=300.0)

    sub = subs.add_parser("verify-plan", help="check a plan structurally (and behaviorally with a detector)")
    sub.add_argument("--manifest", required=True, type=Path)
    sub.add_argument("--plan", required=True, type=Path)
    sub.add_argument("--out", type=Path, default=None, help="optional report directory")
    sub.add_argument("--detector", default=None)
    sub.add_argument("--sample", type=int, default=8, help="behavioral spot-check count")
    sub.add_argument("--classes", type=_parse_classes, default=("Car",))
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--timeout", type=float, default=300.0)

    return parser


def run(config: RunConfig) -> int:
    """Execute one parsed invocation; raises on failure."""
    if config.command not in _COMMANDS:
        raise ValueError(f"unknown command {config.command!r}")
    return _COMMANDS[config.command](config)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    options = {k: v for k, v in vars(args).items() if k != "command"}
    if "scales" in options and isinstance(options["scales"], str):
        options["scales"] = tuple(float(s) for s in options["scales"].split(",") if s.strip())
    config = RunConfig(args.command, options)
    try:
        return run(config)
    except (ScaleAdvError, ValueError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": str(exc), "type": type(exc).__name__}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
