"""Command line entry point: ``stepwise {synth,train,infer,eval,plot,e2e}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .belief import BeliefFormatError, load_beliefs, write_belief
from .evaluation import THRESHOLDS, bin_and_extract_segments, build_report, precision_recall_curve
from .fileio import (
    atomic_write, format_loss_trace, format_segments, load_features, load_segments,
    read_key_values, save_features, staged_output,
)
from .pipeline import BenchmarkConfig, make_episodes, run_benchmark, run_online
from .plots import render_pr_curves, render_timeline
from .synth import resolve_overlaps
from .tasks import PROFILES
from .tcn import load_model, save_model
from .training import LabeledSequence, TrainConfig, train_task

log = logging.getLogger("stepwise")


class CliError(Exception):
    pass


def _profiles(arg: str | None) -> list[str]:
    if not arg:
        return list(PROFILES)
    codes = [c.strip() for c in arg.split(",") if c.strip()]
    unknown = [c for c in codes if c not in PROFILES]
    if unknown:
        raise CliError(f"unknown profile(s): {', '.join(unknown)}; known: {', '.join(PROFILES)}")
    return codes


def _thresholds(arg: str | None) -> tuple[float, ...]:
    if not arg:
        return THRESHOLDS
    try:
        values = tuple(float(v) for v in arg.split(","))
    except ValueError:
        raise CliError(f"bad --threshold-list {arg!r}") from None
    if not values or any(not 0 < v <= 1 for v in values):
        raise CliError("thresholds must lie in (0, 1]")
    return values


def _config(path) -> dict[str, str]:
    if path is None:
        return {}
    if not Path(path).is_file():
        raise CliError(f"config file {path} not found")
    return read_key_values(path)


def _existing(path, kind="path") -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{kind} {p} does not exist")
    return p


# ------------------------------------------------------------------ synth


def cmd_synth(args) -> int:
    cfg = _benchmark_config(args)
    with staged_output(args.out) as stage:
        for code in cfg.profiles:
            for split, name, count in ((0, "train", cfg.train_episodes), (1, "eval", cfg.eval_episodes)):
                d = stage / code / name
                d.mkdir(parents=True, exist_ok=True)
                for i, ep in enumerate(make_episodes(code, cfg, split, count)):
                    save_features(ep.features, d / f"ep{i:03d}.feat")
                    (d / f"ep{i:03d}.gt.csv").write_text(format_segments(ep.intervals))
    print(f"wrote {len(cfg.profiles)} task(s) to {args.out}")
    return 0


# ------------------------------------------------------------------ train


def _train_config(args) -> TrainConfig:
    values = _config(args.config)
    try:
        return TrainConfig.from_mapping(
            values, lam=args.lam, seed=args.seed, epochs=args.epochs,
            num_stages=args.stages, num_layers=args.layers, hidden_dim=args.hidden,
        )
    except (ValueError, TypeError) as e:
        raise CliError(f"bad training config: {e}") from None


def cmd_train(args) -> int:
    data = _existing(args.data, "data directory")
    cfg = _train_config(args)
    codes = _profiles(args.profiles) if args.profiles else sorted(p.name for p in data.iterdir() if p.name in PROFILES)
    if not codes:
        raise CliError(f"no task directories found under {data}")
    jobs = []
    for code in codes:
        task = PROFILES[code].task
        feats = sorted((data / code / "train").glob("*.feat"))
        if not feats:
            raise CliError(f"no training features in {data / code / 'train'}")
        seqs = []
        for f in feats:
            fs = load_features(f)
            gt = load_segments(f.with_name(f.name[: -len(".feat")] + ".gt.csv"))
            seqs.append(LabeledSequence(fs, resolve_overlaps(gt, len(fs), fs.frame_rate), task))
        jobs.append((code, seqs))
    with staged_output(args.out) as stage:
        for code, seqs in jobs:
            res = train_task(seqs, cfg)
            save_model(res.model, stage / f"{code}.tcn")
            (stage / f"{code}.loss.csv").write_text(format_loss_trace(res.trace))
            print(f"{code}: {len(seqs)} sequences, final loss {res.trace[-1] if res.trace else float('nan'):.5f}")
    return 0


# ------------------------------------------------------------------ infer


def cmd_infer(args) -> int:
    model = load_model(_existing(args.model, "model file"))
    if args.task not in PROFILES:
        raise CliError(f"unknown task code {args.task!r}")
    task = PROFILES[args.task].task
    src = _existing(args.features, "feature path")
    alpha = args.alpha if args.alpha is not None else 3.0
    if src.is_dir():
        feats = sorted(src.glob("*.feat"))
        with staged_output(args.out) as stage:
            for f in feats:
                trace = run_online(load_features(f), model, task, alpha, args.capacity)
                (stage / (f.name[: -len(".feat")] + ".beliefs.csv")).write_bytes(write_belief(trace.records))
        print(f"wrote {len(feats)} belief file(s) to {args.out}")
    else:
        trace = run_online(load_features(src), model, task, alpha, args.capacity)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(out, write_belief(trace.records))
        print(f"wrote {len(trace.records)} belief records to {out}")
    return 0


# ------------------------------------------------------------------ eval / plot


def _stem(p: Path, suffix: str) -> str:
    return p.name[: -len(suffix)] if p.name.endswith(suffix) else p.stem


def _pairs(pred: Path, gt: Path) -> list[tuple[str, Path, Path]]:
    if pred.is_file() and gt.is_file():
        return [(_stem(pred, ".beliefs.csv"), pred, gt)]
    if pred.is_dir() and gt.is_dir():
        gts = {_stem(p, ".gt.csv"): p for p in gt.rglob("*.gt.csv")}
        out = []
        for p in sorted(pred.rglob("*.beliefs.csv")):
            name = _stem(p, ".beliefs.csv")
            if name not in gts:
                raise CliError(f"no ground truth {name}.gt.csv for {p}")
            out.append((name, p, gts[name]))
        if not out:
            raise CliError(f"no *.beliefs.csv files under {pred}")
        return out
    raise CliError("--pred and --gt must both be files or both be directories")


def _load_runs(args):
    """{task: (preds, gts)} plus per-video segments for plotting."""
    per_task: dict[str, tuple[list, list]] = {}
    videos = []
    for name, pf, gf in _pairs(_existing(args.pred, "prediction path"), _existing(args.gt, "ground-truth path")):
        records = load_beliefs(pf)
        if not records:
            raise CliError(f"{pf} contains no belief records")
        code = records[0].task_code
        preds = bin_and_extract_segments(records, video=name)
        gts = load_segments(gf, video=name)
        if not gts:
            raise CliError(f"{gf} contains no ground-truth segments")
        bucket = per_task.setdefault(code, ([], []))
        bucket[0].extend(preds)
        bucket[1].extend(gts)
        videos.append((name, code, preds, gts))
    return per_task, videos


def _write_report(report, out: Path, method: str) -> None:
    (out / "map.csv").write_text(report.map_table_csv(method))
    (out / "precision_recall.csv").write_text(report.pr_table_csv(method))
    (out / "per_task.csv").write_text(report.per_task_csv())


def cmd_eval(args) -> int:
    thresholds = _thresholds(args.threshold_list)
    per_task, _ = _load_runs(args)
    report = build_report(per_task, thresholds)
    with staged_output(args.out) as stage:
        _write_report(report, stage, args.method)
    print(report.format_table(args.method), end="")
    return 0


def _render_plots(per_task, videos, out: Path, threshold: float) -> None:
    for name, code, preds, gts in videos:
        svg = render_timeline(preds, gts, PROFILES[code].num_steps if code in PROFILES else None, title=name)
        (out / f"{name}.timeline.svg").write_text(svg)
    curves = {}
    for code, (preds, gts) in per_task.items():
        precision, recall = precision_recall_curve(preds, gts, threshold)
        curves[code] = (recall, precision)
    (out / "pr_curves.svg").write_text(render_pr_curves(curves, title=f"PR at IOU {threshold:g}"))


def cmd_plot(args) -> int:
    per_task, videos = _load_runs(args)
    with staged_output(args.out) as stage:
        _render_plots(per_task, videos, stage, args.pr_threshold)
    print(f"wrote {len(videos)} timeline(s) and pr_curves.svg to {args.out}")
    return 0


# ------------------------------------------------------------------ e2e


def _benchmark_config(args) -> BenchmarkConfig:
    values = _config(getattr(args, "config", None))
    kinds = {f.name: f.type for f in dataclasses.fields(BenchmarkConfig)}
    kwargs = {}
    for key, raw in values.items():
        key = {"lambda": "lam"}.get(key, key)
        if key not in kinds or key in ("profiles", "thresholds"):
            raise CliError(f"unknown config key {key!r}")
        try:
            kwargs[key] = int(raw) if kinds[key] == "int" else float(raw)
        except ValueError:
            raise CliError(f"bad value for {key}: {raw!r}") from None
    flags = {
        "seed": args.seed, "separation": args.separation, "lam": getattr(args, "lam", None),
        "alpha": getattr(args, "alpha", None), "dim": args.dim, "epochs": getattr(args, "epochs", None),
        "train_episodes": args.train_episodes, "eval_episodes": args.eval_episodes,
    }
    kwargs.update({k: v for k, v in flags.items() if v is not None})
    kwargs["profiles"] = tuple(_profiles(args.profiles))
    if getattr(args, "threshold_list", None):
        kwargs["thresholds"] = _thresholds(args.threshold_list)
    return BenchmarkConfig(**kwargs)


def cmd_e2e(args) -> int:
    cfg = _benchmark_config(args)
    with staged_output(args.out) as stage:
        result = run_benchmark(cfg, stage)
        _write_report(result.report, stage, args.method)
        per_task = {c: (result.predictions[c], result.ground_truth[c]) for c in cfg.profiles}
        videos = []
        for code in cfg.profiles:
            names = sorted({s.video for s in result.ground_truth[code]})
            for n in names:
                videos.append((n, code, [s for s in result.predictions[code] if s.video == n],
                               [s for s in result.ground_truth[code] if s.video == n]))
        _render_plots(per_task, videos, stage, 0.5)
    print(result.report.format_table(args.method), end="")
    print(f"total runtime {result.seconds:.1f} s")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stepwise", description="Online step detection with a causal multi-stage TCN.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--config", help="key=value configuration file (flags take precedence)")
        sp.add_argument("--seed", type=int)

    def synth_flags(sp):
        sp.add_argument("--separation", type=float)
        sp.add_argument("--dim", type=int)
        sp.add_argument("--train-episodes", type=int)
        sp.add_argument("--eval-episodes", type=int)
        sp.add_argument("--profiles", help="comma-separated task codes (default: all built-in)")

    sp = sub.add_parser("synth", help="write synthetic feature files and ground truth")
    common(sp, "output directory")
    synth_flags(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train one model per task")
    common(sp, "output directory for <task>.tcn and <task>.loss.csv")
    sp.add_argument("--data", required=True, help="directory written by `synth`")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--stages", type=int)
    sp.add_argument("--layers", type=int)
    sp.add_argument("--hidden", type=int)
    sp.add_argument("--profiles")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="stream features through the model and write beliefs")
    sp.add_argument("--out", required=True, help="belief CSV (or directory when --features is a directory)")
    sp.add_argument("--model", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--task", required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--capacity", type=int, default=1200)
    sp.set_defaults(func=cmd_infer)

    for name, func, helptext in (("eval", cmd_eval, "score beliefs against ground truth"),
                                 ("plot", cmd_plot, "render timelines and PR curves")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--pred", required=True, help="belief CSV or directory of *.beliefs.csv")
        sp.add_argument("--gt", required=True, help="segment CSV or directory of *.gt.csv")
        sp.add_argument("--method", default="TAS")
        if name == "eval":
            sp.add_argument("--threshold-list")
        else:
            sp.add_argument("--pr-threshold", type=float, default=0.5)
        sp.set_defaults(func=func)

    sp = sub.add_parser("e2e", help="synth + train + infer + eval on the built-in profiles")
    common(sp, "output directory")
    synth_flags(sp)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--threshold-list")
    sp.add_argument("--method", default="TAS")
    sp.set_defaults(func=cmd_e2e)
    return p


def main(argv=None) -> int:
    level = os.environ.get("STEPWISE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, BeliefFormatError, ValueError, OSError) as e:
        print(f"stepwise {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
