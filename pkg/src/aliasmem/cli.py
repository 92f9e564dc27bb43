"""Command line entry point: ``aliasmem {gen-data,train,eval,probe,gradcheck}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .camosim import SimConfig, read_dataset, record_dataset, write_dataset
from .errors import ConfigError
from .harness.config import VARIANTS, RunConfig, load_config
from .harness.evaluate import evaluate, sim_config
from .harness.gradcheck import full_loss_check, tiny_config
from .harness.metrics import METRIC_COLUMNS, write_metrics
from .harness.model import build_variant
from .harness.probe import decision_states, linear_probe, separation_score
from .harness.report import loss_curve, metrics_chart
from .harness.train import train
from .numerics import load_checkpoint

log = logging.getLogger("aliasmem")

PROBE_SEED_OFFSET = 7919


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {"seed": args.seed}
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    if getattr(args, "task", None):
        changes["task"] = args.task
    return cfg.replace(**changes)


def _run_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.task}-{cfg.variant}-s{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(run: Path, cfg: RunConfig, command: str) -> None:
    """Plain-text manifest: version, command, seed and a digest of every file in the run directory."""
    lines = [f"aliasmem {__version__}", f"command = {command}", f"task = {cfg.task}",
             f"variant = {cfg.variant}", f"seed = {cfg.seed}", "files:"]
    for f in sorted(run.iterdir()):
        if f.is_file() and f.name != "manifest.txt":
            lines.append(f"  {f.name} sha256={_sha256(f)}")
    (run / "manifest.txt").write_text("\n".join(lines) + "\n")


def _emit(rows: list[dict], columns) -> None:
    w = csv.DictWriter(sys.stdout, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    sim = SimConfig(image_size=cfg.image_size, min_swaps=cfg.min_swaps, max_swaps=cfg.max_swaps)
    ds = record_dataset(args.task, args.episodes, args.seed, sim)
    write_dataset(args.out, ds)
    lengths = [len(ep) for ep in ds.episodes]
    _emit([{"task": args.task, "episodes": len(lengths), "frames": sum(lengths), "seed": args.seed,
            "path": args.out}], ("task", "episodes", "frames", "seed", "path"))
    return 0


def _dataset(args, cfg: RunConfig):
    if getattr(args, "data", None):
        ds = read_dataset(args.data)
        if ds.task != cfg.task:
            raise ConfigError(f"dataset task {ds.task!r} does not match config task {cfg.task!r}")
        return ds
    return record_dataset(cfg.task, cfg.episodes, cfg.data_seed, sim_config(cfg))


def cmd_train(args) -> int:
    cfg = _config(args)
    run = _run_dir(args, cfg)
    (run / "config.txt").write_text(cfg.to_text())
    result = train(cfg, _dataset(args, cfg), run)
    loss_curve(result.history, run / "loss_curve.png")
    write_manifest(run, cfg, "train")
    first = result.history[0]["loss"] if result.history else float("nan")
    last = result.history[-1]["loss"] if result.history else float("nan")
    _emit([{"task": cfg.task, "variant": cfg.variant, "steps": len(result.history),
            "first_loss": f"{first:.6f}", "last_loss": f"{last:.6f}", "diverged": result.diverged,
            "seed": cfg.seed}], ("task", "variant", "steps", "first_loss", "last_loss", "diverged", "seed"))
    return 1 if result.diverged else 0


def _load_model(run: Path, cfg: RunConfig):
    ckpt = run / "model.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"no checkpoint at {ckpt}; run `aliasmem train` first")
    model = build_variant(cfg, np.random.default_rng([cfg.seed, 1]))
    load_checkpoint(ckpt, model, use_ema=cfg.use_ema)
    return model


def _probe_data(cfg: RunConfig):
    return record_dataset(cfg.task, cfg.probe_episodes, cfg.data_seed + PROBE_SEED_OFFSET, sim_config(cfg))


def cmd_eval(args) -> int:
    cfg = _config(args)
    run = _run_dir(args, cfg)
    model = _load_model(run, cfg)
    report = evaluate(model, cfg, args.trials)
    if not args.no_probe:
        probe = linear_probe(model, _probe_data(cfg), cfg)
        if probe.skipped is None:
            report = report.with_probe(probe.correct, probe.total)
    rows = [report.row(cfg.task, cfg.variant, cfg.seed)]
    write_metrics(run / "metrics.csv", rows)
    metrics_chart(rows, run / "metrics.png")
    write_manifest(run, cfg, "eval")
    _emit(rows, METRIC_COLUMNS)
    return 0


PROBE_COLUMNS = ("task", "variant", "correct", "total", "CSR", "chance", "p_value", "above_chance",
                 "separation", "seed")


def cmd_probe(args) -> int:
    cfg = _config(args)
    run = _run_dir(args, cfg)
    model = _load_model(run, cfg)
    ds = _probe_data(cfg)
    res = linear_probe(model, ds, cfg)
    x, y, _ = decision_states(model, ds, cfg)
    sep = separation_score(x, y)
    row = {"task": cfg.task, "variant": cfg.variant, "correct": res.correct, "total": res.total,
           "CSR": "NA" if res.csr is None else f"{res.csr:.6f}", "chance": f"{res.chance:.6f}",
           "p_value": f"{res.p_value:.6g}", "above_chance": res.above_chance,
           "separation": "NA" if sep is None else f"{sep:.6f}", "seed": cfg.seed}
    with open(run / "probe.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PROBE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow(row)
    write_manifest(run, cfg, "probe")
    _emit([row], PROBE_COLUMNS)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    report = full_loss_check(tiny_config(task=cfg.task, variant=cfg.variant), seed=cfg.seed,
                             max_entries=args.entries)
    rows = [{"parameter": k, "max_rel_error": f"{v:.3e}", "entries": report.checked_entries[k]}
            for k, v in report.max_rel_error.items()]
    _emit(rows, ("parameter", "max_rel_error", "entries"))
    failed = report.failures(args.tolerance)
    if failed:
        log.error("%d parameter tensors exceed %.1e", len(failed), args.tolerance)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aliasmem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="run directory (default: runs/<task>-<variant>-s<seed>)"):
        p.add_argument("--config", help="key = value run configuration")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("gen-data", help="record expert episodes to a dataset file")
    p.add_argument("--task", required=True, choices=("episodic", "spatial", "sequential"))
    p.add_argument("--episodes", type=int, default=120)
    common(p, out_help="dataset file to write")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write checkpoint, loss table and curve")
    common(p)
    p.add_argument("--data", help="dataset file (default: record per config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation, metrics table and chart")
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--no-probe", action="store_true", help="leave CSR empty")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="linear probe and separation score on frozen states")
    common(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    common(p)
    p.add_argument("--entries", type=int, default=6, help="probed entries per parameter tensor")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gen-data" and not args.out:
        args.out = f"{args.task}-s{args.seed}.amsim"
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
