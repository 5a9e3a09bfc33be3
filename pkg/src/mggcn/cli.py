"""Command-line front end: train, eval, sample-stats, bench, convert.

Exit codes: 0 success, 1 configuration error, 2 dataset error, 3 training
divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .data import (Dataset, DatasetError, content_hash, convert_linqs, convert_planetoid,
                   load_dataset, save_dataset)
from .instrumentation import REPORT_HEADER, report_rows, sweep
from .models import MODEL_KINDS, ModelError, check_chain, load_checkpoint, make_model, save_checkpoint
from .sampler import (DEGREE_CANDIDATE, LAYER_IMPORTANCE, SAMPLER_TAGS, SamplerKind, batch_sample,
                      derive_stream, sample_table)
from .trainer import (ConfigError, TrainConfig, TrainingDiverged, _csv_text, atomic_write_text,
                      evaluate, run_trials, write_json, write_metrics_csv, write_timing_csv)

EXIT_OK, EXIT_CONFIG, EXIT_DATASET, EXIT_DIVERGED = 0, 1, 2, 3

# Larger-graph profile: wider hidden layer, smaller step.
PROFILES = {"standard": {}, "reddit": {"hidden_dim": 128, "learning_rate": 0.0001}}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_CONFIG, f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


_CONFIG_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    default = _CONFIG_FIELDS[key].default
    try:
        if isinstance(default, tuple):
            return tuple(_int_list(raw))
        if isinstance(default, int):
            return int(raw)
        return float(raw)
    except (ValueError, argparse.ArgumentTypeError):
        raise CliError(EXIT_CONFIG, f"config key {key}: cannot parse {raw!r}") from None


def read_config_file(path: str | Path) -> dict:
    """Flat ``key=value`` text; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_CONFIG, f"config file {p} not found")
    out = {}
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_CONFIG, f"{p}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in ("trials", "profile"):
            out[key] = value
        elif key in _CONFIG_FIELDS:
            out[key] = _coerce(key, value)
        else:
            raise CliError(EXIT_CONFIG, f"{p}:{lineno}: unknown config key {key!r}")
    return out


def resolve_config(args) -> tuple[TrainConfig, int]:
    """Built-in defaults, then profile, then config file, then explicit flags."""
    file_values = read_config_file(args.config) if args.config else {}
    profile = getattr(args, "profile", None) or file_values.pop("profile", "standard")
    if profile not in PROFILES:
        raise CliError(EXIT_CONFIG, f"unknown profile {profile!r}")
    values = dict(PROFILES[profile])
    trials = int(file_values.pop("trials", 20))
    values.update(file_values)
    for key in _CONFIG_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = tuple(flag) if isinstance(flag, list) else flag
    if getattr(args, "trials", None) is not None:
        trials = args.trials
    if trials < 1:
        raise CliError(EXIT_CONFIG, "trials must be >= 1")
    try:
        return TrainConfig(**values), trials
    except (ConfigError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid configuration: {exc}") from None


def packaged_toy(name: str) -> Path | None:
    root = resources.files("mggcn") / "toy" / name
    return Path(str(root)) if root.is_dir() else None


def resolve_dataset_dir(arg: str | None) -> Path:
    if not arg:
        raise CliError(EXIT_DATASET, "no dataset given (use --dataset DIR)")
    p = Path(arg)
    if p.is_dir():
        return p
    toy = packaged_toy(p.name)
    if toy is not None and not p.exists():
        return toy
    raise CliError(EXIT_DATASET, f"dataset directory {p} does not exist")


def open_dataset(args) -> tuple[Dataset, Path]:
    d = resolve_dataset_dir(args.dataset)
    try:
        return load_dataset(d, normalize_features=not args.raw_features), d
    except DatasetError as exc:
        raise CliError(EXIT_DATASET, str(exc)) from None


def _manifest(args, argv, config: TrainConfig | None, dataset_dir: Path | None,
              ds: Dataset | None, outputs: dict) -> dict:
    return {"command": ["mggcn", *argv], "subcommand": args.command, "version": __version__,
            "seed": args.seed, "model": getattr(args, "model", None),
            "config": config.to_dict() if config else None,
            "dataset": None if ds is None else {"name": ds.name, "path": str(dataset_dir),
                                                "content_sha256": content_hash(dataset_dir),
                                                "row_normalized": not args.raw_features},
            "outputs": {k: str(v) for k, v in outputs.items()}}


def _out_dir(args) -> Path:
    out = Path(args.out or f"runs/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- subcommands

def cmd_train(args, argv) -> int:
    config, trials = resolve_config(args)
    ds, ddir = open_dataset(args)
    try:
        summary = run_trials(ds, args.model, config, trials, base_seed=config.seed)
    except ModelError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    out = _out_dir(args)
    paths = {"metrics": out / "metrics.csv", "trial_metrics": out / "metrics_all_trials.csv",
             "timing": out / "timing.csv",
             "summary": out / "summary.json", "checkpoint": out / "checkpoint.npz"}
    # metrics.csv follows the checkpointed trial; every trial goes to metrics_all_trials.csv.
    best = summary.best_trial()
    write_metrics_csv(paths["metrics"], summary, [best])
    write_metrics_csv(paths["trial_metrics"], summary)
    write_timing_csv(paths["timing"], summary)
    doc = summary.to_dict()
    doc["dataset"] = ds.name
    doc["checkpoint_seed"] = best.seed
    doc["accuracy_convention"] = "test accuracy at the best-validation epoch"
    write_json(paths["summary"], doc)
    params = best.params.copy()
    params.extra = {"config": best_cfg(config, best.seed), "dataset": ds.name,
                    "num_features": ds.num_features}
    tmp = paths["checkpoint"].with_suffix(".tmp.npz")
    save_checkpoint(params, tmp)
    tmp.replace(paths["checkpoint"])
    write_json(out / "manifest.json", _manifest(args, argv, config, ddir, ds, paths))
    print(json.dumps({"model": args.model, "mean_accuracy": summary.mean,
                      "std_accuracy": summary.std, "trials": trials, "out": str(out)}))
    return EXIT_OK


def best_cfg(config: TrainConfig, seed: int) -> dict:
    return config.with_seed(seed).to_dict()


def cmd_eval(args, argv) -> int:
    if not args.checkpoint:
        raise CliError(EXIT_CONFIG, "eval needs --checkpoint FILE")
    ds, _ = open_dataset(args)
    try:
        params = load_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(EXIT_DATASET, f"cannot read checkpoint {args.checkpoint}: {exc}") from None
    stored = dict(params.extra.get("config", {}))
    if args.seed is not None:
        stored["seed"] = args.seed
    try:
        config = TrainConfig(**stored)
    except (ConfigError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"checkpoint config invalid: {exc}") from None
    try:
        check_chain(params, ds.num_features)
        if params.num_classes != ds.num_classes:
            raise ModelError(f"checkpoint has {params.num_classes} classes, dataset {ds.num_classes}")
    except ModelError as exc:
        raise CliError(EXIT_DATASET, f"checkpoint does not fit dataset {ds.name}: {exc}") from None
    ids = getattr(ds.split, args.split)
    if not ids:
        raise CliError(EXIT_DATASET, f"{args.split} split is empty")
    model = make_model(params.model, ds.graph, ds.features, config)
    acc = evaluate(ds.graph, ds.features, ds.labels, ids, params, params.model, config, model=model)
    print(json.dumps({"accuracy": acc, "split": args.split, "num_ids": len(ids),
                      "model": params.model, "seed": config.seed}, sort_keys=True))
    return EXIT_OK


def cmd_sample_stats(args, argv) -> int:
    ds, ddir = open_dataset(args)
    g = ds.graph
    m = args.sample_size if args.sample_size is not None else 6
    if m < 1:
        raise CliError(EXIT_CONFIG, "sample size must be >= 1")
    seed = args.seed if args.seed is not None else 0
    if args.targets:
        targets = args.targets
        bad = [t for t in targets if not 0 <= t < g.num_nodes]
        if bad:
            raise CliError(EXIT_CONFIG, f"target {bad[0]} outside [0, {g.num_nodes})")
    else:
        k = min(args.num_targets, g.num_nodes)
        targets = np.sort(np.random.default_rng(derive_stream(seed, 7)).permutation(g.num_nodes)[:k]).tolist()
    kind = {DEGREE_CANDIDATE: SamplerKind.degree_candidate(m),
            LAYER_IMPORTANCE: SamplerKind.layer_importance(m)}.get(
        args.sampler, SamplerKind.uniform_neighbor(m))
    sets = batch_sample(g, targets, kind, seed)
    rows = sample_table(g, sets)
    out = _out_dir(args)
    paths = {"samples": out / "samples.csv", "summary": out / "sample_summary.json"}
    header = ("target", "draw_index", "node", "degree", "hop_distance")
    atomic_write_text(paths["samples"], _csv_text(header, [tuple(r[h] for h in header) for r in rows]))
    hist = Counter(r["hop_distance"] for r in rows)
    summary = {"sampler": args.sampler, "sample_size": m, "num_targets": len(targets),
               "hop_histogram": {str(k): hist[k] for k in sorted(hist)},
               "mean_drawn_degree": float(np.mean([r["degree"] for r in rows])) if rows else None,
               "graph_mean_degree": float(g.degrees.mean()),
               "mean_draws_per_target": len(rows) / len(targets)}
    write_json(paths["summary"], summary)
    write_json(out / "manifest.json", _manifest(args, argv, None, ddir, ds, paths))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_bench(args, argv) -> int:
    out = _out_dir(args)
    if args.kind == "complexity":
        grids = (args.batch_sizes, args.grid, args.layers)
        if not all(grids):
            raise CliError(EXIT_CONFIG, "complexity sweep needs non-empty --batch-sizes, --grid and --layers")
        ds, ddir = open_dataset(args)
        seed = args.seed if args.seed is not None else 0
        try:
            reports = sweep(ds.graph, args.model, args.batch_sizes, args.grid, args.layers,
                            num_batches=args.num_batches, seed=seed)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from None
        path = out / "complexity.csv"
        atomic_write_text(path, _csv_text(REPORT_HEADER, report_rows(reports)))
        write_json(out / "manifest.json", _manifest(args, argv, None, ddir, ds, {"complexity": path}))
        print(path)
        return EXIT_OK
    if not args.grid:
        raise CliError(EXIT_CONFIG, "sample-size sweep needs a non-empty --grid")
    config, trials = resolve_config(args)
    ds, ddir = open_dataset(args)
    rows = []
    for m in args.grid:
        cfg = TrainConfig(**{**config.to_dict(), "sample_size": m})
        s = run_trials(ds, args.model, cfg, trials, base_seed=cfg.seed)
        rows.append((m, repr(s.mean), repr(s.std), trials))
    path = out / "sample_size.csv"
    atomic_write_text(path, _csv_text(("sample_size", "mean_accuracy", "std_accuracy", "trials"), rows))
    write_json(out / "manifest.json", _manifest(args, argv, config, ddir, ds, {"sample_size": path}))
    print(path)
    return EXIT_OK


def cmd_convert(args, argv) -> int:
    if not args.src or not args.out:
        raise CliError(EXIT_CONFIG, "convert needs --src DIR and --out DIR")
    src = Path(args.src)
    if not src.is_dir():
        raise CliError(EXIT_DATASET, f"source directory {src} does not exist")
    try:
        if args.format == "linqs":
            ds = convert_linqs(src, args.name, split_seed=args.split_seed)
        else:
            if not args.name:
                raise CliError(EXIT_CONFIG, "planetoid conversion needs --name")
            ds = convert_planetoid(src, args.name)
    except (DatasetError, OSError) as exc:
        raise CliError(EXIT_DATASET, str(exc)) from None
    save_dataset(ds, args.out)
    print(json.dumps({"name": ds.name, "num_nodes": ds.num_nodes, "num_edges": ds.graph.num_edges,
                      "num_features": ds.num_features, "num_classes": ds.num_classes,
                      "split": list(ds.split.sizes()), "out": args.out}))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--dataset", help="canonical dataset directory (or a packaged toy name)")
    common.add_argument("--model", choices=MODEL_KINDS, default="mggcn")
    common.add_argument("--seed", type=int)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--raw-features", action="store_true", help="skip feature row normalization")

    hyper = _Parser(add_help=False)
    hyper.add_argument("--profile", choices=sorted(PROFILES))
    hyper.add_argument("--trials", type=int)
    hyper.add_argument("--batch-size", dest="batch_size", type=int)
    hyper.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    hyper.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    hyper.add_argument("--weight-decay", dest="weight_decay", type=float)
    hyper.add_argument("--sample-size", dest="sample_size", type=int)
    hyper.add_argument("--max-epochs", dest="max_epochs", type=int)
    hyper.add_argument("--early-stop-window", dest="early_stop_window", type=int)
    hyper.add_argument("--leaky-slope", dest="leaky_slope", type=float)
    hyper.add_argument("--num-layers", dest="num_layers", type=int)
    hyper.add_argument("--sgc-k", dest="sgc_k", type=int)
    hyper.add_argument("--sampled-sizes", dest="sampled_sizes", type=_int_list)

    parser = _Parser(prog="mggcn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mggcn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common, hyper], help="train and test over seeded trials")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on one split")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample-stats", parents=[common], help="per-draw sampler statistics")
    p.add_argument("--sampler", choices=SAMPLER_TAGS, default=DEGREE_CANDIDATE)
    p.add_argument("--sample-size", dest="sample_size", type=int)
    p.add_argument("--targets", type=_int_list)
    p.add_argument("--num-targets", type=int, default=100)
    p.set_defaults(func=cmd_sample_stats)

    p = sub.add_parser("bench", parents=[common, hyper], help="sample-size or complexity sweeps")
    p.add_argument("--kind", choices=("sample-size", "complexity"), default="sample-size")
    p.add_argument("--grid", type=_int_list, default=[1, 2, 4, 6, 8],
                   help="sample sizes M (or s for the sampled model)")
    p.add_argument("--batch-sizes", type=_int_list, default=[64])
    p.add_argument("--layers", type=_int_list, default=[2, 3])
    p.add_argument("--num-batches", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("convert", parents=[common], help="convert a public dataset to canonical form")
    p.add_argument("--format", choices=("linqs", "planetoid"), required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--name")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
