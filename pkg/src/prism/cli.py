"""Command-line interface.

Commands: gen, train, eval, sweep, stress (remove-signal | shorten |
dropout), export-weights, describe. Exit codes: 0 success, 1 usage error,
2 runtime failure. Every training run writes its resolved config to the
run directory before doing any work; `--config` accepts that same TSV to
reproduce a run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import evaluation, synth, training
from .data import SplitSpec, load_dataset, save_dataset, split
from .errors import PrismError
from .model import ModelConfig, PrismModel
from .training import TrainConfig


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _add_train_flags(p: Parser):
    p.add_argument("--n", dest="states", type=int, default=2,
                   help="number of background states (0 = baseline)")
    p.add_argument("--alpha", type=float, default=1.0, help="intervention loss weight")
    p.add_argument("--beta", type=float, default=1.0, help="diversity loss weight")
    p.add_argument("--t", type=float, default=2.0, help="diversity temperature")
    p.add_argument("--delta", type=float, default=1.0, help="Huber threshold")
    p.add_argument("--hidden", type=int, default=128, help="feature width d'")
    p.add_argument("--backbone", default="gated_conv", help="backbone body name")
    p.add_argument("--dtype", default="float32", choices=("float32", "float64"),
                   help="training dtype")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    p.add_argument("--steps", dest="max_steps", type=int, default=50000,
                   help="max training steps")
    p.add_argument("--lr", dest="peak_lr", type=float, default=5e-4,
                   help="peak learning rate")
    p.add_argument("--min-lr", dest="min_lr", type=float, default=1e-4,
                   help="cosine floor learning rate")
    p.add_argument("--warmup-lr", dest="warmup_start", type=float, default=1e-5,
                   help="initial warmup learning rate")
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int, default=5000)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=500,
                   help="validation cadence in steps")
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--retention", dest="signal_retention", type=float, default=None,
                   help="dropout-baseline retention rate on encoded signals")
    p.add_argument("--desk", action="store_true",
                   help="desk-scale profile: steps=3000, hidden=32, warmup=300")


def _train_config(args) -> TrainConfig:
    if args.states < 0:
        raise UsageError("--n must be >= 0")
    if args.alpha < 0:
        raise UsageError("--alpha must be >= 0")
    if args.beta < 0:
        raise UsageError("--beta must be >= 0")
    if args.t <= 0:
        raise UsageError("--t must be > 0")
    fields = dict(
        states=args.states, alpha=args.alpha, beta=args.beta, t=args.t,
        delta=args.delta, hidden=args.hidden, backbone=args.backbone,
        dtype=args.dtype, batch_size=args.batch_size, max_steps=args.max_steps,
        warmup_start=args.warmup_start, peak_lr=args.peak_lr, min_lr=args.min_lr,
        warmup_steps=args.warmup_steps, eval_every=args.eval_every,
        seed=args.seed, signal_retention=args.signal_retention,
    )
    try:
        if args.desk:
            for key, value in (("max_steps", 50000), ("hidden", 128), ("warmup_steps", 5000)):
                if fields[key] == value:
                    del fields[key]
            return TrainConfig.desk_profile(**fields)
        return TrainConfig(**fields)
    except ValueError as exc:
        raise UsageError(str(exc))


def _config_defaults_from_file(path: Path) -> dict:
    raw = training.read_config(path)
    out = {}
    converters = {
        "states": int, "alpha": float, "beta": float, "t": float, "delta": float,
        "hidden": int, "backbone": str, "dtype": str, "batch_size": int,
        "max_steps": int, "warmup_start": float, "peak_lr": float, "min_lr": float,
        "warmup_steps": int, "eval_every": int, "seed": int,
    }
    for key, conv in converters.items():
        if key in raw and raw[key] != "":
            out[key] = conv(raw[key])
    if raw.get("signal_retention"):
        out["signal_retention"] = float(raw["signal_retention"])
    return out


def _load_split(data_dir):
    records = load_dataset(Path(data_dir) / "manifest.tsv")
    return split(records, SplitSpec())


def _pick_split(data_dir, which: str):
    records = load_dataset(Path(data_dir) / "manifest.tsv")
    if which == "all":
        return sorted(records, key=lambda r: r.gene_id)
    train_recs, val_recs, test_recs = split(records, SplitSpec())
    return {"train": train_recs, "val": val_recs, "test": test_recs}[which]


def _print_triple(label: str, triple: evaluation.MetricTriple):
    pearson = "nan" if triple.pearson is None else f"{triple.pearson:.6f}"
    print(f"{label}\tmse={triple.mse:.6f}\tmae={triple.mae:.6f}\tpearson={pearson}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    fg = tuple(_int_list(args.foreground))
    bg = tuple(i for i in range(args.tracks) if i not in fg)
    config = synth.ScmConfig(
        genes=args.genes, length=args.length, tracks=args.tracks,
        foreground_tracks=fg, background_tracks=bg,
        confound_strength=args.gamma, causal_strength=args.w,
        noise_sd=args.sigma, states=args.states, seed=args.seed,
    )
    records, truths = synth.generate(config)
    meta = {
        "generator": "scm",
        "expression_transform": "identity (synthetic targets are already log-scale)",
        "gamma": f"{args.gamma:g}", "w": f"{args.w:g}", "sigma": f"{args.sigma:g}",
        "states": str(args.states), "seed": str(args.seed),
    }
    out = Path(args.out)
    manifest = save_dataset(
        records, out, metadata=meta,
        normalize_percentile=None if args.no_normalize else 99.0,
    )
    synth.save_ground_truth(truths, out)
    print(f"wrote {len(records)} genes to {manifest}")
    return 0


def cmd_train(args) -> int:
    config = _train_config(args)
    train_recs, val_recs, _ = _load_split(args.data)
    state = training.train(config, train_recs, val_recs, args.out)
    print(f"run complete: best validation MSE {state.best_validation_mse:.6f}")
    print(f"artifacts in {state.run_dir}")
    return 0


def cmd_eval(args) -> int:
    model = training.load_model_from_run(args.run, which=args.which)
    records = _pick_split(args.data, args.split)
    triple = evaluation.evaluate_model(model, records)
    _print_triple(f"{args.split}[{args.which}]", triple)
    if args.out:
        with open(args.out, "w") as fh:
            pearson = "nan" if triple.pearson is None else f"{triple.pearson:.9g}"
            fh.write("split\twhich\tmse\tmae\tpearson\n")
            fh.write(f"{args.split}\t{args.which}\t{triple.mse:.9g}\t{triple.mae:.9g}\t{pearson}\n")
    return 0


def cmd_sweep(args) -> int:
    parameter = {"n": "states", "alpha": "alpha", "beta": "beta"}[args.param]
    values = _int_list(args.values) if parameter == "states" else _float_list(args.values)
    base = _train_config(args)
    train_recs, val_recs, test_recs = _load_split(args.data)
    report = evaluation.sweep(
        base, parameter, values, train_recs, val_recs, test_recs,
        seeds=_int_list(args.seeds), out_root=Path(args.out) / "runs",
    )
    path = report.write_tsv(
        Path(args.out) / "sweep.tsv", _int_list(args.seeds), evaluation.config_hash(base)
    )
    if args.emit_plot_data:
        report.write_plot_data(Path(args.out) / "plot_data")
    for entry in report.aggregate():
        print(_aggregate_line(f"{args.param}={entry['value']}", entry))
    print(f"report: {path}")
    return 0


def _aggregate_line(label: str, entry: dict) -> str:
    parts = [label]
    for metric in ("mse", "mae", "pearson"):
        mean = entry[f"{metric}_mean"]
        if mean is None:
            parts.append(f"{metric}=nan")
        else:
            parts.append(f"{metric}={mean:.4f}±{entry[f'{metric}_sd']:.4f}")
    return "\t".join(parts)


def cmd_stress_remove(args) -> int:
    model = training.load_model_from_run(args.run, which=args.which)
    records = _pick_split(args.data, args.split)
    result = evaluation.signal_removal_test(model, records, _int_list(args.tracks))
    _print_triple("intact", result.intact)
    _print_triple(f"removed {result.track_indices}", result.removed)
    dp = "nan" if result.delta_pearson is None else f"{result.delta_pearson:+.6f}"
    print(
        f"degradation\tdmse={result.delta_mse:+.6f}\tdmae={result.delta_mae:+.6f}"
        f"\tdpearson={dp}"
    )
    return 0


def cmd_stress_shorten(args) -> int:
    model = training.load_model_from_run(args.run, which=args.which)
    records = _pick_split(args.data, args.split)
    rows = evaluation.shortened_input_test(model, records, _int_list(args.lengths))
    for length, triple in rows:
        _print_triple(f"length={length}", triple)
    return 0


def cmd_stress_dropout(args) -> int:
    base = _train_config(args)
    train_recs, val_recs, test_recs = _load_split(args.data)
    report = evaluation.dropout_baseline(
        base, _float_list(args.rates), train_recs, val_recs, test_recs,
        seeds=_int_list(args.seeds), out_root=Path(args.out) / "runs",
    )
    path = report.write_tsv(
        Path(args.out) / "dropout.tsv", _int_list(args.seeds), evaluation.config_hash(base)
    )
    if args.emit_plot_data:
        report.write_plot_data(Path(args.out) / "plot_data")
    for entry in report.aggregate():
        print(_aggregate_line(f"retention={entry['value']}", entry))
    print(f"report: {path}")
    return 0


def cmd_export_weights(args) -> int:
    model = training.load_model_from_run(args.run, which=args.which)
    records = _pick_split(args.data, args.split)
    path = evaluation.export_weights(model, records, args.out)
    print(f"wrote {path}")
    return 0


def cmd_describe(args) -> int:
    config = ModelConfig(
        tracks=args.tracks, hidden=args.hidden, states=args.states,
        aux_dim=args.aux_dim, backbone=args.backbone, seed=0,
    )
    counts = PrismModel(config).describe()
    print(f"model d={args.tracks} d'={args.hidden} n={args.states} aux={args.aux_dim}")
    for owner in ("theta", "omega", "phi"):
        print(f"{owner}\t{counts[owner]}")
    print(f"total\t{counts['total']}")
    print(f"confounder_encoder\t{counts['confounder_encoder']}")
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="prism", description=__doc__,
                    formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen", help="generate a synthetic dataset", formatter_class=fmt)
    p.add_argument("--genes", type=int, default=1000)
    p.add_argument("--length", type=int, default=2000, help="window length L")
    p.add_argument("--tracks", type=int, default=3, help="signal tracks d")
    p.add_argument("--foreground", default="0", help="comma list of causal tracks")
    p.add_argument("--gamma", type=float, default=1.0, help="confound strength")
    p.add_argument("--w", type=float, default=1.0, help="causal strength")
    p.add_argument("--sigma", type=float, default=0.2, help="target noise sd")
    p.add_argument("--states", type=int, default=4, help="latent chromatin states")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-normalize", action="store_true",
                   help="skip 99th-percentile track normalization")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model", formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", default=None,
                   help="config.tsv from a previous run; flags still override")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)
    parser.train_subparser = p

    p = sub.add_parser("eval", help="evaluate a finished run", formatter_class=fmt)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--which", default="best", choices=("best", "final"))
    p.add_argument("--out", default=None, help="optional metrics TSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="hyperparameter grid", formatter_class=fmt)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True, choices=("n", "alpha", "beta"))
    p.add_argument("--values", required=True, help="comma list of grid values")
    p.add_argument("--seeds", default="2,22,222,2222,22222")
    p.add_argument("--emit-plot-data", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stress", help="stress protocols")
    stress = p.add_subparsers(dest="stress_command", required=True)

    q = stress.add_parser("remove-signal", help="zero tracks at test time",
                          formatter_class=fmt)
    q.add_argument("--run", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--tracks", required=True, help="comma list of track indices")
    q.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    q.add_argument("--which", default="best", choices=("best", "final"))
    q.set_defaults(func=cmd_stress_remove)

    q = stress.add_parser("shorten", help="center-crop inputs at test time",
                          formatter_class=fmt)
    q.add_argument("--run", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--lengths", required=True, help="comma list of crop lengths")
    q.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    q.add_argument("--which", default="best", choices=("best", "final"))
    q.set_defaults(func=cmd_stress_shorten)

    q = stress.add_parser("dropout", help="random-retention baselines",
                          formatter_class=fmt)
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--rates", default="0.9,0.7,0.5", help="comma list of retention rates")
    q.add_argument("--seeds", default="2,22,222,2222,22222")
    q.add_argument("--emit-plot-data", action="store_true")
    _add_train_flags(q)
    q.set_defaults(func=cmd_stress_dropout)

    p = sub.add_parser("export-weights", help="dump per-gene confounder weights",
                       formatter_class=fmt)
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--which", default="best", choices=("best", "final"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_weights)

    p = sub.add_parser("describe", help="parameter accounting", formatter_class=fmt)
    p.add_argument("--tracks", type=int, default=3)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--n", dest="states", type=int, default=2)
    p.add_argument("--aux-dim", dest="aux_dim", type=int, default=2)
    p.add_argument("--backbone", default="gated_conv")
    p.set_defaults(func=cmd_describe)

    return parser


def _scan_config_flag(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        # --config seeds the train subcommand's defaults; explicit flags
        # still override (subparser-level defaults beat argument defaults)
        config_path = _scan_config_flag(argv)
        if config_path is not None:
            parser.train_subparser.set_defaults(
                **_config_defaults_from_file(Path(config_path))
            )
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PrismError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
