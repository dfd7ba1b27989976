"""Command-line entry point: ``tribrain <command> [options]``.

Commands: train, eval, noise-sweep, ablate, trace, human-align.

Every output directory receives ``config.cfg`` (the fully resolved config)
and each emitted file records the run seed and the output format version.
The default output root is ``$TRIBRAIN_OUT`` (``./runs`` when unset).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, ExperimentConfig
from .control import NumericalError, StopPolicy, run_ticks
from .data import (
    BinaryLayout,
    DataError,
    Dataset,
    UndefinedCorrelation,
    add_gaussian_noise,
    correlation,
    load_binary_images,
    load_human_probs,
    split,
    synth_shapes,
)
from .perception import ImageBatch
from .training import (
    METRICS_SCHEMA,
    TrainingDiverged,
    build_model,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

log = logging.getLogger("tribrain")

OUTPUT_ENV = "TRIBRAIN_OUT"
OUTPUT_FORMAT = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# helpers


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def resolve_out(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else output_root() / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = cfgmod.load(args.config)
    else:
        cfg = cfgmod.desk_config()
    cfgmod.apply_overrides(cfg, getattr(args, "set", None) or [])
    return cfg.validate()


def echo_config(out: Path, cfg: ExperimentConfig) -> None:
    header = f"seed={cfg.train.seed} output_format={OUTPUT_FORMAT}"
    (out / "config.cfg").write_text(cfgmod.dumps(cfg, header=header))


def csv_header(kind: str, seed: int) -> str:
    return f"# tribrain.{kind}/{OUTPUT_FORMAT} seed={seed}\n"


def write_csv(path: Path, kind: str, seed: int, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(csv_header(kind, seed))
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def parse_list(text: str, kind=float) -> list:
    try:
        return [kind(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def layout_of(cfg: ExperimentConfig) -> BinaryLayout:
    d = cfg.data
    return BinaryLayout(d.height, d.width, d.channels, d.label_bytes, d.label_index, cfg.model.classes)


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    """(train, val, test) for the configured source."""
    d = cfg.data
    if d.source == "synth":
        k = cfg.model.classes
        return (
            synth_shapes(d.n_train, d.size, k, seed=d.seed, channels=cfg.model.in_channels),
            synth_shapes(d.n_val, d.size, k, seed=d.seed + 1, channels=cfg.model.in_channels),
            synth_shapes(d.n_test, d.size, k, seed=d.seed + 2, channels=cfg.model.in_channels),
        )
    layout = layout_of(cfg)
    expected = (
        f"expected binary records of {layout.label_bytes} label byte(s) followed by "
        f"{layout.channels}x{layout.height}x{layout.width} channel-planar pixel bytes"
    )
    for key in ("train_path", "test_path"):
        path = getattr(d, key)
        if not path or not Path(path).is_file():
            raise DataError(f"data.{key} = {path!r} is not a readable file; {expected}")
    full = load_binary_images(d.train_path, layout)
    tr, va = split(full, d.val_fraction, d.seed)
    te = load_binary_images(d.test_path, layout)
    return tr, va, te


def eval_dataset(cfg: ExperimentConfig, which: str) -> Dataset:
    tr, va, te = build_datasets(cfg)
    return {"train": tr, "val": va, "test": te}[which]


def load_model_for(args):
    try:
        model, cfg, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    # overrides describe the evaluation (data, policy); the loaded weights keep their own config
    cfg = cfg.copy()
    cfgmod.apply_overrides(cfg, getattr(args, "set", None) or [])
    cfg.validate()
    return model, cfg, meta


def check_classes(model, ds: Dataset) -> None:
    n_out = model.synchrony.W_out.shape[0]
    if ds.class_count != n_out:
        raise DataError(f"dataset has {ds.class_count} classes but the checkpoint predicts {n_out}")


def _summary(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0, "n": int(arr.size)}


# ---------------------------------------------------------------------------
# commands


def train_one(cfg: ExperimentConfig, out: Path, datasets) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    echo_config(out, cfg)
    tr, va, te = datasets
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")

    def on_epoch(rec):
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    ckpt = out / "checkpoint.bin"
    try:
        result = train(cfg, tr, va, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        model = build_model(cfg)
        save_checkpoint(ckpt, model, cfg, exc.epoch - 1, {"diverged": str(exc)}, arrays=exc.last_good)
        raise
    policy = StopPolicy.from_config(cfg.policy)
    test = evaluate(result.model, te, policy, cfg.train.eval_batch_size)
    final = dict(result.final) if result.history else {"schema": METRICS_SCHEMA, "seed": cfg.train.seed, "epoch": 0}
    final.update({f"test_{k}": v for k, v in test.metrics().items()})
    save_checkpoint(ckpt, result.model, cfg, cfg.train.epochs, final)
    write_json(out / "final.json", final)
    return final


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    seeds = parse_list(args.seeds, int) if args.seeds else [cfg.train.seed]
    out = resolve_out(args, "train")
    datasets = build_datasets(cfg)
    finals = []
    for s in seeds:
        c = cfg.copy()
        c.train.seed = s
        run_dir = out / f"seed-{s}" if len(seeds) > 1 else out
        final = train_one(c, run_dir, datasets)
        finals.append(final)
        print(f"seed {s}: test accuracy {final['test_accuracy']:.4f}, mean stop ticks {final['test_mean_stop_ticks']:.2f}")
    if len(seeds) > 1:
        echo_config(out, cfg)
        summary = {"schema": "tribrain.summary/1", "seeds": seeds, "output_format": OUTPUT_FORMAT}
        for key in ("test_accuracy", "test_mean_stop_ticks", "test_mean_certainty", "val_accuracy"):
            if all(key in f for f in finals):
                summary[key] = _summary([f[key] for f in finals])
        write_json(out / "summary.json", summary)
        acc = summary["test_accuracy"]
        print(f"test accuracy {acc['mean']:.4f} ± {acc['std']:.4f} over {len(seeds)} seeds")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, meta = load_model_for(args)
    ds = eval_dataset(cfg, args.split)
    check_classes(model, ds)
    policy = StopPolicy.from_config(cfg.policy)
    res = evaluate(model, ds, policy, cfg.train.eval_batch_size, gate=not args.full)
    out = resolve_out(args, "eval")
    echo_config(out, cfg)
    seed = meta.get("seed", cfg.train.seed)
    metrics = {"schema": "tribrain.eval/1", "seed": seed, "split": args.split, **res.metrics()}
    write_json(out / "metrics.json", metrics)
    write_csv(
        out / "per_sample.csv",
        "per_sample",
        seed,
        ["index", "label", "prediction", "stop_tick", "certainty"],
        zip(range(len(ds)), res.labels, res.prediction, res.stop_tick, res.certainty),
    )
    print(f"accuracy {res.accuracy:.4f}  mean stop ticks {res.mean_stop_ticks:.3f}  mean certainty {res.mean_certainty:.4f}")
    return EXIT_OK


def noise_sweep(model, ds: Dataset, policy: StopPolicy, sigmas, noise_seed: int, batch_size: int = 100) -> list[dict]:
    if any(s < 0 for s in sigmas):
        raise ValueError("noise levels must be non-negative")
    rows = []
    for s in sigmas:
        res = evaluate(model, add_gaussian_noise(ds, s, noise_seed), policy, batch_size)
        rows.append({"sigma": float(s), **res.metrics()})
    return rows


def cmd_noise_sweep(args) -> int:
    model, cfg, meta = load_model_for(args)
    sigmas = parse_list(args.sigmas)
    if any(s < 0 for s in sigmas):
        raise ConfigError("--sigmas must be non-negative", "sigmas")
    ds = eval_dataset(cfg, args.split)
    check_classes(model, ds)
    rows = noise_sweep(model, ds, StopPolicy.from_config(cfg.policy), sigmas, cfg.data.seed + 7, cfg.train.eval_batch_size)
    out = resolve_out(args, "noise-sweep")
    echo_config(out, cfg)
    seed = meta.get("seed", cfg.train.seed)
    cols = ["sigma", "accuracy", "mean_stop_ticks", "mean_certainty"]
    write_csv(out / "noise_sweep.csv", "noise_sweep", seed, cols, ([r[c] for c in cols] for r in rows))
    for r in rows:
        print(f"sigma {r['sigma']:<6g} accuracy {r['accuracy']:.4f}  mean stop ticks {r['mean_stop_ticks']:.3f}")
    return EXIT_OK


def resolve_grid_key(cfg: ExperimentConfig, name: str) -> str:
    """Accept a full dotted key or an unambiguous bare field name."""
    keys = cfg.keys()
    if name in keys:
        return name
    matches = [k for k in keys if k.split(".", 1)[1] == name]
    if len(matches) != 1:
        raise ConfigError(f"unknown grid key: {name}", name)
    return matches[0]


def parse_grid(cfg: ExperimentConfig, specs: list[str]) -> list[tuple[str, list[str]]]:
    grid = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"grid entry must look like key=v1,v2, got {spec!r}")
        name, values = spec.split("=", 1)
        key = resolve_grid_key(cfg, name.strip())
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"grid entry {name} has no values", key)
        for v in vals:
            cfg.copy().set(key, v)
        grid.append((key, vals))
    return grid


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    grid = parse_grid(cfg, args.grid)
    seeds = parse_list(args.seeds, int) if args.seeds else [cfg.train.seed]
    out = resolve_out(args, "ablate")
    echo_config(out, cfg)
    keys = [k for k, _ in grid]
    rows = []
    datasets = None
    for ci, combo in enumerate(itertools.product(*(v for _, v in grid))):
        cell = cfg.copy()
        for k, v in zip(keys, combo):
            cell.set(k, v)
        cell.validate()
        if datasets is None or cell.data != cfg.data or cell.model.classes != cfg.model.classes:
            datasets = build_datasets(cell)
        for s in seeds:
            c = cell.copy()
            c.train.seed = s
            final = train_one(c, out / f"cell-{ci}" / f"seed-{s}", datasets)
            rows.append([ci, *combo, s, final["test_accuracy"], final["test_mean_stop_ticks"]])
            print(f"cell {ci} {dict(zip(keys, combo))} seed {s}: accuracy {final['test_accuracy']:.4f} ticks {final['test_mean_stop_ticks']:.3f}")
    write_csv(out / "ablation.csv", "ablation", seeds[0], ["cell", *keys, "seed", "accuracy", "mean_stop_ticks"], rows)
    return EXIT_OK


def cmd_trace(args) -> int:
    model, cfg, meta = load_model_for(args)
    ds = eval_dataset(cfg, args.split)
    check_classes(model, ds)
    idx = parse_list(args.indices, int)
    bad = [i for i in idx if not 0 <= i < len(ds)]
    if bad:
        raise DataError(f"sample indices {bad} outside [0, {len(ds)})")
    policy = StopPolicy.from_config(cfg.policy)
    tr = run_ticks(model, ImageBatch(ds.images[idx], ds.labels[idx]), policy, mode="eval", gate=False, record=True)
    out = resolve_out(args, "trace")
    echo_config(out, cfg)
    seed = meta.get("seed", cfg.train.seed)
    attn = tr.extras["attention"].mean(axis=2)  # [T, B, N] averaged over heads
    act = tr.extras["activation"]
    for b, i in enumerate(idx):
        ticks = range(1, tr.ticks + 1)
        n = attn.shape[-1]
        write_csv(out / f"sample{i}_attention.csv", "attention", seed, ["tick", *[f"pos{j}" for j in range(n)]],
                  ([t, *attn[t - 1, b]] for t in ticks))
        write_csv(out / f"sample{i}_coherence.csv", "coherence", seed,
                  ["tick", "phase_coherence", "entropy_certainty", "total_certainty", "stop"],
                  ([t, tr.c_phase[t - 1, b], tr.c_entropy[t - 1, b], tr.c_total[t - 1, b], int(tr.stop[t - 1, b])] for t in ticks))
        write_csv(out / f"sample{i}_activation.csv", "activation", seed, ["tick", *[f"n{j}" for j in range(act.shape[-1])]],
                  ([t, *act[t - 1, b]] for t in ticks))
    print(f"wrote traces for {len(idx)} sample(s), {tr.ticks} ticks each, to {out}")
    return EXIT_OK


def human_alignment(model, ds: Dataset, policy: StopPolicy, at: str = "stop", batch_size: int = 100) -> tuple[float, np.ndarray, np.ndarray]:
    """Pearson r between model certainty and human agreement (max human probability)."""
    if ds.human_probs is None:
        raise DataError("dataset has no human probabilities attached")
    res = evaluate(model, ds, policy, batch_size, gate=(at == "stop"), keep_traces=(at == "final"))
    if at == "final":
        cert = np.concatenate([t.c_total[-1] for t in res.traces])
    else:
        cert = res.certainty
    agree = ds.human_probs.max(axis=1)
    return correlation(cert, agree), cert, agree


def cmd_human_align(args) -> int:
    model, cfg, meta = load_model_for(args)
    ds = eval_dataset(cfg, args.split)
    check_classes(model, ds)
    path = args.human or cfg.data.human_probs
    if not path:
        raise DataError("no human probability file given (--human or data.human_probs)")
    if not Path(path).is_file():
        raise DataError(f"human probability file {path} not found; expected one comma-separated row per image")
    ds = load_human_probs(path, ds)
    r, cert, agree = human_alignment(model, ds, StopPolicy.from_config(cfg.policy), args.certainty, cfg.train.eval_batch_size)
    out = resolve_out(args, "human-align")
    echo_config(out, cfg)
    seed = meta.get("seed", cfg.train.seed)
    write_json(out / "alignment.json", {"schema": "tribrain.alignment/1", "seed": seed, "pearson_r": r, "certainty": args.certainty, "n": len(ds)})
    write_csv(out / "scatter.csv", "scatter", seed, ["index", "model_certainty", "human_agreement"], zip(range(len(ds)), cert, agree))
    print(f"pearson r = {r:.4f} over {len(ds)} samples")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tribrain", description="Tick-based tripartite classifier experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint: bool):
        if checkpoint:
            sp.add_argument("checkpoint", help="checkpoint file written by train")
            sp.add_argument("--split", choices=("train", "val", "test"), default="test")
        else:
            sp.add_argument("--config", help="config file (dotted key = value lines)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<command>)")

    sp = sub.add_parser("train", help="train one or more seeds")
    common(sp, checkpoint=False)
    sp.add_argument("--seeds", help="comma-separated replicate seeds, e.g. 1,2,3")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint with early exit")
    common(sp, checkpoint=True)
    sp.add_argument("--full", action="store_true", help="disable early exit and run all T ticks")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("noise-sweep", help="accuracy and stop ticks under Gaussian pixel noise")
    common(sp, checkpoint=True)
    sp.add_argument("--sigmas", default="0,0.1,0.25,0.5")
    sp.set_defaults(func=cmd_noise_sweep)

    sp = sub.add_parser("ablate", help="train every cell of a config grid")
    common(sp, checkpoint=False)
    sp.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2", help="grid axis; repeat for more axes")
    sp.add_argument("--seeds", help="comma-separated seeds shared by every cell")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("trace", help="per-tick attention, coherence and activation CSVs")
    common(sp, checkpoint=True)
    sp.add_argument("--indices", default="0", help="comma-separated sample indices")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("human-align", help="correlate model certainty with human agreement")
    common(sp, checkpoint=True)
    sp.add_argument("--human", help="comma-separated human probability file (one row per image)")
    sp.add_argument("--certainty", choices=("stop", "final"), default="stop", help="C_total at the stop tick or the last tick")
    sp.set_defaults(func=cmd_human_align)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, TrainingDiverged, UndefinedCorrelation, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
