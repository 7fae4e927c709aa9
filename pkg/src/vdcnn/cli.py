"""Command-line entry point: ``vdcnn {train,eval,inspect,gradcheck,encode,synth}``.

Exit codes: 0 ok, 1 check failure, 2 config/spec error, 3 data error,
4 divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from . import checkpoint
from .autodiff import set_precision
from .config import ConfigError, RunConfig, load_config
from .gradcheck import THRESHOLDS, run_suite
from .model import SpecError, VDCNN, count_params
from .synthetic import motif_split
from .text import DataError, encode, load_csv, write_csv
from .trainer import DivergenceError, evaluate, train

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4
METRICS_HEADER = "epoch,train_loss,train_err,test_err,lr"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _load_run_config(path) -> RunConfig:
    cfg = load_config(path)
    env_seed = os.environ.get("VDCNN_SEED")
    if env_seed is not None:
        try:
            cfg.values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"VDCNN_SEED={env_seed!r} is not an integer") from None
    return cfg


def cmd_train(args) -> int:
    try:
        cfg = _load_run_config(args.config)
        spec = cfg.arch_spec()
        optim = cfg.optim()
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    paths = {k: cfg.values[k] for k in ("train_data", "test_data")}
    for key, p in paths.items():
        if not p:
            _err(f"{key} is not set")
            return EXIT_CONFIG
    try:
        train_set = load_csv(paths["train_data"], spec.n_classes)
        test_set = load_csv(paths["test_data"], spec.n_classes)
    except (OSError, DataError) as exc:
        _err(f"cannot load data: {exc}")
        return EXIT_DATA

    out = Path(cfg.values["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text("\n".join(cfg.resolved_lines()) + "\n")
        metrics = open(out / "metrics.csv", "w", newline="\n")
    except OSError as exc:
        _err(f"cannot write to {out}: {exc}")
        return EXIT_DATA

    set_precision(optim.precision)
    model = VDCNN(spec, seed=optim.seed)
    print(f"{METRICS_HEADER},seconds", flush=True)
    metrics.write(METRICS_HEADER + "\n")

    def on_epoch(rec):
        metrics.write(rec.csv_line(with_time=False) + "\n")
        metrics.flush()
        print(rec.csv_line(), flush=True)

    try:
        train(model, train_set, test_set, optim, checkpoint_path=out / "best.ckpt", on_epoch=on_epoch)
    except DivergenceError as exc:
        _err(f"training diverged: {exc}")
        return EXIT_DIVERGED
    finally:
        metrics.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model = checkpoint.load(args.checkpoint)
    except (OSError, checkpoint.CheckpointError) as exc:
        _err(f"cannot load checkpoint: {exc}")
        return EXIT_CONFIG
    try:
        data = load_csv(args.data, None)
    except (OSError, DataError) as exc:
        _err(f"cannot load data: {exc}")
        return EXIT_DATA
    if data.n_classes > model.spec.n_classes:
        _err(f"dataset has labels up to {data.n_classes}, checkpoint predicts {model.spec.n_classes} classes")
        return EXIT_CONFIG
    print(f"error_pct={evaluate(model, data):.2f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    try:
        cfg = _load_run_config(args.config)
        spec = cfg.arch_spec()
    except (ConfigError, SpecError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    for line in cfg.resolved_lines():
        print(f"# {line}")
    model = VDCNN(spec, seed=0)
    for name, shape, n in model.layer_report():
        print(f"{name:<24} {'x'.join(map(str, shape)):>12} {n:>12}")
    counts = count_params(model)
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    print(f"depth={spec.depth}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    bits = 32 if args.f32 else 64
    t0 = time.perf_counter()

    def show(r):
        verdict = ("ok" if r.passed else "FAIL") if r.gated else "info"
        print(f"{r.name:<28} {r.error:.3e} {verdict}", flush=True)

    results = run_suite(bits, seed=args.seed, progress=show)
    failed = [r.name for r in results if r.gated and not r.passed]
    print(f"threshold={THRESHOLDS[bits]:g} precision={bits} seconds={time.perf_counter() - t0:.1f}")
    if failed:
        print("failed: " + " ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


def cmd_encode(args) -> int:
    if args.s < 1:
        _err("--s must be >= 1")
        return EXIT_CONFIG
    print(" ".join(str(i) for i in encode(args.text, args.s)))
    return EXIT_OK


def cmd_synth(args) -> int:
    train_set, test_set = motif_split(args.n, args.length, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(train_set, out / "train.csv")
    write_csv(test_set, out / "test.csv")
    print(f"wrote {len(train_set)} train and {len(test_set)} test rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vdcnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test error of a checkpoint on a CSV corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="per-layer shapes and parameter counts")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operator")
    p.add_argument("--f32", action="store_true", help="check in 32-bit precision (threshold 1e-3)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("encode", help="print the token ids of a text")
    p.add_argument("--text", required=True)
    p.add_argument("--s", type=int, required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="write the motif-detection toy corpus as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--length", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
