"""Command-line front end: preprocess, train, test, compare, gradcheck.

Exit codes: 0 success, 1 validation error (bad flags, config, schema, or
incompatible inputs), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
import warnings
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .preprocess import PreprocessError, atomic_write_text, load_dataset, run_pipeline
from .synthetic import write_kyoto_like
from .train import (CheckpointError, CompatibilityError, ConfigError, compare_column,
                    compare_table, evaluate, gradient_check, load_checkpoint, load_config,
                    metrics_to_text, report_to_text, save_checkpoint, train)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
GRADCHECK_TOL = 1e-4
TEMPLATES = ("gru_svm.cfg", "gru_softmax.cfg", "kyoto2013.schema")


class UsageError(Exception):
    pass


def _require_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _require_dir(path, what):
    parent = Path(path).parent
    if not parent.is_dir():
        raise UsageError(f"{what} directory does not exist: {parent}")


def write_manifest(path, command, args, outputs, seed=None, config=None):
    doc = {
        "command": command,
        "config": str(config) if config else None,
        "inputs": {k: str(v) for k, v in sorted(vars(args).items())
                   if k not in ("func", "command") and v is not None},
        "outputs": [str(o) for o in outputs],
        "seed": seed,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "versions": {"grusvm": __version__, "numpy": np.__version__,
                     "python": platform.python_version(), "kernel_backend": _kernels.BACKEND},
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def _clock(args):
    return time.perf_counter if args.timing else None


def cmd_preprocess(args):
    _require_file(args.schema, "schema file")
    _require_file(args.input, "input file")
    if args.stats_in:
        _require_file(args.stats_in, "stats file")
    for p in (args.output, args.stats_out, args.test_output):
        if p:
            _require_dir(p, "output")
    rep = run_pipeline(args.input, args.schema, args.output, args.stats_out, args.stats_in,
                       args.test_output, args.test_fraction)
    print(f"read {rep.rows_read} rows, rejected {rep.rows_rejected} malformed, "
          f"encoded {rep.encoded}, wrote {rep.written} unique samples to {args.output}"
          + (f", {rep.test_written} to {args.test_output}" if args.test_output else ""),
          file=sys.stderr)
    outs = [o for o in (args.output, args.test_output, args.stats_out) if o]
    write_manifest(f"{args.output}.manifest.json", "preprocess", args, outs)


def cmd_train(args):
    _require_file(args.config, "config file")
    _require_file(args.data, "dataset")
    cfg = load_config(args.config, head=args.head)
    for p in (args.checkpoint_out, args.log_out):
        _require_dir(p, "output")
    data = load_dataset(args.data)
    res = train(data, cfg, clock=_clock(args), backend=args.backend)
    save_checkpoint(res.checkpoint, args.checkpoint_out)
    atomic_write_text(args.log_out, metrics_to_text(res.log))
    if res.log:
        last = res.log[-1]
        print(f"epoch {last.epoch}: loss {last.loss:.6g} accuracy {last.accuracy:.4f}",
              file=sys.stderr)
    write_manifest(f"{args.checkpoint_out}.manifest.json", "train", args,
                   [args.checkpoint_out, args.log_out], cfg.seed, args.config)


def cmd_test(args):
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.data, "dataset")
    _require_dir(args.report_out, "output")
    if args.passes < 1:
        raise UsageError("--passes must be at least 1")
    ck = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    res = evaluate(data, ck, passes=args.passes, backend=args.backend)
    atomic_write_text(args.report_out, report_to_text(res))
    print(f"accuracy {res.report.accuracy:.4f} over {res.n_samples} samples", file=sys.stderr)
    write_manifest(f"{args.report_out}.manifest.json", "test", args, [args.report_out],
                   ck.config.seed)


def cmd_compare(args):
    for p, what in ((args.data_train, "training dataset"), (args.data_test, "test dataset"),
                    (args.config_svm, "svm config"), (args.config_softmax, "softmax config")):
        _require_file(p, what)
    cfg_svm = load_config(args.config_svm, head="svm")
    cfg_soft = load_config(args.config_softmax, head="softmax")
    train_data = load_dataset(args.data_train)
    test_data = load_dataset(args.data_test)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns, logs = {}, {}
    for name, cfg in (("GRU-SVM", cfg_svm), ("GRU-Softmax", cfg_soft)):
        col, tr, _ = compare_column(train_data, test_data, cfg, _clock(args), args.backend)
        columns[name] = col
        logs[name] = metrics_to_text(tr.log)
    atomic_write_text(out / "comparison.tsv", compare_table(columns))
    atomic_write_text(out / "svm_metrics.tsv", logs["GRU-SVM"])
    atomic_write_text(out / "softmax_metrics.tsv", logs["GRU-Softmax"])
    print((out / "comparison.tsv").read_text(), end="")
    write_manifest(out / "manifest.json", "compare", args,
                   [out / "comparison.tsv", out / "svm_metrics.tsv", out / "softmax_metrics.tsv"],
                   cfg_svm.seed)


def cmd_gradcheck(args):
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if not 1 <= args.cell_size <= 16 or not 1 <= args.seq_len <= 8:
        raise UsageError("--cell-size must be in [1, 16] and --seq-len in [1, 8]")
    worst = 0.0
    for head in ("svm", "softmax"):
        rep = gradient_check(args.cell_size, args.seq_len, args.input_width, args.trials, head,
                             seed=args.seed, backend=args.backend)
        print(f"{head}\tmax_rel_error\t{rep.max_rel_error:.6e}\tworst\t{rep.worst_param}")
        worst = max(worst, rep.max_rel_error)
    if worst >= GRADCHECK_TOL:
        print(f"gradient check FAILED: {worst:.3e} >= {GRADCHECK_TOL:g}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_template(args):
    text = resources.files("grusvm").joinpath("templates", args.name).read_text()
    if args.output:
        atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)


def cmd_synth(args):
    if args.rows < 1:
        raise UsageError("--rows must be positive")
    _require_dir(args.output, "output")
    write_kyoto_like(args.output, args.rows, args.seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grusvm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def backend_flag(sp):
        sp.add_argument("--backend", choices=("numpy", "numba"), default=None,
                        help=f"GRU kernel backend (default: {_kernels.BACKEND})")

    sp = sub.add_parser("preprocess", help="encode delimited traffic logs")
    sp.add_argument("--input", required=True)
    sp.add_argument("--schema", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--stats-out")
    sp.add_argument("--stats-in", help="reuse stored statistics instead of fitting")
    sp.add_argument("--test-output", help="also write the trailing rows as a test set")
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="train a GRU-SVM or GRU-Softmax model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--head", choices=("svm", "softmax"))
    sp.add_argument("--checkpoint-out", required=True)
    sp.add_argument("--log-out", required=True)
    sp.add_argument("--timing", action="store_true", help="record wall-clock times")
    backend_flag(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("test", help="evaluate a checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--report-out", required=True)
    sp.add_argument("--passes", type=int, default=1)
    backend_flag(sp)
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("compare", help="train and test both heads side by side")
    sp.add_argument("--data-train", required=True)
    sp.add_argument("--data-test", required=True)
    sp.add_argument("--config-svm", required=True)
    sp.add_argument("--config-softmax", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--timing", action="store_true", help="fill the run time rows")
    backend_flag(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the full network")
    sp.add_argument("--trials", type=int, default=8)
    sp.add_argument("--cell-size", type=int, default=8)
    sp.add_argument("--seq-len", type=int, default=5)
    sp.add_argument("--input-width", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    backend_flag(sp)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("template", help="print a shipped config or schema template")
    sp.add_argument("name", choices=TEMPLATES)
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_template)

    sp = sub.add_parser("synth", help="write a synthetic Kyoto-format log")
    sp.add_argument("--rows", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", UserWarning)
            rc = args.func(args)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return rc or EXIT_OK
    except (UsageError, ConfigError, PreprocessError, CompatibilityError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
