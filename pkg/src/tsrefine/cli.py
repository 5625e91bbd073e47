"""Command-line entry point.

    tsrefine generate --config C [--out DIR]
    tsrefine train --data DIR [--config C] --timestamps {ts,ts-in-gt,full} [--out DIR]
    tsrefine eval --checkpoint F --data DIR [--out DIR]
    tsrefine bench [--out DIR]

Outputs default to subdirectories of ``$TSREFINE_OUT`` (or ``./runs``).
Exit codes: 0 success, 1 usage or config error, 2 data format error,
3 acceptance failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bench import RUNTIME_BUDGET_SECONDS, check_determinism, check_runtime, run_bench, run_criteria
from .config import ExperimentConfig, load_config
from .errors import ConfigError, FormatError, TsRefineError
from .pipeline import eval_to_dir, generate_to_dir, train_to_dir
from .synthdata import load_dataset
from .trainer import MODES, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_ACCEPTANCE = 0, 1, 2, 3
OUT_ENV = "TSREFINE_OUT"

log = logging.getLogger("tsrefine")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for data format errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _out(args, default_name: str) -> Path:
    return Path(args.out) if args.out else _out_root() / default_name


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    out = _out(args, "generate")
    generate_to_dir(cfg, out)
    print(f"dataset written to {out / 'dataset'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, require_synth=False) if args.config else ExperimentConfig(None, TrainConfig())
    if args.no_refine:
        cfg = replace(cfg, train=replace(cfg.train, refine_enabled=False))
    dataset = load_dataset(args.data)
    out = _out(args, f"train-{args.timestamps}")
    inputs = {"dataset": args.data, "config": args.config or "<defaults>"}
    _, outputs = train_to_dir(dataset, args.timestamps, cfg.train, out, inputs, args.threads, cfg)
    for name, path in outputs.items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out(args, "eval")
    outputs = eval_to_dir(args.checkpoint, args.data, out)
    print(Path(outputs["report"]).read_text(), end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    out = _out(args, "bench")
    run = run_bench(out, threads=args.threads, refine_enabled=not args.no_refine)
    criteria = run_criteria(run) + [check_runtime(run, RUNTIME_BUDGET_SECONDS)]
    if args.determinism:
        with tempfile.TemporaryDirectory() as tmp:
            run_bench(tmp, threads=args.threads, refine_enabled=not args.no_refine)
            criteria.append(check_determinism(out, tmp))
    lines = [c.line() for c in criteria]
    (out / "acceptance.txt").write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    print(f"runtime {run.seconds:.1f}s")
    return EXIT_OK if all(c.passed for c in criteria) else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsrefine", description="Single-timestamp action recognition experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<command>, else ./runs/<command>)")
        p.add_argument("--threads", type=int, default=1, help="worker cap; 1 is the reference execution")
        # debug switch for the negative control, deliberately undocumented
        p.add_argument("--no-refine", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="INI config with a [synth] section")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one supervision mode on a dataset")
    p.add_argument("--data", required=True, help="dataset directory written by generate")
    p.add_argument("--config", help="INI config ([train], [curriculum], [refine]); defaults otherwise")
    p.add_argument("--timestamps", required=True, choices=MODES, help="supervision mode")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory the checkpoint was trained on")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="run the acceptance benchmark")
    p.add_argument("--determinism", action="store_true", help="run twice and compare outputs byte for byte")
    common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(name)s: %(message)s")
    if args.threads < 1:
        print("tsrefine: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"tsrefine: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigError as exc:
        print(f"tsrefine: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TsRefineError, ValueError, OSError) as exc:
        print(f"tsrefine: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
