"""``dan`` command line: ``train``, ``evaluate`` and ``sweep``.

Exit status: 0 on success, 2 for configuration or usage errors, 1 when a run fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .autodiff import ContractError
from .data import DataFormatError
from .encoders import EmbeddingFormatError
from .experiment import ConfigError, ExperimentConfig, SweepFailed, evaluate, run, train_single
from .models import CheckpointError

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _parse_k(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if part == "full":
            out.append("full")
            continue
        try:
            out.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad k value {part!r}") from None
    return out


def _parse_seeds(text: str) -> list[int]:
    """``0,3,7`` or a range ``0-9``."""
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(x) for x in text.split("-", 1))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--task", choices=["ranking", "classification"])
    p.add_argument("--model", choices=["dan", "dan_unlab", "hinge_baseline", "nll_baseline"])
    p.add_argument("--k", type=_parse_k, help="labeled-set sizes, e.g. 10,50,full")
    p.add_argument("--seeds", type=_parse_seeds, help="run indices, e.g. 0-9 or 0,1,2")
    p.add_argument("--jobs", type=int, help="parallel runs")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dan", description="Adversarial Predictor/Judge "
                                     "training for answer selection and sentence classification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_train = sub.add_parser("train", help="train one model and save a checkpoint")
    _add_run_flags(p_train)
    p_sweep = sub.add_parser("sweep", help="run every (k, seed) pair and aggregate")
    _add_run_flags(p_sweep)
    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a TSV dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="canonical TSV of the checkpoint's task")
    p_eval.add_argument("--out", help="write the report JSON here as well as to stdout")
    return parser


def _config(args) -> ExperimentConfig:
    overrides = {"task": args.task, "model": args.model, "k": args.k, "seeds": args.seeds,
                 "jobs": args.jobs, "out": args.out}
    if args.config:
        return ExperimentConfig.load(args.config, **overrides)
    return ExperimentConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            report = evaluate(args.checkpoint, args.data)
            text = json.dumps(report, indent=2, sort_keys=True)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            print(text)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "train":
            report = train_single(cfg)
            print(json.dumps(report["run"], sort_keys=True))
        else:
            report = run(cfg)
            print(json.dumps(report["results"], sort_keys=True))
        return EXIT_OK
    except (ConfigError, DataFormatError, EmbeddingFormatError, FileNotFoundError) as e:
        print(f"dan: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SweepFailed as e:
        print(f"dan: {e} (partial results kept)", file=sys.stderr)
        return EXIT_FAILURE
    except (CheckpointError, ContractError, RuntimeError, ValueError) as e:
        print(f"dan: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
