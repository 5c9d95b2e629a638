"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 fingerprint mismatch.
"""
from __future__ import annotations

import argparse
import logging
import sys

import yaml

from . import pipeline
from .detector import FingerprintError
from .evaluation import format_table
from .flows import DataError
from .pdfa import Pdfa, export_dot

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_FINGERPRINT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    return key, yaml.safe_load(raw)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowpdfa", description="PDFA-based NetFlow anomaly detection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("config", help="pipeline config file (YAML or JSON)")
        sp.add_argument("-s", "--set", dest="overrides", action="append", type=_override, default=[],
                        metavar="KEY=VALUE", help="override a config value, e.g. -s encoder.scheme=percentile")
        return sp

    with_config(sub.add_parser("train", help="fit encoder, learn model, calibrate threshold"))
    sp = with_config(sub.add_parser("score", help="score test traces with a trained model"))
    sp.add_argument("--svg", action="store_true", help="also render likelihood charts")
    sp = with_config(sub.add_parser("eval", help="metrics for scored traces"))
    sp.add_argument("--no-baseline", action="store_true")
    with_config(sub.add_parser("sweep", help="all encodings x sorting levels"))
    sp = with_config(sub.add_parser("export-traces", help="write traces in Abbadingo format"))
    sp.add_argument("output")
    sp.add_argument("--partition", choices=("train", "test"), default="train")
    sp = sub.add_parser("export-dot", help="render a model file as a DOT graph")
    sp.add_argument("model")
    sp.add_argument("output")
    return p


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig.load(args.config)
    if args.overrides:
        cfg = cfg.with_overrides(**dict(args.overrides))
    return cfg


def run(args) -> int:
    if args.command == "export-dot":
        export_dot(Pdfa.load(args.model), args.output)
        return 0
    cfg = _config(args)
    if args.command == "train":
        res = pipeline.run_train(cfg)
        print(f"model: {len(res.model)} states (PTA {res.pta_states}), "
              f"threshold {res.threshold.value:.4f} -> {cfg.output_dir}")
    elif args.command == "score":
        if args.svg:
            cfg = cfg.with_overrides(**{"plots.svg": True})
        scored = pipeline.run_score(cfg)
        n_bad = sum(s.anomalous for s in scored)
        print(f"scored {len(scored)} traces, {n_bad} anomalous -> {cfg.output_dir / 'scores.csv'}")
    elif args.command == "eval":
        reports = pipeline.run_eval(cfg, with_baseline=False if args.no_baseline else None)
        print(format_table(reports), end="")
    elif args.command == "sweep":
        print(format_table(pipeline.run_sweep(cfg)), end="")
    elif args.command == "export-traces":
        n = pipeline.run_export_traces(cfg, args.partition, args.output)
        print(f"wrote {n} traces to {args.output}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except FingerprintError as exc:
        print(f"fingerprint mismatch: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (DataError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
