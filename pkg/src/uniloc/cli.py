"""Command-line pipeline: simulate -> estimate -> dissim -> train -> eval,
plus sweep and export. Exit codes: 0 success, 2 config error, 3 stale artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline, storage, sweeps
from .config import load_config
from .errors import ConfigError, StaleArtifact, UnilocError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STALE = 3


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file (defaults profile otherwise)")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key by dotted path")


def _parse_grid(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uniloc",
        description="Unified model-based + channel-charting localization pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a CSI dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, default=None, help="override the dataset seed")

    p = sub.add_parser("estimate", help="run the model-based estimator over a dataset")
    _add_config_args(p)
    p.add_argument("dir", help="run directory containing the dataset")

    p = sub.add_parser("dissim", help="compute a dissimilarity matrix")
    _add_config_args(p)
    p.add_argument("dir")
    p.add_argument("--kind", default="fusi",
                   choices=["gospa", "ggospa", "wass", "fusi", "time"])

    p = sub.add_parser("train", help="train a chart model")
    _add_config_args(p)
    p.add_argument("dir", help="training run directory")
    p.add_argument("--out", default=None, help="checkpoint output directory")
    p.add_argument("--make-labels", action="store_true",
                   help="generate the self-label file (uniloc mode)")

    p = sub.add_parser("eval", help="evaluate on a test run directory")
    _add_config_args(p)
    p.add_argument("dir", help="test run directory")
    p.add_argument("--checkpoint", default=None, help="trained model (omit for model-based)")
    p.add_argument("--out", default=None, help="output prefix for report files")

    p = sub.add_parser("sweep", help="run a parameter sweep")
    _add_config_args(p)
    p.add_argument("--axis", required=True, choices=list(sweeps.AXES))
    p.add_argument("--grid", required=True, help="comma-separated grid values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--work", required=True, help="working directory for runs")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("export", help="convert artifacts to plain CSV/JSON")
    p.add_argument("--matrix", default=None, help="matrix .uld file to export")
    p.add_argument("--dataset", default=None, help="run directory whose manifest to export")
    p.add_argument("--report", default=None, help="eval prefix whose errors to export")
    p.add_argument("--out", required=True)

    return parser


def _cmd_export(args) -> None:
    chosen = [x for x in (args.matrix, args.dataset, args.report) if x]
    if len(chosen) != 1:
        raise ConfigError("export needs exactly one of --matrix / --dataset / --report")
    if args.matrix:
        mat = storage.load_matrix(args.matrix)
        np.savetxt(args.out, mat.values, delimiter=",")
    elif args.dataset:
        samples, _ = pipeline.load_run_dataset(args.dataset)
        rows = [{
            "id": s.sample_id,
            "x": s.position[0], "y": s.position[1], "z": s.position[2],
            "timestamp": s.timestamp, "los": s.los,
        } for s in samples]
        storage.write_csv(rows, args.out)
    else:
        doc = storage.load_sidecar(args.report)
        Path(args.out).write_text(json.dumps(doc, indent=2))


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            _cmd_export(args)
            return EXIT_OK
        doc = load_config(args.config, args.overrides)
        if args.command == "simulate":
            fingerprint = pipeline.simulate(doc, args.out, seed=args.seed)
            print(f"dataset {args.out} fingerprint {fingerprint}")
        elif args.command == "estimate":
            path = pipeline.estimate(doc, args.dir)
            print(f"estimates written to {path}")
        elif args.command == "dissim":
            path = pipeline.dissim(doc, args.dir, args.kind)
            print(f"matrix written to {path}")
        elif args.command == "train":
            ckpt, history = pipeline.train(
                doc, args.dir, out_dir=args.out, make_labels=args.make_labels
            )
            print(f"checkpoint {ckpt} (final epoch loss {history.epoch_loss[-1]:.4f})")
        elif args.command == "eval":
            report = pipeline.evaluate(doc, args.dir, args.checkpoint, out_prefix=args.out)
            for name, m in report.subsets.items():
                print(f"{name}: n={m.count} mae={m.mae:.3f} rmse={m.rmse:.3f} e95={m.e95:.3f}")
            print(f"ct={report.ct:.4f} tw={report.tw:.4f} ks={report.ks:.4f}")
        elif args.command == "sweep":
            rows = sweeps.run_sweep(
                doc, args.axis, _parse_grid(args.grid),
                [int(s) for s in args.seeds.split(",")], args.work,
            )
            storage.write_csv(rows, args.out)
            print(f"sweep rows: {len(rows)} -> {args.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StaleArtifact as exc:
        print(f"stale artifact: {exc}", file=sys.stderr)
        return EXIT_STALE
    except UnilocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
