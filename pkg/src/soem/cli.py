"""Command-line entry point.

Verbs map onto pipeline stages; each runs the chain of stages up to and
including itself unless ``--only`` is given, in which case earlier artifacts
are read back from ``--out``.

Exit codes: 0 success, 1 invalid input or missing file, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .datagen import benchmark_specs, generate_groups
from .embedding import MultiSeries, TimeSeries
from .errors import NumericalError, ValidationError
from .io import load_dataset, write_multivariate, write_ucr
from .pipeline import STAGES, make_config, run_pipeline

logger = logging.getLogger("soem")

VERB_STAGE = {"embed": "embed", "train": "train", "assign": "assign", "eval": "evaluate", "forecast": "forecast"}


def _add_common(p):
    p.add_argument("data", help="dataset file (UCR text or multivariate long CSV)")
    p.add_argument("--format", choices=("auto", "ucr", "multivariate"), default="auto")
    p.add_argument("--labels", help="series_id,label CSV for multivariate data")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--out", default="soem_out", help="output directory (default: %(default)s)")
    p.add_argument("--grid", nargs=2, type=int, metavar=("ROWS", "COLS"))
    p.add_argument("--iters", type=int, dest="iterations")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--embed-dim", type=int, help="fixed embedding dimension L")
    g.add_argument("--embed-policy", help="tenth | fixed:K | fraction:F")
    p.add_argument("--seed", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--horizons", help="comma-separated forecast horizons")
    p.add_argument("--train-frac", help="training prefix fraction, e.g. 0.667 or 2/3")
    p.add_argument("--zscore", action="store_true", default=None, help="z-normalise each channel before embedding")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="soem", description="Self-organising eigenspace map of time series.")
    sub = parser.add_subparsers(dest="verb", required=True)

    gen = sub.add_parser("gen", help="write a synthetic benchmark dataset")
    gen.add_argument("out", help="output file")
    gen.add_argument("--per-group", type=int, default=20)
    gen.add_argument("--length", type=int, default=200)
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--format", choices=("ucr", "multivariate"), default="ucr")
    gen.add_argument("-v", "--verbose", action="count", default=0)

    for verb in VERB_STAGE:
        p = sub.add_parser(verb, help=f"run the pipeline through the {VERB_STAGE[verb]} stage")
        _add_common(p)
        p.add_argument("--only", action="store_true", help="run this stage alone, reusing earlier outputs")
    _add_common(sub.add_parser("pipeline", help="run every stage"))
    return parser


def _overrides(args):
    ov = {
        "iterations": args.iterations,
        "seed": args.seed,
        "clusters": args.clusters,
        "zscore": args.zscore,
    }
    if args.grid:
        ov["rows"], ov["cols"] = args.grid
    if args.embed_dim is not None:
        ov["embed_policy"] = f"fixed:{args.embed_dim}"
    elif args.embed_policy:
        ov["embed_policy"] = args.embed_policy
    if args.horizons:
        try:
            ov["horizons"] = tuple(int(h) for h in args.horizons.split(","))
        except ValueError:
            raise ValidationError(f"bad --horizons {args.horizons!r}") from None
    if args.train_frac:
        try:
            a, _, b = args.train_frac.partition("/")
            ov["train_frac"] = float(a) / float(b) if b else float(a)
        except (ValueError, ZeroDivisionError):
            raise ValidationError(f"bad --train-frac {args.train_frac!r}") from None
    return ov


def _stages(verb, only):
    if verb == "pipeline":
        return list(STAGES)
    stage = VERB_STAGE[verb]
    if only:
        return [stage]
    return list(STAGES[: STAGES.index(stage) + 1])


def _gen(args):
    groups = generate_groups(benchmark_specs(args.length, args.noise), args.per_group, seed=args.seed)
    if args.format == "ucr":
        write_ucr(groups, args.out)
    else:
        multi = [MultiSeries(s.id, [TimeSeries(f"{s.id}/0", s.values)], s.label) for s in groups]
        write_multivariate(multi, args.out, labels_path=f"{args.out}.labels.csv")
    logger.info("wrote %d series to %s", len(groups), args.out)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "gen":
            _gen(args)
            return 0
        cfg = make_config(args.config, **_overrides(args))
        dataset = load_dataset(args.data, args.format, args.labels)
        manifest = run_pipeline(dataset, cfg, _stages(args.verb, getattr(args, "only", False)), args.out)
        for name, entry in sorted(manifest.outputs.items()):
            print(f"{name}\t{args.out}/{entry['path']}")
        return 0
    except NumericalError as exc:
        print(f"soem: numerical error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, OSError) as exc:
        print(f"soem: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
