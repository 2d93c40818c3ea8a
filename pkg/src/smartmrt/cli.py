"""Command-line entry point: ``smartmrt {simulate,analyze,truth,report}``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import NumericalError, SmartMrtError
from .harness import analyze, report, run_benchmark, table_contrasts
from .io import write_trial_csv
from .sim import SimConfig, rep_rng, simulate_one
from .truth import truth_table

log = logging.getLogger("smartmrt")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smartmrt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the simulation benchmark and write a metrics CSV")
    p.add_argument("--scenario", choices=("1", "2"), required=True)
    p.add_argument("--n", type=_positive, default=100, help="individuals per dataset")
    p.add_argument("--reps", type=_positive, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dump-data", type=Path, default=None, metavar="DIR",
                   help="also write each simulated dataset as a trial CSV")
    p.add_argument("--jobs", type=_positive, default=1, help="worker processes")
    p.add_argument("--report", choices=("csv", "md"), default=None,
                   help="print the sub-tables after the run")

    p = sub.add_parser("analyze", help="fit the hybrid estimator to a trial CSV")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("truth", help="write the analytic true values of all table contrasts")
    p.add_argument("--scenario", choices=("1", "2"), required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mc", type=int, default=0, metavar="N",
                   help="also compute Monte-Carlo truth with N draws per contrast")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="render a metrics CSV as tables")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--format", choices=("csv", "md"), default="md")
    p.add_argument("--out", type=Path, default=None)
    return parser


def _simulate(args) -> None:
    config = SimConfig(scenario=args.scenario, n=args.n, reps=args.reps, seed=args.seed)
    if args.dump_data is not None:
        args.dump_data.mkdir(parents=True, exist_ok=True)
        width = max(4, len(str(config.reps - 1)))
        for k in range(config.reps):
            data = simulate_one(config, rep_rng(config.seed, k))
            write_trial_csv(data, args.dump_data / f"rep{k:0{width}d}.csv")
    result = run_benchmark(config, jobs=args.jobs)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    result.metrics.to_csv(args.out, index=False, lineterminator="\n")
    if result.failures:
        log.warning("%d replicates excluded", len(result.failures))
    if args.report:
        sys.stdout.write(report(args.out, args.report))


def _truth(args) -> None:
    config = SimConfig(scenario=args.scenario)
    contrasts = table_contrasts()
    table = truth_table(config, contrasts, mc=args.mc > 0, n_mc=max(args.mc, 1), seed=args.seed)
    frame = table.to_frame()
    keys = {(c.stage, c.kind, ";".join(f"{r[0]},{r[1]}" for r in c.regimes),
             "" if c.a_fixed is None else c.a_fixed): c.key for c in contrasts}
    frame.insert(0, "key", [keys[(s, k, r, a)] for s, k, r, a in
                            zip(frame["stage"], frame["kind"], frame["regimes"], frame["a_fixed"])])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out, index=False, lineterminator="\n")


def _analyze(args) -> None:
    result = analyze(args.data, args.config, out=args.out)
    for c in result["contrasts"]:
        print(f"{c['label']}: {c['estimate']:.4f} (SE {c['se']:.4f})")


def _report(args) -> None:
    text = report(args.inp, args.format)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)


COMMANDS = {"simulate": _simulate, "truth": _truth, "analyze": _analyze, "report": _report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SmartMrtError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
