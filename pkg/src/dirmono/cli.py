"""Command-line entry point: ``dirmono <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from dirmono import harness
from dirmono.families import FAMILY_KINDS


def _grid_args(p, d=1, n=32, trials=10):
    p.add_argument("--d", type=int, default=d)
    p.add_argument("--n", type=int, default=n)
    p.add_argument("--trials", type=int, default=trials)


def _family_args(p, kind="random-trig"):
    p.add_argument("--family", choices=FAMILY_KINDS, default=kind)
    p.add_argument("--M", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dirmono", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="write results here instead of stdout")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--threads", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("heat", help="directed heat flow invariants on random lines")
    _grid_args(p, n=128)
    _family_args(p)
    p.add_argument("--scheme", choices=("explicit", "implicit"), default="explicit")
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--dt", "--step", dest="step", type=float, help="dt (explicit) or lambda (implicit)")

    p = sub.add_parser("ot", help="transport between measure files, or random 1-D checks")
    p.add_argument("--mode", choices=("w2", "directed-w2", "compose"), default="directed-w2")
    p.add_argument("--in", dest="inputs", nargs=2, metavar=("A", "B"),
                   help="two measure files (w2, directed-w2) or two plan files (compose)")
    p.add_argument("--plan-out", help="write the optimal or composed plan here")
    p.add_argument("--trials", type=int, default=100)

    p = sub.add_parser("tensorize", help="directed transport cost to f* against the energy")
    _grid_args(p, d=2, n=8)
    _family_args(p)
    p.add_argument("--a", type=float, default=0.1)

    p = sub.add_parser("duality", help="Hopf-Lax duality slacks on random directed pairs")
    _grid_args(p, d=2, n=8, trials=50)
    p.add_argument("--t", type=float, default=1.0)

    p = sub.add_parser("dist", help="L^p distance of a grid function file to the monotone cone")
    p.add_argument("--in", dest="path", required=True, help="grid function JSON file")
    p.add_argument("--p", type=int, choices=(1, 2), default=2)

    p = sub.add_parser("test", help="run the gradient tester on one family member")
    _grid_args(p, d=2, trials=100)
    _family_args(p, kind="monotone-random")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--mode", choices=("plain", "robust"), default="plain")
    p.add_argument("--c-iter", type=float)

    p = sub.add_parser("lemma", help="exact subset-sum detection constants")
    p.add_argument("--d", type=int, nargs="+", default=[2, 3, 4, 5, 6], dest="dims")
    p.add_argument("--corpus", nargs="+", choices=("random", "spike", "two-scale", "ladder"))
    p.add_argument("--exact", action="store_true",
                   help="require exact enumeration (d <= 16); otherwise large d is sampled")

    p = sub.add_parser("lowerbound", help="pair-test rejection probabilities on the hard family")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--vcount", type=int, default=1000)

    p = sub.add_parser("poincare", help="Poincare ratios on a grid and its refinement")
    _grid_args(p, d=2, n=8, trials=20)
    _family_args(p)
    p.add_argument("--config", help="JSON experiment config (overrides other options)")

    p = sub.add_parser("suite", help="run a named bundle of checks")
    p.add_argument("name", choices=sorted(harness.SUITES))
    return parser


def _config(args) -> harness.ExperimentConfig:
    base = {"seed": args.seed}
    c = args.command
    if c == "heat":
        opts = {"scheme": args.scheme, "T": args.T}
        if args.step is not None:
            opts["step"] = args.step
        return harness.ExperimentConfig.from_dict({
            **base, "experiment": "heat", "trials": args.trials, "grid": {"d": 1, "n": args.n},
            "family": {"kind": args.family, "M": args.M}, "options": opts})
    if c == "ot":
        return harness.ExperimentConfig.from_dict({**base, "experiment": "ot", "trials": args.trials})
    if c == "tensorize":
        return harness.ExperimentConfig.from_dict({
            **base, "experiment": "tensorize", "trials": args.trials,
            "grid": {"d": args.d, "n": args.n}, "family": {"kind": args.family, "M": args.M},
            "options": {"a": args.a}})
    if c == "duality":
        return harness.ExperimentConfig.from_dict({
            **base, "experiment": "duality", "trials": args.trials,
            "grid": {"d": args.d, "n": args.n}, "options": {"t": args.t}})
    if c == "test":
        opts = {"eps": args.eps, "mode": args.mode}
        if args.c_iter is not None:
            opts["c_iter"] = args.c_iter
        return harness.ExperimentConfig.from_dict({
            **base, "experiment": "test", "trials": args.trials, "grid": {"d": args.d},
            "family": {"kind": args.family, "M": args.M}, "options": opts})
    if c == "lemma":
        if args.exact and max(args.dims) > 16:
            raise ValueError("exact enumeration supports d <= 16")
        opts = {"dims": args.dims}
        if args.corpus:
            opts["corpus"] = args.corpus
        return harness.ExperimentConfig.from_dict({**base, "experiment": "lemma", "options": opts})
    if c == "lowerbound":
        return harness.ExperimentConfig.from_dict({
            **base, "experiment": "lowerbound", "grid": {"d": args.d},
            "family": {"kind": "linear-lowerbound", "M": args.M},
            "options": {"eps": args.eps, "vcount": args.vcount}})
    if c == "poincare":
        if args.config:
            return harness.ExperimentConfig.from_file(args.config)
        return harness.ExperimentConfig.from_dict({
            **base, "experiment": "poincare", "trials": args.trials,
            "grid": {"d": args.d, "n": args.n}, "family": {"kind": args.family, "M": args.M}})
    raise ValueError(c)


def _report(results, args) -> int:
    texts = [harness.emit(r, args.format) for r in results]
    if args.format == "json" and len(texts) > 1:
        text = "[\n" + ",\n".join(texts) + "\n]\n"
    else:
        text = "".join(texts)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") or not text else text + "\n")
    failures = [f for r in results for f in r.failures]
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return 1 if failures else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "suite":
            return _report(harness.run_suite(args.name, args.seed, args.threads), args)
        if args.command == "dist":
            value = harness.dist_from_file(args.path, args.p)
            result = harness.ExperimentResult("dist", [{"p": args.p, "distance": value}])
            return _report([result], args)
        if args.command == "ot" and args.inputs:
            row, plan = harness.transport_from_files(args.mode, *args.inputs)
            if args.plan_out and plan is not None:
                with open(args.plan_out, "w") as fh:
                    fh.write(plan.to_json())
            return _report([harness.ExperimentResult("ot", [row])], args)
        cfg = _config(args)
        return _report([harness.run_experiment(cfg, args.threads)], args)
    except (ValueError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # jsonschema and solver errors
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
