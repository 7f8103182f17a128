"""Command line interface: ``edml {sample,hide,learn,bench,tables}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, data, learn
from .model import (
    ModelFormatError,
    load_network,
    load_parameterization,
    load_prior,
    random_parameterization,
    save_json,
    validate,
)
from .networks import network_path

log = logging.getLogger("edml")


class CLIError(Exception):
    pass


def _network(arg):
    path = network_path(arg)
    if not path.exists():
        raise CLIError(f"{path}: no such network file")
    net, params = load_network(path)
    report = validate(net, params)
    if report:
        raise CLIError(f"{path}: invalid network: " + "; ".join(report))
    return net, params


def _learner_args(p: argparse.ArgumentParser):
    p.add_argument("--psi", type=float, default=2.0, help="uniform Dirichlet exponent (default 2)")
    p.add_argument("--prior", help="JSON file with per-parameter Dirichlet exponents")
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--logpost-tol", type=float, default=1e-7)
    p.add_argument("--param-tol", type=float, default=1e-6)
    p.add_argument("--local-tol", type=float, default=1e-8)
    p.add_argument("--local-max-iter", type=int, default=512)
    p.add_argument("--local-seeding", choices=("previous", "uniform"), default="previous")
    p.add_argument("--backend", choices=("numba", "numpy", "python"))
    p.add_argument("--clock", choices=("wall", "none"), default="wall",
                   help="'none' records zero elapsed times for byte-stable output")


def _config(args, algorithm, network, **extra) -> learn.LearnerConfig:
    if getattr(args, "prior", None):
        if network is None:
            raise CLIError("--prior needs a single network; use --psi with bench")
        prior = load_prior(args.prior, network)
    else:
        prior = args.psi
    return learn.LearnerConfig(
        algorithm=algorithm, prior=prior, max_iterations=args.max_iter,
        logpost_tolerance=args.logpost_tol, param_tolerance=args.param_tol,
        local_tolerance=args.local_tol, local_max_iterations=args.local_max_iter,
        local_seeding=args.local_seeding, damping=args.damping, backend=args.backend,
        clock=args.clock, **extra)


def cmd_sample(args):
    net, params = _network(args.network)
    if args.params:
        params = load_parameterization(args.params, net)
    elif params is None:
        params = random_parameterization(net, args.seed)
    ds = data.forward_sample(net, params, args.n, args.seed)
    data.write_csv(ds, args.out)
    log.info("wrote %d examples to %s", len(ds), args.out)


def cmd_hide(args):
    net, _ = _network(args.network)
    ds = data.read_csv(args.data, net)
    policy = data.HidingPolicy(args.mode, args.percentage, args.seed)
    data.write_csv(data.hide(ds, policy), args.out)


def cmd_learn(args):
    net, _ = _network(args.network)
    ds = data.read_csv(args.data, net)
    cfg = _config(args, args.algorithm, net, seed=args.seed, record_params=args.record_params)
    init = load_parameterization(args.init, net) if args.init else None
    trace = learn.run(net, ds, cfg, initial=init)
    if args.out:
        Path(args.out).write_text(trace.to_json())
    if args.params_out and trace.final_params is not None:
        save_json(trace.final_params.to_dict(), args.params_out)
    lp = trace.records[-1].log_posterior if trace.records else float("nan")
    print(f"{cfg.algorithm}: {trace.status} after {trace.iterations} iterations, "
          f"log posterior {lp:.6f}")
    if trace.status == "impossible-evidence":
        raise CLIError(trace.message)


def cmd_bench(args):
    for n in args.network:
        _network(n)
    learners = tuple(_config(args, a, None, record_params=False) for a in args.algorithms)
    spec = bench.ExperimentSpec(tuple(args.network), args.n, tuple(args.hiding), args.replicates,
                                learners, args.seed, args.mode)
    result = bench.run_experiment(spec)
    out = bench.write_bundle(result, args.out, with_time_table=args.clock == "wall")
    for f in sorted(out.glob("table_*.txt")):
        print(f"{f.stem}:\n{f.read_text()}")


def cmd_tables(args):
    result = bench.load_bundle(args.results)
    tables = bench.write_tables(result, args.results, with_time_table=not args.no_time)
    for t in tables:
        print(bench.format_table(t))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edml", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="forward-sample a complete dataset")
    p.add_argument("--network", required=True, help="network JSON/BIF file or built-in name")
    p.add_argument("--params", help="parameterization JSON (default: the network's own CPTs)")
    p.add_argument("--n", type=int, default=2 ** 10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("hide", help="hide values of a complete dataset")
    p.add_argument("--network", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--percentage", type=float, required=True, help="fraction in [0, 1]")
    p.add_argument("--mode", choices=(data.HIDDEN_VARIABLES, data.PER_CELL), default=data.HIDDEN_VARIABLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hide)

    p = sub.add_parser("learn", help="learn MAP parameters with one algorithm")
    p.add_argument("--network", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--algorithm", choices=learn.ALGORITHMS, default=learn.EDML)
    p.add_argument("--seed", type=int, default=0, help="seed of the initial parameterization")
    p.add_argument("--init", help="initial parameterization JSON")
    p.add_argument("--out", help="write the learning trace as JSON")
    p.add_argument("--params-out", help="write the learned parameterization as JSON")
    p.add_argument("--record-params", action="store_true", help="keep parameters of every iteration")
    _learner_args(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("bench", help="run the learner comparison experiment")
    p.add_argument("--network", action="append", required=True)
    p.add_argument("--n", type=int, default=2 ** 10)
    p.add_argument("--hiding", type=float, nargs="+", default=list(bench.DEFAULT_HIDING))
    p.add_argument("--mode", choices=(data.HIDDEN_VARIABLES, data.PER_CELL), default=data.HIDDEN_VARIABLES)
    p.add_argument("--replicates", type=int, default=3)
    p.add_argument("--algorithms", nargs="+", choices=learn.ALGORITHMS, default=list(learn.ALGORITHMS))
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True)
    _learner_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("tables", help="recompute summary tables from a bench output directory")
    p.add_argument("--results", required=True)
    p.add_argument("--no-time", action="store_true", help="skip the wall-clock table")
    p.set_defaults(func=cmd_tables)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CLIError, ModelFormatError, ValueError, OSError, KeyError) as exc:
        print(f"edml: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
