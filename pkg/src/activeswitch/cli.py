"""Command line: ``activeswitch run|compare|validate``."""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

from .controller import ControllerError
from .engine import Engine, Workload, make_workload
from .metrics import emit_comparison, evaluate_linear, rule_census
from .scenario import SchemaError, load_scenario, validate
from .topology import TopologyError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def scenario_workload(scenario, flows=None, packets=None, pattern=None, seed=None):
    wl = scenario.workload
    return make_workload(
        scenario.chains,
        wl["flows"] if flows is None else flows,
        wl["packets"] if packets is None else packets,
        wl["pattern"] if pattern is None else pattern,
        scenario.seed if seed is None else seed,
        wl["start"],
        scenario.addresses,
    )


def run_census(scenario, mode: str, n: int, seed: Optional[int] = None):
    """Rule census after ``n`` single-packet flows under ``mode``."""
    engine = Engine(scenario, mode, seed=seed, record=False)
    engine.run(scenario_workload(scenario, flows=n, packets=1, pattern="downstream", seed=seed))
    return rule_census(engine)


def census_series(scenario, mode: str, ns, seed: Optional[int] = None) -> dict:
    """Censuses at each n in ``ns`` from one growing run.

    The first n flows of a larger workload are exactly the n-flow workload,
    and flows never share rules, so each checkpoint equals a fresh run at n.
    """
    ns = sorted(set(ns))
    engine = Engine(scenario, mode, seed=seed, record=False)
    workload = scenario_workload(scenario, flows=ns[-1] if ns else 0, packets=1,
                                 pattern="downstream", seed=seed)
    engine.program()
    out, done = {}, 0
    for n in ns:
        engine.run(Workload(workload.flows[done:n], workload.seed))
        done = n
        out[n] = rule_census(engine)
    return out


def _census_job(args):
    source, mode, n, seed = args
    return (n, mode), run_census(load_scenario(source), mode, n, seed)


def _parse_ns(text: str) -> list[int]:
    try:
        ns = [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not ns or any(n < 0 for n in ns):
        raise argparse.ArgumentTypeError("need at least one non-negative n")
    return ns


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    engine = Engine(scenario, args.mode, seed=args.seed, encoding=args.encoding,
                    reannotation=args.reannotation)
    workload = scenario_workload(scenario, args.flows, args.packets, args.pattern, args.seed)
    trace = engine.run(workload)
    if args.trace == "-":
        sys.stdout.write(trace.render())
    elif args.trace:
        trace.write(args.trace)
    if args.rules == "-":
        sys.stdout.write(engine.rules())
    elif args.rules:
        with open(args.rules, "w") as fh:
            fh.write(engine.rules())
    c = engine.counts
    drops = ",".join(f"{r}={n}" for r, n in sorted(engine.drops.items())) or "none"
    print(f"{scenario.name} mode={args.mode} injected={c['injected']} delivered={c['delivered']} "
          f"absorbed={c['absorbed']} dropped={c['dropped']} drops={drops}", file=sys.stderr)
    return EXIT_FAIL if engine.dropped(exclude=("policy",)) else EXIT_OK


def cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    modes = ("active", "baseline")
    jobs = [(n, m) for n in args.n for m in modes]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = dict(pool.map(_census_job, [(scenario.source, m, n, args.seed) for n, m in jobs]))
    else:
        results = {(n, m): run_census(scenario, m, n, args.seed) for n, m in jobs}
    table, csv_text = emit_comparison(results, args.n)
    sys.stdout.write(table)
    if args.out == "-":
        sys.stdout.write(csv_text)
    elif args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
    status = EXIT_OK
    for (n, mode), census in sorted(results.items()):
        expr = scenario.expectations.get(mode)
        if expr is not None and census.total != evaluate_linear(expr, n):
            print(f"mismatch: n={n} mode={mode} total={census.total} expected {expr} = "
                  f"{evaluate_linear(expr, n)}", file=sys.stderr)
            status = EXIT_FAIL
    return status


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    try:
        validate(scenario)
    except TopologyError as exc:
        print(f"{scenario.source}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"{scenario.name}: ok ({scenario.topology.kind}, {len(scenario.topology.switches)} switches, "
          f"{len(scenario.topology.devices)} devices, {len(scenario.chains)} chains)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="activeswitch",
                                     description="Simulate path-annotated middlebox steering.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write its trace")
    run.add_argument("scenario", help="scenario file or shipped name")
    run.add_argument("--mode", choices=("active", "baseline"), default="active")
    run.add_argument("--seed", type=int)
    run.add_argument("--flows", type=int)
    run.add_argument("--packets", type=int, help="packets per flow")
    run.add_argument("--pattern", choices=("downstream", "upstream", "bidirectional"))
    run.add_argument("--encoding", choices=("octet", "extended", "nibble", "destination"))
    run.add_argument("--reannotation", choices=("table", "controller"))
    run.add_argument("--trace", help="trace log path ('-' for stdout)")
    run.add_argument("--rules", help="final rule dump path ('-' for stdout)")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="rule census for both controllers")
    cmp_.add_argument("scenario")
    cmp_.add_argument("--n", type=_parse_ns, default=[1, 10, 100], help="e.g. 1,10,100")
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--out", help="CSV path ('-' for stdout)")
    cmp_.add_argument("--jobs", type=int, default=1)
    cmp_.set_defaults(func=cmd_compare)

    val = sub.add_parser("validate", help="check a scenario without simulating")
    val.add_argument("scenario")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ControllerError, TopologyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
