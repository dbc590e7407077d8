"""Command-line entry point: ``stl-splitter {estimate,monitor,validate}``.

Exit codes: 0 success, 1 a validation suite failed, 2 bad configuration or
input, 3 the estimator stopped on extinction (or a degenerate cross-entropy
fit). Errors print a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .estimators import Estimate, ams_estimate, ce_estimate, is_fixed_estimate, mc_estimate, resolve_formula
from .monitor import WorkList
from .sim_core import ProposalParams, ToyWalkScenario
from .stl import STLSyntaxError
from .validation import SUITES, run_suite

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_EXTINCTION = 0, 1, 2, 3
BUILTINS = ("lane_change", "toy_walk")
SEED_ENV = "STL_SPLITTER_SEED"
IMP_NAIVE = {"miss_rate": 0.5, "noise_sigma": [1.0, 1.0, 1.0]}


class ConfigError(ValueError):
    pass


def _lane_change(cfg=None):
    from .lane_change import LaneChangeScenario, ScenarioConfig

    return LaneChangeScenario(ScenarioConfig.from_dict(cfg) if cfg is not None else None)


def load_scenario(builtin: str | None = None, path: str | None = None):
    """Builtin scenario by name, or one described by a JSON file.

    A file whose top level has ``"scenario": "toy_walk"`` builds the random
    walk from its remaining keys; anything else is read as a lane-change
    :class:`ScenarioConfig`.
    """
    if builtin and path:
        raise ConfigError("--builtin and --scenario are mutually exclusive")
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("scenario file must hold a JSON object")
        kind = data.pop("scenario", "lane_change")
        try:
            if kind == "toy_walk":
                return ToyWalkScenario(**data)
            if kind == "lane_change":
                return _lane_change(data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario {path}: {exc}") from exc
        raise ConfigError(f"unknown scenario kind {kind!r}")
    name = builtin or "lane_change"
    if name == "toy_walk":
        return ToyWalkScenario()
    if name == "lane_change":
        return _lane_change()
    raise ConfigError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")


def _formula(scenario, args):
    if args.rule and args.formula:
        raise ConfigError("--rule and --formula are mutually exclusive")
    if args.rule and args.rule not in scenario.rules:
        raise ConfigError(f"unknown rule {args.rule!r}; scenario has {', '.join(scenario.rules)}")
    try:
        return resolve_formula(scenario, args.formula or args.rule)
    except STLSyntaxError as exc:
        raise ConfigError(f"formula: {exc}") from exc


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        seed = int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    if seed < 0:
        raise ConfigError(f"{SEED_ENV} must be >= 0")
    return seed


def _proposal(text):
    if text is None:
        return ProposalParams(**IMP_NAIVE)
    try:
        data = json.loads(text)
        return ProposalParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"--proposal: {exc}") from exc


def run_estimate(args) -> Estimate:
    scenario = load_scenario(args.builtin, args.scenario)
    formula = _formula(scenario, args)
    seed = _seed(args)
    common = dict(N=args.n, seed=seed, workers=args.workers, gamma_final=args.gamma_final)
    try:
        if args.method == "mc":
            return mc_estimate(scenario, formula, **common)
        if args.method == "ams":
            return ams_estimate(scenario, formula, K=args.k, **common)
        if args.method == "is":
            return is_fixed_estimate(scenario, formula, _proposal(args.proposal), **common)
        return ce_estimate(scenario, formula, M=args.stages, elite_frac=args.elite_frac, **common)
    except ValueError as exc:  # includes sklearn's parameter checks
        raise ConfigError(str(exc)) from exc


def cmd_estimate(args) -> int:
    est = run_estimate(args)
    text = est.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"{est.method}: p_hat={est.p_hat:.6g} stages={len(est.levels)} "
              f"steps={est.total_simulation_steps} extinction={str(est.extinction).lower()}")
    else:
        print(text)
    if args.trace_out:
        est.write_levels_csv(args.trace_out)
    if est.extinction:
        why = est.diagnostics.get("stop_reason", "extinction")
        print(f"error: {est.method} stopped early ({why}); p_hat is not a valid estimate", file=sys.stderr)
        return EXIT_EXTINCTION
    return EXIT_OK


def read_trace(path):
    """CSV trace with a header row; returns ``(names, states)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read trace {path}: {exc}") from exc
    if len(rows) < 2:
        raise ConfigError(f"trace {path} needs a header and at least one row")
    header, body = rows[0], rows[1:]
    try:
        states = np.array([[float(v) for v in r] for r in body if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"trace {path}: {exc}") from exc
    if states.shape[1] != len(header):
        raise ConfigError(f"trace {path}: rows do not match the header")
    if header and header[0] == "t":
        header, states = header[1:], states[:, 1:]
    return header, states


def cmd_monitor(args) -> int:
    scenario = load_scenario(args.builtin, args.scenario)
    formula = _formula(scenario, args)
    _, states = read_trace(args.trace)
    try:
        wl = WorkList(formula, scenario.predicates)
        rows = [(t, wl.update(x)) for t, x in enumerate(states)]
    except (KeyError, IndexError) as exc:
        raise ConfigError(f"trace does not fit the scenario predicates: {exc}") from exc
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "robustness"])
        w.writerows((t, repr(r)) for t, r in rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    checks = run_suite(args.suite, quick=args.quick, seed=args.seed)
    report = {"suite": args.suite, "quick": args.quick, "ok": all(c["ok"] for c in checks), "checks": checks}
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    for c in checks:
        if not c["ok"]:
            print(f"error: check {c['name']} failed", file=sys.stderr)
            return EXIT_FAILED
    return EXIT_OK


def _source_args(p):
    p.add_argument("--builtin", choices=BUILTINS, help="builtin scenario (default lane_change)")
    p.add_argument("--scenario", metavar="PATH", help="scenario JSON file")
    p.add_argument("--rule", help="named rule of the scenario (e.g. phi1)")
    p.add_argument("--formula", help="STL formula text over the scenario predicates")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stl-splitter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimate the probability that a rule is violated")
    _source_args(est)
    est.add_argument("--method", choices=("mc", "ams", "is", "ce"), default="ams")
    est.add_argument("--n", type=int, default=250, help="initial / per-stage sample count")
    est.add_argument("--k", type=int, default=25, help="AMS survivors per stage")
    est.add_argument("--stages", type=int, default=10, help="cross-entropy stages")
    est.add_argument("--elite-frac", type=float, default=0.1)
    est.add_argument("--gamma-final", type=float, default=0.0)
    est.add_argument("--proposal", help="IS proposal as JSON (default: 50%% misses, unit offsets)")
    est.add_argument("--seed", type=int, default=None, help=f"master seed (fallback ${SEED_ENV}, then 0)")
    est.add_argument("--workers", type=int, default=1)
    est.add_argument("--out", metavar="PATH", help="write the estimate JSON here instead of stdout")
    est.add_argument("--trace-out", metavar="PATH", help="write the level trace CSV here")
    est.set_defaults(func=cmd_estimate)

    mon = sub.add_parser("monitor", help="robustness of a formula along a CSV trace")
    _source_args(mon)
    mon.add_argument("--trace", required=True, metavar="PATH", help="CSV with a header; a leading t column is dropped")
    mon.add_argument("--out", metavar="PATH", help="write the t,robustness CSV here instead of stdout")
    mon.set_defaults(func=cmd_monitor)

    val = sub.add_parser("validate", help="run a self-check suite (differential or oracle)")
    val.add_argument("suite", help="differential or oracle")
    val.add_argument("--quick", action="store_true", help="fewer repetitions, wider bounds")
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--out", metavar="PATH", help="write the JSON report here instead of stdout")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
