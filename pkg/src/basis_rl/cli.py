"""Command-line interface: ``basis-rl <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 1 runtime error. Error lines on
stderr start with ``error:``. Options may also come from ``--config FILE``
(flat ``key = value`` lines, keys named like the long options); command-line
flags override the file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .calibration import DEFAULT_MIN_ACTIVE_FRACTION, select_beta
from .diagnostics import PROTOCOLS, DiagnosticsConfig, run_protocol
from .env import PromptPopulation, make_population, parse_distribution, stream
from .estimators import DEFAULT_EPSILON, FAMILIES, VARIANTS, EstimatorSpec, RewardBatch
from .offline_values import BetaGrid, ValueTable, build_table, soft_value
from .trainer import TrainConfig, train

DEFAULT_SEED = 0
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(2)


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _common(p: argparse.ArgumentParser, threads=False):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--output-dir", default=".", help="directory for outputs and the run manifest")
    p.add_argument("--config", help="key=value file supplying option defaults")
    if threads:
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (results do not depend on this)")


def _estimator_flags(p: argparse.ArgumentParser):
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--group-size", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="basis-rl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-pop", help="generate a synthetic prompt population (.pop.json)")
    p.add_argument("--count", type=int)
    p.add_argument("--dist", default="uniform:0.05,0.95",
                   help="uniform:lo,hi | beta:a,b | two-cluster:v1,v2,mix")
    p.add_argument("--k", type=int, default=4, help="answers per prompt")
    p.add_argument("--out", help="output file (default OUTPUT_DIR/population.pop.json)")
    _common(p)

    p = sub.add_parser("gen-values", help="build the reference value table (.vtab.json)")
    p.add_argument("--pop")
    p.add_argument("--n", type=int, default=64, help="reference rollouts per prompt")
    p.add_argument("--grid", default="default", help="'default', a comma list, or start:stop:step[+...]")
    p.add_argument("--out", help="output file (default OUTPUT_DIR/values.vtab.json)")
    _common(p)

    p = sub.add_parser("diagnose", help="run an estimator MSE protocol")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--pop")
    p.add_argument("--table")
    p.add_argument("--B", "--batch-size", dest="B", type=int, default=64)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--batches", type=int, default=500, help="batches for the heterogeneity protocol")
    p.add_argument("--bins", type=int, default=5, help="heterogeneity bins")
    p.add_argument("--group-sizes", default="1,2,4,8")
    p.add_argument("--estimators", help="comma list, e.g. zero,reinforcepp,grpo:8,rloo:4,basis:unb (default: all)")
    p.add_argument("--drift-beta", type=float, help="evaluate against the reference tilted by this beta")
    p.add_argument("--oracle-rollouts", type=int, default=0, help="0 = exact values")
    p.add_argument("--grid", default=None, help="beta grid for beta-curve (default: the table's)")
    p.add_argument("--variant", choices=VARIANTS, default="unb", help="refinement for beta-curve")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    _common(p, threads=True)

    p = sub.add_parser("calibrate-sweep", help="repeat beta calibration on synthetic batches")
    p.add_argument("--pop")
    p.add_argument("--table")
    p.add_argument("--B", "--batch-size", dest="B", type=int, default=512)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--reward-beta", type=float,
                   help="draw rewards with means soft_value(p_hat, beta); default: means p_hat")
    p.add_argument("--variant", choices=VARIANTS, default="unb")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--min-active-fraction", type=float, default=DEFAULT_MIN_ACTIVE_FRACTION)
    _common(p)

    p = sub.add_parser("train", help="toy policy-gradient training run")
    _estimator_flags(p)
    p.add_argument("--estimator", help="shorthand such as basis:unb, grpo:8, zero (instead of --family)")
    p.add_argument("--pop", help="population file (default: generated two-cluster 0.05/0.95, 512 prompts)")
    p.add_argument("--table")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--B", "--batch-size", dest="B", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--eval-every", type=int, default=1)
    _common(p)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = {}
    if args.config:
        try:
            config = read_config(args.config)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except UsageError as exc:
            parser.error(str(exc))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(config) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        # string defaults are run through each option's type converter
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    args.config_contents = config
    return parser, args


def _manifest(args, argv, artifacts):
    out = Path(args.output_dir)
    data = {
        "command": ["basis-rl", *argv],
        "config": args.config_contents,
        "seed": args.seed,
        "artifacts": [str(a) for a in artifacts],
        "version": __version__,
        "backend": kernels.BACKEND,
    }
    (out / MANIFEST).write_text(json.dumps(data, indent=1) + "\n")


def _require(parser, args, *names):
    for name in names:
        if getattr(args, name) is None:
            parser.error(f"--{name.replace('_', '-')} is required")


def _load_pop_table(args, need_table=True):
    pop = PromptPopulation.load(args.pop)
    table = ValueTable.load(args.table) if (need_table and args.table) else None
    if table is not None and len(table) != len(pop):
        raise ValueError(f"table covers {len(table)} prompts but population has {len(pop)}")
    return pop, table


def cmd_gen_population(parser, args):
    _require(parser, args, "count")
    if args.count < 1:
        parser.error("--count must be positive")
    try:
        dist = parse_distribution(args.dist)
    except ValueError as exc:
        parser.error(f"invalid --dist: {exc}")
    if args.k < 2:
        parser.error("--k must be at least 2")
    pop = make_population(args.count, dist, args.k, args.seed)
    path = Path(args.out or Path(args.output_dir) / "population.pop.json")
    pop.save(path)
    return [path]


def cmd_gen_values(parser, args):
    _require(parser, args, "pop")
    if args.n < 1:
        parser.error("--n must be >= 1")
    try:
        grid = BetaGrid.parse(args.grid)
    except ValueError as exc:
        parser.error(f"invalid --grid: {exc}")
    pop = PromptPopulation.load(args.pop)
    table = build_table(pop, args.n, grid, args.seed)
    path = Path(args.out or Path(args.output_dir) / "values.vtab.json")
    table.save(path)
    return [path]


def _parse_estimators(text, epsilon):
    specs = []
    for item in text.split(","):
        name, _, param = item.strip().partition(":")
        if name == "basis":
            specs.append(EstimatorSpec("basis", param or "unb", 1, epsilon))
        else:
            specs.append(EstimatorSpec(name, None, int(param) if param else 1, epsilon))
    return tuple(specs)


def cmd_diagnose(parser, args):
    _require(parser, args, "protocol", "pop", "table")
    if args.repeats < 1 or args.batches < 1:
        parser.error("--repeats and --batches must be positive")
    try:
        group_sizes = _int_list(args.group_sizes)
        estimators = _parse_estimators(args.estimators, args.epsilon) if args.estimators else None
        config = DiagnosticsConfig(
            batch_size=args.B, repeats=args.repeats, group_sizes=group_sizes,
            heterogeneity_batches=args.batches, heterogeneity_bins=args.bins, seed=args.seed,
            estimators=estimators, drift_beta=args.drift_beta, oracle_rollouts=args.oracle_rollouts,
            threads=max(1, args.threads),
        )
        grid = BetaGrid.parse(args.grid) if args.grid else None
    except ValueError as exc:
        parser.error(str(exc))
    pop, table = _load_pop_table(args)
    if args.protocol == "beta-curve":
        from .diagnostics import compare_initial_vs_refined

        report = compare_initial_vs_refined(pop, table, grid, config, args.variant, args.epsilon).report(config)
    else:
        report = run_protocol(args.protocol, pop, table, config)
    out = Path(args.output_dir)
    csv_path, json_path = out / f"diagnose-{args.protocol}.csv", out / f"diagnose-{args.protocol}.json"
    report.write_csv(csv_path)
    report.write_json(json_path)
    return [csv_path, json_path]


def cmd_calibrate_sweep(parser, args):
    _require(parser, args, "pop", "table")
    if args.trials < 1:
        parser.error("--trials must be positive")
    pop, table = _load_pop_table(args)
    if args.B > len(pop) or args.B < 2:
        parser.error(f"--B must be between 2 and the population size {len(pop)}")
    results = []
    for trial in range(args.trials):
        rng = stream(args.seed, trial)
        ids = np.sort(rng.choice(len(pop), size=args.B, replace=False))
        p = table.p_hat[ids]
        means = p if args.reward_beta is None else soft_value(p, args.reward_beta)
        rewards = (rng.random(args.B) < means).astype(np.float64)
        cal = select_beta(RewardBatch(ids, rewards), table, args.variant, args.epsilon, args.min_active_fraction)
        results.append({"trial": trial, **cal.to_json()})
    out = Path(args.output_dir)
    json_path, csv_path = out / "calibrate.json", out / "calibrate.csv"
    json_path.write_text(json.dumps(results, indent=1) + "\n")
    with open(csv_path, "w") as fh:
        fh.write("trial,beta_index,beta,objective,active_count\n")
        for r in results:
            i = r["beta_index"]
            obj = r["objective_curve"][i] if i >= 0 else None
            cnt = r["active_counts"][i] if i >= 0 else 0
            fh.write(f"{r['trial']},{i},{'' if r['beta'] is None else r['beta']},{'' if obj is None else obj},{cnt}\n")
    return [json_path, csv_path]


def cmd_train(parser, args):
    if args.estimator:
        if args.family:
            parser.error("give either --estimator or --family, not both")
        try:
            (spec,) = _parse_estimators(args.estimator, args.epsilon)
        except ValueError as exc:
            parser.error(f"invalid --estimator: {exc}")
        args.family, args.variant, args.group_size = spec.family, spec.variant, spec.G
    _require(parser, args, "family")
    if args.family == "basis" and not args.table:
        parser.error("--table is required for the basis family")
    try:
        spec = EstimatorSpec(args.family, args.variant, args.group_size, args.epsilon)
        config = TrainConfig(steps=args.steps, batch_size=args.B, learning_rate=args.lr, estimator=spec,
                             eval_every=args.eval_every, seed=args.seed)
    except ValueError as exc:
        parser.error(str(exc))
    if args.pop:
        pop, table = _load_pop_table(args)
    else:
        pop = make_population(512, parse_distribution("two-cluster:0.05,0.95,0.5"), 4, args.seed)
        table = ValueTable.load(args.table) if args.table else None
    trace = train(pop, table, config)
    path = Path(args.output_dir) / "trace.csv"
    trace.write_csv(path)
    return [path]


COMMANDS = {
    "gen-pop": cmd_gen_population,
    "gen-values": cmd_gen_values,
    "diagnose": cmd_diagnose,
    "calibrate-sweep": cmd_calibrate_sweep,
    "train": cmd_train,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, args = parse_args(argv)
    try:
        Path(args.output_dir).mkdir(parents=True, exist_ok=True)
        artifacts = COMMANDS[args.command](parser, args)
        _manifest(args, argv, artifacts)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
