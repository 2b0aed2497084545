"""Command-line entry point: ``errlab <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 experiment finished with failed replications.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, ErrlabError, PartialFailure

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("errlab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(flag, default: int = 0) -> int:
    """Flag beats ERRLAB_SEED beats the config/default seed."""
    from .experiments import effective_seed

    return int(flag) if flag is not None else effective_seed(default)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def _scenario_from_json(obj: dict):
    from .datagen import ScenarioSpec, make_paper_spec

    if "paper" not in obj:
        return ScenarioSpec.from_json(obj)
    obj = dict(obj)
    tag = {k: obj.pop(k) for k in ("paper", "days", "budget", "scenario", "seed") if k in obj}
    spec = make_paper_spec(tag.pop("paper"), **tag)
    if "lambda" in obj:
        obj["lam"] = obj.pop("lambda")
    unknown = set(obj) - set(spec.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown scenario field(s): {sorted(unknown)}")
    return spec.with_(**obj)


def _print_csv(rows, header, out=None):
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r.get(h, "")) for h in header])


def _cell(v):
    if isinstance(v, float):
        return "" if v != v else f"{v:.6g}"
    return v


def _print_aggregate(table):
    from .experiments import AGGREGATE_HEADER

    _print_csv(table.aggregate(), AGGREGATE_HEADER)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    from .datagen import generate
    from .ingest import write_table
    from .randmath import RngState

    spec = _scenario_from_json(_read_json(args.spec))
    seed = _seed(args.seed, spec.seed.seed)
    spec = spec.with_(seed=RngState(seed))
    ds = generate(spec).view(args.scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema = write_table(ds, out / "data.csv")
    schema.save(out / "schema.json")
    spec.save(out / "spec.json")
    print(f"wrote {ds.n} rows x {ds.k} days to {out / 'data.csv'} (redraws: {ds.redraws})")
    return EXIT_OK


def _experiment_config(args):
    from .experiments import ExperimentConfig

    obj = _read_json(args.config)
    cfg = ExperimentConfig.from_json(obj)
    if args.out:
        cfg.output_path = args.out
    if args.workers:
        cfg.workers = args.workers
    if args.replications:
        cfg.replications = args.replications
    return cfg


def cmd_run(args) -> int:
    from .experiments import aggregate_path, run_experiment

    cfg = _experiment_config(args)
    table = run_experiment(cfg, seed=_seed(args.seed, cfg.seed))
    _print_aggregate(table)
    if cfg.output_path:
        print(f"results: {cfg.output_path}; aggregate: {aggregate_path(cfg.output_path)}", file=sys.stderr)
    return EXIT_OK


def cmd_tradeoff(args) -> int:
    from .experiments import run_budget_tradeoff

    cfg = _experiment_config(args)
    days = args.days or cfg.days
    table = run_budget_tradeoff(args.budget, days, cfg, seed=_seed(args.seed, cfg.seed))
    _print_aggregate(table)
    return EXIT_OK


def cmd_theory(args) -> int:
    from . import theory
    from .randmath import RngState

    if args.sigma2 <= 0 or args.k < 1:
        raise ConfigError("--sigma2 must be positive and --k at least 1")
    seed = RngState(_seed(args.seed))
    rows = [
        {"quantity": "averaged_error_variance", "analytic": theory.averaged_error_variance(args.sigma2, args.k)},
        {"quantity": "sigma2_reduced", "analytic": theory.equivalent_lognormal_variance(args.sigma2, args.k)},
        {"quantity": "sigma2_reduced_printed",
         "analytic": theory.equivalent_lognormal_variance_printed(args.sigma2, args.k)},
    ]
    if args.draws:
        oracles = (theory.mc_averaged_error_variance, theory.mc_equivalent_lognormal_variance)
        for row, oracle, i in zip(rows, oracles, range(2)):
            rep = oracle(args.sigma2, args.k, args.draws, seed.spawn(i))
            row.update(monte_carlo=rep.monte_carlo, mc_se=rep.mc_standard_error, within_3se=rep.within())
    lo, hi = args.sigma2 / args.k, args.sigma2
    rows[1]["sandwich"] = lo <= rows[1]["analytic"] <= hi
    rows[2]["sandwich"] = lo <= rows[2]["analytic"] <= hi
    _print_csv(rows, ["quantity", "analytic", "monte_carlo", "mc_se", "within_3se", "sandwich"])
    return EXIT_OK


def cmd_lemma(args) -> int:
    from .randmath import RngState
    from .theory import lemma1_check, strict_gap

    first, second, holds = lemma1_check(args.f, args.omega, args.sigma, args.k, args.draws,
                                        RngState(_seed(args.seed)))
    rows = [{"quantity": "transform_of_average", "analytic": first.analytic,
             "monte_carlo": first.monte_carlo, "mc_se": first.mc_standard_error},
            {"quantity": "average_of_transform", "analytic": second.analytic,
             "monte_carlo": second.monte_carlo, "mc_se": second.mc_standard_error}]
    _print_csv(rows, ["quantity", "analytic", "monte_carlo", "mc_se"])
    print(f"holds={holds} strict_gap={strict_gap(first, second)}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import AnalysisConfig, run_analysis
    from .ingest import TableSchema, read_table

    schema = TableSchema.from_json(_read_json(args.schema))
    config = AnalysisConfig.from_json(_read_json(args.config)) if args.config else AnalysisConfig()
    config.seed = _seed(args.seed, config.seed)
    ds, report = read_table(args.data, schema)
    print(f"rows: {report.file_rows} read, {report.retained} kept, {report.dropped_missing} dropped "
          f"for missing values, {report.dropped_filter} filtered, {report.missing_later_days} "
          "with a missing later day", file=sys.stderr)
    result = run_analysis(ds, config)
    text = result.to_csv()
    sys.stdout.write(text)
    print(f"selection: full {result.full_size} terms cv_rmse {result.full_cv_rmse:.6g}; "
          f"optimal {result.optimal_size} terms cv_rmse {result.optimal_cv_rmse:.6g}; "
          f"parsimonious {result.parsimonious_size} terms cv_rmse {result.parsimonious_cv_rmse:.6g}",
          file=sys.stderr)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_report

    if not Path(args.results).is_file():
        raise ConfigError(f"{args.results}: no such file")
    render_report(args.results, args.out, args.title)
    print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="errlab", description="Measurement error and predictive modelling experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def seed_flag(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="random seed; overrides ERRLAB_SEED and any config seed")

    s = sub.add_parser("simulate", help="generate a dataset from a scenario spec")
    s.add_argument("--spec", required=True, help="ScenarioSpec JSON, or {\"paper\": \"sim1\", \"days\": 2, ...}")
    s.add_argument("--out", required=True, help="output directory (data.csv, schema.json, spec.json)")
    s.add_argument("--scale", choices=("additive", "observed"), default="observed",
                   help="surrogate scale to write (default: observed)")
    seed_flag(s)
    s.set_defaults(func=cmd_simulate)

    for name, helptext in (("run", "run an experiment grid"), ("tradeoff", "fixed-budget days vs n grid")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="experiment config JSON")
        s.add_argument("--out", help="results CSV path (overrides config output_path)")
        s.add_argument("--workers", type=int, help="parallel worker processes")
        s.add_argument("--replications", type=int, help="override replications")
        if name == "tradeoff":
            s.add_argument("--budget", type=int, required=True, help="total observations n * days")
            s.add_argument("--days", type=int, nargs="+", help="days grid (default: config days)")
        seed_flag(s)
        s.set_defaults(func=cmd_run if name == "run" else cmd_tradeoff)

    s = sub.add_parser("theory", help="averaged and equivalent lognormal error variances")
    s.add_argument("--sigma2", type=float, required=True, help="single-day error variance")
    s.add_argument("--k", type=int, required=True, help="number of days averaged")
    s.add_argument("--draws", type=int, default=1_000_000, help="Monte Carlo draws (0 skips)")
    seed_flag(s)
    s.set_defaults(func=cmd_theory)

    s = sub.add_parser("lemma", help="transform of the average vs average of the transform")
    s.add_argument("--f", required=True, choices=("exp", "square", "cube", "identity"), help="transform")
    s.add_argument("--omega", type=float, default=0.0, help="centre of the error-free value")
    s.add_argument("--sigma", type=float, required=True, help="error standard deviation")
    s.add_argument("--k", type=int, required=True, help="number of replicates (>= 2)")
    s.add_argument("--draws", type=int, default=1_000_000, help="Monte Carlo draws (>= 1e5)")
    seed_flag(s)
    s.set_defaults(func=cmd_lemma)

    s = sub.add_parser("analyze", help="six-model comparison on a two-day table")
    s.add_argument("--data", required=True, help="delimited data file")
    s.add_argument("--schema", required=True, help="TableSchema JSON")
    s.add_argument("--config", help="analysis config JSON (optional)")
    s.add_argument("--out", help="also write the MSE table to this CSV")
    seed_flag(s)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("report", help="render a results CSV as an SVG chart")
    s.add_argument("--results", required=True, help="results CSV from run or tradeoff")
    s.add_argument("--out", required=True, help="SVG output path")
    s.add_argument("--title", help="chart title (default: results file stem)")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PartialFailure as exc:
        print(f"error: {exc}: {exc.failed_cells}", file=sys.stderr)
        if exc.table is not None:
            _print_aggregate(exc.table)
        return EXIT_PARTIAL
    except (ErrlabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
