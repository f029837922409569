"""Command-line interface.

Subcommands: sample, tune, grid, compare, report, warm-start. Exit codes:
0 success, 2 configuration error, 3 numerical failure, 4 objective adapter
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, MultituneError, NumericalError, ObjectiveError
from . import harness
from .perf import tune_allocator

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_OBJECTIVE = 4


def _add_tune_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON; flags override its fields")
    p.add_argument("--method", choices=harness.ExperimentConfig.METHODS)
    p.add_argument("--objective", choices=harness.ExperimentConfig.OBJECTIVES)
    p.add_argument("--objective-params", help="JSON object of objective parameters")
    p.add_argument("--task-space", dest="task_space_file")
    p.add_argument("--input-space", dest="input_space_file")
    p.add_argument("--n-tasks", type=int)
    p.add_argument("--tasks", help="JSON list of task value objects")
    p.add_argument("--budget", type=int)
    p.add_argument("--pilot", type=int)
    p.add_argument("--split", type=int)
    p.add_argument("--Q", type=int, dest="Q")
    p.add_argument("--seed", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--history", dest="history_path")
    p.add_argument("--base-run", dest="base_run")
    p.add_argument("--no-timestamps", action="store_true")


def _config_from_args(args: argparse.Namespace, warm_from: str | None = None
                      ) -> harness.ExperimentConfig:
    data: dict = {}
    if args.config:
        with open(args.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: line {exc.lineno}: {exc.msg}") from None
    for field in ("method", "objective", "task_space_file", "input_space_file",
                  "n_tasks", "budget", "pilot", "split", "Q", "seed", "resolution",
                  "out_dir", "run_id", "history_path", "base_run"):
        value = getattr(args, field, None)
        if value is not None:
            data[field] = value
    if getattr(args, "objective_params", None):
        data["objective_params"] = json.loads(args.objective_params)
    if getattr(args, "tasks", None):
        data["tasks"] = json.loads(args.tasks)
    if getattr(args, "no_timestamps", False):
        data["timestamps"] = False
    if warm_from:
        data["warm_start_from"] = warm_from
    return harness.ExperimentConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="multitune",
                                     description="multitask/transfer-learning autotuner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sample = sub.add_parser("sample", help="draw valid configurations from a space file")
    p_sample.add_argument("--space", required=True)
    p_sample.add_argument("--n", type=int, default=10)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--context", help="JSON object of context values (e.g. the task)")

    p_tune = sub.add_parser("tune", help="run a tuning method end to end")
    _add_tune_flags(p_tune)

    p_grid = sub.add_parser("grid", help="semi-exhaustive grid search")
    _add_tune_flags(p_grid)

    p_cmp = sub.add_parser("compare", help="quality/cost ratios between two result files")
    p_cmp.add_argument("results_a")
    p_cmp.add_argument("results_b")
    p_cmp.add_argument("--labels", nargs=2, default=("A", "B"))
    p_cmp.add_argument("--out", help="write report JSON + plot CSV under this prefix")

    p_rep = sub.add_parser("report", help="best-configuration table across result files")
    p_rep.add_argument("results", nargs="+")

    p_warm = sub.add_parser("warm-start", help="tune, reusing evaluations from a history")
    p_warm.add_argument("--from", dest="warm_from", required=True,
                        help="history file with prior evaluations")
    _add_tune_flags(p_warm)

    args = parser.parse_args(argv)
    tune_allocator()
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ObjectiveError as exc:
        print(f"objective failure: {exc}", file=sys.stderr)
        return EXIT_OBJECTIVE
    except MultituneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "sample":
        context = json.loads(args.context) if args.context else None
        configs = harness.sample_command(args.space, args.n, args.seed, context)
        print(json.dumps(configs, indent=2, sort_keys=True))
        return EXIT_OK

    if args.command in ("tune", "grid", "warm-start"):
        warm_from = getattr(args, "warm_from", None)
        config = _config_from_args(args, warm_from)
        if args.command == "grid":
            config.method = "grid"
        out = harness.run(config)
        print(f"results: {out.results_path}")
        print(f"history: {out.history_path}")
        return EXIT_OK

    if args.command == "compare":
        with open(args.results_a) as fh:
            a = json.load(fh)
        with open(args.results_b) as fh:
            b = json.load(fh)
        report = harness.compare(a, b, *args.labels)
        print(report.table())
        if args.out:
            prefix = Path(args.out)
            prefix.parent.mkdir(parents=True, exist_ok=True)
            with open(prefix.with_suffix(".json"), "w") as fh:
                json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            with open(prefix.with_suffix(".csv"), "w") as fh:
                fh.write(report.plot_data())
        return EXIT_OK

    if args.command == "report":
        payloads = []
        for path in args.results:
            with open(path) as fh:
                payloads.append(json.load(fh))
        print(harness.report_optima_table(payloads))
        return EXIT_OK

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
