"""Command-line experiment runner.

Verbs: ``run`` (learning experiment), ``compare`` (aligned learning curves),
``search-suite`` (the six decision conditions), ``validate-config``.
Exit codes: 0 success, 2 invalid configuration, 3 divergence guard tripped.
Any config key can be overridden via OPTIONTD_* environment variables.
"""

from __future__ import annotations

import argparse
import sys

from .config import (
    ConfigError,
    config_mode,
    load_config_file,
    parse_experiment_config,
    parse_search_config,
)
from .core import DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parse_seeds(raw: str):
    if "," in raw:
        return [int(s) for s in raw.split(",") if s.strip() != ""]
    return int(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optiontd", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a learning experiment across seeds")
    run.add_argument("--config", required=True, help="YAML experiment config")
    run.add_argument("--seeds", help="seed count or comma-separated list (override)")
    run.add_argument("--out", help="artifact directory (override)")
    run.add_argument("--algo", help="algorithm tag (override)")
    run.add_argument("--episodes", type=int, help="episode count (override)")
    run.add_argument("--workers", type=int, help="parallel worker processes (override)")

    cmp = sub.add_parser("compare", help="compare artifact directories")
    cmp.add_argument("dirs", nargs="+", help="two or more artifact directories")
    cmp.add_argument("--metric", default="return",
                     choices=["return", "discounted_return", "goal_rate", "cumulative_goals"])
    cmp.add_argument("--window", type=int, default=25, help="smoothing / final-score window")
    cmp.add_argument("--out", help="output directory for plot and table")

    suite = sub.add_parser("search-suite", help="run the six decision conditions")
    suite.add_argument("--config", required=True, help="YAML search-suite config")
    suite.add_argument("--seeds", help="seed count or comma-separated list (override)")
    suite.add_argument("--out", help="artifact directory (override)")

    val = sub.add_parser("validate-config", help="validate a config file and exit")
    val.add_argument("--config", required=True)
    return parser


def _load_experiment(path, overrides: dict):
    data = load_config_file(path)
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg, violations = parse_experiment_config(data)
    if violations:
        raise ConfigError(violations)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            from .experiments import run_experiment

            overrides = {
                "seeds": _parse_seeds(args.seeds) if args.seeds else None,
                "out": args.out,
                "algorithm": args.algo,
                "episodes": args.episodes,
                "workers": args.workers,
            }
            cfg = _load_experiment(args.config, overrides)
            out_dir = run_experiment(cfg)
            print(f"wrote artifacts to {out_dir}")
            return EXIT_OK

        if args.verb == "compare":
            from .experiments import compare_runs

            table, out_dir = compare_runs(args.dirs, metric=args.metric, window=args.window, out=args.out)
            for row in table:
                print("  ".join(str(v) for v in row))
            print(f"wrote comparison to {out_dir}")
            return EXIT_OK

        if args.verb == "search-suite":
            from .experiments import run_search_suite

            data = load_config_file(args.config)
            if args.seeds:
                data["seeds"] = _parse_seeds(args.seeds)
            if args.out:
                data["out"] = args.out
            cfg, violations = parse_search_config(data)
            if violations:
                raise ConfigError(violations)
            out_dir = run_search_suite(cfg)
            print(f"wrote search-suite artifacts to {out_dir}")
            return EXIT_OK

        # validate-config
        data = load_config_file(args.config)
        if config_mode(data) == "search-suite":
            _, violations = parse_search_config(data)
        else:
            _, violations = parse_experiment_config(data)
        if violations:
            raise ConfigError(violations)
        print("config ok")
        return EXIT_OK

    except ConfigError as err:
        print(str(err), file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"divergence guard tripped: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
