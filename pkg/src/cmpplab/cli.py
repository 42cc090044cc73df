"""Command-line front end: run experiments, validate configs, print demos.

Exit codes: 0 when every suite accepts, 2 when any suite rejects, 1 for
operational errors (unreadable file, malformed JSON, invalid config).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .distributions import mixed_poisson_pmf, mixing_law_from_dict
from .experiment_runner import (
    SCHEMA_VERSION,
    SUITES,
    ConfigError,
    ExperimentConfig,
    run_experiment,
    validate_config,
)

THREADS_ENV = "CMPPLAB_THREADS"

# Ready-made configs covering the main regimes: a fixed-rate check, two
# mixtures that must accept, one counterexample that must reject, and the
# unit-claims reduction of the aggregate test to the count test.
_DEMOS = {
    "watanabe": {
        "schema_version": SCHEMA_VERSION,
        "kind": "cpp",
        "mixing": {"type": "degenerate", "value": 2.0},
        "claims": {"type": "exponential", "rate": 1.0},
        "horizon": 2.0,
        "grid": [0.0, 0.5, 1.0, 2.0],
        "n_paths": 20000,
        "master_seed": 20260814,
        "alpha": 0.01,
        "suites": ["watanabe"],
        "output_dir": "cmpplab-out/watanabe",
    },
    "cmpp-gamma": {
        "schema_version": SCHEMA_VERSION,
        "kind": "cmpp",
        "mixing": {"type": "gamma", "shape": 2.0, "rate": 1.0},
        "claims": {"type": "exponential", "rate": 1.0},
        "horizon": 2.0,
        "grid": [0.0, 0.5, 1.0, 2.0],
        "n_paths": 20000,
        "master_seed": 20260814,
        "alpha": 0.01,
        "suites": ["martingale_M", "martingale_L", "wald", "pmf_check"],
        "output_dir": "cmpplab-out/cmpp-gamma",
    },
    "cmpp-discrete": {
        "schema_version": SCHEMA_VERSION,
        "kind": "cmpp",
        "mixing": {"type": "discrete", "atoms": [1.0, 3.0], "weights": [0.5, 0.5]},
        "claims": {"type": "exponential", "rate": 1.0},
        "horizon": 2.0,
        "grid": [0.0, 0.5, 1.0, 2.0],
        "n_paths": 20000,
        "master_seed": 20260814,
        "alpha": 0.01,
        "suites": ["martingale_M", "martingale_L", "stratified", "conditional_wald"],
        "strata_edges": [2.0],
        "output_dir": "cmpplab-out/cmpp-discrete",
    },
    "renewal-counterexample": {
        "schema_version": SCHEMA_VERSION,
        "kind": "renewal",
        "interarrival": {"type": "degenerate", "value": 0.5},
        "claims": {"type": "degenerate", "value": 1.0},
        "horizon": 1.5,
        "grid": [0.0, 0.75, 1.5],
        "n_paths": 10000,
        "master_seed": 20260814,
        "alpha": 0.01,
        "suites": ["martingale_L"],
        "output_dir": "cmpplab-out/renewal-counterexample",
    },
    "claims-unit-reduction": {
        "schema_version": SCHEMA_VERSION,
        "kind": "cmpp",
        "mixing": {"type": "gamma", "shape": 2.0, "rate": 1.0},
        "claims": {"type": "degenerate", "value": 1.0},
        "horizon": 2.0,
        "grid": [0.0, 0.5, 1.0, 2.0],
        "n_paths": 10000,
        "master_seed": 20260814,
        "alpha": 0.01,
        "suites": ["martingale_M", "martingale_L"],
        "output_dir": "cmpplab-out/claims-unit-reduction",
    },
}


def demo_config(name: str) -> dict:
    """Deep copy of a built-in demo config."""
    if name not in _DEMOS:
        raise KeyError(name)
    return json.loads(json.dumps(_DEMOS[name]))


def demo_names() -> tuple[str, ...]:
    return tuple(_DEMOS)


def _err(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _load_config(source: str):
    if source == "-":
        return json.load(sys.stdin)
    with open(source, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_threads(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(THREADS_ENV)
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        raw = _load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        return _err(f"cannot read config: {exc}")
    if not isinstance(raw, dict):
        return _err("config must be a JSON object")
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if args.paths is not None:
        raw["n_paths"] = args.paths
    if args.alpha is not None:
        raw["alpha"] = args.alpha
    if args.out is not None:
        raw["output_dir"] = args.out
    try:
        threads = _resolve_threads(args.threads)
    except ValueError as exc:
        return _err(str(exc))
    try:
        config = ExperimentConfig.from_dict(raw)
    except ConfigError as exc:
        print(f"error: invalid config: {exc.violations[0]}", file=sys.stderr)
        for extra in exc.violations[1:]:
            print(f"  also: {extra}", file=sys.stderr)
        return 1
    try:
        manifest = run_experiment(config, threads=threads)
    except Exception as exc:
        return _err(str(exc))
    for suite in (s for s in SUITES if s in manifest.suite_outcomes):
        verdict = "ACCEPT" if manifest.suite_outcomes[suite] else "REJECT"
        rel = manifest.report_paths[suite]["report_json"]
        print(f"{suite}: {verdict} ({manifest.output_dir}/{rel})")
    overall = "ACCEPT" if manifest.accept else "REJECT"
    print(f"overall: {overall} (manifest: {manifest.output_dir}/manifest.json)")
    return 0 if manifest.accept else 2


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        raw = _load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        return _err(f"cannot read config: {exc}")
    violations = validate_config(raw)
    if violations:
        for line in violations:
            print(line)
        return 1
    print("ok")
    return 0


def _cmd_demo(args: argparse.Namespace) -> int:
    if args.name not in _DEMOS:
        available = ", ".join(demo_names())
        return _err(f"unknown demo '{args.name}' (available: {available})")
    print(json.dumps(demo_config(args.name), indent=2))
    return 0


def _cmd_pmf(args: argparse.Namespace) -> int:
    try:
        spec = json.loads(args.mixing)
    except json.JSONDecodeError as exc:
        return _err(f"mixing spec is not valid JSON: {exc}")
    try:
        law = mixing_law_from_dict(spec)
    except ValueError as exc:
        return _err(str(exc))
    if not (math.isfinite(args.t) and args.t >= 0):
        return _err(f"--t must be a finite number >= 0, got {args.t!r}")
    if args.n_max < 0:
        return _err(f"--n-max must be >= 0, got {args.n_max!r}")
    print("n,pmf")
    total = 0.0
    for n in range(args.n_max + 1):
        p = mixed_poisson_pmf(law, args.t, n)
        total += p
        print(f"{n},{p!r}")
    tail = max(0.0, 1.0 - total)
    print(f"# tail_mass_bound,{tail!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmpplab",
        description=(
            "Simulate compound mixed Poisson risk processes and verify their "
            "martingale structure."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the suites of a config and write reports")
    run.add_argument("config", help="path to a JSON config, or '-' for stdin")
    run.add_argument("--seed", type=int, default=None, help="override master_seed")
    run.add_argument("--paths", type=int, default=None, help="override n_paths")
    run.add_argument("--alpha", type=float, default=None, help="override alpha")
    run.add_argument("--out", default=None, help="override output_dir")
    run.add_argument(
        "--threads", type=int, default=None,
        help=f"simulation threads (default: ${THREADS_ENV} or 1)",
    )
    run.set_defaults(func=_cmd_run)

    validate = sub.add_parser("validate", help="print config violations, if any")
    validate.add_argument("config", help="path to a JSON config, or '-' for stdin")
    validate.set_defaults(func=_cmd_validate)

    demo = sub.add_parser("demo", help="print a built-in demo config as JSON")
    demo.add_argument("name", help=f"one of: {', '.join(demo_names())}")
    demo.set_defaults(func=_cmd_demo)

    pmf = sub.add_parser("pmf", help="print the mixed-Poisson pmf table for a mixing law")
    pmf.add_argument(
        "--mixing", required=True,
        help='mixing law as JSON, e.g. \'{"type": "gamma", "shape": 2.0, "rate": 1.0}\'',
    )
    pmf.add_argument("--t", type=float, required=True, help="observation time")
    pmf.add_argument("--n-max", type=int, default=8, help="largest count to tabulate")
    pmf.set_defaults(func=_cmd_pmf)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
