"""Command-line entry point: ``eecap <subcommand> ...``.

Results go to ``--output`` (stdout by default); diagnostics go to stderr.
Exit status: 0 on success, 1 on invalid models, policies or failed
computations, 2 on I/O and usage errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, ValidationError

from eecap import __version__
from eecap.config import settings
from eecap.logfire_config import configure_logfire
from eecap.markov import GeiPolicy, JointPolicy, NoiselessPolicy
from eecap.model import GeneralModel, Model, NoiselessModel, load_json, load_model
from eecap.optimize import OptimConfig, OptimMode, linear_grid, optimize, sweep, sweep_to_csv
from eecap.rates import (
    LeiPolicy,
    baseline_report,
    inner_bound_general,
    inner_bound_noiseless,
    lei_rates,
    outer_bound_general,
    outer_bound_noiseless,
)
from eecap.sim import (
    SimConfig,
    simulate_baseline,
    simulate_coding_noiseless,
    simulate_states,
    simulate_u1_optimal,
)
from eecap.validation import DomainError, EecapError

logger = logging.getLogger("eecap")

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2


def _emit(text: str, output: Optional[str]) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _emit_model(result: BaseModel, args: argparse.Namespace) -> None:
    """JSON by default; ``--format csv`` flattens the result into a one-row table."""
    if args.format == "csv":
        frame = pd.json_normalize(result.model_dump(mode="json"), sep="_")
        _emit(frame.to_csv(index=False, float_format="%.10g"), args.output)
    else:
        _emit(result.model_dump_json(indent=2), args.output)


def _policy_data(path: str) -> Any:
    """A bare policy, or any result document carrying one under ``"policy"``."""
    data = load_json(path)
    if isinstance(data, dict) and "policy" in data:
        return data["policy"]
    return data


def _product_policy(model: Model, path: str):
    data = _policy_data(path)
    if isinstance(model, NoiselessModel):
        return NoiselessPolicy.model_validate(data)
    return GeiPolicy.model_validate(data)


def _general(model: Model, command: str) -> GeneralModel:
    if not isinstance(model, GeneralModel):
        raise DomainError(f"'{command}' needs a general model (buffer_1, buffer_2, ...)")
    return model


def _optim_config(args: argparse.Namespace) -> OptimConfig:
    return OptimConfig(
        n_starts=args.starts,
        max_iters=args.max_iters,
        tol=args.tol,
        seed=args.seed,
        weight=args.weight,
    )


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def cmd_inner(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    policy = _product_policy(model, args.policy)
    if isinstance(model, NoiselessModel):
        report = inner_bound_noiseless(model, policy)
    else:
        report = inner_bound_general(model, policy)
    _emit_model(report, args)
    return EXIT_OK


def cmd_outer(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    joint = JointPolicy.model_validate(_policy_data(args.policy))
    if isinstance(model, NoiselessModel):
        report = outer_bound_noiseless(model, joint)
    else:
        report = outer_bound_general(model, joint)
    _emit_model(report, args)
    return EXIT_OK


def cmd_lei(args: argparse.Namespace) -> int:
    model = _general(load_model(args.model), "lei")
    if args.policy:
        lei = LeiPolicy.model_validate(_policy_data(args.policy))
    else:
        lei = LeiPolicy.bernoulli(model, args.q1, args.q2)
    _emit_model(lei_rates(model, lei), args)
    return EXIT_OK


def cmd_optimize(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    result, _ = optimize(model, OptimMode(args.mode), _optim_config(args))
    logger.info(f"{args.mode}: objective={result.objective:.6f} after {result.n_evals} evaluations")
    _emit_model(result, args)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    if args.values:
        grid = list(args.values)
    elif args.start is not None and args.stop is not None:
        grid = linear_grid(args.start, args.stop, args.steps)
    else:
        raise DomainError("sweep needs --values or both --from and --to")
    frame = sweep(model, args.param, grid, OptimMode(args.mode), _optim_config(args), mirror=args.mirror)
    if args.format == "json":
        _emit(frame.to_json(orient="records", indent=2, double_precision=10), args.output)
    elif args.output:
        sweep_to_csv(frame, args.output)
    else:
        sweep_to_csv(frame, sys.stdout)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.kind == "u1":
        _emit_model(simulate_u1_optimal(args.m, seed=args.seed, handover=not args.no_handover), args)
        return EXIT_OK

    if not args.model:
        raise DomainError(f"simulate --kind {args.kind} needs --model")
    model = load_model(args.model)
    cfg = SimConfig(n=args.n, seed=args.seed, epsilon=args.epsilon)
    if args.policy:
        policy = _product_policy(model, args.policy)
    elif isinstance(model, NoiselessModel):
        policy = NoiselessPolicy.uniform(model.total_units)
    else:
        policy = GeiPolicy.uniform(model)

    if args.kind == "coding":
        if not isinstance(model, NoiselessModel):
            raise DomainError("The coding simulator runs on noiseless models only")
        report = simulate_coding_noiseless(
            model,
            policy,
            cfg,
            rate_fraction=args.rate_fraction,
            message_bits=args.message_bits,
            strict=not args.no_strict,
        )
    else:
        report = simulate_states(model, policy, cfg, trace_path=args.trace)
    _emit_model(report, args)
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    if args.simulate:
        _emit_model(simulate_baseline(args.variant, F=args.F, m=args.m, seed=args.seed), args)
    else:
        _emit_model(baseline_report(args.variant, F=args.F), args)
    return EXIT_OK


# =============================================================================
# PARSER
# =============================================================================

def _add_optim_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mode", required=True, choices=[m.value for m in OptimMode])
    parser.add_argument("--starts", type=int, default=16, help="Optimizer starts per point")
    parser.add_argument("--max-iters", type=int, default=2000, help="Simplex iterations per start")
    parser.add_argument("--tol", type=float, default=1e-8, help="Objective tolerance")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--weight", type=float, default=0.5, help="lambda in lambda*R1 + (1-lambda)*R2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eecap",
        description="Capacity bounds for two-way binary channels with energy exchange",
    )
    parser.add_argument("--version", action="version", version=f"eecap {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="Output file (default: stdout)")
    common.add_argument(
        "--format",
        choices=["json", "csv"],
        help="Output format (default: json, or csv for sweep)",
    )

    p = sub.add_parser("inner", parents=[common], help="Inner bound for a product policy")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_inner)

    p = sub.add_parser("outer", parents=[common], help="Outer bounds for a joint policy")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.set_defaults(func=cmd_outer)

    p = sub.add_parser("lei", parents=[common], help="Rates under local energy information")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", help="LEI policy file; otherwise --q1/--q2")
    p.add_argument("--q1", type=float, default=0.5)
    p.add_argument("--q2", type=float, default=0.5)
    p.set_defaults(func=cmd_lei)

    p = sub.add_parser("optimize", parents=[common], help="Optimize a policy")
    p.add_argument("--model", required=True)
    _add_optim_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", parents=[common], help="Optimize over a parameter grid (CSV)")
    p.add_argument("--model", required=True)
    p.add_argument("--param", required=True, help="Dotted model field, e.g. link_12.replenish")
    p.add_argument("--from", dest="start", type=float)
    p.add_argument("--to", dest="stop", type=float)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--mirror", action="append", default=[], help="Field set in lockstep (repeatable)")
    _add_optim_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo simulation")
    p.add_argument("--kind", choices=["states", "coding", "u1"], default="states")
    p.add_argument("--model")
    p.add_argument("--policy")
    p.add_argument("--n", type=int, default=10**5, help="Channel uses")
    p.add_argument("--m", type=int, default=10**5, help="Message bits per node (u1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--rate-fraction", type=float, default=0.9)
    p.add_argument("--message-bits", type=int)
    p.add_argument("--no-strict", action="store_true", help="Allow codebooks above H(p)")
    p.add_argument("--no-handover", action="store_true", help="Stall instead of sending a dummy '1'")
    p.add_argument("--trace", help="Per-step CSV trace (short runs)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", parents=[common], help="Frame and variable-length baselines")
    p.add_argument("--variant", choices=["frame", "variable"], required=True)
    p.add_argument("--F", type=int, default=2, help="Frame length")
    p.add_argument("--simulate", action="store_true")
    p.add_argument("--m", type=int, default=10**5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)
    return parser


def _configure_logging(verbose: int) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, settings.log_level.upper(), logging.WARNING)
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    configure_logfire()

    try:
        return args.func(args)
    except ValidationError as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_DOMAIN
    except EecapError as e:
        logger.error(str(e))
        return EXIT_DOMAIN
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
