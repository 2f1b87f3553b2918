"""Command-line front end.

Every command prints JSON (or CSV for ``optimal-threshold --curve``) to
stdout, or writes it to ``--output PATH`` together with a run manifest at
``PATH.manifest.json``.  ``screenlab rerun MANIFEST`` replays a manifest and
reproduces the output byte for byte; simulation results do not depend on
``--shards``.

Exit codes: 0 success, 2 usage error, 3 infeasible or degenerate model,
4 input-format error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from ._numeric import round_sig
from .bernoulli_core import PopulationParams, ThresholdPolicy
from .dynamic_policy import (
    DegenerateGeometry,
    GreedyPolicyParams,
    StepCapExceeded,
    approx_tests_skilled,
    approx_tests_unskilled,
    exact_lattice_geometry,
    expected_tests_overall,
    expected_tests_skilled,
    expected_tests_unskilled,
    greedy_confusion_exact,
    quantization_gap,
    order_of_magnitude_ratios,
    walk_geometry,
)
from .estimation import (
    BernoulliTestLog,
    DegenerateEstimate,
    InputFormatError,
    InsufficientSamples,
    estimate_gaussian,
    estimate_p,
    estimate_sigma,
    format_test_sequences,
    plan_samples,
    read_test_sequences,
    synthetic_bernoulli_log,
    synthetic_gaussian_logs,
)
from .fairness import GroupPair, equalizing_epsilon_prime, intervention_cost, shared_policy_audit
from .gaussian import (
    GaussianModel,
    IllConditioned,
    ORACLE_N_MAX,
    conditional_mean,
    conditional_variance,
    equalize_variance_tests,
    per_test_weight,
    schur_oracle,
)
from .rng import SEED_ENV_VAR, default_seed, substream
from .threshold_optimizer import (
    BudgetConstraint,
    best_pure_policy,
    loss_curve,
    optimal_theta,
    optimize_fdr_budget,
    theta_crossover,
)
from .verification import (
    EmpiricalSummary,
    GreedyExperiment,
    SimulationConfig,
    experiment_from_dict,
    run_experiment,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DEGENERATE = 3
EXIT_INPUT = 4
MANIFEST_SUFFIX = ".manifest.json"


class Infeasible(RuntimeError):
    """The requested optimization has no feasible policy."""


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Formatting
# ---------------------------------------------------------------------------


def number(text: str) -> Fraction:
    """Parse ``"1/3"`` or a decimal such as ``"0.35"`` as the exact rational it denotes."""
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def jsonable(obj):
    """Recursively convert to JSON types, rounding reals to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, Fraction, np.floating)):
        return round_sig(float(obj))
    return obj


def dump_json(data: dict) -> str:
    return json.dumps(jsonable(data), indent=2) + "\n"


def load_schema(name: str) -> dict:
    """JSON schema shipped for the output of command ``name`` (or ``"manifest"``)."""
    path = resources.files("screenlab").joinpath("schemas").joinpath(f"{name.replace('-', '_')}.schema.json")
    return json.loads(path.read_text())


def _exact(x) -> str | None:
    return str(x) if isinstance(x, Fraction) else None


def _within(estimate: float, se: float, exact: float, k: float = 3.0) -> bool:
    return abs(estimate - exact) <= k * se


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _require_unit(**values) -> None:
    for name, v in values.items():
        if v is not None and not 0 < v < 1:
            raise UsageError(f"{name} must lie in (0, 1), got {v}")


def cmd_optimal_threshold(args: argparse.Namespace) -> str:
    _require_unit(p=args.p, alpha=args.alpha, sigma=args.sigma)
    if args.tau < 1:
        raise UsageError("tau must be a positive integer")
    theta = optimal_theta(args.tau, args.p, args.alpha, args.sigma)
    losses = loss_curve(args.tau, args.p, args.alpha, args.sigma)
    best = min(losses)
    if args.curve:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["theta", "loss", "is_optimal", "is_reported"])
        for th, loss in enumerate(losses):
            writer.writerow([th, f"{float(loss):.12g}", int(loss == best), int(th == theta)])
        return buf.getvalue()
    return dump_json(
        {
            "tau": args.tau,
            "p": args.p,
            "alpha": args.alpha,
            "sigma": args.sigma,
            "theta_star": theta,
            "loss": losses[theta],
            "crossover": theta_crossover(args.tau, args.p, args.alpha, args.sigma),
            "argmin_set": [th for th, loss in enumerate(losses) if loss == best],
            "theta_star_in_argmin": losses[theta] == best,
        }
    )


def cmd_budget(args: argparse.Namespace) -> str:
    if not args.B > 1:
        raise UsageError("budget B must exceed 1")
    if not 0 < args.eta < Fraction(1, 2):
        raise UsageError("eta must lie in (0, 1/2)")
    _require_unit(p=args.p)
    params = PopulationParams.from_eta(args.p, args.eta)
    budget = BudgetConstraint(args.B)
    result = optimize_fdr_budget(params, budget, tau_max=args.tau_max)
    pure = best_pure_policy(params, budget, tau_max=args.tau_max)
    out = {
        "params": {"B": args.B, "eta": args.eta, "p": args.p, "tau_max": args.tau_max},
        "randomized": {**result.to_dict(), "fdr_exact": _exact(result.fdr), "r_exact": _exact(result.policy.r) if result.policy else None},
        "best_pure": None
        if pure is None
        else {"policy": pure.policy.to_dict(), "fdr": pure.fdr, "fdr_exact": _exact(pure.fdr), "tests_per_hire": pure.tests_per_hire},
    }
    if not result.feasible:
        raise Infeasible(dump_json(out))
    return dump_json(out)


def _closed_forms(p: float, gp: GreedyPolicyParams, geom) -> dict:
    geom.require_nondegenerate()
    overall = expected_tests_overall(p, geom)
    return {
        "geometry": geom.to_dict(),
        "confusion": greedy_confusion_exact(geom).to_dict(),
        "expected_tests_skilled": expected_tests_skilled(geom),
        "expected_tests_unskilled": expected_tests_unskilled(geom),
        "approx_tests_skilled": approx_tests_skilled(geom),
        "approx_tests_unskilled": approx_tests_unskilled(geom),
        "expected_tests_overall": overall.exact,
        "approx_tests_overall": overall.approx,
        "overall_ratio": overall.ratio,
        "order_of_magnitude_ratios": order_of_magnitude_ratios(p, gp, geom),
    }


def _empirical(summary: EmpiricalSummary, reference: dict) -> dict:
    conf = reference["confusion"]
    out = summary.to_dict()
    checks = {name: _within(out[name], out[f"{name}_se"], conf[name]) for name in ("tpr", "fnr", "fpr", "tnr")}
    checks["expected_tests_skilled"] = _within(
        summary.mean_tests(1), summary.mean_tests_se(1), reference["expected_tests_skilled"]
    )
    checks["expected_tests_unskilled"] = _within(
        summary.mean_tests(0), summary.mean_tests_se(0), reference["expected_tests_unskilled"]
    )
    checks["expected_tests_overall"] = _within(summary.mean_tests(), summary.mean_tests_se(), reference["expected_tests_overall"])
    out["within_3se"] = checks
    return out


def cmd_greedy(args: argparse.Namespace) -> str:
    eps_prime = args.p if args.epsilon_prime is None else args.epsilon_prime
    _require_unit(p=args.p, sigma=args.sigma, epsilon=args.epsilon, epsilon_prime=eps_prime)
    p, sigma = float(args.p), float(args.sigma)
    gp = GreedyPolicyParams(float(args.epsilon), float(eps_prime))
    quantized = walk_geometry(p, sigma, gp)
    actual = exact_lattice_geometry(p, sigma, gp)
    out = {
        "params": {"p": p, "sigma": sigma, "epsilon": gp.epsilon, "epsilon_prime": gp.epsilon_prime},
        "closed_form": _closed_forms(p, gp, quantized),
        "policy_lattice": _closed_forms(p, gp, actual),
        "quantization_gap": quantization_gap(p, sigma, gp),
    }
    if args.simulate:
        spec = GreedyExperiment(PopulationParams(p, sigma), gp, args.barriers)
        summary = run_experiment(SimulationConfig(args.seed, args.simulate, args.shards), spec)
        reference = out["closed_form"] if args.barriers == "quantized" else out["policy_lattice"]
        out["simulation"] = {"seed": args.seed, "n": args.simulate, "barriers": args.barriers, **_empirical(summary, reference)}
    return dump_json(out)


def cmd_fairness(args: argparse.Namespace) -> str:
    _require_unit(p=args.p)
    for name, eta in (("eta1", args.eta1), ("eta2", args.eta2)):
        if not 0 < eta < Fraction(1, 2):
            raise UsageError(f"{name} must lie in (0, 1/2)")
    if args.tau is None and args.dynamic is None:
        raise UsageError("give --tau/--theta for a shared policy audit and/or --dynamic EPSILON")
    groups = GroupPair.from_etas(args.p, args.eta1, args.eta2)
    out: dict = {"params": {"p": args.p, "eta1": groups.eta1, "eta2": groups.eta2}}
    if args.tau is not None:
        if args.theta is None:
            raise UsageError("--tau requires --theta")
        audit = shared_policy_audit(ThresholdPolicy(args.tau, args.theta, args.r), groups)
        out["shared_policy"] = {**audit.to_dict(), "rates_equal": audit.confusion1 == audit.confusion2}
    if args.dynamic is not None:
        _require_unit(epsilon=args.dynamic)
        p = float(args.p)
        report = intervention_cost(groups, float(args.dynamic), p, barriers=args.barriers)
        block = {
            "epsilon": args.dynamic,
            "barriers": args.barriers,
            "epsilon_prime_group1": p,
            "epsilon_prime_group2": equalizing_epsilon_prime(p, float(groups.eta1), float(groups.eta2)),
            **report.to_dict(),
        }
        if args.simulate:
            means = []
            for label in ("group2_before", "group2_after"):
                gp = GreedyPolicyParams(float(args.dynamic), getattr(report, label).epsilon_prime)
                spec = GreedyExperiment(PopulationParams(p, float(groups.group2.sigma)), gp, args.barriers)
                s = run_experiment(SimulationConfig(args.seed, args.simulate, args.shards), spec)
                means.append((s.mean_tests(), s.mean_tests_se()))
            delta = means[1][0] - means[0][0]
            se = (means[0][1] ** 2 + means[1][1] ** 2) ** 0.5
            block["simulation"] = {
                "seed": args.seed,
                "n": args.simulate,
                "extra_tests_group2": delta,
                "extra_tests_group2_se": se,
                "within_3se": _within(delta, se, report.extra_tests_group2),
            }
        out["intervention"] = block
    return dump_json(out)


def cmd_gaussian(args: argparse.Namespace) -> str:
    model = GaussianModel(args.mu, args.sigma_q2, args.sigma_eta2)
    if args.n < 0:
        raise UsageError("n must be nonnegative")
    out: dict = {
        "model": model.to_dict(),
        "n": args.n,
        "posterior": {"weight": per_test_weight(model, args.n), "variance": conditional_variance(model, args.n)},
    }
    if args.observations is not None:
        ys = [float(y) for y in args.observations.split(",") if y.strip()]
        if len(ys) != args.n:
            raise UsageError(f"--observations has {len(ys)} values, expected n={args.n}")
        out["posterior"]["mean"] = conditional_mean(model, ys)
    if 1 <= args.n <= ORACLE_N_MAX:
        oracle = schur_oracle(model, args.n)
        out["oracle"] = {"weight": float(oracle.weights[0]), "variance": oracle.variance, "condition": oracle.condition}
        if args.observations is not None:
            out["oracle"]["mean"] = oracle.mean(model, ys)
    if args.equalize is not None:
        sigma_eta2_b, n1 = args.equalize
        noisier = GaussianModel(args.mu, args.sigma_q2, float(sigma_eta2_b))
        report = equalize_variance_tests(model, noisier, int(n1))
        out["equalization"] = {"sigma_eta2_b": float(sigma_eta2_b), "n1": int(n1), "ratio": float(sigma_eta2_b) / args.sigma_eta2, **report.to_dict()}
    return dump_json(out)


def cmd_estimate(args: argparse.Namespace) -> str:
    target = {"epsilon": args.epsilon, "delta": args.delta}
    if (args.epsilon is None) != (args.delta is None):
        raise UsageError("give both --epsilon and --delta, or neither")
    out: dict = {"input": Path(args.input).name, "model": args.model}
    if args.epsilon is not None:
        out["planner_m"] = plan_samples(args.epsilon, args.delta)
    if args.model == "bernoulli":
        log = BernoulliTestLog.from_path(args.input, args.format)
        sigma = estimate_sigma(log, mode=args.mode, **target)
        out.update({"m": log.m, "skipped": log.skipped, "sigma": sigma.to_dict()})
        out["p"] = estimate_p(log, sigma.value, **target).to_dict()
    else:
        sequences = read_test_sequences(args.input, args.format)
        est = estimate_gaussian(sequences.values(), delta=args.delta)
        out.update(est.to_dict())
    return dump_json(out)


def cmd_synth_log(args: argparse.Namespace) -> str:
    rng = substream(args.seed, 0)
    if args.model == "bernoulli":
        _require_unit(p=args.p, sigma=args.sigma)
        rows = synthetic_bernoulli_log(float(args.p), float(args.sigma), args.m, rng, args.tests).tolist()
    else:
        model = GaussianModel(args.mu, args.sigma_q2, args.sigma_eta2)
        rows = [[round_sig(y) for y in row] for row in synthetic_gaussian_logs(model, args.m, args.tests, rng).tolist()]
    return format_test_sequences({f"c{i}": row for i, row in enumerate(rows)}, args.format)


def cmd_experiment(args: argparse.Namespace) -> str:
    try:
        spec_data = json.loads(Path(args.spec).read_text())
        spec = experiment_from_dict(spec_data)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputFormatError(f"bad experiment spec: {exc}") from exc
    summary = run_experiment(SimulationConfig(args.seed, args.n, args.shards), spec)
    return dump_json({"spec": spec.to_dict(), "seed": args.seed, "summary": summary.to_dict()})


# ---------------------------------------------------------------------------
# Parser, manifests, dispatch
# ---------------------------------------------------------------------------


def _add_simulation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV_VAR} or built-in)")
    p.add_argument("--shards", type=int, default=1, help="worker processes; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="screenlab", description="Screening-policy analytics under noisy tests.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimal-threshold", help="loss-minimizing threshold for a fixed number of tests")
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--p", type=number, required=True)
    p.add_argument("--alpha", type=number, required=True)
    p.add_argument("--sigma", type=number, required=True)
    p.add_argument("--curve", action="store_true", help="emit the loss for every theta as CSV")
    p.set_defaults(handler=cmd_optimal_threshold)

    p = sub.add_parser("budget", help="minimum-FDR randomized threshold policy under a tests-per-hire budget")
    p.add_argument("--B", type=number, required=True)
    p.add_argument("--eta", type=number, required=True)
    p.add_argument("--p", type=number, default=Fraction(1, 2))
    p.add_argument("--tau-max", type=int, default=12)
    p.set_defaults(handler=cmd_budget)

    p = sub.add_parser("greedy", help="closed forms (and optional simulation) of the greedy dynamic policy")
    p.add_argument("--p", type=number, required=True)
    p.add_argument("--sigma", type=number, required=True)
    p.add_argument("--epsilon", type=number, required=True)
    p.add_argument("--epsilon-prime", type=number, default=None, help="rejection cutoff (default p)")
    p.add_argument("--simulate", type=int, default=0, metavar="N")
    p.add_argument("--barriers", choices=("exact", "quantized"), default="exact")
    _add_simulation_flags(p)
    p.set_defaults(handler=cmd_greedy)

    p = sub.add_parser("fairness", help="two-group audit and rejection-cutoff intervention")
    p.add_argument("--p", type=number, required=True)
    p.add_argument("--eta1", type=number, required=True)
    p.add_argument("--eta2", type=number, required=True)
    p.add_argument("--tau", type=int)
    p.add_argument("--theta", type=int)
    p.add_argument("--r", type=number, default=Fraction(1))
    p.add_argument("--dynamic", type=number, metavar="EPSILON")
    p.add_argument("--barriers", choices=("exact", "quantized"), default="quantized")
    p.add_argument("--simulate", type=int, default=0, metavar="N")
    _add_simulation_flags(p)
    p.set_defaults(handler=cmd_fairness)

    p = sub.add_parser("gaussian", help="posterior of quality given n Gaussian tests")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--sigma-q2", type=float, required=True)
    p.add_argument("--sigma-eta2", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--observations", help="comma-separated test results (n values)")
    p.add_argument("--equalize", nargs=2, type=float, metavar=("SIGMA_ETA2_B", "N1"))
    p.set_defaults(handler=cmd_gaussian)

    p = sub.add_parser("estimate", help="recover model parameters from a test log")
    p.add_argument("input")
    p.add_argument("--format", choices=("csv", "jsonl"), default=None)
    p.add_argument("--model", choices=("bernoulli", "gaussian"), default="bernoulli")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--mode", choices=("ordered", "either"), default="ordered")
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("synth-log", help="write a synthetic test log")
    p.add_argument("--model", choices=("bernoulli", "gaussian"), default="bernoulli")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--tests", type=int, default=2)
    p.add_argument("--p", type=number)
    p.add_argument("--sigma", type=number)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma-q2", type=float, default=1.0)
    p.add_argument("--sigma-eta2", type=float, default=1.0)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    _add_simulation_flags(p)
    p.set_defaults(handler=cmd_synth_log)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment from a JSON spec")
    p.add_argument("spec")
    p.add_argument("--n", type=int, required=True)
    _add_simulation_flags(p)
    p.set_defaults(handler=cmd_experiment)

    for name, sp in sub.choices.items():
        sp.add_argument("--output", help="write output here and a manifest next to it")

    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("manifest")
    p.add_argument("--output", help="write to this path instead of the recorded one")
    p.add_argument("--shards", type=int)
    p.set_defaults(handler=None)
    return parser


def _manifest(command: str, argv: list[str], args: argparse.Namespace, output: str) -> dict:
    params = {k: v for k, v in vars(args).items() if k not in ("handler", "output", "command")}
    return {
        "command": command,
        "argv": argv,
        "params": jsonable({k: (str(v) if isinstance(v, Fraction) else v) for k, v in params.items()}),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "outputs": [output],
    }


def _strip_output(argv: list[str]) -> list[str]:
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--output":
            skip = True
            continue
        if tok.startswith("--output="):
            continue
        out.append(tok)
    return out


def _rerun(args: argparse.Namespace) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        argv = list(manifest["argv"])
        output = args.output or manifest["outputs"][0]
    except (OSError, json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        print(f"screenlab: unreadable manifest: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.shards is not None:
        if "--shards" in argv:
            argv[argv.index("--shards") + 1] = str(args.shards)
        else:
            argv += ["--shards", str(args.shards)]
    return main(argv + ["--output", output])


def _errors() -> list[tuple[tuple[type, ...], int]]:
    return [
        ((InputFormatError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError), EXIT_INPUT),
        ((DegenerateGeometry, DegenerateEstimate, InsufficientSamples, Infeasible, IllConditioned, StepCapExceeded), EXIT_DEGENERATE),
        ((UsageError, ValueError), EXIT_USAGE),
    ]


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "rerun":
        return _rerun(args)
    record = _strip_output(argv)
    if hasattr(args, "seed") and args.seed is None:
        args.seed = default_seed()
        record += ["--seed", str(args.seed)]
    if hasattr(args, "shards") and args.shards < 1:
        print("screenlab: --shards must be positive", file=sys.stderr)
        return EXIT_USAGE
    handler: Callable[[argparse.Namespace], str] = args.handler
    try:
        text = handler(args)
    except Exception as exc:  # mapped to exit codes below
        for kinds, code in _errors():
            if isinstance(exc, kinds):
                if isinstance(exc, Infeasible):
                    sys.stdout.write(str(exc))
                print(f"screenlab {args.command}: {exc if not isinstance(exc, Infeasible) else 'infeasible'}", file=sys.stderr)
                return code
        raise
    if args.output:
        if text:
            Path(args.output).write_text(text)
        manifest_path = Path(args.output + MANIFEST_SUFFIX)
        manifest_path.write_text(json.dumps(_manifest(args.command, record, args, args.output), indent=2) + "\n")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
