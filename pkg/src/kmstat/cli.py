"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

import argparse
import json
import sys

import numpy as np

from . import __version__
from .errors import DivergentIntegral, KmstatError, NumericalError, ValidationError
from .harness import FULL_SCALE, ExperimentConfig, simulate
from .kernels import parse_kernel_spec
from .models import condition_check, make_rng, parse_censoring_spec, parse_model_spec
from .nulldist import limit_distribution, p_value, ustat_limit_adjust
from .operators import Regime, classify_regime, kprime, sigma2
from .statistics import mmd2_result, mmd_kernel, ustat_result, vstat_result
from .survival import km_fit, read_csv


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, default=_default) + "\n")


def _sizes(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _null(args):
    return parse_model_spec(args.null) if getattr(args, "null", None) else None


def cmd_statistic(args):
    fit = km_fit(read_csv(args.input))
    null = _null(args)
    kernel = parse_kernel_spec(args.kernel, null)
    if args.command == "vstat":
        res = vstat_result(fit, kernel)
    elif args.command == "ustat":
        res = ustat_result(fit, kernel)
    else:
        if null is None:
            raise ValidationError("mmd needs --null exp:RATE")
        res = mmd2_result(fit, kernel, null)
    out = res.to_dict()
    out.pop("scaling_hint")
    return out


def cmd_analyze(args):
    model = parse_model_spec(args.model)
    joint = parse_censoring_spec(args.censor, model)
    kernel = parse_kernel_spec(args.kernel, model)
    cls = classify_regime(model, kernel, joint.tau, args.tol)
    out = {"model": args.model, "censor": args.censor, "kernel": args.kernel,
           "regime": cls.to_dict()}
    if cls.regime is Regime.NON_DEGENERATE:
        out["conditions"] = condition_check(joint, kernel, "Condition1").to_dict()
        s2 = _or_divergent(sigma2, joint, kernel)
        out["sigma2"] = s2
        out["clt_variance"] = 4.0 * s2 if isinstance(s2, float) else s2
    else:
        from .nulldist import asymptotic_mean, asymptotic_variance
        kp = kprime(model, kernel, joint.tau)
        out["conditions"] = condition_check(joint, kernel, "Condition2", kprime=kp).to_dict()
        out["kprime"] = kp.provenance
        out["asymptotic_mean"] = _or_divergent(asymptotic_mean, joint, kp)
        out["asymptotic_variance"] = _or_divergent(asymptotic_variance, joint, kp)
    return out


def _or_divergent(fn, *args):
    """Value of ``fn(*args)``, or a record of the non-settling tail increments."""
    try:
        return fn(*args)
    except DivergentIntegral as exc:
        return {"divergent": True, "message": str(exc), "tail_increments": list(exc.increments)}


def cmd_nulldist(args):
    model = parse_model_spec(args.model)
    joint = parse_censoring_spec(args.censor, model)
    kernel = parse_kernel_spec(args.kernel, model)
    dist = limit_distribution(joint, kprime(model, kernel, joint.tau), args.trunc, args.nodes,
                              seed=args.seed)
    if args.ustat:
        dist = ustat_limit_adjust(dist, joint, kernel)
    return dist.to_dict()


def cmd_simulate(args):
    sizes, reps = args.n, args.reps
    if args.full_scale:
        sizes, reps = FULL_SCALE["sample_sizes"], FULL_SCALE["replications"]
    config = ExperimentConfig(args.experiment, args.model, args.gamma, sizes, reps, args.seed,
                              args.kernel, args.out, args.workers)
    _, summary = simulate(config)
    return summary


def cmd_test(args):
    fit = km_fit(read_csv(args.input))
    null = parse_model_spec(args.null)
    joint = parse_censoring_spec(args.censor, null)
    if args.kind == "cvm":
        kernel = parse_kernel_spec("cvm", null)
        stat = vstat_result(fit, kernel).value
        source = kernel
    else:
        base = parse_kernel_spec(args.kernel, null)
        stat = mmd2_result(fit, base, null).value
        source = mmd_kernel(base, null)
    cls = classify_regime(null, source, joint.tau)
    if cls.regime is Regime.NON_DEGENERATE:
        raise ValidationError(f"{args.kind} kernel is not degenerate under the null")
    dist = limit_distribution(joint, kprime(null, source, joint.tau), args.trunc, args.nodes,
                              seed=args.seed)
    scaled = fit.n * stat
    p = p_value(dist, scaled, args.draws, make_rng(args.seed, 1))
    return {"statistic": stat, "scaled_statistic": scaled, "p_value": p,
            "mc_draws": int(args.draws), "alpha": args.alpha,
            "decision": "reject" if p <= args.alpha else "fail to reject"}


def build_parser():
    p = argparse.ArgumentParser(prog="kmstat",
                                description="Kaplan-Meier U- and V-statistics for censored data")
    p.add_argument("--version", action="version", version=f"kmstat {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    for name, hlp in (("vstat", "Kaplan-Meier V-statistic"),
                      ("ustat", "Kaplan-Meier U-statistic"),
                      ("mmd", "squared MMD to a null model")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--input", required=True, help="CSV file with header time,event")
        s.add_argument("--kernel", required=True, help="ou | gauss:BW | prod:C | cvm")
        s.add_argument("--null", help="null model, e.g. exp:1 (needed for mmd and cvm)")
        s.set_defaults(func=cmd_statistic)

    s = sub.add_parser("analyze", help="regime, conditions and limiting moments of a kernel")
    s.add_argument("--model", required=True)
    s.add_argument("--censor", default="none", help="kg:GAMMA or none")
    s.add_argument("--kernel", required=True)
    s.add_argument("--tol", type=float, default=1e-8, help="regime classification tolerance")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("nulldist", help="degenerate limit law: mean, variance, eigenvalues")
    s.add_argument("--model", required=True)
    s.add_argument("--censor", default="none")
    s.add_argument("--kernel", required=True)
    s.add_argument("--trunc", type=int, default=100)
    s.add_argument("--nodes", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ustat", action="store_true", help="limit of the U-statistic instead")
    s.set_defaults(func=cmd_nulldist)

    s = sub.add_parser("simulate", help="seeded Monte Carlo experiment")
    s.add_argument("--experiment", required=True, choices=["cvm", "mmd", "clt"])
    s.add_argument("--model", default="exp:1")
    s.add_argument("--gamma", type=float, default=0.5)
    s.add_argument("--kernel", default=None, help="override the experiment's kernel")
    s.add_argument("--n", type=_sizes, default=(1000,))
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--full-scale", action="store_true", help="n=3000 with 1000 replications")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("test", help="goodness-of-fit test against an exponential null")
    s.add_argument("kind", choices=["cvm", "mmd"])
    s.add_argument("--input", required=True)
    s.add_argument("--null", required=True)
    s.add_argument("--censor", default="none")
    s.add_argument("--kernel", default="ou", help="kernel for the mmd test")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--trunc", type=int, default=100)
    s.add_argument("--nodes", type=int, default=2000)
    s.add_argument("--draws", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_test)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _emit(args.func(args))
    except ValidationError as exc:
        print(f"kmstat: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"kmstat: numerical failure: {exc}", file=sys.stderr)
        return 3
    except KmstatError as exc:
        print(f"kmstat: error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"kmstat: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
