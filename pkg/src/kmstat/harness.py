"""Seeded Monte Carlo experiments for the three limit regimes.

Experiments
-----------
cvm
    ``n * V`` for the Cramer-von Mises kernel of an exponential null with
    Koziol-Green censoring ``1 - G = S**gamma`` (degenerate, n scaling).
mmd
    ``n * MMD^2`` for the Ornstein-Uhlenbeck kernel against the null
    (degenerate, n scaling).
clt
    ``sqrt(n) (V - theta)`` for ``K(x, y) = x y`` with censoring exponent
    ``a`` passed as ``gamma`` (non-degenerate, sqrt(n) scaling).

Replication ``k`` at sample size ``n`` draws from the stream keyed by
``(seed, n, k)``, so output does not depend on the number of workers.

Output files (``out`` directory), UTF-8 with LF line endings, each starting
with a ``#`` metadata line carrying the library version, config hash and
seed:

``values.csv``  columns ``n,replication,value``
``ecdf.csv``    columns ``n,x,fraction``
``summary.json``
"""

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import __version__
from .errors import InvalidParameter, KmstatError, RegimeMismatch, UnsortedGrid
from .kernels import cvm_kernel, parse_kernel_spec
from .models import (condition_check, make_rng, parse_model_spec, koziol_green,
                     sample_censored)
from .operators import Regime, classify_regime, kprime, sigma2
from .statistics import mmd2, mmd_kernel, theta_limit, vstat
from .survival import km_fit

EXPERIMENTS = {"cvm": "cvm", "cvm_fig1": "cvm", "mmd": "mmd", "mmd_fig2": "mmd",
               "clt": "clt", "clt_nondegenerate": "clt"}
DEFAULT_KERNELS = {"cvm": "cvm", "mmd": "ou", "clt": "prod:0"}
FULL_SCALE = {"sample_sizes": (3000,), "replications": 1000}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model_spec: str = "exp:1"
    gamma: float = 0.5
    sample_sizes: tuple = (1000,)
    replications: int = 500
    seed: int = 0
    kernel_spec: Optional[str] = None
    out: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidParameter(f"unknown experiment {self.experiment!r} "
                                   f"(expected one of {sorted(set(EXPERIMENTS.values()))})")
        object.__setattr__(self, "experiment", EXPERIMENTS[self.experiment])
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        if self.kernel_spec is None:
            object.__setattr__(self, "kernel_spec", DEFAULT_KERNELS[self.experiment])
        if int(self.replications) < 1:
            raise InvalidParameter(f"replications must be >= 1, got {self.replications}")
        if not self.sample_sizes or min(self.sample_sizes) < 1:
            raise InvalidParameter("sample sizes must be positive")
        if int(self.workers) < 1:
            raise InvalidParameter("workers must be >= 1")
        if not float(self.gamma) >= 0:
            raise InvalidParameter(f"gamma must be >= 0, got {self.gamma!r}")

    def identity(self):
        """Fields that determine the output (excludes ``out`` and ``workers``)."""
        d = asdict(self)
        d.pop("out")
        d.pop("workers")
        d["gamma"] = float(self.gamma)
        d["sample_sizes"] = list(self.sample_sizes)
        return d

    @property
    def config_hash(self):
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@lru_cache(maxsize=16)
def _setup(experiment, model_spec, gamma, kernel_spec):
    model = parse_model_spec(model_spec)
    joint = koziol_green(model, gamma)
    kernel = parse_kernel_spec(kernel_spec, model)
    if experiment == "mmd":
        stat_kernel = mmd_kernel(kernel, model)
        center = 0.0
    elif experiment == "clt":
        stat_kernel = kernel
        center = theta_limit(model, kernel, joint.tau)
    else:
        stat_kernel = kernel
        center = 0.0
    return model, joint, kernel, stat_kernel, center


def replicate(experiment, model_spec, gamma, kernel_spec, seed, n, rep):
    """One scaled statistic; a pure function of its arguments."""
    model, joint, kernel, _, center = _setup(experiment, model_spec, gamma, kernel_spec)
    sample = sample_censored(joint, n, make_rng(seed, n, rep))
    fit = km_fit(sample)
    if experiment == "mmd":
        return n * mmd2(fit, kernel, model)
    if experiment == "clt":
        return np.sqrt(n) * (vstat(fit, kernel) - center)
    return n * vstat(fit, kernel)


def _replicate_block(args):
    experiment, model_spec, gamma, kernel_spec, seed, n, reps = args
    return [replicate(experiment, model_spec, gamma, kernel_spec, seed, n, k) for k in reps]


def _run_values(config, n):
    reps = list(range(int(config.replications)))
    base = (config.experiment, config.model_spec, float(config.gamma), config.kernel_spec,
            int(config.seed), n)
    if config.workers == 1:
        return np.array(_replicate_block(base + (reps,)))
    size = max(1, -(-len(reps) // (4 * config.workers)))
    blocks = [reps[a:a + size] for a in range(0, len(reps), size)]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        parts = list(pool.map(_replicate_block, [base + (b,) for b in blocks]))
    return np.array([v for part in parts for v in part])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    values: dict
    regime: dict
    reference: dict
    conditions: dict
    grid: np.ndarray = field(default=None)

    def stats(self, n):
        v = self.values[n]
        mean = float(np.mean(v))
        var = float(np.var(v, ddof=1)) if v.size > 1 else 0.0
        sd = np.sqrt(var)
        skew = float(np.mean(((v - mean) / sd) ** 3)) if sd > 0 else 0.0
        return {"n": n, "replications": int(v.size), "mean": mean, "variance": var,
                "skewness": skew}

    def ecdf(self, n):
        return ecdf_export(self.values[n], self.grid)


def _reference(config, model, joint, kernel):
    """Asymptotic mean/variance of the scaled statistic, or notes on why not."""
    from .errors import DivergentIntegral
    from .nulldist import asymptotic_mean, asymptotic_variance
    ref = {"mean": None, "variance": None, "notes": []}
    try:
        if config.experiment == "clt":
            ref["mean"] = 0.0
            s2 = sigma2(joint, kernel)
            ref["variance"] = 4.0 * s2
            ref["sigma2"] = s2
            ref["source"] = "4 * sigma2"
        else:
            kp = kprime(model, kernel, joint.tau)
            ref["source"] = "nulldist"
            try:
                ref["mean"] = asymptotic_mean(joint, kp)
            except DivergentIntegral as exc:
                ref["notes"].append(f"asymptotic mean diverges: {exc}")
            try:
                ref["variance"] = asymptotic_variance(joint, kp)
            except DivergentIntegral as exc:
                ref["notes"].append(f"asymptotic variance diverges: {exc}")
    except DivergentIntegral as exc:
        ref["notes"].append(str(exc))
    return ref


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    model, joint, kernel, stat_kernel, _ = _setup(config.experiment, config.model_spec,
                                                  float(config.gamma), config.kernel_spec)
    expected = Regime.NON_DEGENERATE if config.experiment == "clt" else None
    cls = classify_regime(model, stat_kernel, joint.tau)
    if expected is not None and cls.regime is not expected:
        raise RegimeMismatch(f"experiment {config.experiment!r} needs a non-degenerate kernel, "
                             f"got {cls.regime.value}")
    if expected is None and cls.regime is Regime.NON_DEGENERATE:
        raise RegimeMismatch(f"experiment {config.experiment!r} needs a degenerate kernel, "
                             "got NonDegenerate")
    which = "Condition1" if config.experiment == "clt" else "Condition2"
    try:
        cond = condition_check(joint, kernel, which).to_dict()
    except KmstatError as exc:
        cond = {"condition": which, "finite": None, "error": str(exc)}
    values = {n: _run_values(config, n) for n in config.sample_sizes}
    pooled = np.concatenate(list(values.values()))
    lo, hi = float(np.min(pooled)), float(np.max(pooled))
    grid = np.linspace(lo, hi, 201) if hi > lo else np.array([lo])
    return ExperimentResult(config, values, cls.to_dict(),
                            _reference(config, model, joint, kernel), cond, grid)


def ecdf_export(values, grid):
    """Rows ``(x, fraction of values <= x)`` for each grid point."""
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size > 1 and np.any(np.diff(grid) < 0):
        raise UnsortedGrid("ECDF grid must be sorted in nondecreasing order")
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise InvalidParameter("ECDF needs at least one value")
    frac = np.searchsorted(v, grid, side="right") / v.size
    return [(float(x), float(f)) for x, f in zip(grid, frac)]


def _ks(a, b):
    grid = np.concatenate([a, b])
    fa = np.searchsorted(np.sort(a), grid, side="right") / a.size
    fb = np.searchsorted(np.sort(b), grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def compare_asymptotics(result: ExperimentResult, z_flag=3.0, ratio_band=(0.7, 1.3)):
    """Empirical vs asymptotic mean and variance for every sample size.

    Flags are informational: a large ``|z|`` or a variance ratio outside
    ``ratio_band`` is reported, never raised.
    """
    ref = result.reference
    mu, var = ref.get("mean"), ref.get("variance")
    rows = []
    for n in result.config.sample_sizes:
        st = result.stats(n)
        row = dict(st)
        se = np.sqrt(st["variance"] / st["replications"]) if st["replications"] > 1 else np.nan
        sd_hat = np.sqrt(st["variance"])
        row["empirical_interval"] = [st["mean"] - sd_hat, st["mean"] + sd_hat]
        flags = []
        if mu is not None:
            row["z"] = float((st["mean"] - mu) / se) if se > 0 else 0.0
            if abs(row["z"]) > z_flag:
                flags.append("mean far from asymptotic value")
        if var is not None:
            row["variance_ratio"] = st["variance"] / var if var > 0 else None
            if mu is not None:
                row["asymptotic_interval"] = [mu - np.sqrt(var), mu + np.sqrt(var)]
            r = row["variance_ratio"]
            if r is not None and not ratio_band[0] <= r <= ratio_band[1]:
                flags.append("variance ratio outside band")
        row["flags"] = flags
        rows.append(row)

    notes = list(ref.get("notes", []))
    cond = result.conditions
    if cond.get("finite") is False:
        notes.append(f"{cond['condition']} integrals diverge: limit theory does not apply")
    drift = []
    sizes = list(result.config.sample_sizes)
    for a, b in zip(sizes[:-1], sizes[1:]):
        va, vb = result.values[a], result.values[b]
        d = _ks(va, vb)
        crit = 1.63 * np.sqrt((va.size + vb.size) / (va.size * vb.size))  # 1% level
        drift.append({"from": a, "to": b, "ks": d, "median_shift":
                      float(np.median(vb) - np.median(va)), "significant": bool(d > crit)})
    if drift and all(d["significant"] and d["median_shift"] > 0 for d in drift):
        notes.append("distribution shifts upward as n grows: no sign of convergence")
    return {"rows": rows, "drift": drift, "notes": notes}


def _meta_line(config):
    return (f"# kmstat {__version__} config_hash={config.config_hash} "
            f"seed={int(config.seed)}\n")


def write_outputs(result: ExperimentResult, out):
    os.makedirs(out, exist_ok=True)
    config = result.config
    with open(os.path.join(out, "values.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_meta_line(config))
        fh.write("n,replication,value\n")
        for n in config.sample_sizes:
            for k, v in enumerate(result.values[n]):
                fh.write(f"{n},{k},{float(v)!r}\n")
    with open(os.path.join(out, "ecdf.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_meta_line(config))
        fh.write("n,x,fraction\n")
        for n in config.sample_sizes:
            for x, f in result.ecdf(n):
                fh.write(f"{n},{x!r},{f!r}\n")
    summary = summary_dict(result)
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return summary


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def summary_dict(result: ExperimentResult):
    config = result.config
    return {"version": __version__, "config_hash": config.config_hash,
            "seed": int(config.seed), "config": config.identity(),
            "regime": result.regime, "reference": result.reference,
            "conditions": result.conditions, "comparison": compare_asymptotics(result)}


def simulate(config: ExperimentConfig):
    """Run an experiment and write its files when ``config.out`` is set."""
    result = run_experiment(config)
    if config.out:
        return result, write_outputs(result, config.out)
    return result, summary_dict(result)
