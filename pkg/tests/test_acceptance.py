"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line (printed after the run) and then
asserts. Monte Carlo criteria use seed 0, fixed before any run was made.
"""

import time

import numpy as np
import pytest

from kmstat.harness import ExperimentConfig, run_experiment, simulate
from kmstat.kernels import cvm_kernel, ou_kernel, product_kernel
from kmstat.models import (condition_check, exponential_model, koziol_green, make_rng,
                           sample_censored)
from kmstat.nulldist import JKernel, asymptotic_mean, limit_distribution
from kmstat.operators import expectation, forward_A, kprime
from kmstat.statistics import pair_mass, ustat, vstat
from kmstat.survival import diagonal_term, km_fit, sort_censored

from acceptance_report import record
from oracles import brute_ustat_uncensored, kg_mean_cvm, kg_mean_ou, kg_var_cvm, kg_var_ou

SEED = 0
EXP1 = exponential_model(1.0)

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def cvm_run():
    t0 = time.perf_counter()
    cfg = ExperimentConfig("cvm", gamma=0.5, sample_sizes=(1000,), replications=500, seed=SEED)
    res = run_experiment(cfg)
    return res.stats(1000), time.perf_counter() - t0


def test_criterion_01_cvm_mean(cvm_run):
    st, secs = cvm_run
    target = kg_mean_cvm(0.5)
    ok = abs(st["mean"] - target) <= 0.03 and secs < 60
    record(1, ok, f"CvM mean {st['mean']:.4f} vs {target:.4f} (+-0.03), {secs:.1f} s (< 60 s)")
    assert ok


def test_criterion_02_cvm_variance(cvm_run):
    st, _ = cvm_run
    target = kg_var_cvm(0.5)
    ratio = st["variance"] / target
    ok = abs(ratio - 1) <= 0.30
    record(2, ok, f"CvM variance {st['variance']:.5f} vs {target:.6f}, ratio {ratio:.3f} (+-30%)")
    assert ok


def test_criterion_03_mmd_mean():
    t0 = time.perf_counter()
    cfg = ExperimentConfig("mmd", gamma=0.25, sample_sizes=(2000,), replications=500, seed=SEED)
    st = run_experiment(cfg).stats(2000)
    secs = time.perf_counter() - t0
    target = kg_mean_ou(0.25)
    ok = abs(st["mean"] - target) <= 0.05 and secs < 180
    record(3, ok, f"MMD mean {st['mean']:.4f} vs {target:.4f} (+-0.05), {secs:.1f} s (< 180 s)")
    assert ok


def test_criterion_04_clt_variance_and_normality():
    t0 = time.perf_counter()
    cfg = ExperimentConfig("clt", gamma=0.5, sample_sizes=(2000,), replications=1000, seed=SEED)
    res = run_experiment(cfg)
    st = res.stats(2000)
    secs = time.perf_counter() - t0
    target = 4 * res.reference["sigma2"]
    ratio = st["variance"] / target
    ok = abs(ratio - 1) <= 0.15 and abs(st["skewness"]) < 0.25 and secs < 120
    record(4, ok, f"CLT variance {st['variance']:.3f} vs {target:.3f}, ratio {ratio:.3f} (+-15%), "
                  f"skewness {st['skewness']:.3f} (< 0.25), {secs:.1f} s (< 120 s)")
    assert ok


def test_criterion_05_spectral_consistency():
    t0 = time.perf_counter()
    jm = koziol_green(EXP1, 0.0)
    kp = kprime(EXP1, ou_kernel())
    d = limit_distribution(jm, kp, truncation=100, m_nodes=2000, seed=SEED)
    secs = time.perf_counter() - t0
    ratio = d.variance_spectral / (5 / 54)
    trace = float(np.sum(d.eigenvalues))
    mean = asymptotic_mean(jm, kp)
    ok = 0.85 <= ratio <= 1.02 and abs(trace / mean - 1) <= 0.10 and secs < 60
    record(5, ok, f"spectral/closed {ratio:.4f} in [0.85, 1.02], sum(lambda) {trace:.4f} vs "
                  f"mean {mean:.4f} (10%), {secs:.1f} s (< 60 s)")
    assert ok


def test_criterion_06_j_kernel_identities():
    # gamma = 0.25 keeps E J(p, q)^4 finite, so the 4-SE band on the
    # second-moment identity rests on a finite variance
    jm = koziol_green(EXP1, 0.25)
    kp = kprime(EXP1, ou_kernel())
    J = JKernel(jm, kp)
    n = 10_000
    s1 = sample_censored(jm, n, make_rng(SEED, 61))
    s2 = sample_censored(jm, n, make_rng(SEED, 62))
    x1, r1 = s1.times, s1.events.astype(float)
    x2, r2 = s2.times, s2.events.astype(float)
    perm = make_rng(SEED, 63).permutation(n)
    x1, r1 = x1[perm], r1[perm]

    def zscore(v, target):
        return (v.mean() - target) / (v.std(ddof=1) / np.sqrt(v.size))

    probes = [(0.1, 1), (0.1, 0), (0.5, 1), (0.8, 0), (1.0, 1), (1.5, 0), (2.0, 1), (3.0, 0),
              (4.0, 1), (6.0, 0)]
    zc = [zscore(np.asarray(J(x1, r1, x0, r0)), 0.0) for x0, r0 in probes]
    zt = zscore(np.asarray(J(x1, r1, x1, r1)), kg_mean_ou(0.25))
    zv = zscore(np.asarray(J(x1, r1, x2, r2)) ** 2, kg_var_ou(0.25) / 2)
    worst = max(abs(z) for z in zc)
    ok = worst < 4 and abs(zt) < 4 and abs(zv) < 4
    record(6, ok, f"centering max|z| {worst:.2f} over 10 probes, trace z {zt:.2f}, "
                  f"second moment z {zv:.2f} (all < 4)")
    assert ok


def test_criterion_07_closed_forms_against_quadrature():
    rng = np.random.default_rng(SEED)
    x, y = rng.exponential(1.0, size=(2, 50))
    errs = {}
    for name, kernel in (("ou", ou_kernel()), ("cvm", cvm_kernel(EXP1)),
                         ("prod", product_kernel(0.0))):
        kp = kprime(EXP1, kernel)
        assert kp.is_closed_form
        errs[name] = float(np.max(np.abs(kp(x, y) - kp.quadrature(x, y))))
    grid = np.array([0.0, 0.01, 0.3, 1.0, 2.5, 7.0, 20.0])
    const_err = float(np.max(np.abs(forward_A(EXP1, lambda s: np.full(np.shape(s), 2.0))(grid))))
    efron = []
    for g, var in ((lambda s: s, 1.0), (lambda s: s * s, 20.0),
                   (lambda s: np.exp(-s), 1.0 / 12.0)):
        Ag = forward_A(EXP1, g)
        efron.append(abs(expectation(EXP1, lambda s: np.asarray(Ag(s)) ** 2) - var))
    ok = max(errs.values()) <= 1e-6 and const_err <= 1e-9 and max(efron) <= 1e-5
    record(7, ok, "K' closed vs quadrature max err "
                  + ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
                  + f" (1e-6); A(const) {const_err:.1e} (1e-9); Efron max err {max(efron):.1e} (1e-5)")
    assert ok


def test_criterion_08_exact_algebra():
    rng = np.random.default_rng(SEED)
    k = ou_kernel()
    worst_identity = 0.0
    for _ in range(50):
        size = int(rng.integers(2, 40))
        obs = list(zip(rng.exponential(2.0, size), rng.random(size) < 0.6))
        fit = km_fit(sort_censored(obs))
        if pair_mass(fit) <= 0:
            continue
        v = vstat(fit, k)
        rebuilt = ustat(fit, k) * pair_mass(fit) + diagonal_term(fit, k)
        worst_identity = max(worst_identity, abs(rebuilt - v))
    x = rng.exponential(1.0, 25)
    fit = km_fit(sort_censored([(t, True) for t in x]))
    classical_v = float(np.mean(k(x[:, None], x[None, :])))
    v_err = abs(vstat(fit, k) - classical_v)
    u_err = abs(ustat(fit, k) - brute_ustat_uncensored(x, k))
    w = km_fit(sort_censored([(1.0, True), (2.0, False), (3.0, True)])).weights
    w_err = float(np.max(np.abs(w - [1 / 3, 0.0, 2 / 3])))
    ok = worst_identity <= 1e-12 and v_err <= 1e-14 and u_err <= 1e-14 and w_err <= 1e-15
    record(8, ok, f"U/V/diagonal max err {worst_identity:.1e} (1e-12); uncensored V err {v_err:.1e}, "
                  f"U err {u_err:.1e}; KM weights {np.round(w, 6).tolist()}")
    assert ok


def test_criterion_09_condition_boundary():
    k = product_kernel(0.0)
    lo = condition_check(koziol_green(EXP1, 0.5), k, "Condition1")
    hi = condition_check(koziol_green(EXP1, 1.5), k, "Condition1")
    ok = lo.finite is True and hi.finite is False
    record(9, ok, f"Condition1 product kernel: a=0.5 finite={lo.finite}, a=1.5 finite={hi.finite}")
    assert ok


def test_criterion_10_worker_determinism(tmp_path):
    blobs = []
    for workers in (1, 2, 4):
        out = tmp_path / f"w{workers}"
        cfg = ExperimentConfig("cvm", gamma=0.5, sample_sizes=(100, 300), replications=40,
                               seed=SEED, out=str(out), workers=workers)
        simulate(cfg)
        blobs.append((out / "values.csv").read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2]
    record(10, ok, "values.csv byte-identical for 1, 2 and 4 workers" if ok
           else "values.csv differs across worker counts")
    assert ok
