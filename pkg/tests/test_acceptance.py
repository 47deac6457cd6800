"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` and the summary lines appear in
the terminal output even without ``-s``.
"""

import math
import time

import numpy as np
import pytest
from scipy import optimize, stats

from adaptdetect.asymptotics import (
    TailSpec,
    exact_asymptotic,
    limiting_variance,
    rate_function,
    solve_theta,
    sweep,
)
from adaptdetect.config import parse_config
from adaptdetect.experiments import run_compare
from adaptdetect.lmgf import LimitingLmgf, TruncatedLmgf
from adaptdetect.models import GaussianShiftModel, Hypothesis, LaplaceShiftModel
from adaptdetect.montecarlo import is_tail, plain_mc_tail
from adaptdetect.network import (
    WeightKernel,
    build_metropolis,
    build_uniform_averaging,
    full,
    path,
    reference_topology,
)

H0 = Hypothesis.H0
LAPLACE = LaplaceShiftModel(0.6)
GAUSS = GaussianShiftModel(0.0, 1.0, 1.0)
FULL_GRID = [0.1, 0.05, 0.02, 0.01, 0.005]
FINE_GRID = [0.05, 0.02, 0.01, 0.005]


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return emit


def _non_increasing(devs, slack=0.0) -> bool:
    return all(b <= a * (1 + slack) for a, b in zip(devs, devs[1:]))


def _laplace_configs():
    ref = reference_topology()
    return {
        "full10-metropolis": build_metropolis(full(10)),
        "reference-metropolis": build_metropolis(ref),
        "reference-uniform": build_uniform_averaging(ref),
    }


def _gaussian_path():
    return build_uniform_averaging(path(3))


def test_criterion_1_rate_function(report):
    start = time.perf_counter()
    lim = LimitingLmgf(LAPLACE, H0, np.full(10, 0.1))
    theta = solve_theta(TailSpec(0.0, "upper", H0), lim)
    rate = rate_function(0.0, theta, lim)
    elapsed = time.perf_counter() - start
    ok = abs(rate - 0.75) <= 0.02 and elapsed < 1.0
    report(1, ok, f"rate={rate:.6f} (target 0.75 +/- 0.02), theta={theta:.6f}, {elapsed:.3f}s (< 1s)")


def test_criterion_2_gaussian_exact_tail(report):
    start = time.perf_counter()
    A = _gaussian_path()
    tail = TailSpec(0.5, "upper", H0)
    ratios = {k: [] for k in range(3)}
    for mu in FINE_GRID:
        K = WeightKernel(A, mu)
        lim = LimitingLmgf(GAUSS, H0, K.perron)
        theta = solve_theta(tail, lim)
        for k in range(3):
            true_tail = stats.norm.sf(0.5 / math.sqrt(TruncatedLmgf(GAUSS, H0, K, k).variance()))
            ratios[k].append(math.exp(exact_asymptotic(tail, k, K, lim, theta=theta)) / true_tail)
    elapsed = time.perf_counter() - start
    final_ok = all(0.9 <= r[-1] <= 1.1 for r in ratios.values())
    mono_ok = all(_non_increasing([abs(x - 1) for x in r], 0.05) for r in ratios.values())
    ok = final_ok and mono_ok and elapsed < 10.0
    finals = ", ".join(f"agent {k}: {r[-1]:.5f}" for k, r in ratios.items())
    report(2, ok, f"ratio at mu=0.005 [{finals}], |ratio-1| non-increasing={mono_ok}, {elapsed:.2f}s (< 10s)")


def test_criterion_3_exponent_recovery(report):
    configs = {name: (LAPLACE, A, 0.0) for name, A in _laplace_configs().items()}
    configs["path3-uniform-gaussian"] = (GAUSS, _gaussian_path(), 0.5)
    worst_final, all_mono, details = 0.0, True, []
    for name, (model, A, gamma) in configs.items():
        reps = sweep(TailSpec(gamma, "upper", H0), A, model, FINE_GRID)
        S = A.matrix.shape[0]
        for k in range(S):
            devs = [abs(r.mu * r.ln_p_asym + r.rate) / r.rate for r in reps if r.agent == k]
            all_mono &= all(b < a for a, b in zip(devs, devs[1:]))
            worst_final = max(worst_final, devs[-1])
        details.append(f"{name} final={max(abs(r.mu * r.ln_p_asym + r.rate) / r.rate for r in reps if r.mu == 0.005):.4f}")
    ok = all_mono and worst_final < 0.15
    report(3, ok, f"strictly decreasing={all_mono}, worst final |mu lnP + rate|/rate={worst_final:.4f} (< 0.15); "
                  + "; ".join(details))


def test_criterion_4_cumulant_limits(report):
    worst, details = 0.0, []
    ok = True
    for name, A in _laplace_configs().items():
        S = A.matrix.shape[0]
        kernels = [WeightKernel(A, mu) for mu in FULL_GRID]
        lim = LimitingLmgf(LAPLACE, H0, kernels[0].perron)
        for r in (1, 2, 3):
            target = lim.derivative_at_zero(r)
            for k in range(S):
                errs = [abs(TruncatedLmgf(LAPLACE, H0, K, k).cumulant(r) / K.mu ** (r - 1) - target) / K.mu
                        for K in kernels]
                # r=1 is exact up to roundoff, so allow an absolute floor
                bound = 2 * errs[0] + 1e-12
                ok &= max(errs) <= bound
                worst = max(worst, max(errs) / max(errs[0], 1e-300) if r > 1 else 0.0)
            details.append(f"{name} r={r}")
    report(4, ok, f"max growth ratio over mu grid (r=2,3)={worst:.3f} (<= 2); r=1 exact to roundoff; "
                  f"checked {len(details)} (config, r) pairs over all agents")


def test_criterion_5_correction_bounded(report):
    ratios = {}
    for name in ("full10-metropolis", "reference-metropolis"):
        A = _laplace_configs()[name]
        reps = sweep(TailSpec(0.0, "upper", H0), A, LAPLACE, FULL_GRID)
        S = A.matrix.shape[0]
        worst = 0.0
        for k in range(S):
            scaled = np.array([r.eps_refined / r.mu for r in reps if r.agent == k])
            same_sign = np.all(np.sign(scaled) == np.sign(scaled[0])) and np.all(scaled != 0)
            spread = np.abs(scaled).max() / np.abs(scaled).min() if same_sign else math.inf
            worst = max(worst, spread)
        ratios[name] = worst
    ok = all(v < 3 for v in ratios.values())
    report(5, ok, "max/min of eps_refined/mu per agent: "
                  + ", ".join(f"{n}={v:.3f}" for n, v in ratios.items()) + " (< 3)")


def test_criterion_6_estimator_cross_check(report):
    start = time.perf_counter()
    K = WeightKernel(build_metropolis(full(3)), 0.1)
    tail = TailSpec(-0.05, "upper", H0)
    mc = plain_mc_tail(tail, 0, K, LAPLACE, 100_000, seed=20240601)
    est = is_tail(tail, 0, K, LAPLACE, 100_000, seed=20240602)
    z = abs(mc.p_hat - est.p_hat) / math.hypot(mc.std_err, est.std_err)
    window_ok = 0.02 <= mc.p_hat <= 0.2

    K2 = WeightKernel(build_metropolis(full(3)), 0.02)
    lim2 = LimitingLmgf(LAPLACE, H0, K2.perron)

    def excess(g):
        return exact_asymptotic(TailSpec(g, "upper", H0), 0, K2, lim2) - math.log(1e-6)
    gamma_deep = optimize.brentq(excess, -0.1, 0.1, xtol=1e-12)
    deep = is_tail(TailSpec(gamma_deep, "upper", H0), 0, K2, LAPLACE, 100_000, seed=20240603)
    elapsed = time.perf_counter() - start
    ok = window_ok and z < 3 and deep.rel_err < 0.1 and elapsed < 60
    report(6, ok, f"moderate tail: MC={mc.p_hat:.5f}+/-{mc.std_err:.5f}, IS={est.p_hat:.5f}+/-{est.std_err:.5f}, "
                  f"z={z:.2f} (< 3); deep tail gamma={gamma_deep:.6f}: IS={deep.p_hat:.3e}, "
                  f"rel SE={deep.rel_err:.4f} (< 0.1); {elapsed:.1f}s (< 60s)")


@pytest.mark.parametrize("eta", [0.2, 0.5])
def test_criterion_7_twisted_sampler(report, eta):
    draws = LAPLACE.sample_twisted(np.random.default_rng(7), eta, H0, size=1_000_000)
    target = float(LAPLACE.psi_prime(eta, H0))
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    z = abs(draws.mean() - target) / se
    report(7, z < 4, f"eta={eta}: mean={draws.mean():.6f}, psi0'={target:.6f}, z={z:.2f} (< 4) at 10^6 draws")


def test_criterion_8_variance_ratio(report):
    configs = {name: (LAPLACE, A) for name, A in _laplace_configs().items()}
    configs["path3-uniform-gaussian"] = (GAUSS, _gaussian_path())
    ok, details = True, []
    for name, (model, A) in configs.items():
        S = A.matrix.shape[0]
        ratios = np.empty((len(FULL_GRID), S))
        for i, mu in enumerate(FULL_GRID):
            K = WeightKernel(A, mu)
            s2 = limiting_variance(model, H0, K.perron)
            ratios[i] = [TruncatedLmgf(model, H0, K, k).variance() / (mu * s2) for k in range(S)]
        final_ok = np.all((ratios[-1] >= 0.9) & (ratios[-1] <= 1.1))
        mono_ok = all(_non_increasing(np.abs(ratios[:, k] - 1), 0.05) for k in range(S))
        ok &= bool(final_ok and mono_ok)
        details.append(f"{name} [{ratios[-1].min():.4f}, {ratios[-1].max():.4f}] monotone={mono_ok}")
    report(8, ok, "ratio range at mu=0.005: " + "; ".join(details))


def test_criterion_9_agent_ordering(report):
    topo = reference_topology()
    deg = topo.degrees
    reps = sweep(TailSpec(0.0, "upper", H0), build_metropolis(topo), LAPLACE, FULL_GRID)
    shared = len({r.theta for r in reps}) == 1 and len({r.rate for r in reps}) == 1
    ordered = True
    for mu in FULL_GRID:
        lnp = np.array([r.ln_p_asym for r in reps if r.mu == mu])
        # more neighbours means a smaller error probability
        for a in range(topo.S):
            for b in range(topo.S):
                if deg[a] < deg[b]:
                    ordered &= bool(lnp[a] >= lnp[b])
    report(9, ordered and shared, f"degrees={deg.tolist()}; ln P weakly ordered by degree at every mu={ordered}; "
                                  f"theta and rate bitwise agent-identical={shared}")


def test_criterion_10_documented_not_reproducible(report):
    cfg = parse_config({
        "topology": {"generator": "reference"},
        "model": {"model": "laplace", "rho": 0.6},
        "tail": {"gamma": 0.0},
        "mu_grid": FULL_GRID,
        "compare": {"rules": ["metropolis", "uniform_averaging"]},
    })
    rows = run_compare(cfg)
    agent_rows = [r for r in rows if r["agent"] != "mean"]
    well_formed = (len(rows) == len(FULL_GRID) * 11 and not any(r["error"] for r in rows)
                   and all(math.isfinite(r["diff_ln_p"]) for r in rows))
    crossing = []
    for k in range(10):
        signs = {np.sign(r["diff_ln_p"]) for r in agent_rows if r["agent"] == k}
        if len(signs) > 1:
            crossing.append(k)
    lam_ds = cfg.combination_matrix("metropolis").lambda2
    lam_rs = cfg.combination_matrix("uniform_averaging").lambda2
    rate_rs = rows[0]["rate_uniform_averaging"]
    report(10, well_formed,
           "exact figure values depend on an unpublished edge set and are not reproduced; stand-in topology gives "
           f"lambda2 DS={lam_ds:.4f}, RS={lam_rs:.4f}, RS rate={rate_rs:.4f}; compare output well-formed="
           f"{well_formed}; agents whose DS-vs-RS sign changes with mu: {crossing}")
