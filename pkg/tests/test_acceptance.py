"""Acceptance suite: one PASS/FAIL line per criterion in the terminal summary.

Each test records its verdict in ``ACCEPTANCE_LINES`` before asserting, so
the summary lists every criterion even when some of them fail.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_feasible, random_prices
from stackelberg.equilibrium import MaxIters, approx_ne, best_response_iteration, ne_oracle, ne_oracle_batch
from stackelberg.gp_core import GpState, KernelSpec, append_observation, kernel_matrix, posterior_batch
from stackelberg.harness import certify_stackelberg, emit_outputs, read_rounds_csv, reference_config, run_experiment
from stackelberg.leader_learner import AcquisitionConfig, Fixed, choose_next_price, price_grid, surrogate_lcb, surrogate_lcb_batch
from stackelberg.ridehail_game import (
    distribution_gap_l1,
    leader_cost,
    project_capped_simplex,
    pseudogradient,
    utility,
)


def report(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
    assert ok, detail


def test_criterion_1_cost_at_base_prices(game, params):
    start = time.perf_counter()
    x = ne_oracle(game, [1.0, 2.0], tol=1e-10).x_star
    cost = float(leader_cost(x, params))
    elapsed = time.perf_counter() - start
    ok = 0.20 <= cost <= 0.24 and elapsed < 1.0
    report(
        1,
        "cost at base prices",
        ok,
        f"J={cost:.5f} (target [0.20, 0.24]); L1 gap {distribution_gap_l1(x, params):.4f}; {elapsed:.2f}s",
    )


def test_criterion_2_reference_experiment(reference_sweep):
    runs = reference_sweep["runs"]
    parts, ok = [], reference_sweep["seconds"] < 600
    for tol, recs in runs.items():
        best = [min(r, key=lambda rec: rec.realized_cost) for r in recs]
        med_cost = float(np.median([b.realized_cost for b in best]))
        med_regret = float(np.median([r[-1].average_regret for r in recs]))
        ok &= med_cost <= 1e-2 and med_regret <= 0.12
        parts.append(f"eps={tol:g}: J={med_cost:.2e} R/T={med_regret:.4f}")
        if tol == 1e-6:
            med_pi = np.median([b.pi_t for b in best], axis=0)
            price_ok = bool(np.all(np.abs(med_pi - [1.91, 4.99]) <= 0.15))
            ok &= price_ok
            parts.append(f"median best pi=({med_pi[0]:.3f}, {med_pi[1]:.3f}) {'within' if price_ok else 'outside'} +-0.15 of (1.91, 4.99)")
    parts.append(f"{reference_sweep['seconds']:.0f}s")
    report(2, "reference experiment over 10 seeds", ok, "; ".join(parts))


def test_criterion_3_inner_loop_rate(game, params, rng):
    start = time.perf_counter()
    Ks = np.array([10, 100, 1000, 10000])
    slopes = []
    for pi in random_prices(params, rng, 5):
        x_star = ne_oracle(game, pi).x_star
        err = [np.sum((approx_ne(game, pi, MaxIters(int(K))).x_star - x_star) ** 2) for K in Ks]
        slopes.append(np.polyfit(np.log(Ks), np.log(err), 1)[0])
    elapsed = time.perf_counter() - start
    ok = max(slopes) <= -0.9 and elapsed < 60
    report(3, "inner-loop rate", ok, f"slopes {np.round(slopes, 2).tolist()} (need <= -0.9); {elapsed:.1f}s")


def test_criterion_4_gp_oracle_equivalence(rng):
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        t = int(rng.integers(1, 51))
        kernel = KernelSpec("se", tuple(rng.uniform(0.3, 3.0, 2)), float(rng.uniform(0.1, 2.0)))
        noise = float(rng.uniform(0.01, 0.5))
        X = rng.uniform(0.1, 5.0, size=(t, 2))
        y = rng.normal(size=t)
        Q = rng.uniform(0.1, 5.0, size=(25, 2))
        mean, var = posterior_batch(GpState.create(2, kernel, noise, X, y), Q)
        Kinv = np.linalg.inv(kernel_matrix(kernel, X, X) + noise**2 * np.eye(t))
        kq = kernel_matrix(kernel, X, Q)
        ref_mean = kq.T @ Kinv @ y
        ref_var = kernel.signal_variance - np.einsum("ij,ik,kj->j", kq, Kinv, kq)
        worst = max(worst, np.abs(mean - ref_mean).max(), np.abs(var - np.maximum(ref_var, 0)).max())
    elapsed = time.perf_counter() - start
    report(4, "GP posterior vs dense inverse", worst <= 1e-8 and elapsed < 10, f"max abs diff {worst:.2e}; {elapsed:.2f}s")


def test_criterion_5_gradient(params, rng):
    start = time.perf_counter()
    h, worst = 1e-6, 0.0
    for _ in range(100):
        x = random_feasible(params, rng)
        pi = rng.uniform(0.1, 5.0, 2)
        fd = np.zeros_like(x)
        for i in range(params.N):
            for m in range(params.d):
                xp, xm = x.copy(), x.copy()
                xp[i, m] += h
                xm[i, m] -= h
                fd[i, m] = -(utility(i, xp, pi, params) - utility(i, xm, pi, params)) / (2 * h)
        g = pseudogradient(x, pi, params)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    elapsed = time.perf_counter() - start
    report(5, "pseudogradient vs finite differences", worst <= 1e-5 and elapsed < 10, f"max rel err {worst:.2e}; {elapsed:.2f}s")


def test_criterion_6_equilibrium_uniqueness(game, params, rng):
    start = time.perf_counter()
    worst = 0.0
    for pi in random_prices(params, rng, 20):
        a = ne_oracle(game, pi).x_star
        b = best_response_iteration(game, pi).x_star
        worst = max(worst, float(np.linalg.norm(a - b)))
    elapsed = time.perf_counter() - start
    report(6, "gradient NE vs best-response NE", worst <= 1e-6 and elapsed < 30, f"max distance {worst:.2e}; {elapsed:.1f}s")


def test_criterion_7_property_suites(game, params, rng, tmp_path):
    failed = []

    xs, ys = random_feasible(params, rng, 100), random_feasible(params, rng, 100)
    pis = random_prices(params, rng, 100)
    inner = np.sum((pseudogradient(xs, pis[:, None, :], params) - pseudogradient(ys, pis[:, None, :], params)) * (xs - ys), axis=(1, 2))
    if not np.all(inner > 0):
        failed.append("monotonicity")

    Y, Yp = rng.normal(0, 5, (500, 3)), rng.normal(0, 5, (500, 3))
    cap, budget = rng.uniform(0.1, 4, (500, 3)), rng.uniform(0.1, 6, 500)
    Z, Zp = project_capped_simplex(Y, budget, cap), project_capped_simplex(Yp, budget, cap)
    feasible = np.all(Z >= 0) and np.all(Z <= cap + 1e-12) and np.all(Z.sum(-1) <= budget + 1e-12)
    idempotent = np.allclose(project_capped_simplex(Z, budget, cap), Z, atol=1e-12)
    nonexp = np.all(np.linalg.norm(Z - Zp, axis=1) <= np.linalg.norm(Y - Yp, axis=1) + 1e-12)
    if not (feasible and idempotent and nonexp):
        failed.append("projection")

    spec = KernelSpec("se", (0.7, 1.4), 1.0)
    if min(np.linalg.eigvalsh(kernel_matrix(spec, X, X)).min() for X in rng.uniform(0, 5, (50, 20, 2))) < -1e-10:
        failed.append("kernel PSD")

    Q = rng.uniform(0.1, 5, (50, 2))
    gp = GpState.create(2, spec, 0.05)
    prev = posterior_batch(gp, Q)[1]
    for x in rng.uniform(0.1, 5, (20, 2)):
        gp = append_observation(gp, x, float(np.cos(x).sum()))
        var = posterior_batch(gp, Q)[1]
        if np.any(var > prev + 1e-12):
            failed.append("variance monotone")
            break
        prev = var

    config = AcquisitionConfig()
    grid = price_grid(params.price_bounds(), config.grid_points_per_dim)
    for t in (1, 5, 10, 20):
        sub = GpState.create(2, spec, 0.05, gp.inputs[:t], gp.observations[:t])
        pi = choose_next_price(sub, Fixed(0.2), config, t, params.price_bounds())
        if surrogate_lcb(sub, pi, 0.2, 0.0, t) > surrogate_lcb_batch(sub, grid, 0.2, 0.0, t).min():
            failed.append("acquisition audit")
            break

    cfg = reference_config(T=10, regret_oracle_grid=40)
    first, second = run_experiment(cfg), run_experiment(cfg)
    emit_outputs(first, tmp_path / "a", cfg)
    emit_outputs(second, tmp_path / "b", cfg)
    rows = read_rounds_csv(tmp_path / "a" / "rounds.csv")
    baseline = first[0].realized_cost - first[0].cumulative_regret
    sums = np.cumsum([r["J_realized"] - baseline for r in rows])
    if np.max(np.abs(sums - [r["R_t"] for r in rows])) > 1e-9:
        failed.append("regret accounting")
    if (tmp_path / "a" / "rounds.csv").read_bytes() != (tmp_path / "b" / "rounds.csv").read_bytes():
        failed.append("determinism")

    report(7, "property suites", not failed, "all green" if not failed else "failing: " + ", ".join(failed))


def test_criterion_8_stackelberg_certificate(reference_sweep, params):
    reports = [
        certify_stackelberg(records, params, 1e-2, reference_sweep["baseline"])
        for records in reference_sweep["runs"][1e-6]
    ]
    leader = max(r["leader_gap"] for r in reports)
    follower = max(r["follower_gap"] for r in reports)
    ok = leader <= 1e-2 and follower <= 1e-2
    report(8, "Stackelberg certificate", ok, f"worst leader gap {leader:.2e}, worst follower gap {follower:.2e} over {len(reports)} runs")
