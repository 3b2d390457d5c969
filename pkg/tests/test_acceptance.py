"""The twelve end-to-end acceptance criteria, each with its runtime budget.

Every test records a one-line pass/fail verdict that is printed in the
terminal summary; the assertion itself is what makes pytest fail.
"""
import json
import math
import time

import numpy as np
import pytest

import gjnsim.cli as cli
from gjnsim.bounds import (SupWalkSpec, block_event_mc, chernoff_dyadic_bound, head_event_mc,
                           lemma_rhs, lemma_walks, lundberg_bound, lundberg_exponent,
                           second_moment_block_bound, supwalk_tail_mc)
from gjnsim.model import DistributionSpec as D
from gjnsim.model import NetworkSpec, solve_traffic, validate
from gjnsim.paths import Path
from gjnsim.reflection import build_majorants, skorohod_reflect, y_components
from gjnsim.scaling import ScalingRegime, estimate_stationary_tail, tightness_sweep
from gjnsim.simulator import departure_identity_violations, flow_balance_violations, simulate

from helpers import random_network

pytestmark = pytest.mark.acceptance

MM1 = NetworkSpec([D.exponential(0.5)], [D.exponential(1.0)], [[0.0]])
CRIT1 = NetworkSpec([D.exponential(1.0)], [D.exponential(1.0)], [[0.0]])


def test_flow_balance_on_random_networks(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    bad_fb = bad_di = 0
    families = set()
    for i in range(500):
        net = random_network(rng)
        validate(net)
        families.update(d.family for d in (*net.arrival, *net.service) if d is not None)
        tr = simulate(net, 1e12, master_seed=i, stop_after=10_000)
        assert tr.meta["n_events"] == 10_000
        bad_fb += flow_balance_violations(tr)
        bad_di += departure_identity_violations(tr)
    dt = time.perf_counter() - t0
    ok = bad_fb == 0 and bad_di == 0 and dt < 120 and len(families) == 6
    record_criterion(1, "exact flow balance", ok,
                     f"500 networks x 1e4 events, {bad_fb} balance / {bad_di} departure violations, {dt:.1f}s")
    assert ok


def _random_step(rng, n=40):
    t = np.concatenate([[0.0], np.cumsum(rng.exponential(1.0, n - 1))])
    v = np.cumsum(rng.normal(0, 1, n)) + rng.normal(0, 1)
    return Path(t, v, end=t[-1] + 1.0)


def test_reflection_properties(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    bad = {"nonneg": 0, "complementarity": 0, "lipschitz": 0, "range": 0}
    worst = 0.0
    for _ in range(1000):
        x = _random_step(rng)
        y = Path(x.times, x.values + rng.normal(0, 0.5, len(x)), end=x.end)
        rx, ry = skorohod_reflect(x), skorohod_reflect(y)
        t = x.times
        px, py = rx(t), ry(t)
        if np.any(px < 0):
            bad["nonneg"] += 1
        # regulator l = psi(x) - x may only increase at times where psi(x) = 0
        ell = px - x(t)
        up = np.diff(ell) > 1e-12
        if np.any(np.diff(ell) < -1e-12) or np.any(np.abs(px[1:][up]) > 1e-12):
            bad["complementarity"] += 1
        ratio = np.max(np.abs(px - py)) / max(np.max(np.abs(x(t) - y(t))), 1e-300)
        worst = max(worst, ratio)
        if ratio > 2 + 1e-12:
            bad["lipschitz"] += 1
        if np.max(np.abs(skorohod_reflect(rx)(t) - px)) > 1e-12:
            bad["range"] += 1
    dt = time.perf_counter() - t0
    ok = not any(bad.values()) and dt < 10
    record_criterion(2, "reflection properties", ok,
                     f"1000 step paths, violations {bad}, max Lipschitz ratio {worst:.3f}, {dt:.1f}s")
    assert ok


def test_pathwise_majorization(record_criterion, feedback3):
    t0 = time.perf_counter()
    nets = [("M/M/1", MM1, 70),
            ("tandem", NetworkSpec([D.exponential(0.5), None], [D.exponential(1.0), D.exponential(1.5)],
                                   [[0, 1.0], [0, 0]], [2, 1]), 65),
            ("feedback", feedback3.replace(initial_queue=(3, 0, 2)), 65)]
    tol = 1e-9
    bad = 0
    checked = 0
    paths = 0
    for name, net, count in nets:
        drift = solve_traffic(net)
        assert drift.strong_drift
        for rep in range(count):
            tr = simulate(net, 1000.0, master_seed=31, replicate=rep)
            paths += 1
            for k in range(net.K):
                b = build_majorants(tr, drift, k)
                hat, hat_left = b.q_hat(b.grid), b.q_hat.left_limit(b.grid)
                bad += int(np.sum(b.q > hat + tol) + np.sum(b.q_left > hat_left + tol))
                bad += int(np.sum(b.q > b.bound + tol) + np.sum(b.q_left > b.bound_left + tol))
                checked += b.grid.size
    dt = time.perf_counter() - t0
    ok = bad == 0 and paths == 200 and dt < 120
    record_criterion(3, "pathwise majorization", ok,
                     f"{paths} paths, {checked} event times, {bad} violations, {dt:.1f}s")
    assert ok


def test_mm1_stationary_oracle(record_criterion):
    t0 = time.perf_counter()
    u = [1, 2, 3, 4, 5, 6]
    est = estimate_stationary_tail(MM1, "raw", u, replications=2000, master_seed=11)
    dev = [abs(e.p_hat - 0.5**e.u) / e.half_width for e in est]
    dt = time.perf_counter() - t0
    ok = max(dev) <= 3 and dt < 60
    record_criterion(4, "M/M/1 stationary oracle", ok,
                     f"max |p - 0.5^u| = {max(dev):.2f} Wilson half-widths, {dt:.1f}s")
    assert ok


def test_jackson_product_form(record_criterion, tandem_critical_second):
    t0 = time.perf_counter()
    u = [1, 2, 3, 4]
    R = 4000
    worst = 0.0
    for k in (0, 1):
        # station 1 has nu = 0, so the warm-up falls back to the load slack; see notes
        est = estimate_stationary_tail(tandem_critical_second, "raw", u, k=k, replications=R,
                                       warmup_mult=60, master_seed=5)
        for e in est:
            p = 0.5**e.u
            worst = max(worst, abs(e.p_hat - p) / math.sqrt(p * (1 - p) / R))
    dt = time.perf_counter() - t0
    ok = worst <= 3 and dt < 120
    record_criterion(5, "Jackson product-form oracle", ok,
                     f"max deviation {worst:.2f} SE over both stations, {dt:.1f}s")
    assert ok


def test_lundberg_validation(record_criterion):
    t0 = time.perf_counter()
    # X - d with X = xi - 1, xi ~ Exp(1), d = 1
    w = SupWalkSpec("scaled_service", D.exponential(1.0), 1.0, 1.0, 0.0, "ordinary", lag=0)
    th = lundberg_exponent(w)
    resid = abs(math.exp(-2 * th) / (1 - th) - 1)  # closed form of E exp(th (xi - 2))
    u = np.array([1.0, 2.0, 4.0, 8.0])
    mc = supwalk_tail_mc(w, u, replications=50_000, seed=2)
    lb = lundberg_bound(w, u)
    dominated = bool(np.all(lb >= mc.p - 3 * mc.se))
    dt = time.perf_counter() - t0
    ok = resid <= 1e-8 and dominated and dt < 60
    record_criterion(6, "Lundberg validation", ok,
                     f"theta*={th:.10f}, residual {resid:.1e}, bound dominates MC: {dominated}, {dt:.1f}s")
    assert ok


def _calibration_specs():
    mm1_arrival = lemma_walks(MM1, None, 0, None, "arrival")[0]
    return {
        "gamma service": SupWalkSpec("scaled_service", D.gamma(2.0, 0.5), 1.0, 0.5),
        "exponential arrivals": mm1_arrival.replace(offset=0.0),
        "routing + uniform": SupWalkSpec("routing_service", D.uniform(0.2, 1.8), -0.3, 0.4,
                                         route_prob=0.3),
        "deterministic": SupWalkSpec("scaled_service", D.deterministic(1.0), 0.8, 0.3),
        "lognormal (2nd moment only)": SupWalkSpec("scaled_service", D.lognormal(-0.18, 0.6), 1.0, 0.5),
    }


def test_block_bound_domination(record_criterion):
    t0 = time.perf_counter()
    R = 20_000
    checks = 0
    fails = []
    seed = 100
    for name, w in _calibration_specs().items():
        for n, u in ((4, 1.0), (10, 2.0), (40, 1.5)):
            seed += 10
            has_exp = not w.heavy_right_tail
            sm = second_moment_block_bound(w, u, n_scale=n)
            plain = w.replace(first="ordinary")
            sm_plain = second_moment_block_bound(plain, u, n_scale=n)
            # second moment: head and per-block constants
            p, se, _, _ = head_event_mc(w, sm.N, sm.threshold, R, seed)
            checks += 1
            if sm.head < p[0] - 3 * se[0]:
                fails.append((name, n, u, "second-moment head"))
            if has_exp:
                ch = chernoff_dyadic_bound(w, u, n_scale=n)
                p, se, _, _ = head_event_mc(w, ch.N, ch.threshold, R, seed + 1)
                checks += 1
                if ch.head < p[0] - 3 * se[0]:
                    fails.append((name, n, u, "Chernoff head"))
            for m in range(3):
                j = sm.j0 + m
                pd, sd, _, _ = block_event_mc(w, j, R, seed + 2 + m, delayed=True)
                pu, su, _, _ = block_event_mc(w, j, R, seed + 5 + m, delayed=False)
                both, se_both = pd[0] + pu[0], math.hypot(sd[0], su[0])
                bound_sm = (sm.block_constant + sm_plain.block_constant) * 2.0**-j
                checks += 1
                if bound_sm < both - 3 * se_both:
                    fails.append((name, n, u, f"second-moment block {j}"))
                if has_exp:
                    checks += 1
                    if ch.terms[m] < both - 3 * se_both:
                        fails.append((name, n, u, f"Chernoff block {j}"))
    dt = time.perf_counter() - t0
    ok = not fails and dt < 120
    record_criterion(7, "block bound domination", ok,
                     f"{checks} head/block comparisons on 5 calibration walks, failures {fails}, {dt:.1f}s")
    assert ok


def test_lemma_consistency(record_criterion):
    t0 = time.perf_counter()
    drift = solve_traffic(MM1)
    R = 2000
    y1 = np.array([y_components(simulate(MM1, 1000.0, master_seed=77, replicate=r), drift, 0, 1000.0)[0]
                   for r in range(R)])
    u = np.array([1.0, 2.0, 4.0])
    p_path = np.array([(y1 >= x).mean() for x in u])
    se_path = np.sqrt(p_path * (1 - p_path) / R)
    est = lemma_rhs(MM1, 0, "arrival", u, replications=20_000, seed=78)
    z = np.abs(p_path - est.p) / np.hypot(se_path, est.se)
    dt = time.perf_counter() - t0
    ok = bool(np.all(z <= 3)) and dt < 180
    record_criterion(8, "lemma consistency", ok,
                     f"P(Y1 >= u) {np.round(p_path, 4).tolist()} vs walk {np.round(est.p, 4).tolist()}, "
                     f"max {z.max():.2f} joint SE, {dt:.1f}s")
    assert ok


def test_large_deviation_trend(record_criterion):
    t0 = time.perf_counter()
    R = 50_000
    res = tightness_sweep(MM1, "ld", [10, 20, 40], [0.5, 1.0, 2.0], replications=R,
                          master_seed=9, warmup_mult=60)
    resolved = [c for c in res.cells if c.resolved]
    off = []
    for c in resolved:
        hw = c.half_width
        lo = max(c.p_hat - 3 * hw, 0.0) ** (1 / c.n)
        hi = min(c.p_hat + 3 * hw, 1.0) ** (1 / c.n)
        if not lo <= 0.5**c.u <= hi:
            off.append((c.n, c.u))
    dec = res.increase_in_u_violations(0.0)
    dt = time.perf_counter() - t0
    ok = not off and not dec and len(resolved) >= 3 and dt < 300
    record_criterion(9, "large-deviation trend", ok,
                     f"{len(resolved)}/9 cells resolved, outside tolerance {off}, "
                     f"non-decreasing pairs {dec}, {dt:.1f}s")
    assert ok


def test_diffusion_tightness(record_criterion):
    t0 = time.perf_counter()
    reg = ScalingRegime("diffusion", r=[-0.5])
    res = tightness_sweep(CRIT1, reg, [25, 100, 400], [1.0, 2.0, 4.0], replications=1000,
                          master_seed=3, warmup_mult=500)
    up = res.upward_trend_violations(2.0)
    dt = time.perf_counter() - t0
    vals = {u: [round(res.cell(n, u).normalized, 3) for n in res.n_grid] for u in res.u_grid}
    ok = not up and dt < 300
    record_criterion(10, "diffusion tightness", ok, f"tails by n {vals}, upward pairs {up}, {dt:.1f}s")
    assert ok


def test_moderate_regime(record_criterion):
    t0 = time.perf_counter()
    reg = ScalingRegime("moderate", r=[-0.5], bn="pow:0.25")
    res = tightness_sweep(CRIT1, reg, [16, 81, 256], [0.5, 1.0, 2.0], replications=4000,
                          master_seed=4, warmup_mult=500)
    resolved = [c for c in res.cells if c.resolved]
    near_one = [(c.n, c.u) for c in resolved if min(c.normalized + 2 * c.norm_se, 1.0) > 0.9]
    rising = res.increase_in_u_violations(2.0)
    dt = time.perf_counter() - t0
    ok = not near_one and not rising and len(resolved) >= 3 and dt < 300
    record_criterion(11, "moderate regime", ok,
                     f"{len(resolved)}/9 resolved, max normalized "
                     f"{max(c.normalized for c in resolved):.3f}, near one {near_one}, rising {rising}, {dt:.1f}s")
    assert ok


def test_reproducibility(record_criterion, tmp_path):
    spec = tmp_path / "mm1.json"
    spec.write_text(json.dumps(MM1.to_dict()))
    crit = tmp_path / "crit.json"
    crit.write_text(json.dumps(CRIT1.to_dict()))
    runs = {
        "simulate": ["simulate", "--spec", str(spec), "--horizon", "200"],
        "lemma-tails": ["lemma-tails", "--spec", str(spec), "--u-grid", "1,2,4",
                        "--replications", "2000"],
        "sweep": ["sweep", "--spec", str(crit), "--regime", "diffusion", "--r", "-0.5",
                  "--n-grid", "4,16", "--u-grid", "1,2", "--replications", "300"],
    }
    same = {}
    for name, argv in runs.items():
        dirs = [tmp_path / f"{name}-{i}" for i in range(2)]
        for d in dirs:
            assert cli.main(argv + ["--seed", "12", "--out", str(d)]) == 0
        a = {p.name: p.read_bytes() for p in dirs[0].iterdir()}
        b = {p.name: p.read_bytes() for p in dirs[1].iterdir()}
        # replaying from the written manifest must reproduce the same bytes again
        man = json.loads(a["manifest.json"])["manifest"]
        cfg = {k: v for k, v in man.items() if k != "spec_sha256"}
        cfg.update(out=str(tmp_path / f"{name}-replay"), threads=1, figures=True)
        assert cli.run(cfg) == 0
        c = {p.name: p.read_bytes() for p in (tmp_path / f"{name}-replay").iterdir()}
        same[name] = a == b == c and any(n.endswith(".png") for n in a)
    ok = all(same.values())
    record_criterion(12, "reproducibility", ok, f"byte-identical reruns {same}")
    assert ok
