"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
written straight to the terminal even when output capture is on.
"""
import math
from fractions import Fraction

import numpy as np
import pytest

from partflow.demand import (check_demand_matrix, case_study_scenarios, gen_bimodal,
                             gen_gravity, gen_poisson, generate_series)
from partflow.exact import (grid_oracle, lp_mlu_flows, lp_mtf, lp_top,
                            lp_weights_mlu, pop_solve, shortest_path_value, solve_objective)
from partflow.gd import (GdConfig, ga_maximize_flow, gd_minimize_mlu, rate_constants)
from partflow.objectives import (eval_mlu, eval_mtf_mcf, expected_objective,
                                 subgradient_mlu)
from partflow.paths import build_catalog
from partflow.policy import (TrainConfig, allocate, batch_rewards, counterfactual_advantage,
                             init_params, log_prob, log_prob_grad, mean_jacobian,
                             partition_by_source, policy_forward, rescale_on_failure, train,
                             JointLayout)
from partflow.topology import Topology, case_study_topology, random_topology

from conftest import small_instances
from generator_checks import bimodal_check, gravity_check, poisson_check


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def cs():
    t = case_study_topology()
    return t, build_catalog(t, k=4), case_study_scenarios()


def test_criterion_01_case_study_optima(cs, verdict):
    t, cat, sc = cs
    grid = {obj: grid_oracle(t, cat, sc, obj, step=1e-3).value for obj in ("mlu", "mtf", "mcf")}
    problems = []
    # per scenario: the LP against a single-scenario grid
    for d, _ in sc:
        for obj in ("mlu", "mtf", "mcf"):
            g = grid_oracle(t, cat, [(d, 1.0)], obj, step=1e-3).value
            v = solve_objective(obj, t, cat, d)[1]
            tol = 1e-2 if obj == "mlu" else 0.02 * abs(g)
            if abs(v - g) > tol:
                problems.append(f"lp-f {obj} {v:.6f} vs grid {g:.6f}")
    w, _ = gd_minimize_mlu(t, cat, sc, GdConfig(iterations=10_000))
    gd_mlu = expected_objective("mlu", w, sc, cat, t)
    if abs(gd_mlu - grid["mlu"]) > 1e-2:
        problems.append(f"gd mlu {gd_mlu:.6f}")
    ga = {}
    for obj in ("mtf", "mcf"):
        x, _ = ga_maximize_flow(t, cat, sc, objective=obj)
        ga[obj] = expected_objective(obj, x.values, sc, cat, t)
        if abs(ga[obj] - grid[obj]) > 0.02 * grid[obj]:
            problems.append(f"ga {obj} {ga[obj]:.6f}")
    verdict(1, not problems,
            f"grid mlu/mtf/mcf = {grid['mlu']:.6f}/{grid['mtf']:.6f}/{grid['mcf']:.6f}; "
            f"gd mlu {gd_mlu:.6f}; ga mtf {ga['mtf']:.6f}, mcf {ga['mcf']:.6f}"
            + (f"; {problems}" if problems else ""))


def test_criterion_02_convexity_and_quasiconcavity(verdict):
    rng = np.random.default_rng(2024)
    worst = {"mlu": 0.0, "mtf": 0.0, "mcf": 0.0}
    instances = small_instances(20, seed=202)
    per = math.ceil(1000 / len(instances))
    for t, cat, d in instances:
        dem = np.repeat(cat.pair_demand(d), cat.k)
        for _ in range(per):
            lam = rng.uniform()
            w1 = rng.dirichlet(np.ones(cat.k), size=cat.num_pairs).ravel()
            w2 = rng.dirichlet(np.ones(cat.k), size=cat.num_pairs).ravel()
            gap = eval_mlu(lam * w1 + (1 - lam) * w2, d, cat, t) - (
                lam * eval_mlu(w1, d, cat, t) + (1 - lam) * eval_mlu(w2, d, cat, t))
            worst["mlu"] = max(worst["mlu"], gap)
            x1 = dem * rng.exponential(1.0, dem.size) * (rng.random(dem.size) < 0.7)
            x2 = dem * rng.exponential(1.0, dem.size) * (rng.random(dem.size) < 0.7)
            a, b = eval_mtf_mcf(x1, d, cat, t), eval_mtf_mcf(x2, d, cat, t)
            m = eval_mtf_mcf(lam * x1 + (1 - lam) * x2, d, cat, t)
            worst["mtf"] = max(worst["mtf"], min(a[0], b[0]) - m[0])
            worst["mcf"] = max(worst["mcf"], min(a[1], b[1]) - m[1])
    ok = all(v <= 1e-9 for v in worst.values())
    verdict(2, ok, f"{per * len(instances)} chords per objective on {len(instances)} "
            f"instances; worst violations {worst}")


def test_criterion_03_gd_rate(verdict):
    worst_ratio, rows = 0.0, []
    for t, cat, d in small_instances(10, seed=303):
        sc = [(d, 1.0)]
        f_star = lp_weights_mlu(t, cat, d)[1]
        B, rho = rate_constants(t, cat, sc)
        for T in (100, 1000, 10_000):
            w, _ = gd_minimize_mlu(t, cat, sc, GdConfig(iterations=T))
            gap = eval_mlu(w, d, cat, t) - f_star
            worst_ratio = max(worst_ratio, gap / (B * rho / math.sqrt(T)))
            rows.append(gap)
    verdict(3, worst_ratio <= 1.1 and min(rows) >= -1e-9,
            f"30 runs; largest gap / (B*rho/sqrt(T)) = {worst_ratio:.4f} (limit 1.1)")


def _tiny_instances(count, seed):
    """Random instances whose demanded pairs leave at most four free weights."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        t = random_topology(int(rng.integers(4, 7)), extra_edges=int(rng.integers(2, 8)),
                            capacities=(1.0, 2.0, 3.0), seed=int(rng.integers(1 << 30)))
        k = int(rng.integers(2, 5))
        cat = build_catalog(t, k=k)
        d = np.zeros((t.node_count, t.node_count))
        for i in rng.choice(cat.num_pairs, size=int(rng.integers(1, 3)), replace=False):
            d[cat.pairs[i]] = rng.uniform(0.5, 4.0)
        distinct = [len(set(cat.paths[i * k:(i + 1) * k]))
                    for i in range(cat.num_pairs) if d[cat.pairs[i]] > 0]
        if sum(distinct) <= 4 and max(distinct) > 1:
            out.append((t, cat, d))
    return out


def test_criterion_04_lp_matches_grid(cs, verdict):
    t, cat, sc = cs
    cases = [(t, cat, d) for d, _ in sc] + _tiny_instances(12, seed=404)
    worst = 0.0
    for tt, cc, d in cases:
        for obj in ("mlu", "mtf", "mcf"):
            simplex = "equal" if obj == "mlu" else "sub"
            g = grid_oracle(tt, cc, [(d, 1.0)], obj, step=0.05, simplex=simplex, refine=6).value
            worst = max(worst, abs(solve_objective(obj, tt, cc, d)[1] - g))
    lpw = max(abs(lp_weights_mlu(tt, cc, d)[1] - lp_mlu_flows(tt, cc, d)[1])
              for tt, cc, d in small_instances(10, seed=405) + cases)
    verdict(4, worst <= 1e-4 and lpw <= 1e-4,
            f"{len(cases)} instances x 3 objectives, max |LP - grid| = {worst:.2e}; "
            f"max |lp-w - lp-f| = {lpw:.2e}")


def _case_study_agents(cs):
    t, cat, sc = cs
    hist = np.stack([d for d, _ in sc]) / 10.0
    agents = partition_by_source(t, cat, hist)
    dem = cat.pair_demand(sc[0][0] / 10.0)
    layout = JointLayout(cat, agents)

    def reward_fn(A):
        return batch_rewards(layout.to_catalog(A, "mlu"), dem, cat, t, "mlu")
    return agents, reward_fn


def test_criterion_05_counterfactual_machinery(cs, verdict):
    t, cat, sc = cs
    agents, reward_fn = _case_study_agents(cs)
    p = init_params(agents[0].state.size, 4 * cat.k, hidden=(8, 8), sigma=0.5, seed=5)
    p = p.with_flat(p.flat() + np.random.default_rng(5).normal(scale=0.3, size=p.flat().size))
    X = np.stack([a.state for a in agents])
    means = [policy_forward(p, a) for a in agents]
    J0 = mean_jacobian(p, X[0], agents[0].head_ids)
    rng = np.random.default_rng(55)
    N = 100_000
    # batch the N independent baselines: row block j holds sample j
    k0, k1 = agents[0].action_dim, agents[1].action_dim
    a0 = means[0] + p.sigma * rng.standard_normal((N, k0))
    a1 = means[1] + p.sigma * rng.standard_normal((N, k1))
    cf = means[0] + p.sigma * rng.standard_normal((N, k0))
    b0 = reward_fn(np.hstack([cf, a1]))
    score = ((a0 - means[0]) / p.sigma ** 2) @ J0
    terms = b0[:, None] * score
    mean, se = terms.mean(axis=0), terms.std(axis=0, ddof=1) / math.sqrt(N)
    live = se > 0
    z = np.max(np.abs(mean[live]) / se[live])
    # the library routine agrees with the batched baseline on a sample
    adv, r0 = counterfactual_advantage(means, [a0[0], a1[0]], reward_fn, p.sigma, 1,
                                       counterfactual=[cf[:1], a1[:1]])
    same = math.isclose(r0 - adv[0], b0[0], rel_tol=1e-12, abs_tol=1e-15)

    # 1/sqrt(n) error of the Monte Carlo baseline
    act = [means[0] + 0.1, means[1] - 0.1]
    big = np.hstack([means[0] + p.sigma * rng.standard_normal((2_000_000, k0)),
                     np.repeat(act[1][None], 2_000_000, 0)])
    exact = reward_fn(big).mean()
    ns = np.array([4, 16, 64, 256])
    rms = []
    for n in ns:
        errs = [counterfactual_advantage(means, act, reward_fn, p.sigma, int(n), rng=r)
                for r in range(400)]
        rms.append(math.sqrt(np.mean([(r0 - a[0] - exact) ** 2 for a, r0 in errs])))
    slope = np.polyfit(np.log(ns), np.log(rms), 1)[0]
    ok = z <= 4 and same and abs(slope + 0.5) <= 0.1
    verdict(5, ok, f"zero-mean baseline: max |mean|/SE = {z:.2f} over {live.sum()} weights "
            f"(N={N}); advantage error slope {slope:.3f}")


def test_criterion_06_gradient_exactness(verdict):
    rng = np.random.default_rng(606)
    worst = 0.0
    for draw in range(100):
        p = init_params(6, 5, hidden=(5, 4), sigma=float(rng.uniform(0.1, 1.0)), seed=draw)
        p = p.with_flat(rng.normal(scale=0.5, size=p.flat().size))
        state = rng.normal(size=6)
        heads = np.sort(rng.choice(5, size=3, replace=False))
        action = policy_forward(p, state[None])[heads] + p.sigma * rng.normal(size=3)
        g = log_prob_grad(p, state, action, heads)
        analytic = np.concatenate([g[k].ravel() for k in sorted(g)])
        theta, h = p.flat(), 1e-6
        numeric = np.empty_like(theta)
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h
            up = log_prob(action, policy_forward(p.with_flat(theta + e), state[None])[heads],
                          p.sigma)
            dn = log_prob(action, policy_forward(p.with_flat(theta - e), state[None])[heads],
                          p.sigma)
            numeric[j] = (up - dn) / (2 * h)
        worst = max(worst, np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))
    # subgradient inequality, including a tie on the case study
    sub_worst, pairs = 0.0, 0
    t = case_study_topology()
    cat = build_catalog(t, k=2)
    d = case_study_scenarios()[0][0]
    tie = cat.uniform_weights()
    i, j = cat.pair_index()[(0, 3)], cat.pair_index()[(1, 3)]
    tie[2 * i:2 * i + 2] = (1 - 1 / 3, 1 / 3)
    tie[2 * j:2 * j + 2] = (1 - 3 / 8, 3 / 8)
    cases = [(t, cat, d, tie)] + [(tt, cc, dd, None) for tt, cc, dd in small_instances(9, seed=6)]
    for tt, cc, dd, w0 in cases:
        for _ in range(112):
            w = w0 if w0 is not None else rng.dirichlet(np.ones(cc.k), size=cc.num_pairs).ravel()
            v = rng.dirichlet(np.ones(cc.k), size=cc.num_pairs).ravel()
            gap = eval_mlu(v, dd, cc, tt) - eval_mlu(w, dd, cc, tt) - subgradient_mlu(
                w, dd, cc, tt) @ (v - w)
            sub_worst = min(sub_worst, gap)
            pairs += 1
    verdict(6, worst < 1e-5 and sub_worst >= -1e-12,
            f"max relative FD error {worst:.2e} over 100 draws; worst subgradient slack "
            f"{sub_worst:.2e} over {pairs} pairs")


def test_criterion_07_end_to_end_training(cs, verdict):
    t, cat, sc = cs
    rng = np.random.default_rng(1)

    def series(n):
        return np.stack([sc[i][0] for i in rng.integers(0, 2, n)])

    train_s, val_s, test_s = series(212), series(40), series(40)
    p, curve = train(t, cat, train_s, "mlu", TrainConfig(epochs=10, patience=10,
                                                         max_updates=2000), validation=val_s)
    updates = curve[-1].updates
    vals = [expected_objective("mlu", allocate(p, t, cat, test_s[i - 12:i]), sc, cat, t)
            for i in range(12, 40)]
    oracle = grid_oracle(t, cat, sc, "mlu", step=1e-3).value
    cs_gap = float(np.mean(vals)) / oracle - 1

    # ten-node gravity instance, chronological 70/10/20 split
    t10 = random_topology(10, extra_edges=20, capacities=(1.0,), seed=0)
    cat10 = build_catalog(t10, k=4)
    S = generate_series(t10, "gravity", 1000, seed=0).matrices
    a, b = 700, 800
    p10, _ = train(t10, cat10, S[:a], "mlu", TrainConfig(seed=0), validation=S[a:b])
    opt = np.array([lp_mlu_flows(t10, cat10, S[i])[1] for i in range(b, 1000)])
    pram = np.array([eval_mlu(allocate(p10, t10, cat10, S[i - 12:i]), S[i], cat10, t10)
                     for i in range(b, 1000)])
    unif = np.array([eval_mlu(cat10.uniform_weights(), S[i], cat10, t10)
                     for i in range(b, 1000)])
    norm_pram, norm_unif = float(np.mean(pram / opt)), float(np.mean(unif / opt))
    better = 1 - pram.mean() / unif.mean()
    ok = cs_gap <= 0.15 and updates <= 2000 and norm_pram <= 1.25 and better >= 0.30
    verdict(7, ok, f"case study: expected MLU {np.mean(vals):.4f} vs oracle {oracle:.4f} "
            f"({100 * cs_gap:.1f}% gap, {updates} updates); 10-node: normalized MLU "
            f"{norm_pram:.3f} (uniform {norm_unif:.3f}, {100 * better:.0f}% lower MLU)")


def test_criterion_08_baseline_orderings(verdict):
    bad, pop_gaps = [], []
    for t, cat, d in small_instances(8, seed=808):
        f = lp_mlu_flows(t, cat, d)[1]
        top = lp_top(t, cat, d, 0.1)[1]
        sp = shortest_path_value("mlu", t, cat, d)
        if not f - 1e-7 <= top <= sp + 1e-7:
            bad.append(("order", f, top, sp))
        for obj in ("mlu", "mtf", "mcf"):
            if abs(pop_solve(t, cat, d, 1, obj, seed=0)[1] - solve_objective(obj, t, cat, d)[1]) > 1e-7:
                bad.append(("pop1", obj))
        # five times the demand so links saturate and the split can cost flow
        gap = lp_mtf(t, cat, 5 * d)[1] - pop_solve(t, cat, 5 * d, 2, "mtf", seed=1)[1]
        pop_gaps.append(gap)
        if gap < -1e-7:
            bad.append(("pop2", gap))
    verdict(8, not bad, f"LP-f <= LP-top <= shortest-path on 8 instances; POP(1) == LP; "
            f"POP(2) MTF gaps {np.round(pop_gaps, 4).tolist()}" + (f"; {bad}" if bad else ""))


def test_criterion_09_failure_rescaling(verdict):
    t = Topology(4, ((0, 3), (0, 1), (1, 3), (0, 2), (2, 3)), np.ones(5))
    cat = build_catalog(t, k=3)
    i = cat.pair_index()[(0, 3)]
    w = np.array([Fraction(1, 3)] * cat.num_paths, dtype=object)
    w[3 * i:3 * i + 3] = [Fraction(1, 2), Fraction(1, 5), Fraction(3, 10)]
    out, _ = rescale_on_failure(w, [(0, 3)], cat, t)
    example = list(out.values[3 * i:3 * i + 3]) == [0, Fraction(2, 5), Fraction(3, 5)]

    rng = np.random.default_rng(909)
    tr = random_topology(8, extra_edges=12, seed=9)
    cr = build_catalog(tr, k=4)
    violations = 0
    for _ in range(1000):
        wr = rng.dirichlet(np.ones(cr.k), size=cr.num_pairs).ravel()
        failed = rng.choice(tr.num_edges, size=int(rng.integers(1, 5)), replace=False)
        res, disc = rescale_on_failure(wr, failed, cr)
        v = res.values.reshape(cr.num_pairs, cr.k)
        dead = cr.path_edge[:, failed].any(axis=1).reshape(cr.num_pairs, cr.k)
        live = np.setdiff1d(np.arange(cr.num_pairs), disc)
        ok = np.all(v[dead] == 0) and np.allclose(v[live].sum(axis=1), 1) \
            and np.all(v >= 0) and np.all(v[disc] == 0) and all(dead[j].all() for j in disc)
        violations += not ok
    verdict(9, example and violations == 0,
            f"worked example {'exact' if example else 'wrong'}; {violations} invariant "
            f"violations over 1000 failure sets")


def test_criterion_10_generators(verdict):
    checks = {"gravity": gravity_check(), "poisson": poisson_check(), "bimodal": bimodal_check()}
    t = random_topology(7, extra_edges=6, seed=10)
    invalid = 0
    for seed in range(50):
        for m in (gen_gravity(t, seed=seed), gen_poisson(t, 3.0, 0.5, seed=seed),
                  gen_bimodal(t, 0.3, seed=seed)):
            try:
                check_demand_matrix(m)
            except ValueError:
                invalid += 1
    verdict(10, all(checks.values()) and invalid == 0,
            f"moment checks {checks}; {invalid} invalid matrices out of 150")
