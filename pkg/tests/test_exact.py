import numpy as np
import pytest
from scipy.optimize import linprog

from partflow.exact import (SolverError, allocation_value, grid_oracle, lp_mcf,
                            lp_mlu_flows, lp_mtf, lp_top, lp_weights_mlu, pop_solve,
                            shortest_path_value, solve_objective)
from partflow.objectives import Allocation
from partflow.paths import build_catalog
from partflow.topology import Topology, zero_capacities

from conftest import small_instances


def scipy_optimum(objective, t, cat, d):
    """Same path formulation written densely and handed to HiGHS."""
    dem = cat.pair_demand(d)
    P, E = cat.num_paths, t.num_edges
    PE = cat.path_edge
    own = cat.pair_path
    pos = dem > 0
    if objective == "mlu":
        # vars: flows, u
        c = np.zeros(P + 1)
        c[-1] = 1
        A_ub = np.hstack([PE.T, -t.capacities[:, None]])
        A_eq = np.hstack([own[pos], np.zeros((pos.sum(), 1))])
        bounds = [(0, None) if dem[cat.path_pair[p]] > 0 else (0, 0) for p in range(P)]
        r = linprog(c, A_ub=A_ub, b_ub=np.zeros(E), A_eq=A_eq, b_eq=dem[pos],
                    bounds=bounds + [(0, None)], method="highs")
        return r.fun
    if objective == "mtf":
        r = linprog(-np.ones(P), A_ub=np.vstack([PE.T, own]),
                    b_ub=np.concatenate([t.capacities, dem]), bounds=(0, None),
                    method="highs")
        return -r.fun
    # vars: flows, a
    c = np.zeros(P + 1)
    c[-1] = -1
    A = np.vstack([np.hstack([PE.T, np.zeros((E, 1))]),
                   np.hstack([own, np.zeros((cat.num_pairs, 1))]),
                   np.hstack([-own[pos], dem[pos][:, None]])])
    b = np.concatenate([t.capacities, dem, np.zeros(pos.sum())])
    r = linprog(c, A_ub=A, b_ub=b, bounds=[(0, None)] * P + [(0, 1)], method="highs")
    return -r.fun


@pytest.mark.parametrize("objective", ["mlu", "mtf", "mcf"])
def test_lp_matches_scipy_formulation(objective):
    for t, cat, d in small_instances(6, seed=3):
        _, ours = solve_objective(objective, t, cat, d)
        assert ours == pytest.approx(scipy_optimum(objective, t, cat, d), rel=1e-7, abs=1e-9)


def test_case_study_per_scenario_optima(case_study):
    t, cat, sc = case_study
    assert lp_mlu_flows(t, cat, sc[0][0])[1] == pytest.approx(11 / 14)
    assert lp_mlu_flows(t, cat, sc[1][0])[1] == pytest.approx(8 / 9)


def test_lp_solution_is_feasible_and_attains_value():
    for t, cat, d in small_instances(4, seed=11):
        alloc, u = lp_mlu_flows(t, cat, d)
        x = alloc.values
        assert np.all(x >= -1e-9)
        assert np.allclose(cat.pair_path @ x, cat.pair_demand(d), atol=1e-7)
        assert allocation_value("mlu", alloc, d, cat, t) == pytest.approx(u, rel=1e-7)
        for obj, fn in (("mtf", lp_mtf), ("mcf", lp_mcf)):
            a, v = fn(t, cat, d)
            assert np.all(a.values @ cat.path_edge <= t.capacities + 1e-7)
            assert allocation_value(obj, a, d, cat, t) == pytest.approx(v, rel=1e-6, abs=1e-9)


def test_lp_weights_equals_lp_flows():
    for t, cat, d in small_instances(8, seed=5):
        _, uf = lp_mlu_flows(t, cat, d)
        _, uw = lp_weights_mlu(t, cat, d)
        assert uw == pytest.approx(uf, rel=1e-6)


def test_grid_agrees_with_lp_on_single_scenarios(case_study):
    t, cat, sc = case_study
    for d, _ in sc:
        for obj, simplex in (("mlu", "equal"), ("mtf", "sub"), ("mcf", "sub")):
            g = grid_oracle(t, cat, [(d, 1.0)], obj, step=0.05, simplex=simplex, refine=6)
            _, v = solve_objective(obj, t, cat, d)
            assert g.value == pytest.approx(v, abs=1e-4)


def test_expected_mlu_grid_matches_lp_over_shared_weights(case_study):
    # fractions w1, w2 on the two-hop paths, one MLU bound per scenario
    t, cat, sc = case_study
    (a1, b1), (a2, b2) = [(d[0, 3], d[1, 3]) for d, _ in sc]
    # vars w1, w2, u1, u2
    rows, rhs = [], []
    for k, (a, b) in enumerate(((a1, b1), (a2, b2))):
        u = [0, 0]
        u[k] = -1
        for coeffs, r in (([a, b], 0), ([-a, 0], -a), ([0, -b], -b), ([a, 0], 0), ([0, b], 0)):
            rows.append(coeffs + u)
            rhs.append(r)
    r = linprog([0, 0, 0.5, 0.5], A_ub=rows, b_ub=rhs, bounds=[(0, 1), (0, 1), (0, None),
                (0, None)], method="highs")
    assert r.fun == pytest.approx(843 / 896, abs=1e-12)
    # the 1e-3 lattice misses the optimum by about 4e-4; refinement closes it
    coarse = grid_oracle(t, cat, sc, "mlu", step=1e-3)
    assert r.fun <= coarse.value <= r.fun + 1e-3
    fine = grid_oracle(t, cat, sc, "mlu", step=1e-2, refine=6)
    assert fine.value == pytest.approx(r.fun, abs=1e-6)


def test_grid_surface_and_dimension_guard(case_study):
    t, cat, sc = case_study
    g = grid_oracle(t, cat, sc, "mlu", step=0.1, keep_surface=True)
    assert g.points.shape == (121, 2) and g.values.shape == (121,)
    assert g.value == g.values.min()
    big = small_instances(1, seed=0)[0]
    with pytest.raises(ValueError, match="sum to one"):
        grid_oracle(t, cat, sc, "mlu", simplex="sub")
    with pytest.raises(ValueError, match="free dimensions"):
        grid_oracle(big[0], big[1], [(big[2], 1.0)], "mlu", step=0.5)


def test_lp_top_sits_between_lp_and_shortest_path():
    for t, cat, d in small_instances(5, seed=9):
        opt = lp_mlu_flows(t, cat, d)[1]
        sp = shortest_path_value("mlu", t, cat, d)
        for frac in (0.0, 0.1, 0.5, 1.0):
            v = lp_top(t, cat, d, frac)[1]
            assert opt - 1e-7 <= v <= sp + 1e-7
        assert lp_top(t, cat, d, 0.0)[1] == pytest.approx(sp)
        assert lp_top(t, cat, d, 1.0)[1] == pytest.approx(opt, rel=1e-6)
        mtf_opt = lp_mtf(t, cat, d)[1]
        assert shortest_path_value("mtf", t, cat, d) - 1e-7 <= lp_top(
            t, cat, d, 0.1, "mtf")[1] <= mtf_opt + 1e-7


def test_pop_single_replica_is_the_lp():
    for t, cat, d in small_instances(3, seed=2):
        for obj in ("mlu", "mtf", "mcf"):
            assert pop_solve(t, cat, d, 1, obj, seed=0)[1] == pytest.approx(
                solve_objective(obj, t, cat, d)[1], rel=1e-7, abs=1e-9)


def test_pop_split_never_beats_lp():
    for t, cat, d in small_instances(3, seed=4):
        _, v, assign = pop_solve(t, cat, d, 2, "mtf", seed=1)
        assert lp_mtf(t, cat, d)[1] - v >= -1e-7
        assert np.array_equal(assign, pop_solve(t, cat, d, 2, "mtf", seed=1)[2])
    with pytest.raises(ValueError):
        pop_solve(t, cat, d, 0)


def test_unroutable_demand_raises():
    t = Topology(3, ((0, 1), (1, 2)), np.ones(2))
    cat = build_catalog(t, k=1)
    view = cat.with_failures(t, [0])
    d = np.zeros((3, 3))
    d[0, 2] = 1.0
    with pytest.raises(SolverError):
        lp_mlu_flows(zero_capacities(t, [0]), view, d)
    assert lp_mcf(zero_capacities(t, [0]), view, d)[1] == 0.0


def test_no_demand_is_trivial(case_study):
    t, cat, _ = case_study
    z = np.zeros((4, 4))
    assert lp_mlu_flows(t, cat, z)[1] == 0.0
    assert lp_mtf(t, cat, z)[1] == 0.0
    assert lp_mcf(t, cat, z)[1] == 1.0
    assert isinstance(lp_weights_mlu(t, cat, z)[0], Allocation)


def test_case_study_mlu_surface_convex_along_grid_lines(case_study):
    t, cat, sc = case_study
    g = grid_oracle(t, cat, sc, "mlu", step=0.01, keep_surface=True)
    m = int(round(1 / 0.01)) + 1
    surf = g.values.reshape(m, m)
    # second differences along both axes are nonnegative for a convex function
    assert np.all(np.diff(surf, 2, axis=0) >= -1e-12)
    assert np.all(np.diff(surf, 2, axis=1) >= -1e-12)
