import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laenet.arpo import (BracketError, arpo_solve, build_instance, g_n, kkt_sum, power_for_tau,
                         scan_resolutions, select_resolutions, solve_power, solve_scenario, solve_tau,
                         zeta_sweep)
from laenet.scenario import UserTask, default_scenario
from laenet.uplink import total_latency
from laenet.vlm_profile import InfeasibleAccuracy

from oracles import grid_objective, random_instance, static_latency

R384, R768, R1024, R1536 = 384 ** 2, 768 ** 2, 1024 ** 2, 1536 ** 2


def test_g_n_matches_central_difference():
    d, b, h, s = 3.36e6, 1e6, 1e-9, 1e-13
    T = lambda p: d / (b * math.log2(1 + p * h / s))
    p, dl = 0.05, 1e-6
    fd = (T(p - dl) - T(p + dl)) / (2 * dl)
    assert abs(g_n(p, d, b, h, s) - fd) / g_n(p, d, b, h, s) < 1e-6


def test_g_n_positive_and_decreasing():
    vals = [g_n(p, 3.36e6, 1e6, 1e-9, 1e-13) for p in np.linspace(0.01, 0.1, 10)]
    assert all(v > 0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        g_n(0.0, 3.36e6, 1e6, 1e-9, 1e-13)


def test_power_for_tau_cases():
    assert power_for_tau(1.0 + 3.36, 3.36e6, 1e6, 1e-9, 1.0, 1e-13) == pytest.approx(1e-4, rel=1e-12)
    assert power_for_tau(2.0, 3.36e6, 1e6, 1e-9, 1.0, 1e-13) == pytest.approx(1e-4 * (2 ** 3.36 - 1), rel=1e-12)
    assert power_for_tau(2.0, 3.36e6, 1e6, 1e-9, 1.0, 1e-13) == pytest.approx(9.27e-4, rel=1e-3)
    with pytest.raises(BracketError):
        power_for_tau(1.0, 3.36e6, 1e6, 1e-9, 1.0, 1e-13)


@given(st.integers(0, 3), st.sampled_from([R384, R768, R1024, R1536]), st.floats(0.05, 30.0))
def test_power_latency_inversion(n, res, slack):
    sc = default_scenario()
    inst = build_instance(sc)
    u = sc.users[n]
    floor = inst.floors([res])[0]
    p = power_for_tau(floor + slack, inst.payloads([res] * 4)[n], u.bandwidth_hz, inst.gains[n], floor,
                      inst.noise_w)
    if math.isfinite(p):
        assert total_latency(sc, u, res, p, inst.gains[n]) == pytest.approx(floor + slack, rel=1e-9)


def test_resolution_selection_cases():
    sc = default_scenario()
    two = sc.replace(users=(UserTask(0, (0.0, 100.0, 0.0), acc_min=0.60), UserTask(1, (0.0, -100.0, 0.0), acc_min=0.67)))
    assert select_resolutions(build_instance(two)) == (R768, R1024)
    zero = sc.with_users(acc_min=0.0)
    assert select_resolutions(build_instance(zero)) == (R384,) * 4


def test_infeasible_accuracy_names_user():
    sc = default_scenario().replace(users=(UserTask(7, (0.0, 0.0, 0.0), acc_min=0.7),))
    with pytest.raises(InfeasibleAccuracy, match="7"):
        solve_scenario(sc)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25)
def test_bnb_matches_exhaustive_enumeration(seed):
    import itertools
    rng = np.random.default_rng(seed)
    inst = build_instance(random_instance(rng, 3, float(rng.choice([0.0, 100.0, 1000.0]))))
    res, nodes = select_resolutions(inst, return_nodes=True)
    assert res == scan_resolutions(inst)
    feas = [[r for r in inst.profile.resolutions if inst.profile.accuracy(r) >= u.acc_min] for u in inst.users]
    vals = {r: solve_power(inst, r).objective for r in itertools.product(*feas)}
    assert vals[res] == min(vals.values())
    assert nodes <= 1 + 4 + 16 + 64


def test_zeta_zero_full_power():
    sol = solve_scenario(default_scenario())
    assert np.all(sol.power_per_user == 0.1)
    assert sol.tau_star == pytest.approx(sol.max_latency, rel=0)
    assert all(sol.clamp_flags)


def _unclamped(sol):
    return not any(sol.clamp_flags)


def test_positive_zeta_equalizes_latency():
    sol = solve_scenario(default_scenario().replace(zeta=100.0))
    assert _unclamped(sol)
    np.testing.assert_allclose(sol.achieved_latency_per_user, sol.tau_star, rtol=1e-6)
    inst = build_instance(default_scenario().replace(zeta=100.0))
    assert abs(kkt_sum(inst, sol.res_per_user, sol.tau_star) - 1.0) < 1e-6
    assert len(sol.duals["omega"]) == 4


def test_single_user_tau_matches_grid():
    sc = default_scenario().replace(users=(UserTask(0, (-300.0, 200.0, 0.0), acc_min=0.6),), zeta=300.0)
    inst = build_instance(sc)
    res = scan_resolutions(inst)
    tau, _ = solve_tau(inst, res)
    d, floor = inst.payloads(res)[0], inst.floors(res)[0]
    b, h, s = sc.users[0].bandwidth_hz, inst.gains[0], inst.noise_w
    grid = np.linspace(floor + 1e-3, floor + 60.0, 10**6)
    with np.errstate(over="ignore"):
        p = s / h * (2.0 ** (d / (b * (grid - floor))) - 1.0)
    k = int(np.argmin(grid + sc.zeta * p))
    assert abs(grid[k] - tau) <= 2 * (grid[1] - grid[0])


def test_tau_increases_with_zeta():
    taus = [solve_scenario(default_scenario().replace(zeta=z)).tau_star for z in (100.0, 500.0, 1000.0)]
    assert taus[0] < taus[1] < taus[2]


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20)
def test_kkt_sum_strictly_decreasing(seed):
    rng = np.random.default_rng(seed)
    inst = build_instance(random_instance(rng, 3, 100.0))
    res = scan_resolutions(inst)
    lo = float(np.max(inst.floors(res)))
    taus = lo + np.geomspace(1e-2, 100.0, 60)
    vals = [kkt_sum(inst, res, t) for t in taus]
    finite = [v for v in vals if math.isfinite(v)]
    assert all(a > b for a, b in zip(finite, finite[1:]))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20)
def test_bisection_iteration_bound(seed):
    from laenet import kernels
    from laenet.arpo import EPS_LO, TOL_TAU
    rng = np.random.default_rng(seed)
    inst = build_instance(random_instance(rng, 3, float(rng.choice([100.0, 1000.0]))))
    res = scan_resolutions(inst)
    tau, lo, hi, it = kernels.tau_bisect(inst.zeta, inst.payloads(res), inst.bandwidths(), inst.gains,
                                         inst.floors(res), inst.noise_w, EPS_LO, TOL_TAU)
    assert it <= math.log2(max(hi - lo, TOL_TAU) / TOL_TAU) + 2


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25)
def test_project_rule_never_worse_than_min_rule(seed):
    rng = np.random.default_rng(seed)
    inst = build_instance(random_instance(rng, 3, float(rng.choice([1.0, 10.0, 100.0, 1000.0]))))
    a, b = arpo_solve(inst, "project"), arpo_solve(inst, "min")
    assert a.objective_value <= b.objective_value + 1e-9
    assert np.all(a.power_per_user <= inst.p_max() * (1 + 1e-12))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20)
def test_no_worse_than_full_power(seed):
    rng = np.random.default_rng(seed)
    inst = build_instance(random_instance(rng, 3, float(rng.choice([10.0, 100.0, 1000.0]))))
    sol = arpo_solve(inst)
    full = inst.zeta * inst.p_max().sum() + max(inst.latency(i, r, inst.p_max()[i])
                                               for i, r in enumerate(sol.res_per_user))
    assert sol.objective_value <= full + 1e-9


def test_two_user_grid_oracle():
    rng = np.random.default_rng(5)
    for zeta in (100.0, 1000.0):
        inst = build_instance(random_instance(rng, 2, zeta))
        sol = arpo_solve(inst)
        res = sol.res_per_user
        d, fl = inst.payloads(res), inst.floors(res)
        pa = np.linspace(1e-4, inst.users[0].p_max_w, 1000)
        pb = np.linspace(1e-4, inst.users[1].p_max_w, 1000)
        la = static_latency(d[0], inst.users[0].bandwidth_hz, pa, inst.gains[0], inst.noise_w, fl[0])
        lb = static_latency(d[1], inst.users[1].bandwidth_hz, pb, inst.gains[1], inst.noise_w, fl[1])
        obj = np.maximum(la[:, None], lb[None, :]) + zeta * (pa[:, None] + pb[None, :])
        grid_best = float(obj.min())
        step = max(pa[1] - pa[0], pb[1] - pb[0])
        assert sol.objective_value <= grid_best + 1e-9
        assert grid_best - sol.objective_value <= zeta * 2 * step + 1e-6


def test_zeta_sweep_monotone():
    sc = default_scenario().with_users(bandwidth_hz=2e6)
    rows = zeta_sweep(sc, np.linspace(100, 1000, 10))
    p = [r[1] for r in rows]
    lat = [r[2] for r in rows]
    assert all(a >= b for a, b in zip(p, p[1:]))
    assert all(a <= b for a, b in zip(lat, lat[1:]))


def test_solution_record_fields():
    d = solve_scenario(default_scenario().replace(zeta=100.0)).to_dict()
    for k in ("res_per_user", "power_per_user_w", "tau_star_s", "achieved_latency_per_user_s",
              "objective_value", "clamp_flags"):
        assert k in d
