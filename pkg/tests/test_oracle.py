import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freqctl.netmodel import NetworkModel
from freqctl.oracle import (InfeasibleError, check_feasibility, check_uniqueness_conditions,
                            kkt_residuals, node_objective, solve_pbo, solve_pbo_node)

from conftest import (KUNDUR_P, KUNDUR_PG0, KUNDUR_PL0, TABLE3_PG, TABLE3_PL, kundur_areas,
                      kundur_net, random_network, simple_area)

seeds = st.integers(0, 2**32 - 1)


def projected_gradient_node(p, a, iters=200000, tol=1e-10):
    """Minimize 1/2 a g^2 + 1/2 b (g - p)^2 over the feasible interval of g."""
    lo = max(a.pg_min, p + a.pl_min)
    hi = min(a.pg_max, p + a.pl_max)
    g = 0.5 * (lo + hi)
    step = 1.0 / (a.alpha + a.beta)
    for _ in range(iters):
        grad = a.alpha * g + a.beta * (g - p)
        g_new = min(hi, max(lo, g - step * grad))
        if abs(g_new - g) < tol:
            g = g_new
            break
        g = g_new
    return g, g - p


def test_area1_interior():
    a = kundur_areas()[0]
    g, l, lam = solve_pbo_node(90.0, a)
    assert (g, l, lam) == pytest.approx((50.0, -40.0, -100.0), abs=1e-12)
    assert g + KUNDUR_PG0[0] == pytest.approx(675.9)
    assert l + KUNDUR_PL0[0] == pytest.approx(80.0)
    assert abs(g + KUNDUR_PG0[0] - 676) < 0.5


def test_zero_disturbance():
    assert solve_pbo_node(0.0, simple_area()) == (0.0, 0.0, 0.0)


def test_a2_boundary_point():
    a = simple_area()
    g, l, _ = solve_pbo_node(a.pg_max - a.pl_min, a)
    assert g == pytest.approx(a.pg_max) and l == pytest.approx(a.pl_min)


def test_infeasible_node_named():
    a = simple_area()
    with pytest.raises(InfeasibleError, match="A2"):
        solve_pbo_node(a.pg_max - a.pl_min + 1.0, a)


def test_infeasible_network_lists_all_nodes():
    net = NetworkModel([(0, 1), (1, 2)], [1.0, 1.0], [simple_area()] * 3)
    with pytest.raises(InfeasibleError) as err:
        solve_pbo(net, np.array([1e4, 0.0, -1e4]))
    assert len(err.value.violations) == 2
    assert "node 0" in str(err.value) and "node 2" in str(err.value)
    assert check_feasibility(net, np.zeros(3)) == []


def test_kundur_table3():
    sol = solve_pbo(kundur_net(), KUNDUR_P)
    pg, pl = sol.actual(KUNDUR_PG0, KUNDUR_PL0)
    np.testing.assert_allclose(pg, TABLE3_PG, atol=0.5)
    np.testing.assert_allclose(pl, TABLE3_PL, atol=0.5)
    np.testing.assert_allclose(sol.marginal_cost, -sol.lam)
    np.testing.assert_array_equal(sol.omega, 0.0)
    np.testing.assert_array_equal(sol.mu, 0.0)


def test_all_zero():
    sol = solve_pbo(kundur_net(), np.zeros(4))
    assert sol.objective == 0.0
    np.testing.assert_array_equal(np.r_[sol.pg, sol.pl, sol.lam], 0.0)


@given(seeds)
@settings(max_examples=60, deadline=None)
def test_matches_projected_gradient(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng)
    lo, hi = net.pg_min - net.pl_max, net.pg_max - net.pl_min
    p = rng.uniform(lo, hi) * rng.choice([0.3, 1.0])
    sol = solve_pbo(net, p)
    for j, a in enumerate(net.areas):
        g, l = projected_gradient_node(p[j], a)
        assert sol.pg[j] == pytest.approx(g, abs=1e-7)
        assert sol.pl[j] == pytest.approx(l, abs=1e-7)
    assert sol.kkt.passes(1e-9)
    objective = sum(node_objective(sol.pg[j], sol.pl[j], a) for j, a in enumerate(net.areas))
    assert sol.objective == pytest.approx(objective)


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_interior_closed_form(seed):
    rng = np.random.default_rng(seed)
    a = random_network(rng, n=2).areas[0]
    bound = min(-a.pg_min, a.pg_max, -a.pl_min, a.pl_max)
    p = rng.uniform(-0.9, 0.9) * bound
    g, l, lam = solve_pbo_node(p, a)
    assert g == pytest.approx(a.beta * p / (a.alpha + a.beta), abs=1e-9)
    assert l == pytest.approx(-a.alpha * p / (a.alpha + a.beta), abs=1e-9)
    assert lam == pytest.approx(-a.alpha * g, abs=1e-9)


def test_scaling_homogeneity(rng):
    net = random_network(rng, n=4)
    p = rng.uniform(net.pg_min - net.pl_max, net.pg_max - net.pl_min)
    scaled = net.with_areas([type(a)(**{**a.__dict__, "alpha": 2 * a.alpha, "beta": 2 * a.beta})
                             for a in net.areas])
    s1, s2 = solve_pbo(net, p), solve_pbo(scaled, p)
    np.testing.assert_allclose(s2.pg, s1.pg, atol=1e-9)
    np.testing.assert_allclose(s2.pl, s1.pl, atol=1e-9)
    np.testing.assert_allclose(s2.lam, 2 * s1.lam, atol=1e-8)


def test_complementarity(rng):
    for _ in range(30):
        net = random_network(rng)
        p = 1.2 * rng.uniform(net.pg_min - net.pl_max, net.pg_max - net.pl_min)
        p = np.clip(p, net.pg_min - net.pl_max, net.pg_max - net.pl_min)
        sol = solve_pbo(net, p)
        for node in sol.kkt.nodes:
            if node.case_g == "interior":
                assert abs(node.stat_g) < 1e-9
            elif node.case_g == "lower":
                assert node.stat_g >= -1e-9
            else:
                assert node.stat_g <= 1e-9


# KKT ----------------------------------------------------------------------

def test_kkt_oracle_passes():
    net = kundur_net()
    sol = solve_pbo(net, KUNDUR_P)
    assert sol.kkt.max_residual() < 1e-9


def test_kkt_table3_point_passes_at_rounding_tolerance():
    net = kundur_net()
    pg = TABLE3_PG - KUNDUR_PG0
    pl = TABLE3_PL - KUNDUR_PL0
    lam = -net.alpha * pg
    z = np.zeros(4)
    rep = kkt_residuals(z, z, pg, pl, lam, z, net, KUNDUR_P, bound_tol=0.5)
    assert rep.passes(0.5)
    assert not rep.passes(1e-3)


def test_kkt_perturbed_multiplier():
    net = kundur_net()
    sol = solve_pbo(net, KUNDUR_P)
    lam = sol.lam.copy()
    lam[1] += 1.0
    z = np.zeros(4)
    rep = kkt_residuals(z, z, sol.pg, sol.pl, lam, z, net, KUNDUR_P)
    assert rep.nodes[1].stat_g == pytest.approx(1.0, abs=1e-9)
    assert rep.nodes[1].stat_l == pytest.approx(-1.0, abs=1e-9)


def test_kkt_zeroed_multiplier():
    net = kundur_net()
    sol = solve_pbo(net, KUNDUR_P)
    z = np.zeros(4)
    rep = kkt_residuals(z, z, sol.pg, sol.pl, z, z, net, KUNDUR_P)
    for j, node in enumerate(rep.nodes):
        assert abs(node.stat_g) == pytest.approx(abs(net.alpha[j] * sol.pg[j]), rel=1e-12)
    assert not rep.passes(1.0)


def test_kkt_detects_imbalance_and_frequency():
    net = kundur_net()
    sol = solve_pbo(net, KUNDUR_P)
    z = np.zeros(4)
    om = np.array([0.0, 0.5, 0.0, 0.0])
    rep = kkt_residuals(z, om, sol.pg, sol.pl, sol.lam, z, net, KUNDUR_P)
    assert rep.nodes[1].omega_mu == pytest.approx(net.D[1] * 0.5)
    assert rep.nodes[1].network == pytest.approx(-net.D[1] * 0.5)


# uniqueness ----------------------------------------------------------------

def test_uniqueness_kundur():
    rep = check_uniqueness_conditions(kundur_net(), KUNDUR_P)
    assert rep.all_certified and all(rep.strict_a2)


def test_uniqueness_boundary_not_certified():
    a = simple_area()
    net = NetworkModel([(0, 1)], [1.0], [a, a])
    rep = check_uniqueness_conditions(net, np.array([a.pg_max - a.pl_min, 0.0]))
    assert rep.certified == [False, True]
    assert not rep.all_certified


def test_uniqueness_zero():
    net = NetworkModel([(0, 1)], [1.0], [simple_area(), simple_area()])
    assert check_uniqueness_conditions(net, np.zeros(2)).all_certified
