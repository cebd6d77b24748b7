import dataclasses
import json

import numpy as np
import pytest

from freqctl import analysis, pdcore
from freqctl.oracle import InfeasibleError, solve_pbo
from freqctl.sim import integrate
from freqctl.sim.scenario import Reference, apply_overrides, scenario_from_dict

from conftest import small_scenario_dict

SETTLING = {"integrator.horizon": 20.0, "areas.*.M": 0.2, "areas.*.gamma_lambda": 20.0,
            "gains": 16}
SATURATING = [{"t": 0.5, "node": 0, "delta_mw": 95.0}, {"t": 0.5, "node": 2, "delta_mw": -75.0},
              {"t": 0.5, "node": 1, "delta_mw": 60.0}]
# interior optimum, but the unsaturated transient leaves the capacity box
TRANSIENT = [{"t": 0.5, "node": 0, "delta_mw": 50.0}, {"t": 0.5, "node": 2, "delta_mw": -40.0},
             {"t": 0.5, "node": 1, "delta_mw": 30.0}]


def scenario(disturbances=None, **ov):
    data = small_scenario_dict()
    if disturbances is not None:
        data["disturbances"] = disturbances
    return scenario_from_dict(apply_overrides(data, ov))


@pytest.fixture(scope="module")
def settled():
    sc = scenario(**SETTLING)
    return sc, integrate(sc)


# equilibrium detection -------------------------------------------------------

def test_zero_trajectory_is_equilibrium():
    rec = integrate(scenario(disturbances=[], **{"integrator.horizon": 20.0}))
    eq = analysis.detect_equilibrium(rec)
    assert eq.reached and eq.residual == 0.0
    for v in eq.state.values():
        assert np.all(v == 0.0)


def test_settled_run_detected(settled):
    sc, rec = settled
    eq = analysis.detect_equilibrium(rec)
    assert eq.reached
    assert eq.residual < 1e-6 and eq.drift < 1e-6
    np.testing.assert_array_equal(eq.p, sc.final_disturbance())


def test_truncated_run_not_certified():
    sc = scenario(**{**SETTLING, "integrator.horizon": 1.0})
    eq = analysis.detect_equilibrium(integrate(sc))
    assert not eq.reached


def test_short_tail_inconclusive(settled):
    _, rec = settled
    eq = analysis.detect_equilibrium(rec, tail_fraction=0.001)
    assert eq.inconclusive and eq.status == analysis.INCONCLUSIVE


def test_empty_record_rejected(settled):
    _, rec = settled
    empty = dataclasses.replace(rec, times=rec.times[:0])
    with pytest.raises(ValueError):
        analysis.detect_equilibrium(empty)


# optimality --------------------------------------------------------------------

def oracle_state(net, p):
    sol = solve_pbo(net, p)
    return {"pg": sol.pg, "pl": sol.pl, "lam": sol.lam, "omega": sol.omega,
            "theta_tilde": np.zeros(net.edge_count)}


def test_certify_oracle_output_passes(settled):
    sc, _ = settled
    p = sc.final_disturbance()
    sec = analysis.certify_optimality(oracle_state(sc.network, p), sc.network, p, tol_mw=1e-9)
    assert sec.passed
    assert sec.interior_nodes == [0, 1, 2]


def test_certify_zero_scenario():
    sc = scenario(disturbances=[], **{"integrator.horizon": 20.0})
    eq = analysis.detect_equilibrium(integrate(sc))
    assert eq.reached
    assert analysis.certify_optimality(eq.state, sc.network, eq.p, tol_mw=1e-9).passed


def test_certify_settled_run(settled):
    sc, rec = settled
    eq = analysis.detect_equilibrium(rec)
    sec = analysis.certify_optimality(eq.state, sc.network, eq.p, tol_mw=1e-3)
    assert sec.passed
    assert sec.gap_pg < 1e-3 and sec.omega_max < 1e-6 and sec.flow_max < 1e-3


def test_zeroed_multiplier_fails_at_every_disturbed_node(settled):
    sc, _ = settled
    net, p = sc.network, sc.final_disturbance()
    state = oracle_state(net, p)
    state["lam"] = np.zeros(3)
    sec = analysis.certify_optimality(state, net, p, tol_mw=1e-3)
    assert not sec.passed
    for j in np.flatnonzero(p):
        assert abs(sec.kkt.nodes[j].stat_g) == pytest.approx(abs(net.alpha[j] * state["pg"][j]))


def test_certify_detects_residual_frequency(settled):
    sc, _ = settled
    p = sc.final_disturbance()
    state = oracle_state(sc.network, p)
    state["omega"] = np.array([0.0, 1e-3, 0.0])
    assert not analysis.certify_optimality(state, sc.network, p).passed


def test_certify_infeasible_raises(settled):
    sc, _ = settled
    p = np.array([1e4, 0.0, 0.0])
    with pytest.raises(InfeasibleError, match="A2"):
        analysis.certify_optimality(oracle_state(sc.network, np.zeros(3)), sc.network, p)


def test_reference_comparison(settled):
    sc, rec = settled
    eq = analysis.detect_equilibrium(rec)
    pg_act = eq.state["pg"] + sc.initial_pg_actual
    pl_act = eq.state["pl"] + sc.initial_pl_actual
    ok = analysis.compare_reference(eq.state, sc.initial_pg_actual, sc.initial_pl_actual,
                                    Reference(tuple(pg_act + 0.3), tuple(pl_act), 0.5))
    assert ok.passed and ok.gap == pytest.approx(0.3)
    bad = analysis.compare_reference(eq.state, sc.initial_pg_actual, sc.initial_pl_actual,
                                     Reference(tuple(pg_act), tuple(pl_act - 0.6), 0.5))
    assert not bad.passed


# Lyapunov ----------------------------------------------------------------------

def test_descent_along_prescribed_gain_run():
    sc = scenario(disturbances=SATURATING)
    rec = integrate(sc)
    sec = analysis.check_lyapunov_descent(rec, sc.network)
    assert sec.applicable and sec.passed
    assert sec.violations == 0 and sec.dissipation_violations == 0
    assert abs(sec.v1_at_equilibrium) < 1e-9


def test_descent_with_explicit_w_star():
    sc = scenario(disturbances=SATURATING)
    rec = integrate(sc)
    sol = solve_pbo(sc.network, sc.final_disturbance())
    ws = pdcore.equilibrium_vector(sc.network, sol.pg, sol.pl, sol.lam)
    sec = analysis.check_lyapunov_descent(rec, sc.network, w_star=ws)
    assert sec.passed and sec.pairs > 0
    bad = ws.copy()
    bad[pdcore.Layout.of(sc.network).lam] += 1.0
    with pytest.raises(ValueError):
        analysis.check_lyapunov_descent(rec, sc.network, w_star=bad)


def test_constant_equilibrium_trajectory():
    rec = integrate(scenario(disturbances=[]))
    sec = analysis.check_lyapunov_descent(rec, scenario().network)
    assert sec.passed and np.all(rec.V1 == 0.0)


def test_time_reversed_trajectory_flagged():
    sc = scenario(disturbances=[{"t": 0.0, "node": 0, "delta_mw": 30.0}])
    rec = integrate(sc)
    rev = dataclasses.replace(
        rec, **{k: getattr(rec, k)[::-1].copy()
                for k in ("theta_tilde", "omega", "pg", "pl", "lam", "V1")},
        dissipated=rec.dissipated[-1] - rec.dissipated[::-1])
    sec = analysis.check_lyapunov_descent(rev, sc.network)
    assert sec.violations > 0 and sec.worst > 0
    sec2 = analysis.check_lyapunov_descent(dataclasses.replace(rev, V1=None), sc.network)
    assert sec2.violations == sec.violations


def test_non_prescribed_gains_flagged(settled):
    sc, rec = settled
    sec = analysis.check_lyapunov_descent(rec, sc.network)
    assert not sec.applicable


# saturation comparison ---------------------------------------------------------

def test_compare_saturation_transient_violation():
    sat = integrate(scenario(disturbances=TRANSIENT, **SETTLING))
    uns = integrate(scenario(disturbances=TRANSIENT, mode="unsaturated", **SETTLING))
    sec = analysis.compare_saturation(sat, uns)
    assert sec.saturated_excursion == 0.0 and sec.unsaturated_violates
    assert sec.endpoint_gap < 0.5 and sec.passed


def test_compare_saturation_boundary_optimum_differs():
    """With the optimum on a limit the unsaturated run settles elsewhere."""
    sat = integrate(scenario(disturbances=SATURATING, **SETTLING))
    uns = integrate(scenario(disturbances=SATURATING, mode="unsaturated", **SETTLING))
    sec = analysis.compare_saturation(sat, uns)
    assert sec.saturated_excursion == 0.0
    assert sec.endpoint_gap > 0.5 and not sec.passed


def test_compare_saturation_zero_identical():
    sat = integrate(scenario(disturbances=[]))
    uns = integrate(scenario(disturbances=[], mode="unsaturated"))
    sec = analysis.compare_saturation(sat, uns)
    assert sec.trajectory_gap == 0.0 and sec.unsaturated_excursion == 0.0


def clamp_margin(rec, net):
    """Smallest distance of the sampled clamp arguments to the capacity limits."""
    arg_g = rec.pg - net.gamma_g * (net.alpha * rec.pg + rec.omega + rec.lam)
    arg_l = rec.pl - net.gamma_l * (net.beta * rec.pl - rec.omega - rec.lam)
    return min(np.min(net.pg_max - arg_g), np.min(arg_g - net.pg_min),
               np.min(net.pl_max - arg_l), np.min(arg_l - net.pl_min))


def test_compare_saturation_no_clamp_identical():
    """Bisect for a step whose clamp arguments stay inside the box; both runs then coincide."""
    net = scenario().network

    def runs(size):
        dist = [{"t": 0.5, "node": 0, "delta_mw": size}]
        return (integrate(scenario(disturbances=dist), with_v1=False),
                integrate(scenario(disturbances=dist, mode="unsaturated"), with_v1=False))

    lo, hi = 0.0, 100.0
    for _ in range(10):
        mid = 0.5 * (lo + hi)
        if clamp_margin(runs(mid)[1], net) > 0:
            lo = mid
        else:
            hi = mid
    sat, uns = runs(0.5 * lo)
    assert lo > 1.0 and clamp_margin(uns, net) > 0
    assert analysis.compare_saturation(sat, uns).trajectory_gap < 1e-9


def test_compare_saturation_rejects_mismatch():
    a = integrate(scenario())
    b = integrate(scenario(mode="unsaturated", **{"integrator.horizon": 4.0}))
    with pytest.raises(analysis.MismatchError):
        analysis.compare_saturation(a, b)
    with pytest.raises(analysis.MismatchError):
        analysis.compare_saturation(a, a)


# full report -------------------------------------------------------------------

def test_certification_report(settled):
    sc, rec = settled
    companion = integrate(scenario(**{**SETTLING, "gains": "prescribed"}))
    rep = analysis.certify(rec, sc.network, lyapunov_record=companion,
                           lyapunov_net=scenario(gains="prescribed").network)
    assert rep.status == analysis.PASS
    doc = json.loads(json.dumps(rep.as_dict()))
    for key in ("frequency_restoration", "tie_flow_restoration", "max_overshoot_rel"):
        assert doc[key] >= 0
    assert doc["lyapunov"]["source"] == "prescribed-gain companion run"
    assert doc["optimality"]["passed"]


def test_certification_report_mu_gap():
    sc = scenario(track_mu=True, **{k: v for k, v in SETTLING.items() if k != "gains"})
    rep = analysis.certify(integrate(sc), sc.network)
    assert rep.mu_gap is not None and rep.mu_gap < 1e-8
