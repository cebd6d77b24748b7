"""Post-hoc certification of simulated trajectories.

Checks that a run settles, that the settled point is the optimum of the
per-node balance problem, that frequency and tie flows are restored, that the
Lyapunov function decreases, and that saturation keeps powers inside their
capacity boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pdcore
from .netmodel import NetworkModel
from .oracle import EquilibriumSolution, kkt_residuals, solve_pbo
from .sim.integrate import OVERSHOOT_WARN, TrajectoryRecord

TAIL_FRACTION = 0.05
MIN_TAIL_SAMPLES = 10
EQUILIBRIUM_TOL = 1e-6
OMEGA_TOL = 1e-6  # rad/s
FLOW_TOL = 1e-3  # MW
LYAPUNOV_RTOL = 1e-7

REACHED, NOT_REACHED, INCONCLUSIVE = "reached", "not_reached", "inconclusive"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


# equilibrium detection -----------------------------------------------------

@dataclass
class EquilibriumResult:
    """Outcome of :func:`detect_equilibrium`.

    ``state`` holds the time-averaged tail values of ``theta_tilde``, ``omega``,
    ``pg``, ``pl``, ``lam`` and ``flows`` (plus ``mu`` when tracked).
    """

    status: str
    residual: float
    drift: float
    tail_samples: int
    state: dict
    p: np.ndarray

    @property
    def reached(self) -> bool:
        return self.status == REACHED

    @property
    def inconclusive(self) -> bool:
        return self.status == INCONCLUSIVE

    def as_dict(self):
        return _jsonable({"status": self.status, "residual": self.residual, "drift": self.drift,
                          "tail_samples": self.tail_samples, "state": self.state, "p": self.p})


_STATE_FIELDS = ("theta_tilde", "omega", "pg", "pl", "lam", "flows")


def detect_equilibrium(record: TrajectoryRecord, tol: float = EQUILIBRIUM_TOL,
                       tail_fraction: float = TAIL_FRACTION,
                       min_samples: int = MIN_TAIL_SAMPLES) -> EquilibriumResult:
    """Decide whether the run has settled over its trailing window.

    Settled means the state derivative stays below ``tol`` (sup norm) and no
    component moves by more than ``tol`` across the window. A window with
    fewer than ``min_samples`` samples yields ``inconclusive``, as does an
    unsettled window whose derivative is still decaying; an unsettled window
    that is not decaying yields ``not_reached``.
    """
    if len(record) == 0:
        raise ValueError("empty trajectory record")
    t = record.times
    start = t[-1] - tail_fraction * (t[-1] - t[0])
    tail = np.flatnonzero(t >= start - 1e-12 * max(1.0, abs(t[-1])))
    names = _STATE_FIELDS + (("mu",) if record.mu is not None else ())
    state = {k: np.mean(getattr(record, k)[tail], axis=0) for k in names}
    p = record.p[-1].copy()
    if len(tail) < min_samples:
        return EquilibriumResult(INCONCLUSIVE, float("nan"), float("nan"), len(tail), state, p)
    residual = float(np.max(record.rhs_norm[tail]))
    drift = 0.0
    for k in _STATE_FIELDS:
        x = getattr(record, k)[tail]
        if x.size:
            drift = max(drift, float(np.max(np.ptp(x, axis=0))))
    changed = np.any(record.segment[tail] != record.segment[tail[-1]])
    if residual < tol and drift < tol and not changed:
        status = REACHED
    else:
        # still converging (residual shrinking across the window) or a disturbance
        # landed inside it: a longer horizon could settle, so the verdict is open
        half = len(tail) // 2
        decaying = np.max(record.rhs_norm[tail[half:]]) < np.max(record.rhs_norm[tail[:half]])
        status = INCONCLUSIVE if (changed or decaying) else NOT_REACHED
    return EquilibriumResult(status, residual, drift, len(tail), state, p)


# optimality ---------------------------------------------------------------

@dataclass
class OptimalitySection:
    """Detected equilibrium against the centralized optimum.

    Power gaps are in MW; the multiplier gap and marginal-cost residual are
    converted to MW by dividing by alpha (or beta), so one tolerance applies.
    """

    oracle: EquilibriumSolution
    gap_pg: float
    gap_pl: float
    gap_lam: float
    kkt_max: float
    omega_max: float
    flow_max: float
    marginal_cost_residual: float
    interior_nodes: list
    tol_mw: float
    tol_omega: float
    tol_flow: float
    kkt: object = field(repr=False)

    @property
    def passed(self) -> bool:
        return (max(self.gap_pg, self.gap_pl, self.gap_lam, self.kkt_max,
                    self.marginal_cost_residual) <= self.tol_mw
                and self.omega_max <= self.tol_omega and self.flow_max <= self.tol_flow)

    def as_dict(self):
        return _jsonable({
            "passed": self.passed, "oracle": self.oracle.as_dict(),
            "gap_pg_mw": self.gap_pg, "gap_pl_mw": self.gap_pl, "gap_lambda_mw": self.gap_lam,
            "kkt_max_residual": self.kkt_max, "omega_max": self.omega_max,
            "flow_max": self.flow_max, "marginal_cost_residual": self.marginal_cost_residual,
            "interior_nodes": self.interior_nodes, "tol_mw": self.tol_mw,
            "tol_omega": self.tol_omega, "tol_flow": self.tol_flow,
            "kkt_nodes": self.kkt.as_dict()["nodes"],
        })


def _theta_from_differences(theta_tilde, net: NetworkModel) -> np.ndarray:
    """Node angles (reference node at 0) whose edge differences best match theta_tilde."""
    n = net.node_count
    if net.edge_count == 0:
        return np.zeros(n)
    Ct = net.C.T[:, 1:]
    sol, *_ = np.linalg.lstsq(Ct, np.asarray(theta_tilde, float), rcond=None)
    return np.r_[0.0, sol]


def certify_optimality(eq_state: dict, net: NetworkModel, p, tol_mw: float = 1e-3,
                       tol_omega: float = OMEGA_TOL, tol_flow: float = FLOW_TOL,
                       ) -> OptimalitySection:
    """Compare a settled state with :func:`oracle.solve_pbo` and check its KKT conditions.

    ``eq_state`` needs ``pg``, ``pl``, ``lam`` and ``omega``; ``theta_tilde``
    (or ``flows``) defaults to zero. The shadow multiplier is taken as
    ``mu = omega``. Raises :class:`oracle.InfeasibleError` when the disturbance
    violates A2.
    """
    p = np.asarray(p, dtype=float)
    sol = solve_pbo(net, p)
    pg, pl, lam, om = (np.asarray(eq_state[k], dtype=float) for k in ("pg", "pl", "lam", "omega"))
    if "theta_tilde" in eq_state:
        th_t = np.asarray(eq_state["theta_tilde"], dtype=float)
    elif "flows" in eq_state:
        th_t = np.asarray(eq_state["flows"], dtype=float) / net.B
    else:
        th_t = np.zeros(net.edge_count)
    theta = _theta_from_differences(th_t, net)
    kkt = kkt_residuals(theta, om, pg, pl, lam, om, net, p, bound_tol=tol_mw)
    interior = [j for j in range(net.node_count)
                if net.pg_min[j] + tol_mw < pg[j] < net.pg_max[j] - tol_mw
                and net.pl_min[j] + tol_mw < pl[j] < net.pl_max[j] - tol_mw]
    mc = 0.0
    for j in interior:
        mc = max(mc, abs(pg[j] + lam[j] / net.alpha[j]), abs(pl[j] - lam[j] / net.beta[j]))
    flows = net.B * th_t
    return OptimalitySection(
        oracle=sol,
        gap_pg=float(np.max(np.abs(pg - sol.pg))),
        gap_pl=float(np.max(np.abs(pl - sol.pl))),
        gap_lam=float(np.max(np.abs(lam - sol.lam) / net.alpha)),
        kkt_max=kkt.max_residual(),
        omega_max=float(np.max(np.abs(om))),
        flow_max=float(np.max(np.abs(flows), initial=0.0)),
        marginal_cost_residual=float(mc),
        interior_nodes=interior,
        tol_mw=tol_mw, tol_omega=tol_omega, tol_flow=tol_flow, kkt=kkt,
    )


@dataclass
class ReferenceSection:
    """Settled actual-value powers against a published reference point."""

    pg_actual: np.ndarray
    pl_actual: np.ndarray
    reference_pg: np.ndarray
    reference_pl: np.ndarray
    tolerance_mw: float

    @property
    def gap(self) -> float:
        return float(max(np.max(np.abs(self.pg_actual - self.reference_pg)),
                         np.max(np.abs(self.pl_actual - self.reference_pl))))

    @property
    def passed(self) -> bool:
        return self.gap <= self.tolerance_mw

    def as_dict(self):
        return _jsonable({"passed": self.passed, "gap_mw": self.gap,
                          "pg_actual": self.pg_actual, "pl_actual": self.pl_actual,
                          "reference_pg": self.reference_pg, "reference_pl": self.reference_pl,
                          "tolerance_mw": self.tolerance_mw})


def compare_reference(eq_state: dict, initial_pg, initial_pl, reference) -> ReferenceSection:
    return ReferenceSection(
        np.asarray(eq_state["pg"]) + initial_pg, np.asarray(eq_state["pl"]) + initial_pl,
        np.asarray(reference.pg_actual, float), np.asarray(reference.pl_actual, float),
        reference.tolerance_mw)


# Lyapunov descent ----------------------------------------------------------

@dataclass
class LyapunovSection:
    """V1 monotonicity along a record.

    ``violations`` counts sample pairs where V1 grows by more than
    ``rtol * (1 + |V1|)``; ``dissipation_violations`` counts pairs where the
    decrease is smaller than the accumulated dissipation by more than the same
    tolerance. Pairs straddling a disturbance change are skipped because the
    reference equilibrium changes there.
    """

    violations: int
    worst: float
    dissipation_violations: int
    dissipation_worst: float
    pairs: int
    v1_at_equilibrium: float
    applicable: bool
    source: str = "scenario"

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.dissipation_violations == 0

    def as_dict(self):
        return _jsonable({"passed": self.passed, "violations": self.violations,
                          "worst": self.worst, "dissipation_violations": self.dissipation_violations,
                          "dissipation_worst": self.dissipation_worst, "pairs": self.pairs,
                          "v1_at_equilibrium": self.v1_at_equilibrium,
                          "certificate_applicable": self.applicable, "source": self.source})


def lyapunov_series(record: TrajectoryRecord, net: NetworkModel, gains: pdcore.GainMatrix,
                    w_star=None) -> np.ndarray:
    """V1 at every sample; NaN where the segment has no reference equilibrium.

    With ``w_star`` given, only samples whose disturbance equals the final one
    are evaluated (against ``w_star``).
    """
    V = np.full(len(record), np.nan)
    for k in range(len(record)):
        p = record.p[k]
        if w_star is not None:
            if not np.array_equal(p, record.p[-1]):
                continue
            ref = w_star
        else:
            seg = record.segment[k]
            ref = record.references[seg]["w_star"] if record.references else None
            if ref is None:
                continue
        V[k] = pdcore.lyapunov_V1(record.augmented(k), ref, net, p, gains, check=False)
    return V


def check_lyapunov_descent(record: TrajectoryRecord, net: NetworkModel,
                           w_star=None, gains: pdcore.GainMatrix | None = None,
                           rtol: float = LYAPUNOV_RTOL) -> LyapunovSection:
    """Count V1 increases and dissipation-bound breaches between consecutive samples.

    ``w_star`` (if given) must be a fixed point for the final disturbance;
    otherwise each segment uses the record's oracle reference.
    """
    if gains is None:
        gains = pdcore.GainMatrix.from_network(net)
    if w_star is not None:
        res = pdcore.fixed_point_residual(w_star, net, record.p[-1])
        if res >= pdcore.EQUILIBRIUM_TOL:
            raise ValueError(f"w_star is not an equilibrium: residual {res:.3e}")
    if w_star is None and record.V1 is not None and gains.k == pdcore.GainMatrix.from_network(net).k:
        V = record.V1
    else:
        V = lyapunov_series(record, net, gains, w_star)
    same = (record.segment[1:] == record.segment[:-1]) & np.isfinite(V[1:]) & np.isfinite(V[:-1])
    dV = np.diff(V)
    tol = rtol * (1.0 + np.abs(V[:-1]))
    excess = np.where(same, dV - tol, -np.inf)
    dq = np.diff(record.dissipated)
    dexcess = np.where(same, dV + dq - tol, -np.inf)
    ref = w_star
    if ref is None and record.references:
        ref = record.references[-1]["w_star"]
    v_eq = (pdcore.lyapunov_V1(ref, ref, net, record.p[-1], gains, check=False)
            if ref is not None else float("nan"))
    return LyapunovSection(
        violations=int(np.sum(excess > 0)),
        worst=float(max(0.0, np.max(excess, initial=-np.inf))),
        dissipation_violations=int(np.sum(dexcess > 0)),
        dissipation_worst=float(max(0.0, np.max(dexcess, initial=-np.inf))),
        pairs=int(np.sum(same)),
        v1_at_equilibrium=float(v_eq),
        applicable=bool(net.prescribed_gains),
    )


# saturation comparison -----------------------------------------------------

class MismatchError(ValueError):
    """Records do not come from the same scenario."""


@dataclass
class SaturationSection:
    saturated_excursion: float
    saturated_overshoot: float
    unsaturated_excursion: float
    endpoint_gap: float
    trajectory_gap: float
    saturated_endpoint: dict
    unsaturated_endpoint: dict
    tol_mw: float

    @property
    def unsaturated_violates(self) -> bool:
        return self.unsaturated_excursion > 0.0

    @property
    def passed(self) -> bool:
        return (self.saturated_excursion == 0.0 and self.saturated_overshoot <= OVERSHOOT_WARN
                and self.endpoint_gap < self.tol_mw)

    def as_dict(self):
        return _jsonable({
            "passed": self.passed, "saturated_excursion_mw": self.saturated_excursion,
            "saturated_max_overshoot_rel": self.saturated_overshoot,
            "unsaturated_excursion_mw": self.unsaturated_excursion,
            "unsaturated_violates": self.unsaturated_violates,
            "endpoint_gap_mw": self.endpoint_gap, "trajectory_gap": self.trajectory_gap,
            "saturated_endpoint": self.saturated_endpoint,
            "unsaturated_endpoint": self.unsaturated_endpoint, "tol_mw": self.tol_mw})


def compare_saturation(record_sat: TrajectoryRecord, record_unsat: TrajectoryRecord,
                       net: NetworkModel | None = None, tol_mw: float = 0.5) -> SaturationSection:
    """Transient excursions outside the capacity box for a saturated and an unsaturated run."""
    if record_sat.mode == "unsaturated" or record_unsat.mode != "unsaturated":
        raise MismatchError("expected one saturated and one unsaturated record, in that order")
    if (len(record_sat) != len(record_unsat)
            or not np.array_equal(record_sat.times, record_unsat.times)
            or not np.array_equal(record_sat.p, record_unsat.p)
            or record_sat.edges != record_unsat.edges):
        raise MismatchError("records differ in sampling, network or disturbance schedule")
    if net is not None and net.node_count != record_sat.omega.shape[1]:
        raise MismatchError("network does not match the records")

    def endpoint(r):
        return {"pg": r.pg[-1].copy(), "pl": r.pl[-1].copy()}

    gap = max(float(np.max(np.abs(record_sat.pg[-1] - record_unsat.pg[-1]))),
              float(np.max(np.abs(record_sat.pl[-1] - record_unsat.pl[-1]))))
    traj = max(float(np.max(np.abs(getattr(record_sat, k) - getattr(record_unsat, k))))
               for k in ("omega", "pg", "pl", "lam"))
    return SaturationSection(
        saturated_excursion=float(np.max(record_sat.excursion)),
        saturated_overshoot=float(record_sat.max_overshoot),
        unsaturated_excursion=float(np.max(record_unsat.excursion)),
        endpoint_gap=gap, trajectory_gap=traj,
        saturated_endpoint=endpoint(record_sat), unsaturated_endpoint=endpoint(record_unsat),
        tol_mw=tol_mw)


# aggregate report ----------------------------------------------------------

PASS, FAIL = "pass", "fail"


@dataclass
class CertificationReport:
    """Everything the ``verify`` command reports; ``status`` is pass, fail or inconclusive."""

    equilibrium: EquilibriumResult
    optimality: OptimalitySection | None = None
    reference: ReferenceSection | None = None
    lyapunov: LyapunovSection | None = None
    saturation: SaturationSection | None = None
    max_overshoot: float = 0.0
    mu_gap: float | None = None
    formulation_gap: float | None = None
    notes: list = field(default_factory=list)

    @property
    def status(self) -> str:
        if self.equilibrium.inconclusive:
            return INCONCLUSIVE
        checks = [self.equilibrium.reached, self.max_overshoot <= OVERSHOOT_WARN]
        for sec in (self.optimality, self.reference, self.lyapunov, self.saturation):
            if sec is self.lyapunov and sec is not None and not sec.applicable:
                continue
            if sec is not None:
                checks.append(sec.passed)
        return PASS if all(checks) else FAIL

    def as_dict(self):
        eq = self.equilibrium
        out = {
            "status": self.status,
            "equilibrium": eq.as_dict(),
            "frequency_restoration": float(np.max(np.abs(eq.state["omega"]))),
            "tie_flow_restoration": float(np.max(np.abs(eq.state["flows"]), initial=0.0)),
            "max_overshoot_rel": self.max_overshoot,
            "mu_omega_gap": self.mu_gap,
            "formulation_gap": self.formulation_gap,
            "notes": list(self.notes),
        }
        for name in ("optimality", "reference", "lyapunov", "saturation"):
            sec = getattr(self, name)
            out[name] = sec.as_dict() if sec is not None else None
        return _jsonable(out)


def certify(record: TrajectoryRecord, net: NetworkModel, tol_mw: float = 1e-3,
            reference=None, tol: float = EQUILIBRIUM_TOL,
            lyapunov_record: TrajectoryRecord | None = None,
            lyapunov_net: NetworkModel | None = None) -> CertificationReport:
    """Run detection, optimality, reference and Lyapunov checks on one record.

    ``lyapunov_record``/``lyapunov_net`` substitute a separate run (e.g. the
    same scenario at prescribed gains) for the descent check.
    """
    eq = detect_equilibrium(record, tol)
    report = CertificationReport(equilibrium=eq, max_overshoot=record.max_overshoot,
                                 formulation_gap=record.formulation_gap)
    if record.mu is not None:
        report.mu_gap = float(np.max(np.abs(record.mu - record.omega)))
    if eq.reached:
        report.optimality = certify_optimality(eq.state, net, eq.p, tol_mw)
        if reference is not None:
            report.reference = compare_reference(eq.state, record.initial_pg_actual,
                                                 record.initial_pl_actual, reference)
    lrec = lyapunov_record if lyapunov_record is not None else record
    lnet = lyapunov_net if lyapunov_net is not None else net
    report.lyapunov = check_lyapunov_descent(lrec, lnet)
    if lyapunov_record is not None:
        report.lyapunov.source = "prescribed-gain companion run"
    if not report.lyapunov.applicable:
        report.notes.append("controller gains differ from 1/Tg, 1/Tl: the V1 descent "
                            "certificate does not apply to this run")
    return report
