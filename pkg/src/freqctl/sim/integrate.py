"""Fixed-step RK4 integration of the closed loop in physical or projected form."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import pdcore
from ..controller import (BackwardDifference, control_law, lambda_rhs_ideal,
                          lambda_rhs_measured, mu_rhs)
from ..netmodel import NetworkModel
from ..oracle import InfeasibleError, solve_pbo
from ..plant import PlantState, plant_rhs
from .scenario import Scenario

log = logging.getLogger(__name__)

OVERSHOOT_WARN = 1e-6  # relative to box width


class IntegrationError(RuntimeError):
    """Non-finite state during integration."""

    def __init__(self, t, component):
        self.t, self.component = t, component
        super().__init__(f"integration blew up at t={t:.6g} s in component {component}")


@dataclass
class TrajectoryRecord:
    """Sampled closed-loop trajectory in deviation coordinates.

    Per-sample arrays have the sample index first. ``theta`` is None for the
    projected formulation, which only carries the edge angle differences.
    ``overshoot`` is the largest pre-clamp excursion (relative to box width)
    over the steps since the previous sample; ``excursion`` is the distance in
    MW of (Pg, Pl) outside the capacity box at the sample itself.
    """

    times: np.ndarray
    theta_tilde: np.ndarray
    omega: np.ndarray
    pg: np.ndarray
    pl: np.ndarray
    lam: np.ndarray
    flows: np.ndarray
    p: np.ndarray
    segment: np.ndarray
    rhs_norm: np.ndarray
    dissipated: np.ndarray
    overshoot: np.ndarray
    excursion: np.ndarray
    lambda_residual: np.ndarray
    node_names: tuple
    edges: tuple
    initial_pg_actual: np.ndarray
    initial_pl_actual: np.ndarray
    mode: str
    formulation: str
    h: float
    theta: np.ndarray | None = None
    mu: np.ndarray | None = None
    V1: np.ndarray | None = None
    references: list = field(default_factory=list)
    max_overshoot: float = 0.0
    overshoot_warnings: int = 0
    prescribed_gains: bool = True
    formulation_gap: float | None = None
    companion: "TrajectoryRecord | None" = None

    def __len__(self):
        return len(self.times)

    def augmented(self, k: int) -> np.ndarray:
        """Flat augmented state w at sample k."""
        return np.concatenate([self.theta_tilde[k], self.omega[k], self.pg[k],
                               self.pl[k], self.lam[k]])

    def final_state(self) -> dict:
        return {name: getattr(self, name)[-1].copy()
                for name in ("theta_tilde", "omega", "pg", "pl", "lam", "flows")}


def apply_step_guard(pg, pl, net: NetworkModel):
    """Clamp (Pg, Pl) onto the capacity box after a step.

    Returns the clamped arrays and the largest pre-clamp overshoot relative
    to the box width (0 if inside).
    """
    over_g = np.maximum(pg - net.pg_max, net.pg_min - pg)
    over_l = np.maximum(pl - net.pl_max, net.pl_min - pl)
    rel = max(0.0, float(np.max(over_g / (net.pg_max - net.pg_min))),
              float(np.max(over_l / (net.pl_max - net.pl_min))))
    if rel > 0.0:
        pg = np.clip(pg, net.pg_min, net.pg_max)
        pl = np.clip(pl, net.pl_min, net.pl_max)
    return pg, pl, rel


def _dissipation(om_dot, pg_dot, pl_dot, net):
    return om_dot @ (net.D * om_dot) + pg_dot @ (net.alpha * pg_dot) + pl_dot @ (net.beta * pl_dot)


class _Physical:
    """Closed loop plant + controller on y = (theta, omega, Pg, Pl, lam[, mu], q)."""

    def __init__(self, sc: Scenario):
        self.net = net = sc.network
        n = net.node_count
        self.n = n
        self.saturated = sc.saturated
        self.ideal = sc.mode == "ideal"
        self.track_mu = sc.track_mu
        self.estimator = (BackwardDifference(n, sc.h)
                          if sc.omega_dot_estimator == "backward" and not self.ideal else None)
        self.size = 5 * n + (n if sc.track_mu else 0) + 1
        self.labels = ([f"theta_{j}" for j in range(n)] + [f"omega_{j}" for j in range(n)]
                       + [f"pg_{j}" for j in range(n)] + [f"pl_{j}" for j in range(n)]
                       + [f"lambda_{j}" for j in range(n)]
                       + ([f"mu_{j}" for j in range(n)] if sc.track_mu else []) + ["dissipated"])

    def split(self, y):
        n = self.n
        return (y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:4 * n], y[4 * n:5 * n])

    def rhs(self, y, p):
        net, n = self.net, self.n
        th, om, pg, pl, lam = self.split(y)
        state = PlantState(th, om, pg, pl)
        d = plant_rhs(state, control_law(state, lam, net, self.saturated), net, p)
        if self.ideal:
            lam_dot = lambda_rhs_ideal(state, p, net)
        else:
            flows = net.B * (th[net.edge_from] - th[net.edge_to])
            om_dot = d.omega if self.estimator is None else self.estimator.estimate
            lam_dot = lambda_rhs_measured(om, om_dot, flows, net)
        out = np.empty(self.size)
        out[:n], out[n:2 * n], out[2 * n:3 * n], out[3 * n:4 * n] = d.theta, d.omega, d.pg, d.pl
        out[4 * n:5 * n] = lam_dot
        if self.track_mu:
            out[5 * n:6 * n] = mu_rhs(state, p, net)
        out[-1] = _dissipation(d.omega, d.pg, d.pl, net)
        return out

    def lambda_residual(self, y, p):
        """Measured-form minus ideal-form multiplier rate at y."""
        net = self.net
        th, om, pg, pl, lam = self.split(y)
        state = PlantState(th, om, pg, pl)
        d = plant_rhs(state, control_law(state, lam, net, self.saturated), net, p)
        flows = net.B * (th[net.edge_from] - th[net.edge_to])
        om_dot = d.omega if self.estimator is None else self.estimator.estimate
        return lambda_rhs_measured(om, om_dot, flows, net) - lambda_rhs_ideal(state, p, net)

    def guard(self, y):
        n = self.n
        pg, pl, rel = apply_step_guard(y[2 * n:3 * n], y[3 * n:4 * n], self.net)
        if rel > 0:
            y[2 * n:3 * n], y[3 * n:4 * n] = pg, pl
        return rel

    def start_step(self, y):
        if self.estimator is not None:
            self.estimator.update(y[self.n:2 * self.n])

    def augmented(self, y):
        net = self.net
        th, om, pg, pl, lam = self.split(y)
        return np.concatenate([th[net.edge_from] - th[net.edge_to], om, pg, pl, lam])


class _Projected:
    """Gamma (H(w) - w) on y = (w, q)."""

    def __init__(self, sc: Scenario):
        self.net = net = sc.network
        self.layout = pdcore.Layout.of(net)
        self.gains = pdcore.GainMatrix.from_network(net)
        self.size = self.layout.size + 1
        self.saturated = True
        self.track_mu = False
        L = self.layout
        self.labels = ([f"theta_tilde_{e}" for e in range(L.m)]
                       + [f"{k}_{j}" for k in ("omega", "pg", "pl", "lambda")
                          for j in range(L.n)] + ["dissipated"])

    def rhs(self, y, p):
        L, net = self.layout, self.net
        wd = pdcore.closed_loop_rhs(y[:-1], net, p, self.gains)
        out = np.empty(self.size)
        out[:-1] = wd
        out[-1] = _dissipation(wd[L.omega], wd[L.pg], wd[L.pl], net)
        return out

    def lambda_residual(self, y, p):
        return np.zeros(self.layout.n)

    def guard(self, y):
        L = self.layout
        pg, pl, rel = apply_step_guard(y[L.pg], y[L.pl], self.net)
        if rel > 0:
            y[L.pg], y[L.pl] = pg, pl
        return rel

    def start_step(self, y):
        pass

    def augmented(self, y):
        return y[:-1]


def _references(sc: Scenario):
    """Oracle equilibrium (as augmented vector) for every distinct disturbance segment."""
    net = sc.network
    boundaries = sorted({sc.step_index(d.t) for d in sc.disturbances if sc.step_index(d.t) > 0})
    starts = [0] + boundaries
    refs = []
    for s in starts:
        p = sc.disturbance_at_step(s)
        try:
            sol = solve_pbo(net, p)
            w_star = pdcore.equilibrium_vector(net, sol.pg, sol.pl, sol.lam)
        except InfeasibleError:
            sol, w_star = None, None
        refs.append({"start_step": s, "p": p, "solution": sol, "w_star": w_star})
    return refs


def _run(sc: Scenario, system, with_v1: bool = True) -> TrajectoryRecord:
    net = sc.network
    n, m = net.node_count, net.edge_count
    h = sc.h
    steps, every = sc.steps, sc.sample_every
    sample_steps = list(range(0, steps + 1, every))
    if sample_steps[-1] != steps:
        sample_steps.append(steps)
    K = len(sample_steps)

    refs = _references(sc)
    gains = pdcore.GainMatrix.from_network(net)
    starts = [r["start_step"] for r in refs]

    rec = {name: np.zeros((K, n)) for name in ("omega", "pg", "pl", "lam", "p", "lambda_residual")}
    rec["theta_tilde"] = np.zeros((K, m))
    rec["theta"] = np.zeros((K, n)) if isinstance(system, _Physical) else None
    rec["mu"] = np.zeros((K, n)) if system.track_mu else None
    times = np.array(sample_steps, dtype=float) * h
    segment = np.zeros(K, dtype=int)
    rhs_norm = np.zeros(K)
    dissipated = np.zeros(K)
    overshoot = np.zeros(K)
    excursion = np.zeros(K)
    V1 = np.full(K, np.nan) if with_v1 else None

    y = np.zeros(system.size)
    max_over, warnings_count, interval_over = 0.0, 0, 0.0
    sample_pos = 0

    def record(k_step, idx):
        nonlocal interval_over
        p = sc.disturbance_at_step(k_step)
        seg = int(np.searchsorted(starts, k_step, side="right") - 1)
        w = system.augmented(y)
        L = pdcore.Layout.of(net)
        rec["theta_tilde"][idx] = w[L.theta]
        rec["omega"][idx], rec["pg"][idx], rec["pl"][idx], rec["lam"][idx] = (
            w[L.omega], w[L.pg], w[L.pl], w[L.lam])
        if rec["theta"] is not None:
            rec["theta"][idx] = y[:n] - y[0]
        if rec["mu"] is not None:
            rec["mu"][idx] = y[5 * n:6 * n]
        rec["p"][idx] = p
        segment[idx] = seg
        d = system.rhs(y, p)
        wd = (system.augmented(d) if isinstance(system, _Physical) else d[:-1])
        rhs_norm[idx] = float(np.max(np.abs(wd)))
        rec["lambda_residual"][idx] = system.lambda_residual(y, p)
        dissipated[idx] = y[-1]
        overshoot[idx] = interval_over
        interval_over = 0.0
        excursion[idx] = max(0.0, float(np.max(np.maximum(w[L.pg] - net.pg_max, net.pg_min - w[L.pg]))),
                             float(np.max(np.maximum(w[L.pl] - net.pl_max, net.pl_min - w[L.pl]))))
        if V1 is not None and refs[seg]["w_star"] is not None:
            V1[idx] = pdcore.lyapunov_V1(w, refs[seg]["w_star"], net, p, gains, check=False)

    record(0, 0)
    sample_pos = 1
    p = sc.disturbance_at_step(0)
    change_steps = {sc.step_index(d.t) for d in sc.disturbances}
    for k in range(steps):
        if k in change_steps:
            p = sc.disturbance_at_step(k)
        system.start_step(y)
        k1 = system.rhs(y, p)
        k2 = system.rhs(y + 0.5 * h * k1, p)
        k3 = system.rhs(y + 0.5 * h * k2, p)
        k4 = system.rhs(y + h * k3, p)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            bad = int(np.flatnonzero(~np.isfinite(y))[0])
            raise IntegrationError((k + 1) * h, system.labels[bad])
        if system.saturated:
            rel = system.guard(y)
            if rel > 0:
                interval_over = max(interval_over, rel)
                max_over = max(max_over, rel)
                if rel > OVERSHOOT_WARN:
                    warnings_count += 1
        if sample_pos < K and k + 1 == sample_steps[sample_pos]:
            record(k + 1, sample_pos)
            sample_pos += 1

    if warnings_count:
        log.warning("pre-clamp overshoot exceeded %.0e of box width in %d steps "
                    "(max %.3e); step size h=%g is too large",
                    OVERSHOOT_WARN, warnings_count, max_over, h)

    return TrajectoryRecord(
        times=times, theta_tilde=rec["theta_tilde"], omega=rec["omega"], pg=rec["pg"],
        pl=rec["pl"], lam=rec["lam"], flows=rec["theta_tilde"] * net.B, p=rec["p"],
        segment=segment, rhs_norm=rhs_norm, dissipated=dissipated, overshoot=overshoot,
        excursion=excursion, lambda_residual=rec["lambda_residual"], node_names=net.names,
        edges=net.edges, initial_pg_actual=sc.initial_pg_actual.copy(),
        initial_pl_actual=sc.initial_pl_actual.copy(), mode=sc.mode,
        formulation="projected" if isinstance(system, _Projected) else "physical",
        h=h, theta=rec["theta"], mu=rec["mu"], V1=V1, references=refs,
        max_overshoot=max_over, overshoot_warnings=warnings_count,
        prescribed_gains=net.prescribed_gains,
    )


def formulation_gap(a: TrajectoryRecord, b: TrajectoryRecord) -> float:
    """Largest discrepancy on (omega, Pg, Pl, lam), each component scaled by its peak."""
    worst = 0.0
    for name in ("omega", "pg", "pl", "lam"):
        x, y = getattr(a, name), getattr(b, name)
        scale = np.maximum(np.max(np.abs(x), axis=0), np.finfo(float).tiny)
        worst = max(worst, float(np.max(np.abs(x - y) / scale, initial=0.0)))
    return worst


def integrate(sc: Scenario, with_v1: bool = True) -> TrajectoryRecord:
    """Integrate the scenario with fixed-step RK4.

    For ``formulation == "both"`` the physical record is returned with the
    projected run attached as ``companion`` and their discrepancy in
    ``formulation_gap``.
    """
    if sc.formulation == "projected":
        return _run(sc, _Projected(sc), with_v1)
    rec = _run(sc, _Physical(sc), with_v1)
    if sc.formulation == "both":
        other = _run(sc, _Projected(sc), with_v1)
        rec.companion = other
        rec.formulation_gap = formulation_gap(rec, other)
    return rec
