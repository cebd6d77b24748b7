"""Centralized solver and KKT verifier for the per-node balance problem.

Each node solves min 1/2 alpha g^2 + 1/2 beta l^2 s.t. g - l = p, g and l in
their boxes. The balance residual g(lam) - l(lam) - p with
g(lam) = clamp(-lam/alpha), l(lam) = clamp(lam/beta) is continuous and
nonincreasing in lam, so the multiplier is found by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import AreaParams, NetworkModel

BISECTION_TOL = 1e-12


class InfeasibleError(ValueError):
    """Disturbance outside the regulation capacity of one or more nodes."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _a2_violation(p_j, a: AreaParams, node=None) -> str | None:
    lo = a.pg_min - a.pl_max
    hi = a.pg_max - a.pl_min
    where = "" if node is None else f"node {node}: "
    if p_j < lo:
        return f"{where}A2 violated: p={p_j:g} < Pg_min - Pl_max = {lo:g}"
    if p_j > hi:
        return f"{where}A2 violated: p={p_j:g} > Pg_max - Pl_min = {hi:g}"
    return None


def solve_pbo_node(p_j: float, a: AreaParams) -> tuple[float, float, float]:
    """Optimal (Pg*, Pl*, lam*) of one node; lam* = -alpha Pg* when Pg* is interior."""
    msg = _a2_violation(p_j, a)
    if msg:
        raise InfeasibleError([msg])

    def g_of(lam):
        return min(a.pg_max, max(a.pg_min, -lam / a.alpha))

    def l_of(lam):
        return min(a.pl_max, max(a.pl_min, lam / a.beta))

    radius = max(abs(a.pg_min), abs(a.pg_max), abs(a.pl_min), abs(a.pl_max))
    big = max(a.alpha, a.beta) * (abs(p_j) + radius) + 1.0
    lo, hi = -big, big
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        r = g_of(mid) - l_of(mid) - p_j
        if abs(r) <= BISECTION_TOL or hi - lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
        if r > 0:
            lo = mid
        else:
            hi = mid
    lam = mid
    g, l = g_of(lam), l_of(lam)
    # exact re-solve on the identified active set removes bisection error
    g_int = a.pg_min < g < a.pg_max
    l_int = a.pl_min < l < a.pl_max
    if g_int and l_int:
        g = a.beta * p_j / (a.alpha + a.beta)
        l = -a.alpha * p_j / (a.alpha + a.beta)
        lam = -a.alpha * g
    elif g_int:
        g = l + p_j
        lam = -a.alpha * g
    elif l_int:
        l = g - p_j
        lam = a.beta * l
    return float(g), float(l), float(lam)


@dataclass
class NodeKKT:
    node: int
    stat_g: float
    stat_l: float
    case_g: str
    case_l: str
    viol_g: float
    viol_l: float
    balance: float
    network: float
    omega_mu: float

    @property
    def worst_mw(self) -> float:
        return max(self.viol_g, self.viol_l, abs(self.balance), abs(self.network))


@dataclass
class KKTReport:
    """Per-node KKT quantities.

    ``stat_g = alpha Pg + mu + lam`` and ``stat_l = beta Pl - mu - lam`` are in
    cost units; ``viol_*`` are the sign-regime violations converted to MW by
    dividing by alpha/beta. ``omega_mu`` is D (omega - mu).
    """

    nodes: list[NodeKKT]
    bound_tol: float

    def max_residual(self) -> float:
        return max((max(n.worst_mw, abs(n.omega_mu)) for n in self.nodes), default=0.0)

    def passes(self, tol: float) -> bool:
        return self.max_residual() <= tol

    def as_dict(self):
        return {"max_residual": self.max_residual(),
                "nodes": [vars(n) for n in self.nodes]}


def _case(x, lo, hi, tol):
    if abs(x - lo) <= tol:
        return "lower"
    if abs(x - hi) <= tol:
        return "upper"
    return "interior"


def _violation(stat, case):
    if case == "lower":
        return max(0.0, -stat)
    if case == "upper":
        return max(0.0, stat)
    return abs(stat)


def kkt_residuals(theta, omega, pg, pl, lam, mu, net: NetworkModel, p,
                  bound_tol: float = 1e-9) -> KKTReport:
    """Evaluate stationarity (with active-set sign regime), balance and coupling residuals.

    A variable within ``bound_tol`` of a limit is treated as on that limit.
    """
    theta, omega, pg, pl, lam, mu, p = (np.asarray(v, dtype=float)
                                        for v in (theta, omega, pg, pl, lam, mu, p))
    u = net.net_injection_imbalance(theta, omega)
    nodes = []
    for j in range(net.node_count):
        sg = net.alpha[j] * pg[j] + mu[j] + lam[j]
        sl = net.beta[j] * pl[j] - mu[j] - lam[j]
        cg = _case(pg[j], net.pg_min[j], net.pg_max[j], bound_tol)
        cl = _case(pl[j], net.pl_min[j], net.pl_max[j], bound_tol)
        outside = max(0.0, net.pg_min[j] - pg[j], pg[j] - net.pg_max[j],
                      net.pl_min[j] - pl[j], pl[j] - net.pl_max[j])
        nodes.append(NodeKKT(
            node=j, stat_g=float(sg), stat_l=float(sl), case_g=cg, case_l=cl,
            viol_g=float(max(_violation(sg, cg) / net.alpha[j], outside)),
            viol_l=float(max(_violation(sl, cl) / net.beta[j], outside)),
            balance=float(pg[j] - pl[j] - p[j]),
            network=float(pg[j] - pl[j] - p[j] - u[j]),
            omega_mu=float(net.D[j] * (omega[j] - mu[j])),
        ))
    return KKTReport(nodes, bound_tol)


@dataclass
class EquilibriumSolution:
    pg: np.ndarray
    pl: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    objective: float
    p: np.ndarray
    kkt: KKTReport = field(repr=False)

    @property
    def marginal_cost(self) -> np.ndarray:
        """-lam*, the marginal regulation cost at each node."""
        return -self.lam

    def actual(self, pg0, pl0):
        """(Pg*, Pl*) shifted to actual values by the scheduled operating point."""
        return self.pg + np.asarray(pg0, float), self.pl + np.asarray(pl0, float)

    def as_dict(self):
        return {
            "pg": self.pg.tolist(), "pl": self.pl.tolist(), "omega": self.omega.tolist(),
            "theta": self.theta.tolist(), "lam": self.lam.tolist(), "mu": self.mu.tolist(),
            "marginal_cost": self.marginal_cost.tolist(), "objective": self.objective,
            "kkt_max_residual": self.kkt.max_residual(),
        }


def check_feasibility(net: NetworkModel, p) -> list[str]:
    return [msg for j, a in enumerate(net.areas)
            if (msg := _a2_violation(float(p[j]), a, j))]


def solve_pbo(net: NetworkModel, p) -> EquilibriumSolution:
    """Assemble the per-node optima; omega* = mu* = 0 and theta* = 0."""
    p = np.asarray(p, dtype=float)
    if p.shape != (net.node_count,):
        raise ValueError(f"p must have shape ({net.node_count},)")
    bad = check_feasibility(net, p)
    if bad:
        raise InfeasibleError(bad)
    sol = np.array([solve_pbo_node(p[j], a) for j, a in enumerate(net.areas)])
    pg, pl, lam = sol[:, 0], sol[:, 1], sol[:, 2]
    z = np.zeros(net.node_count)
    objective = float(0.5 * np.sum(net.alpha * pg ** 2) + 0.5 * np.sum(net.beta * pl ** 2))
    kkt = kkt_residuals(z, z, pg, pl, lam, z, net, p)
    return EquilibriumSolution(pg, pl, z.copy(), z.copy(), lam, z.copy(), objective, p, kkt)


def node_objective(pg, pl, a: AreaParams) -> float:
    return 0.5 * a.alpha * pg ** 2 + 0.5 * a.beta * pl ** 2


@dataclass
class UniquenessReport:
    strict_a2: list[bool]
    interior_g: list[bool]
    interior_l: list[bool]
    feasible: bool

    @property
    def certified(self) -> list[bool]:
        return [s and (g or l) for s, g, l in zip(self.strict_a2, self.interior_g, self.interior_l)]

    @property
    def all_certified(self) -> bool:
        return self.feasible and all(self.certified)

    def as_dict(self):
        return {"feasible": self.feasible, "strict_a2": self.strict_a2,
                "interior_g": self.interior_g, "interior_l": self.interior_l,
                "certified": self.certified, "all_certified": self.all_certified}


def check_uniqueness_conditions(net: NetworkModel, p) -> UniquenessReport:
    """Whether lam* is certified unique at each node.

    Requires strict A2 inequalities and an optimum interior in Pg or Pl.
    """
    p = np.asarray(p, dtype=float)
    strict, ig, il = [], [], []
    feasible = True
    for j, a in enumerate(net.areas):
        lo, hi = a.pg_min - a.pl_max, a.pg_max - a.pl_min
        strict.append(bool(lo < p[j] < hi))
        try:
            g, l, _ = solve_pbo_node(p[j], a)
        except InfeasibleError:
            feasible = False
            ig.append(False)
            il.append(False)
            continue
        ig.append(bool(a.pg_min < g < a.pg_max))
        il.append(bool(a.pl_min < l < a.pl_max))
    return UniquenessReport(strict, ig, il, feasible)
