"""Multi-area network graph, incidence/Laplacian matrices and DC power flow."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class ModelError(ValueError):
    """Raised when network or area data violate the model assumptions."""


@dataclass(frozen=True)
class AreaParams:
    """Physical, cost and controller parameters of one control area.

    Powers are deviations from the scheduled operating point (MW), angles in
    rad, frequencies in rad/s. ``gamma_g``/``gamma_l`` default to ``1/Tg`` and
    ``1/Tl``, the gains for which the Lyapunov certificate is stated.
    """

    D: float
    R: float
    alpha: float
    beta: float
    Tg: float
    Tl: float
    M: float
    pg_min: float
    pg_max: float
    pl_min: float
    pl_max: float
    gamma_lambda: float = 1.0
    gamma_g: float | None = None
    gamma_l: float | None = None
    allow_boundary_limits: bool = False

    def __post_init__(self):
        for name in ("D", "R", "alpha", "beta", "Tg", "Tl", "M",
                     "gamma_lambda", "gamma_g", "gamma_l"):
            value = getattr(self, name)
            if value is None:
                continue
            if not np.isfinite(value) or value <= 0:
                raise ModelError(f"{name} must be finite and > 0, got {value!r}")
        if self.gamma_g is None:
            object.__setattr__(self, "gamma_g", 1.0 / self.Tg)
        if self.gamma_l is None:
            object.__setattr__(self, "gamma_l", 1.0 / self.Tl)
        for kind, lo, hi in (("pg", self.pg_min, self.pg_max),
                             ("pl", self.pl_min, self.pl_max)):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ModelError(f"{kind} limits must be finite")
            if self.allow_boundary_limits:
                ok = lo <= 0.0 <= hi and lo < hi
            else:
                ok = lo < 0.0 < hi
            if not ok:
                rel = "<=" if self.allow_boundary_limits else "<"
                raise ModelError(
                    f"A1.1 violated: need {kind}_min {rel} 0 {rel} {kind}_max "
                    f"(deviation coordinates), got [{lo}, {hi}]"
                )

    @property
    def prescribed_gains(self) -> bool:
        """True when gamma_g == 1/Tg and gamma_l == 1/Tl."""
        return (np.isclose(self.gamma_g * self.Tg, 1.0, rtol=1e-12, atol=0)
                and np.isclose(self.gamma_l * self.Tl, 1.0, rtol=1e-12, atol=0))


def build_incidence(edges: Sequence[tuple[int, int]], node_count: int) -> np.ndarray:
    """Node-edge incidence matrix: column (i->j) has +1 at row i, -1 at row j."""
    C = np.zeros((node_count, len(edges)))
    for e, (i, j) in enumerate(edges):
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise ModelError(f"edge {e} ({i}->{j}) has an endpoint outside [0, {node_count - 1}]")
        if i == j:
            raise ModelError(f"edge {e} is a self-loop at node {i}")
        C[i, e] = 1.0
        C[j, e] = -1.0
    return C


def _readonly(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


class NetworkModel:
    """Connected graph of control areas; node 0 is the angle reference.

    Immutable after construction. Per-node parameter vectors (``D``, ``M``,
    ``alpha``, ...) and the matrices ``C`` and ``laplacian`` (= C B C^T) are
    precomputed.
    """

    def __init__(self, edges, susceptance, areas: Sequence[AreaParams], names=None):
        self.areas = tuple(areas)
        self.node_count = len(self.areas)
        self.edges = tuple((int(i), int(j)) for i, j in edges)
        self.edge_count = len(self.edges)
        if self.node_count < 1:
            raise ModelError("network needs at least one node")
        self.names = tuple(names) if names is not None else tuple(
            f"area{j + 1}" for j in range(self.node_count))
        if len(self.names) != self.node_count:
            raise ModelError("names must match the number of areas")

        b = np.asarray(susceptance, dtype=float).reshape(-1)
        if b.shape != (self.edge_count,):
            raise ModelError(f"expected {self.edge_count} susceptances, got {b.size}")
        if np.any(~np.isfinite(b)) or np.any(b <= 0):
            raise ModelError("line susceptances must be finite and > 0")

        C = build_incidence(self.edges, self.node_count)
        if self.node_count > 1:
            src = np.array([e[0] for e in self.edges], dtype=int)
            dst = np.array([e[1] for e in self.edges], dtype=int)
            adj = coo_matrix((np.ones(len(src)), (src, dst)),
                             shape=(self.node_count, self.node_count))
            ncomp, _ = connected_components(adj, directed=False)
            if ncomp != 1:
                raise ModelError(f"network graph is disconnected ({ncomp} components)")

        self.B = _readonly(b)
        self.C = _readonly(C)
        self.laplacian = _readonly(C @ np.diag(b) @ C.T)
        self.edge_from = np.array([e[0] for e in self.edges], dtype=int)
        self.edge_to = np.array([e[1] for e in self.edges], dtype=int)

        def vec(name):
            return _readonly([getattr(a, name) for a in self.areas])

        self.D = vec("D")
        self.R = vec("R")
        self.M = vec("M")
        self.alpha = vec("alpha")
        self.beta = vec("beta")
        self.Tg = vec("Tg")
        self.Tl = vec("Tl")
        self.gamma_lambda = vec("gamma_lambda")
        self.gamma_g = vec("gamma_g")
        self.gamma_l = vec("gamma_l")
        self.pg_min = vec("pg_min")
        self.pg_max = vec("pg_max")
        self.pl_min = vec("pl_min")
        self.pl_max = vec("pl_max")

    @property
    def prescribed_gains(self) -> bool:
        return all(a.prescribed_gains for a in self.areas)

    def with_areas(self, areas) -> "NetworkModel":
        return NetworkModel(self.edges, self.B, areas, self.names)

    def __repr__(self):
        return (f"NetworkModel(nodes={self.node_count}, edges={list(self.edges)}, "
                f"B={self.B.tolist()})")

    # DC power flow ---------------------------------------------------------

    def _check_nodes(self, v, name):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.node_count,):
            raise ValueError(f"{name} must have shape ({self.node_count},), got {v.shape}")
        return v

    def tie_line_flows(self, theta) -> np.ndarray:
        """Flow on each edge (i->j): B_ij (theta_i - theta_j), MW."""
        theta = self._check_nodes(theta, "theta")
        return self.B * (theta[self.edge_from] - theta[self.edge_to])

    def net_inflow(self, flows) -> np.ndarray:
        """Per-node sum of inflows minus outflows, by edge summation."""
        flows = np.asarray(flows, dtype=float)
        n = self.node_count
        return (np.bincount(self.edge_to, weights=flows, minlength=n)
                - np.bincount(self.edge_from, weights=flows, minlength=n))

    def net_injection_imbalance(self, theta, omega) -> np.ndarray:
        """U(theta, omega) = D omega + C B C^T theta."""
        theta = self._check_nodes(theta, "theta")
        omega = self._check_nodes(omega, "omega")
        return self.D * omega + self.laplacian @ theta


def tie_line_flows(net: NetworkModel, theta) -> np.ndarray:
    return net.tie_line_flows(theta)


def net_injection_imbalance(net: NetworkModel, theta, omega) -> np.ndarray:
    return net.net_injection_imbalance(theta, omega)
