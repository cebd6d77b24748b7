"""Open-loop swing dynamics with first-order generation and load actuators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import NetworkModel


@dataclass
class PlantState:
    """Physical state in deviation coordinates.

    ``theta`` (rad), ``omega`` (rad/s), ``pg`` and ``pl`` (MW); one entry per
    node. The same container holds time derivatives.
    """

    theta: np.ndarray
    omega: np.ndarray
    pg: np.ndarray
    pl: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "PlantState":
        return cls(*(np.zeros(n) for _ in range(4)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.omega, self.pg, self.pl])

    @classmethod
    def from_vector(cls, y, n: int) -> "PlantState":
        y = np.asarray(y, dtype=float)
        return cls(y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:4 * n])


@dataclass
class ControlInput:
    ug: np.ndarray
    ul: np.ndarray


def plant_rhs(state: PlantState, inp: ControlInput, net: NetworkModel, p) -> PlantState:
    """Time derivative of the plant state under the given control and disturbance.

    The tie-line term uses the edge-sum form, so the cost is O(n + m).
    """
    n = net.node_count
    for name, v in (("theta", state.theta), ("omega", state.omega), ("pg", state.pg),
                    ("pl", state.pl), ("ug", inp.ug), ("ul", inp.ul), ("p", p)):
        if np.shape(v) != (n,):
            raise ValueError(f"{name} must have shape ({n},), got {np.shape(v)}")
    flows = net.B * (state.theta[net.edge_from] - state.theta[net.edge_to])
    inflow = net.net_inflow(flows)
    omega_dot = (state.pg - state.pl - p - net.D * state.omega + inflow) / net.M
    pg_dot = (-state.pg + inp.ug - state.omega / net.R) / net.Tg
    pl_dot = (-state.pl + inp.ul) / net.Tl
    return PlantState(state.omega.copy(), omega_dot, pg_dot, pl_dot)
