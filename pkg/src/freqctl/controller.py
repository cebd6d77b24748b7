"""Decentralized saturated PI control law and multiplier updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import NetworkModel
from .plant import ControlInput, PlantState


@dataclass
class ControllerState:
    """Cyber state: multiplier ``lam`` per area, optional shadow ``mu``."""

    lam: np.ndarray
    mu: np.ndarray | None = None


@dataclass(frozen=True)
class SaturationBox:
    """Capacity box X for (Pg, Pl)."""

    pg_lower: np.ndarray
    pg_upper: np.ndarray
    pl_lower: np.ndarray
    pl_upper: np.ndarray

    @classmethod
    def from_network(cls, net: NetworkModel) -> "SaturationBox":
        return cls(net.pg_min, net.pg_max, net.pl_min, net.pl_max)

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([self.pg_lower, self.pl_lower])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([self.pg_upper, self.pl_upper])

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def excursion(self, pg, pl) -> float:
        """Largest distance (MW) of any component outside the box, 0 if inside."""
        v = np.concatenate([pg, pl])
        return float(np.max(np.maximum(0.0, np.maximum(v - self.upper, self.lower - v)),
                            initial=0.0))


def clamp(value, lower, upper):
    """Componentwise min(upper, max(lower, value))."""
    return np.minimum(upper, np.maximum(lower, value))


def control_law(state: PlantState, lam, net: NetworkModel, saturated: bool = True) -> ControlInput:
    """Generation and load commands; node j reads only its own quantities.

    The generation clamp is applied before the droop compensation omega/R is
    added. With ``saturated=False`` the clamps are dropped.
    """
    inner_g = state.pg - net.gamma_g * (net.alpha * state.pg + state.omega + lam)
    inner_l = state.pl - net.gamma_l * (net.beta * state.pl - state.omega - lam)
    if saturated:
        inner_g = clamp(inner_g, net.pg_min, net.pg_max)
        inner_l = clamp(inner_l, net.pl_min, net.pl_max)
    return ControlInput(inner_g + state.omega / net.R, inner_l)


def lambda_rhs_ideal(state: PlantState, p, net: NetworkModel) -> np.ndarray:
    """gamma_lambda * (Pg - Pl - p), using the (known) disturbance."""
    return net.gamma_lambda * (state.pg - state.pl - p)


def lambda_rhs_measured(omega, omega_dot, flows, net: NetworkModel) -> np.ndarray:
    """Multiplier update from local measurements only.

    The surplus generation is reconstructed as M*omega_dot + D*omega minus the
    net tie-line inflow, so the uncontrolled load never has to be measured.
    """
    surplus = net.M * omega_dot + net.D * omega - net.net_inflow(flows)
    return net.gamma_lambda * surplus


def mu_rhs(state: PlantState, p, net: NetworkModel) -> np.ndarray:
    """Shadow multiplier update M^-1 (Pg - Pl - p - U(theta, omega)).

    Evaluated through the Laplacian matrix form, independently of the edge-sum
    form used by the plant.
    """
    u = net.net_injection_imbalance(state.theta, state.omega)
    return (state.pg - state.pl - p - u) / net.M


class BackwardDifference:
    """Backward-difference estimate (omega_k - omega_{k-1}) / h of omega_dot.

    Degraded alternative to exact derivative measurement.
    """

    def __init__(self, n: int, h: float):
        self.h = h
        self.prev = None
        self.estimate = np.zeros(n)

    def update(self, omega):
        if self.prev is not None:
            self.estimate = (omega - self.prev) / self.h
        self.prev = np.array(omega, dtype=float)
        return self.estimate
