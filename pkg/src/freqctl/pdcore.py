"""Projected primal-dual form of the closed loop.

The augmented state is stacked as ``w = (theta_tilde, omega, Pg, Pl, lam)``
with ``theta_tilde = C^T theta`` (one entry per edge). Everything here works on
flat vectors in that order; :class:`AugmentedState` converts to and from the
named blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import NetworkModel

EQUILIBRIUM_TOL = 1e-8


class Layout:
    """Index map of the flat augmented vector."""

    def __init__(self, m: int, n: int):
        self.m, self.n = m, n
        self.size = m + 4 * n
        self.theta = slice(0, m)
        self.omega = slice(m, m + n)
        self.pg = slice(m + n, m + 2 * n)
        self.pl = slice(m + 2 * n, m + 3 * n)
        self.lam = slice(m + 3 * n, m + 4 * n)
        self.power = slice(m + n, m + 3 * n)

    @classmethod
    def of(cls, net: NetworkModel) -> "Layout":
        return cls(net.edge_count, net.node_count)

    @property
    def primal(self) -> np.ndarray:
        """Indices of (theta_tilde, Pg, Pl): the convex block."""
        return np.r_[np.arange(self.size)[self.theta], np.arange(self.size)[self.power]]

    @property
    def dual(self) -> np.ndarray:
        """Indices of (lam, omega): the concave block."""
        idx = np.arange(self.size)
        return np.r_[idx[self.lam], idx[self.omega]]


@dataclass
class AugmentedState:
    theta_tilde: np.ndarray
    omega: np.ndarray
    pg: np.ndarray
    pl: np.ndarray
    lam: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta_tilde, self.omega, self.pg, self.pl, self.lam])

    @classmethod
    def from_vector(cls, w, net: NetworkModel) -> "AugmentedState":
        L = Layout.of(net)
        w = np.asarray(w, dtype=float)
        return cls(w[L.theta], w[L.omega], w[L.pg], w[L.pl], w[L.lam])

    @classmethod
    def from_physical(cls, theta, omega, pg, pl, lam, net: NetworkModel) -> "AugmentedState":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[net.edge_from] - theta[net.edge_to], np.asarray(omega, float),
                   np.asarray(pg, float), np.asarray(pl, float), np.asarray(lam, float))


@dataclass(frozen=True)
class GainMatrix:
    """Diagonal step gains diag(B^-1/2, M^-1/2, Tg^-1, Tl^-1, Gamma_lambda^1/2) and k."""

    diag: np.ndarray
    k: float

    @classmethod
    def from_network(cls, net: NetworkModel, k: float | None = None) -> "GainMatrix":
        d = np.concatenate([
            net.B ** -0.5, net.M ** -0.5, 1.0 / net.Tg, 1.0 / net.Tl,
            np.sqrt(net.gamma_lambda),
        ])
        kmax = float(np.min(d) ** 2)
        if k is None:
            k = 0.5 * kmax
        if not 0.0 < k < kmax:
            raise ValueError(f"k must lie in (0, {kmax:.6g}) so that Gamma - k Gamma^-1 > 0")
        d.setflags(write=False)
        return cls(d, float(k))


def F(w, net: NetworkModel, p) -> np.ndarray:
    """Stacked primal-dual operator; Gamma^-1 F is the saddle gradient field."""
    L = Layout.of(net)
    th, om, pg, pl, lam = w[L.theta], w[L.omega], w[L.pg], w[L.pl], w[L.lam]
    surplus = pg - pl - p
    sqrtB = np.sqrt(net.B)
    out = np.empty(L.size)
    out[L.theta] = -sqrtB * (om[net.edge_from] - om[net.edge_to])
    # C (B theta_tilde) by edge summation: +flow at source, -flow at sink
    cbt = -net.net_inflow(net.B * th)
    out[L.omega] = -(surplus - net.D * om - cbt) / np.sqrt(net.M)
    out[L.pg] = (net.alpha * pg + om + lam) / net.Tg
    out[L.pl] = (net.beta * pl - om - lam) / net.Tl
    out[L.lam] = -np.sqrt(net.gamma_lambda) * surplus
    return out


def project(y, net: NetworkModel) -> np.ndarray:
    """Euclidean projection onto S: only the (Pg, Pl) blocks are clipped."""
    L = Layout.of(net)
    out = np.array(y, dtype=float, copy=True)
    out[L.pg] = np.clip(out[L.pg], net.pg_min, net.pg_max)
    out[L.pl] = np.clip(out[L.pl], net.pl_min, net.pl_max)
    return out


def H(w, net: NetworkModel, p) -> np.ndarray:
    """Proj_S(w - F(w))."""
    return project(w - F(w, net, p), net)


def closed_loop_rhs(w, net: NetworkModel, p, gains: GainMatrix) -> np.ndarray:
    """Gamma (H(w) - w)."""
    return gains.diag * (H(w, net, p) - w)


def lagrangian(w, net: NetworkModel, p) -> float:
    """Lagrangian with the shadow multiplier identified with omega.

    Convex in (theta_tilde, Pg, Pl), concave in (lam, omega).
    """
    L = Layout.of(net)
    th, om, pg, pl, lam = w[L.theta], w[L.omega], w[L.pg], w[L.pl], w[L.lam]
    surplus = pg - pl - p
    cbt = -net.net_inflow(net.B * th)
    return float(0.5 * (pg @ (net.alpha * pg) + pl @ (net.beta * pl) - om @ (net.D * om))
                 + lam @ surplus + om @ (surplus - cbt))


def fixed_point_residual(w, net: NetworkModel, p) -> float:
    return float(np.max(np.abs(H(w, net, p) - w)))


def merit(w, net: NetworkModel, p) -> float:
    """Regularized gap -(H-w)^T F - 1/2 |H-w|^2; nonnegative on S."""
    f = F(w, net, p)
    d = project(w - f, net) - w
    return float(-d @ f - 0.5 * d @ d)


def lyapunov_V1(w, w_star, net: NetworkModel, p, gains: GainMatrix, check: bool = True) -> float:
    """Merit function plus k/2 (w - w*)^T Gamma^-2 (w - w*).

    ``w_star`` must be a fixed point of H (to 1e-8), otherwise ValueError.
    """
    if check:
        res = fixed_point_residual(w_star, net, p)
        if res >= EQUILIBRIUM_TOL:
            raise ValueError(f"w_star is not an equilibrium: |H(w*) - w*|_inf = {res:.3e}")
    e = w - w_star
    return merit(w, net, p) + 0.5 * gains.k * float(e @ (e / gains.diag ** 2))


def scaled_jacobian_apply(net: NetworkModel, dw) -> np.ndarray:
    """(Gamma^-1 dF/dw) dw, evaluated block by block (F is affine)."""
    L = Layout.of(net)
    th, om, pg, pl, lam = dw[L.theta], dw[L.omega], dw[L.pg], dw[L.pl], dw[L.lam]
    out = np.empty(L.size)
    out[L.theta] = -net.B * (om[net.edge_from] - om[net.edge_to])
    out[L.omega] = -net.net_inflow(net.B * th) + net.D * om - pg + pl
    out[L.pg] = om + net.alpha * pg + lam
    out[L.pl] = -om + net.beta * pl - lam
    out[L.lam] = -pg + pl
    return out


def grad_F_quadratic_form(w, dw, net: NetworkModel) -> float:
    """dw^T (Gamma^-1 dF/dw) dw; the skew-symmetric couplings cancel.

    ``w`` is accepted for interface symmetry: F is affine so its Jacobian does
    not depend on the point.
    """
    dw = np.asarray(dw, dtype=float)
    return float(dw @ scaled_jacobian_apply(net, dw))


def equilibrium_vector(net: NetworkModel, pg, pl, lam) -> np.ndarray:
    """w* with zero angle differences and zero frequency."""
    L = Layout.of(net)
    w = np.zeros(L.size)
    w[L.pg], w[L.pl], w[L.lam] = pg, pl, lam
    return w
