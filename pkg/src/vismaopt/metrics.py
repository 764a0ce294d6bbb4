"""Tuning constraints, transient metrics and the cost functional.

The machine model linearised around its synchronous equilibrium is a
second-order lag; its damping ratio exceeds one for any positive
parameters (arithmetic-geometric mean argument), so both poles are real
and negative. The constraints keep the machine at least as slow as the
regular inverters and bound the integral gain by the slow-pole response
time. The scalar cost combines relaxation time, a storage penalty on
k_d + J and the normalised peak deviations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .devices import VismaParams
from .errors import ConfigurationError

if TYPE_CHECKING:
    from .sim import Trajectory

#: Energy assigned to rejected parameter sets. Compares greater than every
#: finite energy; acceptance/swap logic treats it specially instead of
#: doing arithmetic with it.
REJECTED_ENERGY = math.inf


@dataclass(frozen=True)
class LinearizedQuantities:
    c: float
    D: float
    Omega: float
    s_pole1: float
    s_pole2: float
    tau1: float
    tau2: float


@dataclass(frozen=True)
class CostWeights:
    """Weights of the cost functional: E = t_final + alpha*(k_d + J)
    + (delta_f-normalised frequency peak + delta_V-normalised voltage
    peak)/beta."""

    alpha: float
    beta: float
    delta_f: float
    delta_V: float

    def __post_init__(self):
        if min(self.alpha, self.beta, self.delta_f, self.delta_V) <= 0.0:
            raise ConfigurationError("cost weights must all be > 0")


@dataclass(frozen=True)
class TransientMetrics:
    t_final: float
    delta_f_peak: float
    delta_V_peak: float
    violated: bool = False
    timed_out: bool = False

    def rejected(self) -> bool:
        return self.violated or self.timed_out


def linearized_quantities(phi: VismaParams, k_P1: float,
                          omega_nom: float) -> LinearizedQuantities:
    """Damping ratio, natural frequency and poles of the linearised machine."""
    c = 1.0 / (k_P1 * omega_nom)
    jt = (1.0 / c) * phi.J * phi.T_d
    root = math.sqrt(jt)
    D = ((1.0 / c) * (phi.k_d + phi.J) + phi.T_d) / (2.0 * root)
    Omega = 1.0 / root
    disc = math.sqrt(max(D * D - 1.0, 0.0))
    s1 = -Omega * (D + disc)
    s2 = -Omega * (D - disc)
    return LinearizedQuantities(c=c, D=D, Omega=Omega, s_pole1=s1, s_pole2=s2,
                                tau1=-1.0 / s1, tau2=-1.0 / s2)


def damping_ratio(J, k_d, T_d, k_P1, omega_nom):
    """Vectorised damping ratio; used by the positivity property checks."""
    c_inv = np.asarray(k_P1) * omega_nom
    jt = c_inv * np.asarray(J) * np.asarray(T_d)
    return (c_inv * (np.asarray(k_d) + np.asarray(J)) + np.asarray(T_d)) \
        / (2.0 * np.sqrt(jt))


@dataclass(frozen=True)
class ConstraintCheck:
    accepted: bool
    reason: str
    tau1: float
    K_I_bound: float


def check_constraints(phi: VismaParams, maxT_regular: float,
                      omega_nom: float) -> ConstraintCheck:
    """Accept/reject a parameter set against the two tuning constraints.

    Accepts iff maxT_regular <= tau1 (machine no faster than the regular
    inverters) and K_I <= J*omega_nom*Omega*(D - sqrt(D^2-1))/3 (integral
    action slower than the slow machine pole). The bound is evaluated in
    the pole form rather than through the reconstructed tau2.
    """
    lin = linearized_quantities(phi, phi.k_P1, omega_nom)
    disc = math.sqrt(max(lin.D * lin.D - 1.0, 0.0))
    ki_bound = phi.J * omega_nom * lin.Omega * (lin.D - disc) / 3.0
    if maxT_regular > lin.tau1:
        return ConstraintCheck(False, "machine response faster than inverters "
                               f"(tau1 = {lin.tau1:.6g} < {maxT_regular:.6g})",
                               lin.tau1, ki_bound)
    if phi.K_I > ki_bound:
        return ConstraintCheck(False, "integral gain above bound "
                               f"({phi.K_I:.6g} > {ki_bound:.6g})",
                               lin.tau1, ki_bound)
    return ConstraintCheck(True, "", lin.tau1, ki_bound)


def peak_deviations(traj: "Trajectory", t0: float) -> tuple[float, float]:
    """Largest post-jump deviations of the device frequencies and of the
    four grid-side voltages, each relative to its value at t0."""
    i0 = int(np.searchsorted(traj.t, t0))
    if i0 >= len(traj.t):
        return 0.0, 0.0
    f0 = traj.f[i0]
    v0 = np.array([traj.V_grid[i0, 0], traj.V_grid[i0, 1],
                   traj.V_grid[i0, 2], traj.V_load[i0]])
    after = traj.t > t0
    if not np.any(after):
        return 0.0, 0.0
    df = float(np.max(np.abs(traj.f[after] - f0)))
    volts = np.column_stack([traj.V_grid[after], traj.V_load[after]])
    dv = float(np.max(np.abs(volts - v0)))
    return df, dv


def cost(metrics: TransientMetrics, weights: CostWeights,
         phi: VismaParams) -> float:
    """Scalar cost of one transient; rejected transients map to the
    distinguished rejected energy."""
    if metrics.rejected():
        return REJECTED_ENERGY
    sigma = (metrics.delta_f_peak / weights.delta_f
             + metrics.delta_V_peak / weights.delta_V)
    return metrics.t_final + weights.alpha * (phi.k_d + phi.J) + sigma / weights.beta


def cost_parts(metrics: TransientMetrics, weights: CostWeights,
               phi: VismaParams) -> tuple[float, float, float, float]:
    """(t_final, alpha*(J+k_d), sigma, sigma/beta) for reporting tables."""
    sigma = (metrics.delta_f_peak / weights.delta_f
             + metrics.delta_V_peak / weights.delta_V)
    return (metrics.t_final, weights.alpha * (phi.k_d + phi.J), sigma,
            sigma / weights.beta)


def visma_energy(traj: "Trajectory", phi: VismaParams,
                 t1: float, t2: float) -> float:
    """Energy exchanged by the machine over [t1, t2] (diagnostic only).

    Uses the damping-torque state M_d = (k_d/T_d)(d + omega) reconstructed
    from the trajectory; the integral of omega dM_d is evaluated by the
    trapezoidal rule over the stored samples.
    """
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    sel = (traj.t >= t1) & (traj.t <= t2)
    if np.count_nonzero(sel) < 2:
        raise ValueError("window [t1, t2] contains fewer than two samples")
    w = traj.states[sel, 0]
    d = traj.states[sel, 1]
    m_d = (phi.k_d / phi.T_d) * (d + w)
    kinetic = -0.5 * (phi.J + phi.k_d) * (w[-1] ** 2 - w[0] ** 2)
    w_mid = 0.5 * (w[1:] + w[:-1])
    damping = phi.T_d * float(np.sum(w_mid * np.diff(m_d)))
    return kinetic + damping
