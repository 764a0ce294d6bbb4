"""Dynamic device models.

Droop-controlled inverter ODEs, the virtual synchronous machine with its
damping state, secondary integral frequency control with back-calculation
anti-windup, the machine voltage controller, and the assembly of the full
reduced state derivative (angles relative to the machine node).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, InstabilityError

if TYPE_CHECKING:
    from .sim import ScenarioConfig

STATE_ORDER = ("omega_1", "d", "x", "V_1", "dtheta_2", "omega_2", "V_2",
               "dtheta_3", "omega_3", "V_3")


@dataclass(frozen=True)
class InverterParams:
    """Droop inverter constants: power-filter time constant T, droop gains,
    nominal injections and the device rating."""

    T: float
    k_P: float
    k_Q: float
    P_nom: float
    Q_nom: float
    S_rated: float

    def __post_init__(self):
        if self.T <= 0.0:
            raise ConfigurationError("inverter T must be > 0")
        if self.k_P <= 0.0 or self.k_Q <= 0.0:
            raise ConfigurationError("droop gains must be > 0")
        if self.S_rated <= 0.0:
            raise ConfigurationError("device rating must be > 0")


@dataclass(frozen=True)
class VismaParams:
    """Virtual machine parameters.

    J, k_d, T_d, K_I are the tuned quantities; k_V, T_inv, K_awu, k_P1,
    P_nom1 and the rating stay fixed. The secondary-control output
    saturates at +-S_rated; inside the linear region the back-calculation
    term vanishes and the integrator is the plain one.
    """

    J: float
    k_d: float
    T_d: float
    K_I: float
    k_V: float = 10.0
    T_inv: float = 0.01
    K_awu: float = 1.0
    k_P1: float = 0.4 * np.pi / 4000.0
    P_nom1: float = 500.0
    S_rated: float = 4000.0

    def __post_init__(self):
        for name in ("J", "k_d", "T_d", "K_I", "T_inv"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.k_P1 <= 0.0:
            raise ConfigurationError("k_P1 must be > 0")
        if self.S_rated <= 0.0:
            raise ConfigurationError("S_rated must be > 0")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.J, self.k_d, self.T_d, self.K_I)


@dataclass
class SystemState:
    """Differential states plus the algebraic load-bus solution.

    The machine angle is the reference (dtheta_1 == 0 and is not stored).
    """

    omega_1: float
    d: float
    x: float
    V_1: float
    dtheta_2: float
    omega_2: float
    V_2: float
    dtheta_3: float
    omega_3: float
    V_3: float
    V_load: float = float("nan")
    dtheta_load: float = float("nan")

    def to_vector(self) -> np.ndarray:
        return np.array([self.omega_1, self.d, self.x, self.V_1,
                         self.dtheta_2, self.omega_2, self.V_2,
                         self.dtheta_3, self.omega_3, self.V_3])

    @classmethod
    def from_vector(cls, y: np.ndarray, V_load: float = float("nan"),
                    dtheta_load: float = float("nan")) -> "SystemState":
        return cls(*(float(v) for v in y), V_load=V_load,
                   dtheta_load=dtheta_load)


def inverter_rhs(omega_i: float, V_i: float, params: InverterParams,
                 P_i: float, Q_i: float, omega_1: float,
                 omega_nom: float, V_nom: float) -> tuple[float, float, float]:
    """Derivatives (ddtheta_i, domega_i, dV_i) of one droop inverter."""
    ddtheta = omega_i - omega_1
    domega = (-omega_i + omega_nom + params.k_P * (params.P_nom - P_i)) / params.T
    dV = (-V_i + V_nom + params.k_Q * (params.Q_nom - Q_i)) / params.T
    return ddtheta, domega, dV


def visma_rhs(omega_1: float, d: float, x: float, V_1: float,
              params: VismaParams, P_1: float, V_grid_1: float,
              omega_nom: float, V_nom: float
              ) -> tuple[float, float, float, float]:
    """Derivatives (domega_1, dd, dx, dV_1) of the virtual machine.

    The injected power is droop plus saturated secondary power; the swing
    equation divides by the instantaneous speed, so omega_1 <= 0 aborts.
    """
    if omega_1 <= 0.0:
        raise InstabilityError("machine speed reached zero")
    sat_x = min(max(x, -params.S_rated), params.S_rated)
    P_droop = params.P_nom1 + (omega_nom - omega_1) / params.k_P1
    P_inject = P_droop + sat_x
    kd_over_td = params.k_d / params.T_d
    domega = (-kd_over_td * (omega_1 + d) + (P_inject - P_1) / omega_1) / params.J
    dd = -(omega_1 + d) / params.T_d
    dx = params.K_I * (omega_nom - omega_1) + params.K_awu * (sat_x - x)
    dV = (-V_1 + V_nom + params.k_V * (V_nom - V_grid_1)) / params.T_inv
    return domega, dd, dx, dV


def visma_machine_rhs(omega: float, d: float, params: VismaParams,
                      P_in: float, omega_nom: float) -> tuple[float, float]:
    """Isolated machine model (swing + damping state, droop feedback only).

    Secondary control and voltage dynamics are left out; P_in is the
    electrical power treated as the external input. This is the nonlinear
    model whose linearisation around (omega_nom, -omega_nom) yields the
    second-order transfer function used for the tuning constraints.
    """
    if omega <= 0.0:
        raise InstabilityError("machine speed reached zero")
    P_inject = params.P_nom1 + (omega_nom - omega) / params.k_P1
    kd_over_td = params.k_d / params.T_d
    domega = (-kd_over_td * (omega + d) + (P_inject - P_in) / omega) / params.J
    dd = -(omega + d) / params.T_d
    return domega, dd


def visma_machine_jacobian(params: VismaParams,
                           omega_nom: float) -> np.ndarray:
    """Analytic Jacobian of visma_machine_rhs at the machine equilibrium."""
    c = 1.0 / (params.k_P1 * omega_nom)
    kd_over_td = params.k_d / params.T_d
    return np.array([
        [-(kd_over_td + c) / params.J, -kd_over_td / params.J],
        [-1.0 / params.T_d, -1.0 / params.T_d],
    ])


def assemble_derivative(state: SystemState, scenario: "ScenarioConfig",
                        P_load: float | None = None
                        ) -> tuple[np.ndarray, tuple[float, float]]:
    """Full reduced derivative at a state, solving the load bus first.

    Output ordering matches STATE_ORDER. The stored algebraic values of
    `state` seed the bus Newton iteration; P_load defaults to the
    scenario's pre-jump load. Raises InstabilityError on bus divergence
    or nonpositive machine speed.
    """
    p = scenario.kernel_params()
    if P_load is None:
        P_load = scenario.P_load_before
    y = state.to_vector()
    bus = np.array([
        state.V_load if np.isfinite(state.V_load) else scenario.V_nom,
        state.dtheta_load if np.isfinite(state.dtheta_load) else 0.0,
    ])
    dy = np.empty(K.NSTATE)
    aux = np.empty(K.NAUX)
    status = K.rhs(0.0, y, dy, p, P_load, scenario.Q_load, bus, aux, 1)
    if status == K.ERR_OMEGA:
        raise InstabilityError("machine speed or a device voltage collapsed")
    if status == K.ERR_BUS:
        raise InstabilityError("load-bus solve diverged (voltage collapse)")
    return dy, (float(bus[0]), float(bus[1]))
