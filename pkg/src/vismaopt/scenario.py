"""Built-in perturbation scenarios and configuration validation.

Both scenarios share the electrical constants (line/stator/output
inductances, stator resistance, controller time constants, voltage droop
gain, anti-windup gain) and differ in device ratings, nominal powers and
the size of the load step. Scenario 1 has three equally rated devices and
steps the load 1.5 kW -> 4.5 kW; scenario 2 rates the devices 9/3/1 kVA
and steps 3 kW -> 10 kW.
"""

from __future__ import annotations

import math
from dataclasses import replace

from .devices import InverterParams, VismaParams
from .errors import ConfigurationError
from .metrics import CostWeights
from .network import (NetworkConfig, droop_coefficients, inverter_coupling,
                      stator_coupling)
from .sim import ScenarioConfig

# constants common to all scenarios
L_LINES = 1.514e-3   # H, per line
L_S = 42.0e-3        # H, machine stator
R_LINES = 0.0        # ohm
R_S = 0.3            # ohm, machine stator
L_C = 1.8e-3         # H, inverter output inductor
T_VISMA_VOLTAGE = 0.01   # s, machine voltage delay (T_1)
T_INVERTER = 0.5         # s, inverter power filter (T_2 = T_3)
K_V = 10.0           # V/V machine voltage droop
Q_NOM = 0.0          # var, all devices
K_AWU = 1.0          # 1/s anti-windup gain
DELTA_V = 1e40       # voltage peaks effectively unweighted

#: default tuned parameters per scenario: the spread factor places the
#: start safely inside both constraints, near the predicted optimum region
#: J ~ c * maxT, T_d ~ maxT.
_INIT_SPREAD = 1.2
_INIT_KD = 1e-4
_INIT_KI = 500.0


def _network(R_lines: float = R_LINES) -> NetworkConfig:
    branches = tuple((dev, 3, R_lines, L_LINES) for dev in range(3))
    coupling = {0: stator_coupling(R_S, L_S),
                1: inverter_coupling(L_C),
                2: inverter_coupling(L_C)}
    return NetworkConfig(n_nodes=4, branches=branches, coupling=coupling,
                         omega_eval=2.0 * math.pi * 50.0)


def default_initial_phi(scenario: ScenarioConfig) -> VismaParams:
    """Feasible starting point for the optimiser, scaled per scenario."""
    c = 1.0 / (scenario.visma.k_P1 * scenario.omega_nom)
    maxT = scenario.maxT_regular
    return replace(scenario.visma, J=_INIT_SPREAD * c * maxT, k_d=_INIT_KD,
                   T_d=_INIT_SPREAD * maxT, K_I=_INIT_KI)


def load_paper_scenario(scenario_id: int,
                        R_lines: float = R_LINES) -> ScenarioConfig:
    """One of the two built-in perturbation scenarios.

    R_lines > 0 switches on ohmic line losses (same topology, no separate
    scenario id).
    """
    if scenario_id == 1:
        ratings = (4000.0, 4000.0, 4000.0)
        p_nom = (500.0, 500.0, 500.0)
        load_before, load_after = 1500.0, 4500.0
    elif scenario_id == 2:
        ratings = (9000.0, 3000.0, 1000.0)
        p_nom = (1000.0, 1500.0, 500.0)
        load_before, load_after = 3000.0, 10000.0
    else:
        raise ConfigurationError(f"unknown scenario id {scenario_id!r}")

    k1 = droop_coefficients(ratings[0])
    visma = VismaParams(J=5.0, k_d=1e-4, T_d=0.6, K_I=500.0, k_V=K_V,
                        T_inv=T_VISMA_VOLTAGE, K_awu=K_AWU, k_P1=k1.k_P,
                        P_nom1=p_nom[0], S_rated=ratings[0])
    inverters = []
    for n in (1, 2):
        kd = droop_coefficients(ratings[n])
        inverters.append(InverterParams(T=T_INVERTER, k_P=kd.k_P, k_Q=kd.k_Q,
                                        P_nom=p_nom[n], Q_nom=Q_NOM,
                                        S_rated=ratings[n]))
    scn = ScenarioConfig(network=_network(R_lines), visma=visma,
                         inverters=(inverters[0], inverters[1]),
                         P_load_before=load_before, P_load_after=load_after,
                         Q_load=0.0, name=f"scenario{scenario_id}")
    return scn.with_phi(default_initial_phi(scn))


def default_weights(scenario_id: int) -> CostWeights:
    """Cost weights of the evenly-weighted optimisation run per scenario
    (the frequency normalisation differs between the two)."""
    if scenario_id == 1:
        return CostWeights(alpha=7.0, beta=0.027, delta_f=0.05, delta_V=DELTA_V)
    if scenario_id == 2:
        return CostWeights(alpha=1.7, beta=0.045, delta_f=0.2, delta_V=DELTA_V)
    raise ConfigurationError(f"unknown scenario id {scenario_id!r}")


def validate(scenario) -> list[str]:
    """Collect invariant violations (empty list if sound), never raising.

    Accepts either a built ScenarioConfig or a raw config mapping as read
    from a file; the mapping path also reports problems that the typed
    constructors would refuse outright (negative time constants, bad
    topology). Checks droop-gain consistency with the device ratings,
    band ordering and the expected coupling kinds.
    """
    from collections.abc import Mapping

    if isinstance(scenario, Mapping):
        from .configfile import validate_mapping

        return validate_mapping(scenario)
    issues: list[str] = []

    def rel_err(a, b):
        return abs(a - b) / max(abs(b), 1e-300)

    k1 = droop_coefficients(scenario.visma.S_rated)
    if rel_err(scenario.visma.k_P1, k1.k_P) > 1e-6:
        issues.append(f"machine droop gain k_P1 = {scenario.visma.k_P1:.6g} "
                      f"does not match 0.4*pi/S = {k1.k_P:.6g}")
    for n, inv in enumerate(scenario.inverters, start=2):
        kd = droop_coefficients(inv.S_rated)
        if rel_err(inv.k_P, kd.k_P) > 1e-6:
            issues.append(f"inverter {n}: k_P = {inv.k_P:.6g} does not match "
                          f"0.4*pi/S = {kd.k_P:.6g}")
        if rel_err(inv.k_Q, kd.k_Q) > 1e-6:
            issues.append(f"inverter {n}: k_Q = {inv.k_Q:.6g} does not match "
                          f"23/S = {kd.k_Q:.6g}")
    v = scenario.visma
    for nm in ("J", "k_d", "T_d", "K_I"):
        if getattr(v, nm) <= 0.0:
            issues.append(f"machine parameter {nm} must be > 0")
    if not scenario.f_low < scenario.f_nom < scenario.f_high:
        issues.append("frequency band does not bracket the nominal frequency")
    if not scenario.V_low < scenario.V_nom < scenario.V_high:
        issues.append("voltage band does not bracket the nominal voltage")
    if scenario.t0 >= scenario.t_max:
        issues.append("t0 must lie before t_max")
    coup = scenario.network.coupling
    if coup.get(0) is not None and coup[0].kind != "stator":
        issues.append("machine node coupling should be a stator")
    for dev in (1, 2):
        if coup.get(dev) is not None and coup[dev].kind != "inverter":
            issues.append(f"device node {dev} coupling should be an inverter")
    if any(s != 0 for s in scenario.network.shunt_admittances):
        issues.append("simulator assumes zero shunt admittances")
    return issues
