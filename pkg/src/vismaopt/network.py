"""Static electrical model of the microgrid.

Admittance assembly from branch/coupling data, three-phase power balance
at the nodes, recovery of the grid-side voltage behind a coupling
impedance, and the rating-based droop coefficients.

Node indices are 0-based throughout this module; configuration files use
1-based numbering and are converted on parse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SingularCouplingError


@dataclass(frozen=True)
class Coupling:
    """Series element between a device-internal node and its grid attachment.

    kind is "stator" (R_S + jwL_S, quasi-static machine stator) or
    "inverter" (jwL_C output inductor).
    """

    kind: str
    resistance: float
    inductance: float

    def __post_init__(self):
        if self.kind not in ("stator", "inverter"):
            raise ConfigurationError(f"unknown coupling kind {self.kind!r}")
        if self.kind == "stator" and self.resistance <= 0.0:
            raise ConfigurationError("stator coupling requires R_S > 0")
        if self.resistance < 0.0:
            raise ConfigurationError("coupling resistance must be >= 0")
        if self.inductance <= 0.0:
            raise ConfigurationError("coupling inductance must be > 0")

    def admittance(self, omega: float) -> complex:
        return 1.0 / (self.resistance + 1j * omega * self.inductance)


def stator_coupling(R_S: float, L_S: float) -> Coupling:
    return Coupling("stator", R_S, L_S)


def inverter_coupling(L_C: float) -> Coupling:
    return Coupling("inverter", 0.0, L_C)


@dataclass(frozen=True)
class NetworkConfig:
    """Topology and element values of the grid.

    branches holds line data as (from_node, to_node, R, L). coupling maps a
    device node to its series Coupling, which build_admittance folds into
    the single branch incident to that node. shunt_admittances are complex
    siemens per node (zero if omitted). omega_eval is the fixed electrical
    frequency at which all reactances are evaluated (quasi-static model).
    """

    n_nodes: int
    branches: tuple[tuple[int, int, float, float], ...]
    coupling: dict[int, Coupling] = field(default_factory=dict)
    shunt_admittances: tuple[complex, ...] = ()
    omega_eval: float = 2.0 * np.pi * 50.0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ConfigurationError("need at least two nodes")
        if self.omega_eval <= 0.0:
            raise ConfigurationError("omega_eval must be > 0")
        for i, k, R, L in self.branches:
            if i == k:
                raise ConfigurationError(f"branch endpoints must differ, got ({i}, {k})")
            if not (0 <= i < self.n_nodes and 0 <= k < self.n_nodes):
                raise ConfigurationError(f"branch ({i}, {k}) out of node range")
            if R < 0.0:
                raise ConfigurationError(f"branch ({i}, {k}): R must be >= 0")
            if L <= 0.0:
                raise ConfigurationError(f"branch ({i}, {k}): L must be > 0 (singular admittance)")
        if self.shunt_admittances and len(self.shunt_admittances) != self.n_nodes:
            raise ConfigurationError("shunt_admittances must list one entry per node")
        for node in self.coupling:
            if not 0 <= node < self.n_nodes:
                raise ConfigurationError(f"coupling node {node} out of range")

    def shunts(self) -> np.ndarray:
        if self.shunt_admittances:
            return np.asarray(self.shunt_admittances, dtype=complex)
        return np.zeros(self.n_nodes, dtype=complex)


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Branch conductances/susceptances G_ik, B_ik plus the diagonal terms.

    Off-diagonal entries are the admittances of the (folded) branches
    themselves; diagonals follow G_ii = G_shunt_ii + sum_k G_ik (same for B).
    The power-balance expressions below carry the explicit minus sign on the
    neighbour sum, so no bus-matrix sign flip is applied here.
    """

    G: np.ndarray
    B: np.ndarray
    neighbors: tuple[tuple[int, ...], ...]

    @property
    def n_nodes(self) -> int:
        return self.G.shape[0]


def build_admittance(config: NetworkConfig) -> AdmittanceMatrix:
    """Assemble the admittance data for a network configuration.

    Each device coupling is folded in series with the one branch incident
    to its node. Raises ConfigurationError for disconnected topologies.
    """
    n = config.n_nodes
    w = config.omega_eval
    G = np.zeros((n, n))
    B = np.zeros((n, n))
    degree = np.zeros(n, dtype=int)

    for i, k, R, L in config.branches:
        R_tot, L_tot = R, L
        for end in (i, k):
            coup = config.coupling.get(end)
            if coup is not None:
                if degree[end] > 0:
                    raise ConfigurationError(
                        f"device node {end} with coupling must have exactly one branch")
                R_tot += coup.resistance
                L_tot += coup.inductance
        y = 1.0 / (R_tot + 1j * w * L_tot)
        G[i, k] += y.real
        G[k, i] += y.real
        B[i, k] += y.imag
        B[k, i] += y.imag
        degree[i] += 1
        degree[k] += 1

    if np.any(degree == 0):
        orphan = int(np.argmin(degree))
        raise ConfigurationError(f"node {orphan} has no branch (disconnected)")
    _require_connected(n, config.branches)

    shunts = config.shunts()
    for i in range(n):
        G[i, i] = shunts[i].real + (G[i].sum() - G[i, i])
        B[i, i] = shunts[i].imag + (B[i].sum() - B[i, i])

    neigh = tuple(
        tuple(k for k in range(n) if k != i and (G[i, k] != 0.0 or B[i, k] != 0.0))
        for i in range(n))
    return AdmittanceMatrix(G=G, B=B, neighbors=neigh)


def _require_connected(n: int, branches) -> None:
    adj: list[set[int]] = [set() for _ in range(n)]
    for i, k, _, _ in branches:
        adj[i].add(k)
        adj[k].add(i)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if len(seen) != n:
        missing = sorted(set(range(n)) - seen)
        raise ConfigurationError(f"network is disconnected (unreachable nodes {missing})")


def power_injection(adm: AdmittanceMatrix, V: np.ndarray, dtheta: np.ndarray,
                    i: int) -> tuple[float, float]:
    """Three-phase active/reactive power injected into the grid at node i.

    V are per-phase magnitudes, dtheta the voltage angles relative to the
    reference node (only differences enter, so any common offset is allowed).
    """
    G, B = adm.G, adm.B
    P = G[i, i] * V[i] * V[i]
    Q = -B[i, i] * V[i] * V[i]
    for k in adm.neighbors[i]:
        d = dtheta[i] - dtheta[k]
        c, s = np.cos(d), np.sin(d)
        P -= V[i] * V[k] * (G[i, k] * c + B[i, k] * s)
        Q -= V[i] * V[k] * (G[i, k] * s - B[i, k] * c)
    return 3.0 * P, 3.0 * Q


def power_injections(adm: AdmittanceMatrix, V: np.ndarray,
                     dtheta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """power_injection evaluated at every node."""
    n = adm.n_nodes
    P = np.empty(n)
    Q = np.empty(n)
    for i in range(n):
        P[i], Q[i] = power_injection(adm, V, dtheta, i)
    return P, Q


def grid_voltage(V_i: float, dtheta_i: float, S_i: complex,
                 Y_coupl: complex) -> complex:
    """Complex voltage on the grid side of a device coupling.

    The injected current conj(S_i)/(3 conj(V_i)) dropped over the coupling
    impedance: V_i e^{j dtheta_i} - conj(S_i)/(3 Y_coupl conj(V_i e^{j
    dtheta_i})). Callers normally use its magnitude.
    """
    if Y_coupl == 0:
        raise SingularCouplingError("coupling admittance must be nonzero")
    v = V_i * np.exp(1j * dtheta_i)
    return v - np.conj(S_i) / (3.0 * Y_coupl * np.conj(v))


@dataclass(frozen=True)
class DroopCoefficients:
    k_P: float  # rad/(s VA)
    k_Q: float  # V/VA


def droop_coefficients(S_rated: float) -> DroopCoefficients:
    """Proportional-sharing droop gains for a device of rating S_rated.

    k_P = 0.4*pi/S (0.4 Hz legal frequency corridor), k_Q = 23 V/S
    (46 V voltage corridor), both per the symmetric half-band split.
    """
    if S_rated <= 0.0:
        raise ConfigurationError("device rating must be > 0")
    return DroopCoefficients(k_P=0.4 * np.pi / S_rated, k_Q=23.0 / S_rated)
