"""Scenario configuration, steady-state solving, transient integration and
monitoring.

The model is a semi-explicit index-1 DAE: ten differential device states
plus the two algebraic load-bus unknowns, eliminated inside the derivative
evaluation by a warm-started Newton iteration. Integration uses an
embedded Runge-Kutta-Fehlberg 4(5) pair; the perturbation experiment
settles toward the pre-jump steady state, switches the load at t0 and
monitors frequency/voltage bands, peak deviations and the relaxation of
all device frequencies back into the 50 Hz band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.optimize

from . import _kernels as K
from .devices import InverterParams, SystemState, VismaParams
from .errors import (ConfigurationError, InstabilityError, NoSteadyStateError)
from .metrics import TransientMetrics
from .network import NetworkConfig, build_admittance

DEFAULT_RTOL = 1e-7
DEFAULT_ATOL = 1e-9
MAX_STEP = 0.25


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one perturbation experiment.

    The network must be the radial scheme: device-internal nodes 0..2
    (machine on node 0), each tied by exactly one folded branch to the
    load bus, node 3. Angles are measured against node 0.
    """

    network: NetworkConfig
    visma: VismaParams
    inverters: tuple[InverterParams, InverterParams]
    P_load_before: float
    P_load_after: float
    Q_load: float = 0.0
    f_nom: float = 50.0
    V_nom: float = 230.0
    t_start: float = 0.0
    t0: float = 1.0
    t_max: float = 120.0
    f_low: float = 49.8
    f_high: float = 50.2
    V_low: float = 207.0
    V_high: float = 253.0
    relax_band: float = 1e-3
    confirm_window: float = 5.0
    sample_dt: float = 1e-3
    ic_noise_sigma: float = 3e-5
    name: str = "custom"

    LOAD_NODE = 3

    def __post_init__(self):
        if not self.t_start <= self.t0 < self.t_max:
            raise ConfigurationError("need t_start <= t0 < t_max")
        if not self.f_low < self.f_nom < self.f_high:
            raise ConfigurationError("frequency band must bracket f_nom")
        if self.relax_band <= 0.0:
            raise ConfigurationError("relax_band must be > 0")
        if self.sample_dt <= 0.0:
            raise ConfigurationError("sample_dt must be > 0")
        if self.network.n_nodes != 4:
            raise ConfigurationError("simulator expects 4 nodes "
                                     "(3 devices + load bus)")
        for dev in range(3):
            if dev not in self.network.coupling:
                raise ConfigurationError(f"device node {dev} needs a coupling")
        branches_seen = set()
        for i, k, _, _ in self.network.branches:
            lo, hi = min(i, k), max(i, k)
            if hi != self.LOAD_NODE or lo > 2:
                raise ConfigurationError("every branch must tie one device "
                                         "node to the load bus (radial)")
            if lo in branches_seen:
                raise ConfigurationError(f"device node {lo} has two branches")
            branches_seen.add(lo)
        if branches_seen != {0, 1, 2}:
            raise ConfigurationError("each device node needs exactly one branch")

    @property
    def omega_nom(self) -> float:
        return 2.0 * math.pi * self.f_nom

    @property
    def maxT_regular(self) -> float:
        return max(inv.T for inv in self.inverters)

    @property
    def relax_edge_side(self) -> int:
        """1: relaxation monitored at the lower band edge (load increase
        sags the frequencies); 2: at the upper edge (load decrease)."""
        return 1 if self.P_load_after >= self.P_load_before else 2

    def with_phi(self, phi: VismaParams | Sequence[float]) -> "ScenarioConfig":
        """Same scenario with the four tuned machine parameters replaced."""
        if isinstance(phi, VismaParams):
            new = replace(self.visma, J=phi.J, k_d=phi.k_d, T_d=phi.T_d,
                          K_I=phi.K_I)
        else:
            J, k_d, T_d, K_I = phi
            new = replace(self.visma, J=J, k_d=k_d, T_d=T_d, K_I=K_I)
        return replace(self, visma=new)

    def kernel_params(self) -> np.ndarray:
        """Packed parameter vector for the compiled kernels."""
        cached = getattr(self, "_packed", None)
        if cached is not None:
            return cached
        adm = build_admittance(self.network)
        p = np.zeros(K.NPARAMS)
        p[K.P_WNOM] = self.omega_nom
        p[K.P_VNOM] = self.V_nom
        v = self.visma
        p[K.P_J] = v.J
        p[K.P_KD] = v.k_d
        p[K.P_TD] = v.T_d
        p[K.P_KI] = v.K_I
        p[K.P_KV] = v.k_V
        p[K.P_TINV] = v.T_inv
        p[K.P_KAWU] = v.K_awu
        p[K.P_KP1] = v.k_P1
        p[K.P_PNOM1] = v.P_nom1
        p[K.P_XSAT] = v.S_rated
        for n, inv in enumerate(self.inverters):
            base = K.P_T2 if n == 0 else K.P_T3
            p[base + 0] = inv.T
            p[base + 1] = inv.k_P
            p[base + 2] = inv.k_Q
            p[base + 3] = inv.P_nom
            p[base + 4] = inv.Q_nom
        for dev in range(3):
            p[K.P_G1 + 2 * dev] = adm.G[dev, self.LOAD_NODE]
            p[K.P_B1 + 2 * dev] = adm.B[dev, self.LOAD_NODE]
            yc = self.network.coupling[dev].admittance(self.network.omega_eval)
            p[K.P_GC1 + 2 * dev] = yc.real
            p[K.P_BC1 + 2 * dev] = yc.imag
        p.setflags(write=False)
        object.__setattr__(self, "_packed", p)
        return p

    def atol_vector(self, atol: float) -> np.ndarray:
        """Absolute tolerances scaled by the natural magnitude of each
        state class (speeds, secondary power, voltages, angles)."""
        w = self.omega_nom
        xs = max(self.visma.S_rated, 1.0)
        scales = np.array([w, w, xs, self.V_nom, 1.0, w, self.V_nom,
                           1.0, w, self.V_nom])
        return atol * scales

    def phi(self) -> VismaParams:
        return self.visma


@dataclass
class Trajectory:
    """Sampled transient, first sample at t0 (pre-jump values)."""

    t: np.ndarray
    states: np.ndarray       # (n, 10), devices.STATE_ORDER
    V_load: np.ndarray
    dtheta_load: np.ndarray
    P: np.ndarray            # (n, 3) device active injections
    Q: np.ndarray            # (n, 3)
    V_grid: np.ndarray       # (n, 3) grid-side voltage magnitudes

    CSV_HEADER = ("t,f1,f2,f3,V1,V2,V3,Vgrid1,Vgrid2,Vgrid3,Vload,"
                  "P1,P2,P3,x,d")

    @property
    def f(self) -> np.ndarray:
        return self.states[:, [K.IW1, K.IW2, K.IW3]] / (2.0 * math.pi)

    def state_at(self, idx: int) -> SystemState:
        return SystemState.from_vector(self.states[idx],
                                       V_load=float(self.V_load[idx]),
                                       dtheta_load=float(self.dtheta_load[idx]))

    def write_csv(self, path, comment_lines: Sequence[str] = ()) -> None:
        f = self.f
        with open(path, "w") as fh:
            for line in comment_lines:
                fh.write(f"# {line}\n")
            fh.write(self.CSV_HEADER + "\n")
            for i in range(len(self.t)):
                row = [self.t[i], f[i, 0], f[i, 1], f[i, 2],
                       self.states[i, K.IV1], self.states[i, K.IV2],
                       self.states[i, K.IV3], self.V_grid[i, 0],
                       self.V_grid[i, 1], self.V_grid[i, 2], self.V_load[i],
                       self.P[i, 0], self.P[i, 1], self.P[i, 2],
                       self.states[i, K.IX], self.states[i, K.ID]]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def solve_load_bus(scenario: ScenarioConfig, V: Sequence[float],
                   dtheta: Sequence[float], P_load: float, Q_load: float,
                   guess: tuple[float, float] | None = None
                   ) -> tuple[float, float]:
    """Algebraic load-bus solution for given device voltages/angles.

    V and dtheta list the three device nodes (the machine angle entry is
    ignored as the reference and may be given as 0). The consumed load
    enters with positive sign. Raises InstabilityError on divergence.
    """
    p = scenario.kernel_params()
    bus = np.array([guess[0] if guess else scenario.V_nom,
                    guess[1] if guess else 0.0])
    ok = K.bus_solve(p, P_load, Q_load, float(V[0]), float(V[1]), float(V[2]),
                     float(dtheta[1]), float(dtheta[2]), bus)
    if ok < 0:
        raise InstabilityError("load-bus solve diverged (voltage collapse)")
    return float(bus[0]), float(bus[1])


_STEADY_CACHE: dict = {}


def _steady_cache_key(scenario: ScenarioConfig, P_load: float):
    p = scenario.kernel_params().copy()
    # the steady state does not depend on the tuned machine parameters
    p[[K.P_J, K.P_KD, K.P_TD, K.P_KI]] = 0.0
    return (p.tobytes(), float(P_load), float(scenario.Q_load))


def solve_steady_state(scenario: ScenarioConfig, P_load: float | None = None,
                       use_cache: bool = True) -> SystemState:
    """Operating point with all frequencies at f_nom and zero derivative.

    Solves the 12-dimensional system (ten state derivatives plus the two
    load-bus constraints) with the MINPACK hybrid Powell method and
    verifies the scaled residual afterwards.
    """
    if P_load is None:
        P_load = scenario.P_load_before
    key = _steady_cache_key(scenario, P_load)
    if use_cache and key in _STEADY_CACHE:
        return _STEADY_CACHE[key]

    p = scenario.kernel_params()
    wnom = scenario.omega_nom
    vnom = scenario.V_nom
    x0 = P_load - (scenario.visma.P_nom1
                   + sum(i.P_nom for i in scenario.inverters))
    z0 = np.array([wnom, -wnom, x0, vnom, 0.0, wnom, vnom, 0.0, wnom, vnom,
                   vnom, -0.01])
    out = np.empty(12)

    def residual(z):
        st = K.steady_residual(z, p, P_load, scenario.Q_load, out)
        if st != K.OK:
            return np.full(12, 1e9)
        return out.copy()

    sol = scipy.optimize.root(residual, z0, method="hybr",
                              options={"xtol": 1e-14, "maxfev": 4000})
    z = sol.x
    scale = np.concatenate([scenario.atol_vector(1.0),
                            np.full(2, max(1.0, abs(P_load)))])
    res = residual(z)
    if not np.all(np.abs(res) / scale < 1e-10):
        raise NoSteadyStateError(
            f"steady-state residual too large (max scaled "
            f"{np.max(np.abs(res) / scale):.3e}) for P_load = {P_load} W")
    state = SystemState.from_vector(z[:10], V_load=float(z[10]),
                                    dtheta_load=float(z[11]))
    if use_cache:
        _STEADY_CACHE[key] = state
    return state


def steady_injections(scenario: ScenarioConfig, state: SystemState,
                      P_load: float) -> dict:
    """Derived per-node quantities of a steady state, for reporting."""
    from .devices import assemble_derivative

    _, (v4, th4) = assemble_derivative(state, scenario, P_load=P_load)
    p = scenario.kernel_params()
    pq = np.empty(6)
    K.device_powers(p, state.V_1, state.V_2, state.V_3, state.dtheta_2,
                    state.dtheta_3, v4, th4, pq)
    vg = [K.grid_voltage_mag(pq[i], pq[3 + i],
                             (state.V_1, state.V_2, state.V_3)[i],
                             p[K.P_GC1 + 2 * i], p[K.P_BC1 + 2 * i])
          for i in range(3)]
    sat_x = min(max(state.x, -scenario.visma.S_rated), scenario.visma.S_rated)
    p_inject = (scenario.visma.P_nom1
                + (scenario.omega_nom - state.omega_1) / scenario.visma.k_P1
                + sat_x)
    return {"P": pq[:3].tolist(), "Q": pq[3:].tolist(), "V_grid": vg,
            "V_load": v4, "dtheta_load": th4, "P_inject": p_inject,
            "x": state.x, "d": state.d}


@dataclass(frozen=True)
class KernelRun:
    status: int
    t_end: float
    delta_f: float
    delta_V: float
    violated: bool
    relaxed: bool
    reentry: np.ndarray
    departed: np.ndarray
    f_ref: np.ndarray
    vg_ref: np.ndarray
    n_steps: int
    traj: Trajectory | None


def _run_kernel(scenario: ScenarioConfig, y0: np.ndarray, bus0: np.ndarray,
                rtol: float, atol: float, record: bool,
                stop_violation: bool) -> KernelRun:
    p = scenario.kernel_params()
    atol_vec = scenario.atol_vector(atol)
    cap = int(np.ceil((scenario.t_max - scenario.t0) / scenario.sample_dt)) + 8 \
        if record else 1
    traj_t = np.empty(cap)
    traj_y = np.empty((cap, K.NSTATE))
    traj_aux = np.empty((cap, K.NAUX))
    f_ref = np.empty(3)
    vg_ref = np.empty(4)
    reentry = np.empty(3)
    departed = np.zeros(3, dtype=np.uint8)
    fpeaks = np.empty(3)
    out = np.zeros(K.NOUT)
    y = y0.copy()
    bus = bus0.copy()
    K.simulate_kernel(y, bus, p,
                      scenario.P_load_before, scenario.Q_load,
                      scenario.P_load_after, scenario.Q_load,
                      scenario.t_start, scenario.t0, scenario.t_max,
                      rtol, atol_vec, MAX_STEP,
                      scenario.f_low, scenario.f_high,
                      scenario.V_low, scenario.V_high,
                      scenario.relax_band, scenario.relax_edge_side,
                      scenario.confirm_window,
                      scenario.sample_dt, 1 if record else 0,
                      1 if stop_violation else 0,
                      traj_t, traj_y, traj_aux,
                      f_ref, vg_ref, reentry, departed, fpeaks, out)
    status = int(out[K.O_STATUS])
    traj = None
    if record and status == K.OK:
        n = int(out[K.O_NREC])
        traj = Trajectory(
            t=traj_t[:n].copy(),
            states=traj_y[:n].copy(),
            V_load=traj_aux[:n, K.A_V4].copy(),
            dtheta_load=traj_aux[:n, K.A_TH4].copy(),
            P=traj_aux[:n, K.A_P1:K.A_P3 + 1].copy(),
            Q=traj_aux[:n, K.A_Q1:K.A_Q3 + 1].copy(),
            V_grid=traj_aux[:n, K.A_VG1:K.A_VG3 + 1].copy(),
        )
    return KernelRun(status=status, t_end=float(out[K.O_TEND]),
                     delta_f=float(out[K.O_DFPEAK]),
                     delta_V=float(out[K.O_DVPEAK]),
                     violated=bool(out[K.O_VIOLATED]),
                     relaxed=bool(out[K.O_RELAXED]),
                     reentry=reentry, departed=departed,
                     f_ref=f_ref, vg_ref=vg_ref,
                     n_steps=int(out[K.O_NSTEPS]), traj=traj)


def _raise_for_status(status: int, t_end: float) -> None:
    if status == K.ERR_OMEGA:
        raise InstabilityError("machine speed or device voltage collapsed",
                               t=t_end)
    if status == K.ERR_BUS:
        raise InstabilityError("load-bus solve diverged (voltage collapse)",
                               t=t_end)
    if status == K.ERR_UNDERFLOW:
        raise InstabilityError("integration step size underflow", t=t_end)


def _metrics_from_run(run: KernelRun, scenario: ScenarioConfig
                      ) -> TransientMetrics:
    # relaxation requires the confirmed settle; a device that departed and
    # never stamped a crossing back, or a run that ran out of horizon
    # while still wandering, is a timeout.
    timed_out = bool(np.any((run.departed != 0) & (run.reentry < 0.0))) \
        or not run.relaxed
    if timed_out:
        t_final = scenario.t_max - scenario.t0
    else:
        t_relax = scenario.t0
        for dev in range(3):
            if run.departed[dev] != 0 and run.reentry[dev] > t_relax:
                t_relax = run.reentry[dev]
        t_final = t_relax - scenario.t0
    return TransientMetrics(t_final=t_final, delta_f_peak=run.delta_f,
                            delta_V_peak=run.delta_V, violated=run.violated,
                            timed_out=timed_out)


def perturbed_initial_state(scenario: ScenarioConfig, seed) -> np.ndarray:
    """Pre-jump steady state with seeded multiplicative Gaussian noise."""
    base = solve_steady_state(scenario, scenario.P_load_before)
    y = base.to_vector()
    if scenario.ic_noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        y = y * (1.0 + scenario.ic_noise_sigma * rng.standard_normal(y.size))
    return y


def integrate(initial: SystemState, scenario: ScenarioConfig,
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL
              ) -> Trajectory:
    """Integrate the perturbation experiment from a given initial state.

    Runs from t_start through the load switch at t0 until confirmed
    relaxation or t_max, recording on the sample_dt cadence (first sample
    at t0 with pre-jump values). Raises InstabilityError on solver failure.
    """
    y0 = initial.to_vector()
    bus0 = np.array([initial.V_load if np.isfinite(initial.V_load)
                     else scenario.V_nom,
                     initial.dtheta_load if np.isfinite(initial.dtheta_load)
                     else 0.0])
    run = _run_kernel(scenario, y0, bus0, rtol, atol, record=True,
                      stop_violation=False)
    _raise_for_status(run.status, run.t_end)
    return run.traj


def run_perturbation(phi: VismaParams, scenario: ScenarioConfig,
                     ic_noise_seed, rtol: float = DEFAULT_RTOL,
                     atol: float = DEFAULT_ATOL
                     ) -> tuple[Trajectory, TransientMetrics]:
    """Full perturbation experiment for one parameter set.

    Solves the pre-jump steady state, applies seeded multiplicative
    Gaussian noise to the initial conditions, integrates through the load
    step with continuous band monitoring and returns the recorded
    trajectory together with the transient metrics. The tuning
    constraints are re-checked here; violating parameter sets are
    refused outright.
    """
    from .metrics import check_constraints

    scn = scenario.with_phi(phi)
    chk = check_constraints(scn.visma, scn.maxT_regular, scn.omega_nom)
    if not chk.accepted:
        raise ConfigurationError(f"parameter set violates constraints: "
                                 f"{chk.reason}")
    y0 = perturbed_initial_state(scn, ic_noise_seed)
    bus0 = np.array([scn.V_nom, 0.0])
    run = _run_kernel(scn, y0, bus0, rtol, atol, record=True,
                      stop_violation=False)
    _raise_for_status(run.status, run.t_end)
    return run.traj, _metrics_from_run(run, scn)


def evaluate_transient(phi: VismaParams, scenario: ScenarioConfig,
                       ic_noise_seed, rtol: float = DEFAULT_RTOL,
                       atol: float = DEFAULT_ATOL) -> TransientMetrics:
    """Metrics-only evaluation (no trajectory storage, stops at the first
    band violation); the optimiser's inner loop."""
    scn = scenario.with_phi(phi)
    y0 = perturbed_initial_state(scn, ic_noise_seed)
    bus0 = np.array([scn.V_nom, 0.0])
    run = _run_kernel(scn, y0, bus0, rtol, atol, record=False,
                      stop_violation=True)
    _raise_for_status(run.status, run.t_end)
    return _metrics_from_run(run, scn)


def relaxation_time(traj: Trajectory, t0: float,
                    relax_band: float = 1e-3, f_nom: float = 50.0,
                    edge_side: int = 1) -> float:
    """Relaxation time from a recorded trajectory.

    A device frequency that leaves the band |f - f_nom| <= relax_band
    through the monitored edge (the lower edge for a load increase,
    edge_side 1; the upper for a decrease, edge_side 2) relaxes at its
    crossings back through that same edge; its moment is the last such
    crossing. Overshoot through the opposite edge creates no new moment.
    The result is the largest moment over the devices, minus t0; devices
    that never cross the monitored edge contribute t0. A device that
    departs and never crosses back, or ends outside the band, yields inf
    (timeout signal).
    """
    sel = traj.t > t0
    if not np.any(sel):
        return 0.0
    i0 = int(np.argmax(sel))
    lo = f_nom - relax_band
    hi = f_nom + relax_band
    t_relax = t0
    for dev in range(3):
        f = traj.f[:, dev]
        departed = False
        stamp = -1.0
        prev = f[max(i0 - 1, 0)]
        for i in range(i0, len(f)):
            cur = f[i]
            if edge_side == 1:
                if not departed:
                    departed = cur < lo
                elif prev < lo <= cur:
                    stamp = traj.t[i]
            else:
                if not departed:
                    departed = cur > hi
                elif prev > hi >= cur:
                    stamp = traj.t[i]
            prev = cur
        if departed:
            if stamp < 0.0 or not lo <= f[-1] <= hi:
                return math.inf
            t_relax = max(t_relax, stamp)
    return float(t_relax - t0)
