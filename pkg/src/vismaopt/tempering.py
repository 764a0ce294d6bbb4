"""Parallel Tempering over the four tuned machine parameters.

A ladder of replicas at fixed artificial temperatures runs Metropolis
sweeps with multiplicative single-parameter proposals; after the sweeps
of a round, neighbouring replicas attempt configuration swaps. The run
is two-phase: a coarse pass with wide proposals, then a restart of the
whole ladder at the incumbent minimum with narrower proposals. Every
replica owns an independent RNG stream spawned from the master seed, so
results are reproducible bit-for-bit and independent of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .devices import VismaParams
from .errors import ConfigurationError, InfeasibleStartError, InstabilityError
from .metrics import (REJECTED_ENERGY, CostWeights, TransientMetrics,
                      check_constraints, cost)
from .sim import DEFAULT_ATOL, DEFAULT_RTOL, ScenarioConfig, evaluate_transient

#: temperature ladder; the top entry accepts every feasible move.
DEFAULT_TEMPERATURES = (0.01, 0.02, 0.07, 0.2, 0.5, 1.0, 3.0, 7.0, 20.0,
                        50.0, 100.0, 1e9)

PARAM_NAMES = ("J", "k_d", "T_d", "K_I")


@dataclass(frozen=True)
class EvalResult:
    energy: float
    metrics: TransientMetrics | None = None
    reason: str = ""

    @property
    def rejected(self) -> bool:
        return not math.isfinite(self.energy)


Objective = Callable[[VismaParams, np.random.Generator], EvalResult]


@dataclass(frozen=True)
class ScenarioObjective:
    """Cost evaluation for one scenario and weight set.

    Constraint violations short-circuit to the rejected energy before any
    simulation runs; every simulation draws a fresh initial-condition
    seed from the calling replica's stream.
    """

    scenario: ScenarioConfig
    weights: CostWeights
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL

    def __call__(self, phi: VismaParams,
                 rng: np.random.Generator) -> EvalResult:
        chk = check_constraints(phi, self.scenario.maxT_regular,
                                self.scenario.omega_nom)
        if not chk.accepted:
            return EvalResult(REJECTED_ENERGY, None, chk.reason)
        seed = int(rng.integers(0, 2 ** 63 - 1))
        try:
            metrics = evaluate_transient(phi, self.scenario, seed,
                                         self.rtol, self.atol)
        except InstabilityError as exc:
            return EvalResult(REJECTED_ENERGY, None, f"unstable: {exc}")
        energy = cost(metrics, self.weights, phi)
        reason = ""
        if not math.isfinite(energy):
            reason = "band violation" if metrics.violated else "no relaxation"
        return EvalResult(energy, metrics, reason)


@dataclass
class Replica:
    theta: float
    phi: VismaParams
    energy: float
    rng: np.random.Generator
    metrics: TransientMetrics | None = None


@dataclass(frozen=True)
class LadderConfig:
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    n_swap_rounds: int = 200
    sweeps_per_round: int = 2
    iterations_per_sweep: int = 4
    r_perc_coarse: float = 0.8
    r_perc_fine: float = 0.4
    master_seed: int = 0
    initial_phi: VismaParams | None = None

    def __post_init__(self):
        t = self.temperatures
        if len(t) < 2 or any(a >= b for a, b in zip(t, t[1:])):
            raise ConfigurationError("temperatures must be strictly increasing")
        if self.n_swap_rounds < 1 or self.sweeps_per_round < 1 \
                or self.iterations_per_sweep < 1:
            raise ConfigurationError("round/sweep counts must be >= 1")
        if not 0.0 < self.r_perc_coarse or not 0.0 < self.r_perc_fine:
            raise ConfigurationError("proposal widths must be > 0")


def metropolis_accept(E1: float, E2: float, theta: float,
                      rng: np.random.Generator) -> bool:
    """Metropolis acceptance of a candidate with energy E2 against E1.

    Rejected energies are never accepted at any temperature; a finite
    candidate always replaces a rejected current state. The random draw
    happens only when the decision is genuinely probabilistic, so RNG
    streams advance deterministically.
    """
    if not math.isfinite(E2):
        return False
    if E2 <= E1:
        return True
    return rng.random() < math.exp(-(E2 - E1) / theta)


def propose(phi: VismaParams, r_perc: float,
            rng: np.random.Generator) -> VismaParams:
    """Scale one of the four tuned parameters, chosen uniformly, by
    |1 + r_perc*r| with r drawn uniformly from [-1, 1]."""
    idx = int(rng.integers(0, len(PARAM_NAMES)))
    while True:
        r = rng.uniform(-1.0, 1.0)
        m = abs(1.0 + r_perc * r)
        if m > 0.0:
            break
    name = PARAM_NAMES[idx]
    return replace(phi, **{name: getattr(phi, name) * m})


@dataclass
class SweepStats:
    evaluations: int = 0
    accepted: int = 0
    best: tuple[VismaParams, EvalResult] | None = None


def sweep(replica: Replica, objective: Objective, r_perc: float,
          n_iterations: int = 8) -> SweepStats:
    """One Metropolis sweep of a replica: n_iterations propose/evaluate/
    accept cycles with the replica's own RNG stream. The replica is
    updated in place; the best finite evaluation seen is reported."""
    stats = SweepStats()
    for _ in range(n_iterations):
        cand = propose(replica.phi, r_perc, replica.rng)
        ev = objective(cand, replica.rng)
        stats.evaluations += 1
        if not ev.rejected and (stats.best is None
                                or ev.energy < stats.best[1].energy):
            stats.best = (cand, ev)
        if metropolis_accept(replica.energy, ev.energy, replica.theta,
                             replica.rng):
            replica.phi = cand
            replica.energy = ev.energy
            replica.metrics = ev.metrics
            stats.accepted += 1
    return stats


def swap_attempt(replicas: Sequence[Replica], k: int,
                 rng: np.random.Generator) -> bool:
    """Attempt the configuration exchange of ladder neighbours k, k+1
    (1-based pair index). Temperatures stay attached to their slots.

    With one rejected energy in the pair, the rejected configuration only
    ever moves up-ladder; two rejected configurations exchange freely.
    """
    n = len(replicas)
    if not 1 <= k <= n - 1:
        raise IndexError(f"swap index k = {k} outside [1, {n - 1}]")
    lo = replicas[k - 1]
    hi = replicas[k]
    f_lo = math.isfinite(lo.energy)
    f_hi = math.isfinite(hi.energy)
    if f_lo and f_hi:
        expo = (1.0 / lo.theta - 1.0 / hi.theta) * (lo.energy - hi.energy)
        swapped = True if expo >= 0.0 else rng.random() < math.exp(expo)
    elif f_lo and not f_hi:
        swapped = False
    else:
        swapped = True
    if swapped:
        lo.phi, hi.phi = hi.phi, lo.phi
        lo.energy, hi.energy = hi.energy, lo.energy
        lo.metrics, hi.metrics = hi.metrics, lo.metrics
    return swapped


@dataclass
class TemperingResult:
    phi_min: VismaParams
    E_min: float
    metrics_min: TransientMetrics | None
    trace: list[tuple]
    best_trace: list[float]
    n_evaluations: int
    n_accepted: int

    TRACE_HEADER = "phase,round,replica,theta,energy,J,kd,Td,KI"


def _replica_round(payload):
    """Worker task: run the sweeps of one replica for one round."""
    replica, objective, r_perc, sweeps_per_round, iterations = payload
    best = None
    evals = 0
    acc = 0
    for _ in range(sweeps_per_round):
        st = sweep(replica, objective, r_perc, iterations)
        evals += st.evaluations
        acc += st.accepted
        if st.best is not None and (best is None
                                    or st.best[1].energy < best[1].energy):
            best = st.best
    return replica, best, evals, acc


def run_tempering(objective: Objective, config: LadderConfig,
                  initial_phi: VismaParams | None = None,
                  workers: int = 1,
                  on_round: Callable | None = None) -> TemperingResult:
    """Two-phase Parallel Tempering run.

    Each round performs sweeps_per_round sweeps of iterations_per_sweep
    Metropolis iterations on every replica, then n-1 neighbour swap
    attempts at uniformly random positions. Phase 1 uses the coarse
    proposal width; the ladder then restarts at the incumbent minimum
    with the fine width. Returns the best configuration ever evaluated.

    on_round, if given, is called as on_round(phase, round_index,
    pre_swap, post_swap) with (phi-tuple, energy) snapshots.
    """
    phi0 = initial_phi or config.initial_phi
    if phi0 is None:
        raise ConfigurationError("no initial parameter set given")
    temps = config.temperatures
    n = len(temps)
    seeds = np.random.SeedSequence(config.master_seed).spawn(n + 1)
    replicas = [Replica(theta=temps[i], phi=phi0, energy=REJECTED_ENERGY,
                        rng=np.random.default_rng(seeds[i]))
                for i in range(n)]
    coord = np.random.default_rng(seeds[n])

    best_phi = phi0
    best_energy = REJECTED_ENERGY
    best_metrics: TransientMetrics | None = None
    n_evals = 0
    n_accepted = 0
    trace: list[tuple] = []
    best_trace: list[float] = []

    def consider(phi, ev):
        nonlocal best_phi, best_energy, best_metrics
        if not ev.rejected and ev.energy < best_energy:
            best_phi, best_energy, best_metrics = phi, ev.energy, ev.metrics

    def evaluate_all():
        nonlocal n_evals
        for r in replicas:
            ev = objective(r.phi, r.rng)
            n_evals += 1
            r.energy = ev.energy
            r.metrics = ev.metrics
            consider(r.phi, ev)

    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        evaluate_all()
        for phase, r_perc in ((1, config.r_perc_coarse),
                              (2, config.r_perc_fine)):
            if phase == 2:
                if not math.isfinite(best_energy):
                    raise InfeasibleStartError(
                        "no feasible configuration found in phase 1")
                for r in replicas:
                    r.phi = best_phi
                evaluate_all()
            for rnd in range(config.n_swap_rounds):
                payloads = [(r, objective, r_perc, config.sweeps_per_round,
                             config.iterations_per_sweep) for r in replicas]
                if pool is None:
                    results = [_replica_round(pl) for pl in payloads]
                else:
                    results = list(pool.map(_replica_round, payloads))
                for i, (rep, best, evals, acc) in enumerate(results):
                    replicas[i] = rep
                    n_evals += evals
                    n_accepted += acc
                    if best is not None:
                        consider(best[0], best[1])
                pre = [(r.phi.as_tuple(), r.energy) for r in replicas]
                for _ in range(n - 1):
                    k = int(coord.integers(1, n))
                    swap_attempt(replicas, k, coord)
                post = [(r.phi.as_tuple(), r.energy) for r in replicas]
                if on_round is not None:
                    on_round(phase, rnd, pre, post)
                for i, r in enumerate(replicas):
                    J, k_d, T_d, K_I = r.phi.as_tuple()
                    trace.append((phase, rnd, i, r.theta, r.energy,
                                  J, k_d, T_d, K_I))
                best_trace.append(best_energy)
    finally:
        if pool is not None:
            pool.shutdown()

    if not math.isfinite(best_energy):
        raise InfeasibleStartError("no feasible configuration found")
    return TemperingResult(phi_min=best_phi, E_min=best_energy,
                           metrics_min=best_metrics, trace=trace,
                           best_trace=best_trace, n_evaluations=n_evals,
                           n_accepted=n_accepted)
