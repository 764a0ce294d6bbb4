import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import pytest

from vismaopt.devices import VismaParams
from vismaopt.errors import InfeasibleStartError
from vismaopt.metrics import REJECTED_ENERGY
from vismaopt.tempering import (DEFAULT_TEMPERATURES, EvalResult,
                                LadderConfig, Replica, metropolis_accept,
                                propose, run_tempering, swap_attempt, sweep)


def phi(J=5.0, k_d=1e-4, T_d=0.5, K_I=500.0):
    return VismaParams(J=J, k_d=k_d, T_d=T_d, K_I=K_I)


class ForcedRNG:
    """Deterministic stand-in feeding prescribed draws."""

    def __init__(self, integers=(), uniforms=(), randoms=()):
        self._integers = list(integers)
        self._uniforms = list(uniforms)
        self._randoms = list(randoms)

    def integers(self, *args, **kwargs):
        return self._integers.pop(0)

    def uniform(self, lo, hi):
        return self._uniforms.pop(0)

    def random(self):
        return self._randoms.pop(0)


@dataclass(frozen=True)
class LogBowl:
    """Quadratic bowl in log-parameter space with a known minimum."""

    target: tuple = (5.0, 1e-4, 0.5, 500.0)

    def __call__(self, p, rng):
        e = sum(math.log(v / t) ** 2
                for v, t in zip(p.as_tuple(), self.target))
        return EvalResult(energy=e)


@dataclass(frozen=True)
class ConstantObjective:
    value: float = 3.0

    def __call__(self, p, rng):
        return EvalResult(energy=self.value)


@dataclass(frozen=True)
class AlwaysRejected:
    def __call__(self, p, rng):
        return EvalResult(energy=REJECTED_ENERGY, reason="test")


def test_metropolis_downhill_always_accepts(rng):
    assert metropolis_accept(10.0, 9.9999, 1e-9, rng)
    assert metropolis_accept(10.0, 10.0, 1e-9, rng)


def test_metropolis_never_accepts_rejected(rng):
    for theta in (0.01, 1.0, 1e9):
        assert not metropolis_accept(1.0, REJECTED_ENERGY, theta, rng)


def test_metropolis_accepts_finite_over_rejected(rng):
    assert metropolis_accept(REJECTED_ENERGY, 1e6, 0.01, rng)


def test_metropolis_rate_matches_formula(rng):
    n = 100_000
    theta = 0.7
    hits = sum(metropolis_accept(1.0, 1.0 + theta, theta, rng)
               for _ in range(n))
    p = math.exp(-1.0)
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) < 3.0 * sigma


def test_metropolis_hot_ladder_accepts_everything_finite(rng):
    # the top temperature accepts essentially any finite candidate
    # (p = exp(-1e6/1e9) = 0.999 for a huge uphill move)
    hits = sum(metropolis_accept(1.0, 1e6, 1e9, rng) for _ in range(1000))
    assert hits >= 990
    assert metropolis_accept(1.0, 100.0, 1e9, rng)


def test_propose_formula_extremes():
    # r = -1 at width 0.8 scales by |1 - 0.8| = 0.2
    out = propose(phi(J=1.0), 0.8, ForcedRNG(integers=[0], uniforms=[-1.0]))
    assert out.J == pytest.approx(0.2, rel=1e-12)
    # r = +1 at width 0.4 scales by 1.4
    out = propose(phi(T_d=1.0), 0.4, ForcedRNG(integers=[2], uniforms=[1.0]))
    assert out.T_d == pytest.approx(1.4, rel=1e-12)


def test_propose_changes_exactly_one_parameter(rng):
    base = phi()
    for _ in range(200):
        cand = propose(base, 0.8, rng)
        diffs = [a != b for a, b in zip(cand.as_tuple(), base.as_tuple())]
        assert sum(diffs) == 1
        assert min(cand.as_tuple()) > 0.0


def test_propose_selects_parameters_uniformly(rng):
    n = 100_000
    counts = Counter()
    base = phi()
    for _ in range(n):
        cand = propose(base, 0.8, rng)
        for i, (a, b) in enumerate(zip(cand.as_tuple(), base.as_tuple())):
            if a != b:
                counts[i] += 1
    sigma = math.sqrt(n * 0.25 * 0.75)
    for i in range(4):
        assert abs(counts[i] - n * 0.25) < 3.0 * sigma


def test_propose_redraws_zero_multiplier():
    # first draw makes m = |1 - 1| = 0 and must be redrawn
    out = propose(phi(K_I=100.0), 1.0,
                  ForcedRNG(integers=[3], uniforms=[-1.0, 0.5]))
    assert out.K_I == pytest.approx(150.0, rel=1e-12)


def _replica(theta=1.0, energy=1.0, seed=0, p=None):
    return Replica(theta=theta, phi=p or phi(), energy=energy,
                   rng=np.random.default_rng(seed))


def test_sweep_constant_objective_accepts_all():
    rep = _replica(theta=0.01, energy=3.0)
    stats = sweep(rep, ConstantObjective(3.0), 0.8, n_iterations=8)
    assert stats.evaluations == 8
    assert stats.accepted == 8


def test_sweep_toy_objective_descends_on_cold_replica():
    obj = LogBowl()
    finals = []
    for seed in range(6):
        rep = _replica(theta=0.01, seed=seed,
                       p=phi(J=20.0, k_d=4e-4, T_d=2.0, K_I=100.0))
        rep.energy = obj(rep.phi, rep.rng).energy
        start = rep.energy
        for _ in range(30):
            sweep(rep, obj, 0.8, n_iterations=8)
        finals.append(rep.energy < start * 0.5)
    assert sum(finals) >= 5


def test_sweep_all_rejected_leaves_replica_unchanged():
    rep = _replica(theta=1e9, energy=2.0)
    before = rep.phi
    stats = sweep(rep, AlwaysRejected(), 0.8, n_iterations=8)
    assert stats.accepted == 0
    assert rep.phi == before
    assert rep.energy == 2.0


def test_swap_equal_energies_always_swap(rng):
    reps = [_replica(theta=0.5, energy=4.0), _replica(theta=1.0, energy=4.0)]
    assert swap_attempt(reps, 1, rng)


def test_swap_exchanges_configurations(rng):
    pa, pb = phi(J=1.0), phi(J=2.0)
    reps = [_replica(theta=0.5, energy=9.0, p=pa),
            _replica(theta=1.0, energy=1.0, p=pb)]
    assert swap_attempt(reps, 1, rng)  # better config moves down: p = 1
    assert reps[0].phi == pb and reps[1].phi == pa
    assert reps[0].energy == 1.0 and reps[1].energy == 9.0
    assert reps[0].theta == 0.5 and reps[1].theta == 1.0


def test_swap_rate_matches_formula(rng):
    theta1, theta2 = 1.0, 3.0
    e1, e2 = 1.0, 2.5   # uphill exchange: p = exp((1/t1 - 1/t2)(e1 - e2))
    p = math.exp((1.0 / theta1 - 1.0 / theta2) * (e1 - e2))
    n = 100_000
    hits = 0
    for _ in range(n):
        reps = [_replica(theta=theta1, energy=e1),
                _replica(theta=theta2, energy=e2)]
        hits += swap_attempt(reps, 1, rng)
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) < 3.0 * sigma


def test_swap_rejected_state_only_moves_up(rng):
    down = [_replica(theta=0.5, energy=REJECTED_ENERGY),
            _replica(theta=1.0, energy=2.0)]
    assert swap_attempt(down, 1, rng)        # rejected moves up-ladder
    assert down[1].energy == REJECTED_ENERGY
    up = [_replica(theta=0.5, energy=2.0),
          _replica(theta=1.0, energy=REJECTED_ENERGY)]
    assert not swap_attempt(up, 1, rng)      # never moves down-ladder


def test_swap_preserves_configuration_multiset(rng):
    reps = [_replica(theta=t, energy=float(i), p=phi(J=float(i + 1)))
            for i, t in enumerate((0.1, 0.5, 2.0, 10.0))]
    reps[2].energy = REJECTED_ENERGY
    before = Counter((r.phi.as_tuple(), r.energy) for r in reps)
    for _ in range(200):
        k = int(rng.integers(1, len(reps)))
        swap_attempt(reps, k, rng)
    after = Counter((r.phi.as_tuple(), r.energy) for r in reps)
    assert before == after


def test_swap_index_out_of_range_is_hard_error(rng):
    reps = [_replica(), _replica()]
    with pytest.raises(IndexError):
        swap_attempt(reps, 0, rng)
    with pytest.raises(IndexError):
        swap_attempt(reps, 2, rng)


def test_boltzmann_sampling_three_state(rng):
    # fixed-temperature Metropolis chain over three states with symmetric
    # proposals reproduces the Boltzmann weights
    energies = np.array([0.0, 0.5, 1.3])
    theta = 1.0
    n = 200_000
    state = 0
    counts = np.zeros(3, dtype=int)
    for _ in range(n):
        cand = (state + 1 + int(rng.integers(0, 2))) % 3
        if metropolis_accept(energies[state], energies[cand], theta, rng):
            state = cand
        counts[state] += 1
    w = np.exp(-energies / theta)
    p = w / w.sum()
    for i in range(3):
        sigma = math.sqrt(n * p[i] * (1 - p[i]))
        # correlated samples: allow a generous multiple of the iid sigma
        assert abs(counts[i] - n * p[i]) < 10.0 * sigma


def _toy_config(rounds=60, seed=0):
    return LadderConfig(n_swap_rounds=rounds, master_seed=seed)


def test_run_tempering_toy_convergence():
    obj = LogBowl()
    start = phi(J=60.0, k_d=2e-3, T_d=4.0, K_I=40.0)
    res = run_tempering(obj, _toy_config(rounds=60, seed=3),
                        initial_phi=start)
    for got, want in zip(res.phi_min.as_tuple(), obj.target):
        assert abs(got / want - 1.0) < 0.05
    assert res.E_min < 1e-2


def test_run_tempering_best_trace_monotone():
    res = run_tempering(LogBowl(), _toy_config(rounds=40, seed=1),
                        initial_phi=phi(J=30.0))
    bt = res.best_trace
    assert all(b <= a + 1e-15 for a, b in zip(bt, bt[1:]))


def test_run_tempering_bit_reproducible():
    a = run_tempering(LogBowl(), _toy_config(rounds=25, seed=7),
                      initial_phi=phi(J=30.0))
    b = run_tempering(LogBowl(), _toy_config(rounds=25, seed=7),
                      initial_phi=phi(J=30.0))
    assert a.phi_min == b.phi_min
    assert a.E_min == b.E_min
    assert a.trace == b.trace


def test_run_tempering_multiset_preserved_every_round():
    records = []

    def on_round(phase, rnd, pre, post):
        records.append((Counter(pre), Counter(post)))

    run_tempering(LogBowl(), _toy_config(rounds=30, seed=5),
                  initial_phi=phi(J=30.0), on_round=on_round)
    assert len(records) == 60
    for pre, post in records:
        assert pre == post


def test_run_tempering_infeasible_start_raises():
    with pytest.raises(InfeasibleStartError):
        run_tempering(AlwaysRejected(), _toy_config(rounds=3, seed=0),
                      initial_phi=phi())


def test_run_tempering_trace_shape():
    cfg = _toy_config(rounds=10, seed=2)
    res = run_tempering(LogBowl(), cfg, initial_phi=phi(J=30.0))
    n = len(cfg.temperatures)
    assert len(res.trace) == 2 * 10 * n
    phases = {row[0] for row in res.trace}
    assert phases == {1, 2}
    thetas = {row[3] for row in res.trace}
    assert thetas == set(DEFAULT_TEMPERATURES)
    assert res.n_evaluations == (2 * 10 * 2 * 4 + 2) * n


def test_ladder_config_validation():
    from vismaopt.errors import ConfigurationError
    with pytest.raises(ConfigurationError):
        LadderConfig(temperatures=(1.0, 0.5))
    with pytest.raises(ConfigurationError):
        LadderConfig(n_swap_rounds=0)


def test_run_tempering_workers_match_serial():
    from vismaopt.scenario import (default_initial_phi, default_weights,
                                   load_paper_scenario)
    from vismaopt.tempering import ScenarioObjective

    scn = load_paper_scenario(1)
    obj = ScenarioObjective(scn, default_weights(1))
    phi0 = default_initial_phi(scn)
    cfg = LadderConfig(n_swap_rounds=1, master_seed=9)
    a = run_tempering(obj, cfg, initial_phi=phi0, workers=1)
    b = run_tempering(obj, cfg, initial_phi=phi0, workers=2)
    assert a.phi_min == b.phi_min
    assert a.E_min == b.E_min
    assert a.trace == b.trace
