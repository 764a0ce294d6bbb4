import math

import numpy as np
import pytest

from conftest import TABLE3, TABLE5
from vismaopt.devices import VismaParams
from vismaopt.metrics import (REJECTED_ENERGY, ConstraintCheck, CostWeights,
                              TransientMetrics, check_constraints, cost,
                              cost_parts, damping_ratio,
                              linearized_quantities, peak_deviations,
                              visma_energy)
from vismaopt.sim import Trajectory

W_NOM = 2.0 * math.pi * 50.0
KP1_S1 = 0.4 * math.pi / 4000.0
KP1_S2 = 0.4 * math.pi / 9000.0


def phi_s1(J, k_d, T_d, K_I):
    return VismaParams(J=J, k_d=k_d, T_d=T_d, K_I=K_I, k_P1=KP1_S1,
                       P_nom1=500.0, S_rated=4000.0)


def phi_s2(J, k_d, T_d, K_I):
    return VismaParams(J=J, k_d=k_d, T_d=T_d, K_I=K_I, k_P1=KP1_S2,
                       P_nom1=1000.0, S_rated=9000.0)


def synthetic_trajectory(t, f_dev, vgrid=None, vload=None):
    n = len(t)
    states = np.zeros((n, 10))
    states[:, 0] = 2.0 * math.pi * f_dev[:, 0]
    states[:, 5] = 2.0 * math.pi * f_dev[:, 1]
    states[:, 8] = 2.0 * math.pi * f_dev[:, 2]
    vg = np.full((n, 3), 230.0) if vgrid is None else vgrid
    vl = np.full(n, 230.0) if vload is None else vload
    return Trajectory(t=np.asarray(t, dtype=float), states=states,
                      V_load=vl, dtheta_load=np.zeros(n),
                      P=np.zeros((n, 3)), Q=np.zeros((n, 3)), V_grid=vg)


def test_linearized_c_value_scenario1():
    lin = linearized_quantities(phi_s1(5.07, 1e-4, 0.5, 500.0), KP1_S1, W_NOM)
    assert lin.c == pytest.approx(10.13212, rel=1e-6)


def test_linearized_example_damping_and_frequency():
    lin = linearized_quantities(phi_s1(5.07, 1e-4, 0.5, 500.0), KP1_S1, W_NOM)
    assert lin.D == pytest.approx(1.00000994135, rel=1e-9)
    assert lin.Omega == pytest.approx(1.99922256727, rel=1e-9)


def test_linearized_min2_slow_pole_reaches_inverter_time_constant():
    lin = linearized_quantities(phi_s1(91.479, 2.58e-4, 0.5917, 1060.97),
                                KP1_S1, W_NOM)
    assert lin.tau1 == pytest.approx(0.5916982, rel=1e-6)
    assert lin.tau1 >= 0.5


def test_pole_ordering_and_signs():
    lin = linearized_quantities(phi_s1(12.0, 3e-3, 0.8, 100.0), KP1_S1, W_NOM)
    assert lin.s_pole1 < lin.s_pole2 < 0.0
    assert 0.0 < lin.tau1 < lin.tau2


def test_damping_ratio_exceeds_one_for_positive_parameters(rng):
    n = 200_000
    J = 10.0 ** rng.uniform(-4, 4, n)
    k_d = 10.0 ** rng.uniform(-4, 4, n)
    T_d = 10.0 ** rng.uniform(-4, 4, n)
    k_P1 = 10.0 ** rng.uniform(-6, -2, n)
    D = damping_ratio(J, k_d, T_d, k_P1, W_NOM)
    assert np.all(D > 1.0)


def test_check_constraints_accepts_published_rows():
    for row in TABLE3[:2]:
        chk = check_constraints(phi_s1(*row[:4]), 0.5, W_NOM)
        assert chk.accepted, chk.reason
    for row in TABLE5[:2]:
        chk = check_constraints(phi_s2(*row[:4]), 0.5, W_NOM)
        assert chk.accepted, chk.reason


def test_integral_gain_bound_values():
    chk = check_constraints(phi_s1(*TABLE3[0][:4]), 0.5, W_NOM)
    assert chk.K_I_bound == pytest.approx(1055.2725, rel=1e-6)
    chk2 = check_constraints(phi_s1(*TABLE3[1][:4]), 0.5, W_NOM)
    assert chk2.K_I_bound == pytest.approx(1061.0298, rel=1e-6)
    chk5 = check_constraints(phi_s2(*TABLE5[1][:4]), 0.5, W_NOM)
    assert chk5.K_I_bound == pytest.approx(2387.2973, rel=1e-6)


def test_check_constraints_rejects_huge_integral_gain():
    chk = check_constraints(phi_s1(5.0895, 1.1857e-4, 0.5029, 1e6), 0.5,
                            W_NOM)
    assert not chk.accepted
    assert "integral gain" in chk.reason


def test_check_constraints_rejects_fast_machine():
    chk = check_constraints(phi_s1(0.01, 1e-4, 0.5, 10.0), 0.5, W_NOM)
    assert not chk.accepted
    assert "faster" in chk.reason


def test_constraint_flip_when_scaling_integral_gain(rng):
    for _ in range(50):
        phi = phi_s1(10.0 ** rng.uniform(0.8, 2), 10.0 ** rng.uniform(-5, -2),
                     10.0 ** rng.uniform(-0.2, 0.5), 1.0)
        chk = check_constraints(phi, 0.5, W_NOM)
        if not chk.accepted:
            continue
        import dataclasses
        above = dataclasses.replace(phi, K_I=chk.K_I_bound * 1.0001)
        assert not check_constraints(above, 0.5, W_NOM).accepted
        below = dataclasses.replace(phi, K_I=chk.K_I_bound * 0.9999)
        assert check_constraints(below, 0.5, W_NOM).accepted


def test_peak_deviations_flat_trajectory():
    t = np.linspace(1.0, 5.0, 500)
    f = np.full((500, 3), 50.0)
    traj = synthetic_trajectory(t, f)
    assert peak_deviations(traj, 1.0) == (0.0, 0.0)


def test_peak_deviations_synthetic_dip():
    t = np.linspace(1.0, 11.0, 2001)
    f = np.full((2001, 3), 50.0)
    f[:, 0] = 50.0 - 0.05 * np.exp(-0.5 * (t - 3.0) ** 2)
    f[0, 0] = 50.0
    vg = np.full((2001, 3), 230.0)
    vg[:, 2] = 230.0 + 2.5 * np.exp(-(t - 4.0) ** 2)
    traj = synthetic_trajectory(t, f, vgrid=vg)
    df, dv = peak_deviations(traj, 1.0)
    # references are the grid-sampled extrema relative to the t0 row
    assert df == pytest.approx(np.max(50.0 - f[1:, 0]), rel=1e-12)
    assert df == pytest.approx(0.05, rel=2e-3)
    assert dv == pytest.approx(np.max(np.abs(vg[1:, 2] - vg[0, 2])),
                               rel=1e-12)
    assert dv == pytest.approx(2.5, rel=2e-3)


def test_cost_matches_published_row_arithmetic():
    row = TABLE3[0]
    phi = phi_s1(*row[:4])
    w = CostWeights(alpha=7.0, beta=0.027, delta_f=0.05, delta_V=1e40)
    m = TransientMetrics(t_final=36.483, delta_f_peak=0.994 * 0.05,
                         delta_V_peak=0.0)
    assert cost(m, w, phi) == pytest.approx(108.93, abs=0.02)


def test_cost_simple_arithmetic():
    phi = phi_s1(4.9999, 1e-4, 0.5, 500.0)
    w = CostWeights(alpha=1.0, beta=1.0, delta_f=1.0, delta_V=1.0)
    m = TransientMetrics(t_final=10.0, delta_f_peak=0.0, delta_V_peak=0.0)
    assert cost(m, w, phi) == pytest.approx(15.0, rel=1e-6)


def test_cost_rejects_on_flags():
    phi = phi_s1(5.0, 1e-4, 0.5, 500.0)
    w = CostWeights(alpha=1.0, beta=1.0, delta_f=1.0, delta_V=1.0)
    assert math.isinf(cost(TransientMetrics(1.0, 0.0, 0.0, violated=True),
                           w, phi))
    assert math.isinf(cost(TransientMetrics(1.0, 0.0, 0.0, timed_out=True),
                           w, phi))
    assert cost(TransientMetrics(1.0, 0.0, 0.0), w, phi) < REJECTED_ENERGY


def test_cost_monotone_in_each_component(rng):
    phi = phi_s1(5.0, 1e-4, 0.5, 500.0)
    w = CostWeights(alpha=3.0, beta=0.1, delta_f=0.05, delta_V=10.0)
    base = TransientMetrics(t_final=20.0, delta_f_peak=0.04,
                            delta_V_peak=2.0)
    e0 = cost(base, w, phi)
    import dataclasses
    assert cost(dataclasses.replace(base, t_final=21.0), w, phi) > e0
    assert cost(dataclasses.replace(base, delta_f_peak=0.05), w, phi) > e0
    assert cost(dataclasses.replace(base, delta_V_peak=2.5), w, phi) > e0
    heavier = dataclasses.replace(phi, J=6.0)
    assert cost(base, w, heavier) > e0


def test_cost_parts_sum_to_cost():
    phi = phi_s1(5.0895, 1.1857e-4, 0.5029, 1054.56)
    w = CostWeights(alpha=7.0, beta=0.027, delta_f=0.05, delta_V=1e40)
    m = TransientMetrics(t_final=36.5, delta_f_peak=0.0495,
                         delta_V_peak=0.73)
    t_final, storage, sigma, sigma_over_beta = cost_parts(m, w, phi)
    assert t_final + storage + sigma_over_beta == pytest.approx(
        cost(m, w, phi), rel=1e-15)
    assert sigma == pytest.approx(m.delta_f_peak / 0.05
                                  + m.delta_V_peak / 1e40, rel=1e-15)


def test_weights_must_be_positive():
    from vismaopt.errors import ConfigurationError
    with pytest.raises(ConfigurationError):
        CostWeights(alpha=0.0, beta=1.0, delta_f=1.0, delta_V=1.0)


def test_visma_energy_constant_state_is_zero():
    t = np.linspace(0.0, 5.0, 100)
    states = np.zeros((100, 10))
    states[:, 0] = W_NOM
    states[:, 1] = -W_NOM
    traj = Trajectory(t=t, states=states, V_load=np.zeros(100),
                      dtheta_load=np.zeros(100), P=np.zeros((100, 3)),
                      Q=np.zeros((100, 3)), V_grid=np.zeros((100, 3)))
    phi = phi_s1(5.0, 1e-4, 0.5, 500.0)
    assert visma_energy(traj, phi, 0.0, 5.0) == pytest.approx(0.0, abs=1e-12)


def test_visma_energy_kinetic_term_with_frozen_damping_torque():
    # M_d frozen: d + omega constant; energy is the kinetic difference
    t = np.linspace(0.0, 2.0, 400)
    w = W_NOM - 0.3 * t
    offset = 1.7
    states = np.zeros((400, 10))
    states[:, 0] = w
    states[:, 1] = offset - w
    traj = Trajectory(t=t, states=states, V_load=np.zeros(400),
                      dtheta_load=np.zeros(400), P=np.zeros((400, 3)),
                      Q=np.zeros((400, 3)), V_grid=np.zeros((400, 3)))
    phi = phi_s1(5.0, 1e-4, 0.5, 500.0)
    expected = -0.5 * (phi.J + phi.k_d) * (w[-1] ** 2 - w[0] ** 2)
    assert visma_energy(traj, phi, 0.0, 2.0) == pytest.approx(expected,
                                                              rel=1e-12)


def test_visma_energy_window_validation():
    t = np.linspace(0.0, 1.0, 10)
    traj = synthetic_trajectory(t, np.full((10, 3), 50.0))
    phi = phi_s1(5.0, 1e-4, 0.5, 500.0)
    with pytest.raises(ValueError):
        visma_energy(traj, phi, 0.8, 0.2)


def test_constraint_check_is_dataclass_with_reason():
    chk = check_constraints(phi_s1(5.0895, 1.1857e-4, 0.5029, 1054.56),
                            0.5, W_NOM)
    assert isinstance(chk, ConstraintCheck)
    assert chk.accepted and chk.reason == ""
