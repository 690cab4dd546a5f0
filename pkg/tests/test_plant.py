import numpy as np
import pytest

from simgap.actuator import N_JOINTS, ActuatorParams, GainConfig
from simgap.plant import (
    PlantConfig,
    PlantError,
    PlantState,
    ScriptedPolicy,
    default_hardware_noise,
    read_params_file,
    rollout_sim,
    rollout_synthetic_hardware,
    simulate,
    step,
    write_hidden_params,
)
from simgap.rollout_data import CommandGenConfig, gen_command_sequences

REF = ActuatorParams.reference()
# Effectively unlimited torque, no friction.
FREE = ActuatorParams(0.0, 0.0, 1e9, -1e9, 1e9, -1e9, 0.0, 0.0)
LINEAR = PlantConfig(viscous_damping=0.0, gravity_torque_amplitude=0.0)
SEQS = gen_command_sequences(CommandGenConfig(duration_s=2.0), seed=7)


def test_rest_is_equilibrium():
    cfg, g = PlantConfig(), GainConfig()
    state = PlantState.at_rest(cfg, g)
    for _ in range(50):
        state = step(state, np.zeros(N_JOINTS), REF, g, cfg)
    assert np.array_equal(state.q, cfg.q_default_array)
    assert np.array_equal(state.q_dot, np.zeros(N_JOINTS))


def test_pd_fixed_point():
    g = GainConfig()
    a = np.linspace(-1, 1, N_JOINTS)
    state = PlantState.at_rest(LINEAR, g)
    for _ in range(500):
        state = step(state, a, FREE, g, LINEAR)
    np.testing.assert_allclose(state.q, LINEAR.q_default_array + g.sigma_a * a, atol=1e-9)


def test_substeps_match_scalar_recurrence():
    # Oracle: explicit scalar loop of the delayed PD law with semi-implicit Euler.
    g = GainConfig()
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1, 1, size=(10, N_JOINTS))
    q0 = LINEAR.q_default_array
    state = PlantState.at_rest(LINEAR, g)
    for a in actions:
        state = step(state, a, FREE, g, LINEAR)
    dt, inertia = g.dt_torque, LINEAR.inertia
    for j in range(N_JOINTS):
        q, qd, held = q0[j], 0.0, 0.0
        for a in actions:
            for _ in range(g.substeps):
                tau = g.k_p * (g.sigma_a * held + q0[j] - q) - g.k_d * qd
                held = a[j]
                qd += tau / inertia * dt
                q += qd * dt
        assert state.q[j] == pytest.approx(q, abs=1e-12)
        assert state.q_dot[j] == pytest.approx(qd, abs=1e-10)


def test_first_substep_sees_previous_action():
    g = GainConfig()
    gains_one_sub = GainConfig(f_torque=50, delay_ms=20.0)
    assert gains_one_sub.substeps == 1 and gains_one_sub.delay_steps == 1
    state = PlantState.at_rest(LINEAR, gains_one_sub)
    after = step(state, np.ones(N_JOINTS), FREE, gains_one_sub, LINEAR)
    # The only substep applied the zero-initialized buffer, so nothing moved.
    assert np.array_equal(after.q, state.q)
    assert g.delay_steps == 1


def test_non_finite_state_raises():
    g, cfg = GainConfig(), PlantConfig()
    state = PlantState.at_rest(cfg, g, np.full(N_JOINTS, np.nan))
    with pytest.raises(PlantError):
        step(state, np.zeros(N_JOINTS), REF, g, cfg)


def test_rollout_sim_determinism_and_shape():
    seq = SEQS[0]
    a = rollout_sim(seq, REF, n_rollouts=2, seed=5)
    b = rollout_sim(seq, REF, n_rollouts=2, seed=5)
    assert a == b
    assert len(a[0]) == len(seq)
    assert not np.array_equal(a[0].q, a[1].q)


def test_batched_params_match_individual():
    seq = SEQS[1]
    q_init = np.tile(PlantConfig().q_default_array, (2, 1))
    stacked = ActuatorParams.stack([REF, ActuatorParams.initial_guess()])
    qs, *_ = simulate(seq, stacked, q_init, GainConfig(), PlantConfig(), ScriptedPolicy())
    single, *_ = simulate(seq, ActuatorParams.initial_guess(), q_init[:1], GainConfig(), PlantConfig(), ScriptedPolicy())
    assert np.array_equal(qs[1], single[0])


def test_hardware_without_noise_equals_sim():
    seq = SEQS[2]
    hw = rollout_synthetic_hardware(seq, REF, n_repeats=2, seed=3)
    sim = rollout_sim(seq, REF, n_rollouts=2, seed=3)
    for h, s in zip(hw, sim):
        assert h.source == "hardware"
        assert np.array_equal(h.q, s.q) and np.array_equal(h.q_dot, s.q_dot)


def test_twenty_hardware_rollouts():
    assert sum(len(rollout_synthetic_hardware(s, REF, n_repeats=5)) for s in SEQS) == 20


def test_injected_noise_std():
    seq = gen_command_sequences(CommandGenConfig(duration_s=10.0))[0]
    noise = default_hardware_noise(q_sigma=0.01, qd_sigma=0.05)
    hw = rollout_synthetic_hardware(seq, REF, noise=noise, n_repeats=2, seed=1)
    clean = rollout_synthetic_hardware(seq, REF, n_repeats=2, seed=1)
    dq = np.concatenate([(h.q - c.q).ravel() for h, c in zip(hw, clean)])
    dqd = np.concatenate([(h.q_dot - c.q_dot).ravel() for h, c in zip(hw, clean)])
    assert dq.size >= 10_000
    assert dq.std() == pytest.approx(0.01, rel=0.05)
    assert dqd.std() == pytest.approx(0.05, rel=0.05)


def test_hidden_params_change_trajectories():
    seq = SEQS[0]
    a = rollout_sim(seq, REF, seed=0)[0]
    b = rollout_sim(seq, ActuatorParams.initial_guess(), seed=0)[0]
    assert np.abs(a.q - b.q).max() > 1e-3


def test_hidden_file_is_sealed(tmp_path):
    path = write_hidden_params(tmp_path / "truth.cfg", REF)
    assert path.suffix == ".hidden"
    assert read_params_file(path) == REF


def test_policy_actions_bounded():
    policy = ScriptedPolicy()
    for seq in SEQS:
        acts = np.array([policy.action(c, t) for c, t in zip(seq.commands, seq.t)])
        assert np.all(np.abs(acts) <= 1.0)


def test_discrete_energy_non_increasing():
    # Semi-implicit Euler preserves E - dt*k_p*x*v/2 for an undamped PD spring;
    # with k_d and viscous damping it can only decrease.
    g = GainConfig()
    cfg = PlantConfig(gravity_torque_amplitude=0.0)
    q0 = cfg.q_default_array
    rng = np.random.default_rng(0)
    state = PlantState.at_rest(cfg, g, q0 + rng.uniform(-0.2, 0.2, N_JOINTS))
    state.q_dot = rng.uniform(-2.5, 2.5, N_JOINTS)
    energy = []
    for _ in range(200):
        x, v = state.q - q0, state.q_dot
        energy.append(
            0.5 * cfg.inertia * v @ v + 0.5 * g.k_p * x @ x - 0.5 * g.dt_torque * g.k_p * x @ v
        )
        state = step(state, np.zeros(N_JOINTS), FREE, g, cfg)
    assert np.all(np.diff(energy) <= 1e-12)
    assert energy[-1] < 1e-3 * energy[0]


def test_score_gap_between_initial_guess_and_truth():
    from simgap.metrics import similarity_score

    hw = [r for s in SEQS for r in rollout_synthetic_hardware(s, REF, noise=default_hardware_noise(), n_repeats=3, seed=1)]
    at = lambda p: similarity_score(hw, [r for s in SEQS for r in rollout_sim(s, p, n_rollouts=2, seed=2)]).combined
    assert at(ActuatorParams.initial_guess()) > at(REF)
