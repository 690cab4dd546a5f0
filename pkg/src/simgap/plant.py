"""Desk-scale surrogate of the legged plant.

Each joint is an independent second-order system driven by the actuator
model, a scripted trot policy and a gait-synchronous stance load. There is
no floating base and no contact; the point is to produce joint trajectories
whose distribution depends on friction and the torque-speed envelope.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from simgap import config as cfgfile
from simgap.actuator import (
    JOINT_NAMES,
    KNEE_MASK,
    N_JOINTS,
    ActuatorParams,
    DelayBuffer,
    GainConfig,
    TorquePositionCurve,
    apply_limits,
    friction_torque,
    pd_torque,
)
from simgap.noise import NoiseModel, corrupt
from simgap.rollout_data import QD_COLS, Q_COLS, CommandSequence, Rollout
from simgap.seeding import stream

HIP_Y_MASK = np.array([name.endswith("hip_y") for name in JOINT_NAMES])
HIP_X_MASK = np.array([name.endswith("hip_x") for name in JOINT_NAMES])
# Trot: FL and HR in phase, FR and HL half a cycle behind.
LEG_PHASE = np.repeat([0.0, np.pi, np.pi, 0.0], 3)
FORE_AFT = np.repeat([1.0, 1.0, -1.0, -1.0], 3)
STANDING_POSE = (0.0, 0.9, -1.5) * 4


class PlantError(RuntimeError):
    """Non-finite state during integration."""


@dataclass(frozen=True)
class PlantConfig:
    inertia: float = 0.05
    viscous_damping: float = 0.01
    gravity_torque_amplitude: float = 2.0
    q_default: tuple[float, ...] = STANDING_POSE
    n_joints: int = N_JOINTS
    init_perturbation: float = 0.2
    # Stance load on hip_y (+) and knee (-), N m: standing + gait * (base + per_speed * |cmd|).
    load_standing: float = 10.0
    load_gait: float = 15.0
    load_per_speed: float = 14.0

    def __post_init__(self) -> None:
        if self.inertia <= 0:
            raise ValueError("inertia must be > 0")
        if self.viscous_damping < 0:
            raise ValueError("viscous_damping must be >= 0")
        if self.n_joints != N_JOINTS or len(self.q_default) != N_JOINTS:
            raise ValueError(f"plant has exactly {N_JOINTS} joints")

    @property
    def q_default_array(self) -> np.ndarray:
        return np.asarray(self.q_default, dtype=float)


@dataclass(frozen=True)
class ScriptedPolicy:
    """Open-loop trot: a deterministic function of (command, t), |a| <= 1."""

    base_frequency: float = 1.5
    frequency_per_speed: float = 0.5
    hip_y_amplitude: float = 0.4
    knee_amplitude: float = 0.5
    amplitude_per_speed: float = 0.1
    hip_x_per_lateral: float = 0.4
    hip_x_per_yaw: float = 0.3
    lean_per_speed: float = 0.05
    # Below this command magnitude the gait fades out linearly to standing.
    activation_speed: float = 0.5

    def frequency(self, command: np.ndarray) -> np.ndarray:
        return self.base_frequency + self.frequency_per_speed * np.abs(command[..., 0])

    def magnitude(self, command: np.ndarray) -> np.ndarray:
        return np.hypot(command[..., 0], command[..., 1]) + 0.5 * np.abs(command[..., 2])

    def phase(self, command: np.ndarray, t: float) -> np.ndarray:
        return 2.0 * np.pi * self.frequency(command)[..., None] * t + LEG_PHASE

    def gait_weight(self, command: np.ndarray) -> np.ndarray:
        return np.minimum(1.0, self.magnitude(command) / self.activation_speed)

    def action(self, command: np.ndarray, t: float) -> np.ndarray:
        command = np.asarray(command, dtype=float)
        phi = self.phase(command, t)
        m = self.magnitude(command)[..., None]
        g = self.gait_weight(command)[..., None]
        vx, vy, wz = (command[..., k, None] for k in range(3))
        swing = np.sin(phi)
        hip_x = (self.hip_x_per_lateral * vy + self.hip_x_per_yaw * wz * FORE_AFT) * swing
        hip_y = g * (self.hip_y_amplitude + self.amplitude_per_speed * m) * swing + self.lean_per_speed * vx
        knee = -g * (self.knee_amplitude + self.amplitude_per_speed * m) * np.maximum(0.0, np.cos(phi))
        a = np.where(HIP_X_MASK, hip_x, np.where(HIP_Y_MASK, hip_y, knee))
        return np.clip(a, -1.0, 1.0)


def stance_load(command: np.ndarray, t: float, policy: ScriptedPolicy, config: PlantConfig) -> np.ndarray:
    """External joint torque from carrying the body; peaks mid-stance."""
    command = np.asarray(command, dtype=float)
    stance = np.maximum(0.0, -np.sin(policy.phase(command, t)))
    m = policy.magnitude(command)[..., None]
    g = policy.gait_weight(command)[..., None]
    level = config.load_standing + g * (config.load_gait + config.load_per_speed * m) * stance
    return np.where(KNEE_MASK, -level, np.where(HIP_Y_MASK, level, 0.0))


@dataclass
class PlantState:
    q: np.ndarray
    q_dot: np.ndarray
    t: float = 0.0
    buffer: DelayBuffer | None = field(default=None, repr=False)

    @classmethod
    def at_rest(cls, config: PlantConfig, gains: GainConfig, q: np.ndarray | None = None) -> "PlantState":
        q = config.q_default_array.copy() if q is None else np.array(q, dtype=float)
        return cls(q, np.zeros_like(q), 0.0, DelayBuffer.for_gains(gains, q.shape))

    def copy(self) -> "PlantState":
        return PlantState(self.q.copy(), self.q_dot.copy(), self.t, self.buffer.copy() if self.buffer else None)


def step(
    state: PlantState,
    action: np.ndarray,
    params: ActuatorParams,
    gains: GainConfig,
    config: PlantConfig,
    load: np.ndarray | None = None,
    pos_curve: TorquePositionCurve | None = None,
    record_torque: bool = False,
) -> PlantState | tuple[PlantState, np.ndarray]:
    """Advance one policy period (``gains.substeps`` torque-rate substeps).

    The action is held for the whole period but passes through the delay
    buffer once per substep. Integration is semi-implicit Euler. Arrays may
    carry leading batch dimensions; ``params`` may be a stacked batch.
    """
    new = state.copy()
    if new.buffer is None:
        new.buffer = DelayBuffer.for_gains(gains, new.q.shape)
    q, qd = new.q, new.q_dot
    dt = gains.dt_torque
    q0 = config.q_default_array
    friction = params.joint_friction()
    ext = 0.0 if load is None else load
    tau_sum = np.zeros_like(q) if record_torque else None
    for sub in range(gains.substeps):
        a = new.buffer.push_pop(action)
        tau = apply_limits(pd_torque(a, q, qd, q0, gains), q, qd, params, pos_curve)
        acc = (
            tau
            + friction_torque(qd, friction)
            - config.viscous_damping * qd
            - config.gravity_torque_amplitude * np.sin(q - q0)
            + ext
        ) / config.inertia
        qd = qd + acc * dt
        q = q + qd * dt
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            bad = np.argwhere(~(np.isfinite(q) & np.isfinite(qd)))[0]
            raise PlantError(f"non-finite state at joint {JOINT_NAMES[bad[-1]]}, substep {sub}, t={new.t:.4f}s")
        if record_torque:
            tau_sum += tau
    new.q, new.q_dot = q, qd
    new.t = state.t + gains.dt_policy
    if record_torque:
        return new, tau_sum / gains.substeps
    return new


def initial_positions(seq_id: str, n: int, seed: int, config: PlantConfig) -> np.ndarray:
    """Per-rollout starting pose: default pose plus U(-d, d) per joint, one stream per rollout."""
    d = config.init_perturbation
    return np.stack(
        [config.q_default_array + stream(seed, "init", seq_id, i).uniform(-d, d, N_JOINTS) for i in range(n)]
    )


def simulate(
    seq: CommandSequence,
    params: ActuatorParams,
    q_init: np.ndarray,
    gains: GainConfig,
    config: PlantConfig,
    policy: ScriptedPolicy,
    pos_curve: TorquePositionCurve | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched rollout of one command sequence.

    ``q_init`` has shape ``(B, 12)``; ``params`` is a single parameter set or
    a stack of ``B``. Returns ``(q, q_dot, action, tau)`` of shape
    ``(B, N, 12)`` (``action`` is ``(N, 12)``, shared by the batch), where
    row k is the state observed when the k-th action is chosen.
    """
    q_init = np.atleast_2d(np.asarray(q_init, dtype=float))
    n_steps = len(seq)
    batch = q_init.shape[0]
    qs = np.empty((batch, n_steps, N_JOINTS))
    qds = np.empty_like(qs)
    taus = np.empty_like(qs)
    actions = np.empty((n_steps, N_JOINTS))
    state = PlantState.at_rest(config, gains, q_init)
    for k in range(n_steps):
        cmd, t = seq.commands[k], float(seq.t[k])
        qs[:, k], qds[:, k] = state.q, state.q_dot
        actions[k] = policy.action(cmd, t)
        state.t = t
        state, taus[:, k] = step(
            state, actions[k], params, gains, config,
            load=stance_load(cmd, t, policy, config), pos_curve=pos_curve, record_torque=True,
        )
    return qs, qds, actions, taus


def _rollouts_from_arrays(
    seq: CommandSequence, source: str, qs: np.ndarray, qds: np.ndarray, actions: np.ndarray,
    gains: GainConfig, taus: np.ndarray | None = None,
) -> list[Rollout]:
    return [
        Rollout(
            sequence_id=seq.id,
            source=source,
            repeat_index=i,
            dt=gains.dt_policy,
            t=seq.t.copy(),
            q=qs[i],
            q_dot=qds[i],
            action=actions.copy(),
            command=seq.commands.copy(),
            tau=None if taus is None else taus[i],
        )
        for i in range(qs.shape[0])
    ]


def rollout_sim(
    seq: CommandSequence,
    params: ActuatorParams,
    gains: GainConfig = GainConfig(),
    config: PlantConfig = PlantConfig(),
    policy: ScriptedPolicy = ScriptedPolicy(),
    n_rollouts: int = 1,
    seed: int = 0,
    pos_curve: TorquePositionCurve | None = None,
    record_torque: bool = False,
) -> list[Rollout]:
    """Noise-free simulated rollouts, each from its own randomized start pose."""
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    q_init = initial_positions(seq.id, n_rollouts, seed, config)
    qs, qds, actions, taus = simulate(seq, params, q_init, gains, config, policy, pos_curve)
    return _rollouts_from_arrays(seq, "simulated", qs, qds, actions, gains, taus if record_torque else None)


def default_hardware_noise(q_sigma: float = 0.002, qd_sigma: float = 0.02) -> NoiseModel:
    return NoiseModel(Q_COLS + QD_COLS, np.r_[np.full(N_JOINTS, q_sigma), np.full(N_JOINTS, qd_sigma)], f_s=50.0)


def rollout_synthetic_hardware(
    seq: CommandSequence,
    hidden_params: ActuatorParams,
    gains: GainConfig = GainConfig(),
    config: PlantConfig = PlantConfig(),
    policy: ScriptedPolicy = ScriptedPolicy(),
    noise: NoiseModel | None = None,
    n_repeats: int = 5,
    seed: int = 0,
    pos_curve: TorquePositionCurve | None = None,
) -> list[Rollout]:
    """Stand-in for hardware logs: hidden parameters, sensor noise on recorded q and q_dot.

    With zero noise and the same seed this reproduces :func:`rollout_sim`
    exactly (apart from the ``source`` tag).
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    q_init = initial_positions(seq.id, n_repeats, seed, config)
    qs, qds, actions, _ = simulate(seq, hidden_params, q_init, gains, config, policy, pos_curve)
    if noise is not None:
        sigma = noise.lookup(Q_COLS + QD_COLS)
        if np.any(sigma > 0):
            model = NoiseModel(Q_COLS + QD_COLS, sigma, noise.f_s)
            for i in range(n_repeats):
                noisy = corrupt(np.concatenate([qs[i], qds[i]], axis=1), model, stream(seed, "noise", seq.id, i))
                qs[i], qds[i] = noisy[:, :N_JOINTS], noisy[:, N_JOINTS:]
    return _rollouts_from_arrays(seq, "hardware", qs, qds, actions, gains)


HIDDEN_HEADER = "Ground-truth actuator parameters. Oracle use only; never a calibration input."


def write_hidden_params(path: str | Path, params: ActuatorParams) -> Path:
    path = Path(path)
    if path.suffix != ".hidden":
        path = path.with_suffix(path.suffix + ".hidden")
    cfgfile.write_config(path, {f"params.{k}": v for k, v in params.as_dict().items()}, header=HIDDEN_HEADER)
    return path


def read_params_file(path: str | Path, prefix: str = "params") -> ActuatorParams:
    values = cfgfile.section(cfgfile.read_config(path), prefix)
    return ActuatorParams(**{k: float(v) for k, v in values.items()})
