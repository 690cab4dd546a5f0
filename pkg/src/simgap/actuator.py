"""Parametric actuator model: PD law, torque envelopes, Coulomb friction, action delay.

All per-joint functions broadcast over leading batch dimensions; the last
axis is the joint axis (``N_JOINTS`` entries, legs FL, FR, HL, HR, each
ordered hip_x, hip_y, knee).
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Union

import numpy as np

N_JOINTS = 12
LEGS = ("FL", "FR", "HL", "HR")
JOINTS_PER_LEG = ("hip_x", "hip_y", "knee")
JOINT_NAMES = tuple(f"{leg}_{j}" for leg in LEGS for j in JOINTS_PER_LEG)
KNEE_MASK = np.array([name.endswith("knee") for name in JOINT_NAMES])

ArrayLike = Union[float, np.ndarray]


class ActuatorConfigError(ValueError):
    """Raised when actuator parameters or limit curves are inconsistent."""


@dataclass(frozen=True)
class GainConfig:
    k_p: float = 60.0
    k_d: float = 1.5
    sigma_a: float = 0.2
    f_policy: int = 50
    f_torque: int = 200
    delay_ms: float = 5.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0 or (f.name != "delay_ms" and getattr(self, f.name) == 0):
                raise ActuatorConfigError(f"{f.name} must be positive, got {getattr(self, f.name)}")
        if self.f_torque % self.f_policy:
            raise ActuatorConfigError("f_torque must be an integer multiple of f_policy")
        steps = self.delay_ms * self.f_torque / 1000.0
        if abs(steps - round(steps)) > 1e-9:
            raise ActuatorConfigError(
                f"delay_ms={self.delay_ms} is not a whole number of {self.f_torque} Hz steps"
            )

    @property
    def substeps(self) -> int:
        return self.f_torque // self.f_policy

    @property
    def dt_policy(self) -> float:
        return 1.0 / self.f_policy

    @property
    def dt_torque(self) -> float:
        return 1.0 / self.f_torque

    @property
    def delay_steps(self) -> int:
        return int(round(self.delay_ms * self.f_torque / 1000.0))


PARAM_NAMES = (
    "friction_hip",
    "friction_knee",
    "tau_max",
    "tau_min",
    "omega_max",
    "omega_min",
    "intersect_pos",
    "intersect_neg",
)


@dataclass(frozen=True)
class ActuatorParams:
    """The 8 calibrated actuator scalars.

    Fields may also hold arrays of shape ``(B, 1)`` (see :meth:`stack`) so a
    batch of candidate models can be simulated in one pass.
    """

    friction_hip: ArrayLike
    friction_knee: ArrayLike
    tau_max: ArrayLike
    tau_min: ArrayLike
    omega_max: ArrayLike
    omega_min: ArrayLike
    intersect_pos: ArrayLike
    intersect_neg: ArrayLike

    def __post_init__(self) -> None:
        v = {name: np.asarray(getattr(self, name), dtype=float) for name in PARAM_NAMES}
        if not all(np.all(np.isfinite(x)) for x in v.values()):
            raise ActuatorConfigError("actuator parameters must be finite")
        if np.any(v["friction_hip"] < 0) or np.any(v["friction_knee"] < 0):
            raise ActuatorConfigError("friction must be >= 0")
        if np.any(v["tau_max"] <= 0) or np.any(v["tau_min"] >= 0):
            raise ActuatorConfigError("need tau_min < 0 < tau_max")
        # Intersects may sit exactly at zero: that is the optimizer's starting point.
        if np.any(v["intersect_pos"] < 0) or np.any(v["intersect_pos"] >= v["omega_max"]):
            raise ActuatorConfigError("need 0 <= intersect_pos < omega_max")
        if np.any(v["intersect_neg"] > 0) or np.any(v["intersect_neg"] <= v["omega_min"]):
            raise ActuatorConfigError("need omega_min < intersect_neg <= 0")

    @classmethod
    def reference(cls) -> "ActuatorParams":
        """Reference actuator values; the default hidden ground truth."""
        return cls(0.008, 0.180, 97.00, -108.79, 25.03, -22.22, 9.48, -8.32)

    @classmethod
    def initial_guess(cls) -> "ActuatorParams":
        """Optimizer starting point: no friction, +/-70 N m, +/-20 rad/s, zero intersects."""
        return cls(0.0, 0.0, 70.0, -70.0, 20.0, -20.0, 0.0, 0.0)

    @classmethod
    def from_vector(cls, x: Iterable[float], repair: bool = False) -> "ActuatorParams":
        x = [float(v) for v in x]
        if len(x) != len(PARAM_NAMES):
            raise ActuatorConfigError(f"expected {len(PARAM_NAMES)} values, got {len(x)}")
        if repair:
            fh, fk, tmax, tmin, wmax, wmin, ip, ineg = x
            fh, fk = max(fh, 0.0), max(fk, 0.0)
            tmax, tmin = max(tmax, 1e-6), min(tmin, -1e-6)
            wmax, wmin = max(wmax, 1e-6), min(wmin, -1e-6)
            ip = min(max(ip, 0.0), wmax * (1.0 - 1e-9))
            ineg = max(min(ineg, 0.0), wmin * (1.0 - 1e-9))
            x = [fh, fk, tmax, tmin, wmax, wmin, ip, ineg]
        return cls(*x)

    def to_vector(self) -> np.ndarray:
        return np.array([float(getattr(self, n)) for n in PARAM_NAMES])

    def as_dict(self) -> dict[str, float]:
        return {n: float(getattr(self, n)) for n in PARAM_NAMES}

    @classmethod
    def stack(cls, params: list["ActuatorParams"]) -> "ActuatorParams":
        """Combine several parameter sets into one with ``(B, 1)`` array fields."""
        cols = {n: np.array([float(getattr(p, n)) for p in params])[:, None] for n in PARAM_NAMES}
        return cls(**cols)

    def joint_friction(self) -> np.ndarray:
        """Per-joint Coulomb level; hip_x and hip_y share ``friction_hip``."""
        return np.where(KNEE_MASK, self.friction_knee, self.friction_hip)


@dataclass(frozen=True)
class TorquePositionCurve:
    """Piecewise-linear position-dependent torque bounds (held constant past the ends)."""

    q: np.ndarray
    tau_hi: np.ndarray
    tau_lo: np.ndarray

    def __post_init__(self) -> None:
        q, hi, lo = (np.asarray(a, dtype=float) for a in (self.q, self.tau_hi, self.tau_lo))
        if q.ndim != 1 or not (q.shape == hi.shape == lo.shape) or q.size == 0:
            raise ActuatorConfigError("torque-position curve needs three equal-length 1-D columns")
        if np.any(np.diff(q) <= 0):
            raise ActuatorConfigError("torque-position breakpoints must be strictly increasing in q")
        if np.any(hi < lo):
            raise ActuatorConfigError("torque-position curve has hi < lo")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "tau_hi", hi)
        object.__setattr__(self, "tau_lo", lo)

    def limits(self, q: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        return np.interp(q, self.q, self.tau_lo), np.interp(q, self.q, self.tau_hi)

    @classmethod
    def from_csv(cls, path: str | Path) -> "TorquePositionCurve":
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(c) for c in row])
                except ValueError:
                    if rows:
                        raise ActuatorConfigError(f"{path}:{lineno}: non-numeric row") from None
                    continue  # header
                if len(rows[-1]) != 3:
                    raise ActuatorConfigError(f"{path}:{lineno}: expected 3 columns (q, tau_hi, tau_lo)")
        if not rows:
            raise ActuatorConfigError(f"{path}: no breakpoints")
        q, hi, lo = np.array(rows).T
        return cls(q, hi, lo)


def pd_torque(
    a: np.ndarray,
    q: np.ndarray,
    q_dot: np.ndarray,
    q_default: np.ndarray,
    gains: GainConfig,
) -> np.ndarray:
    """Desired joint torque ``k_p (sigma_a a + q_default - q) - k_d q_dot``, unclamped."""
    a, q, q_dot, q_default = (np.asarray(x, dtype=float) for x in (a, q, q_dot, q_default))
    for name, x in (("a", a), ("q", q), ("q_dot", q_dot), ("q_default", q_default)):
        if x.shape[-1:] != (N_JOINTS,):
            raise ValueError(f"{name} must have {N_JOINTS} joints on the last axis, got shape {x.shape}")
    return gains.k_p * (gains.sigma_a * a + q_default - q) - gains.k_d * q_dot


def torque_speed_limit(omega: ArrayLike, p: ActuatorParams) -> tuple[np.ndarray, np.ndarray]:
    """Speed-dependent ``(lo, hi)`` torque bounds.

    Full torque up to the intersect speed, then a linear taper to zero torque
    at the speed limit; quadrant 3 mirrors quadrant 1.
    """
    omega = np.asarray(omega, dtype=float)
    hi_frac = np.clip((p.omega_max - omega) / (p.omega_max - p.intersect_pos), 0.0, 1.0)
    lo_frac = np.clip((omega - p.omega_min) / (p.intersect_neg - p.omega_min), 0.0, 1.0)
    return p.tau_min * lo_frac, p.tau_max * hi_frac


def apply_limits(
    tau: ArrayLike,
    q: ArrayLike,
    omega: ArrayLike,
    p: ActuatorParams,
    pos_curve: TorquePositionCurve | None = None,
) -> np.ndarray:
    """Clamp ``tau`` to the tighter of the torque-speed and torque-position envelopes."""
    lo, hi = torque_speed_limit(omega, p)
    if pos_curve is not None:
        lo_tp, hi_tp = pos_curve.limits(q)
        lo, hi = np.maximum(lo, lo_tp), np.minimum(hi, hi_tp)
    if np.any(lo > hi):
        raise ActuatorConfigError("torque limits produce an empty clamp interval")
    return np.minimum(np.maximum(tau, lo), hi)


def friction_torque(q_dot: ArrayLike, coulomb: ArrayLike) -> np.ndarray:
    """Coulomb friction opposing motion; zero at rest (no stiction)."""
    if np.any(np.asarray(coulomb) < 0):
        raise ValueError("coulomb friction must be >= 0")
    return -np.asarray(coulomb) * np.sign(q_dot)


class DelayBuffer:
    """FIFO that releases each action exactly ``depth`` pushes after it went in."""

    def __init__(self, depth: int, shape: tuple[int, ...] = (N_JOINTS,)) -> None:
        if depth < 0:
            raise ValueError("delay depth must be >= 0")
        self.depth = depth
        self.shape = shape
        self._queue: deque[np.ndarray] = deque(np.zeros(shape) for _ in range(depth))

    @classmethod
    def for_gains(cls, gains: GainConfig, shape: tuple[int, ...] = (N_JOINTS,)) -> "DelayBuffer":
        return cls(gains.delay_steps, shape)

    def push_pop(self, action: np.ndarray) -> np.ndarray:
        action = np.array(action, dtype=float)
        if self.depth == 0:
            return action
        self._queue.append(action)
        return self._queue.popleft()

    def copy(self) -> "DelayBuffer":
        new = DelayBuffer.__new__(DelayBuffer)
        new.depth, new.shape = self.depth, self.shape
        new._queue = deque(a.copy() for a in self._queue)
        return new


def delay_push_pop(buffer: DelayBuffer, action: np.ndarray) -> np.ndarray:
    return buffer.push_pop(action)
