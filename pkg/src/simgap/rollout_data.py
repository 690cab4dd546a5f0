"""Rollout and command-sequence data model, CSV persistence, feature extraction."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from simgap.actuator import N_JOINTS, GainConfig

SEQUENCE_IDS = ("forward_run", "six_direction", "randomized", "user")
SOURCES = ("hardware", "simulated")

VX_BOUNDS = (-2.0, 5.5)
VY_BOUNDS = (-1.5, 1.5)
WZ_BOUNDS = (-2.0, 2.0)

Q_COLS = tuple(f"q_{j}" for j in range(N_JOINTS))
QD_COLS = tuple(f"qd_{j}" for j in range(N_JOINTS))
A_COLS = tuple(f"a_{j}" for j in range(N_JOINTS))
CMD_COLS = ("cmd_vx", "cmd_vy", "cmd_wz")
TAU_COLS = tuple(f"tau_{j}" for j in range(N_JOINTS))
ROLLOUT_COLS = ("t",) + Q_COLS + QD_COLS + A_COLS + CMD_COLS
FEATURE_NAMES = Q_COLS + QD_COLS + A_COLS


class RolloutParseError(ValueError):
    """Malformed rollout or command file; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int = 0) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class RolloutSchemaError(ValueError):
    """Well-formed file whose columns do not match the rollout layout."""


class CommandSample(NamedTuple):
    t: float
    v_x: float
    v_y: float
    omega_z: float


@dataclass(frozen=True, eq=False)
class CommandSequence:
    id: str
    t: np.ndarray
    commands: np.ndarray  # (N, 3): v_x, v_y, omega_z

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        cmd = np.asarray(self.commands, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("command sequence must be non-empty")
        if cmd.shape != (t.size, 3):
            raise ValueError(f"commands must have shape ({t.size}, 3), got {cmd.shape}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "commands", cmd)

    def __len__(self) -> int:
        return self.t.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CommandSequence):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.commands, other.commands)
        )

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    @property
    def samples(self) -> list[CommandSample]:
        return [CommandSample(float(t), *map(float, c)) for t, c in zip(self.t, self.commands)]

    def duration(self, f_policy: float) -> float:
        return self.t.size / f_policy


@dataclass(frozen=True, eq=False)
class Rollout:
    """One recorded trajectory; per-step arrays have ``N_JOINTS`` columns."""

    sequence_id: str
    source: str
    repeat_index: int
    dt: float
    t: np.ndarray
    q: np.ndarray
    q_dot: np.ndarray
    action: np.ndarray
    command: np.ndarray
    tau: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise RolloutSchemaError(f"source must be one of {SOURCES}, got {self.source!r}")
        n = np.asarray(self.t).shape[0]
        for name in ("q", "q_dot", "action") + (("tau",) if self.tau is not None else ()):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 2 or arr.shape[1] != N_JOINTS:
                raise RolloutSchemaError(f"{name} must have {N_JOINTS} joint columns, got shape {arr.shape}")
            if arr.shape[0] != n:
                raise RolloutSchemaError(f"{name} has {arr.shape[0]} steps, expected {n}")
            object.__setattr__(self, name, arr)
        cmd = np.asarray(self.command, dtype=float)
        if cmd.shape != (n, 3):
            raise RolloutSchemaError(f"command must have shape ({n}, 3), got {cmd.shape}")
        object.__setattr__(self, "command", cmd)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))

    def __len__(self) -> int:
        return self.t.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Rollout):
            return NotImplemented
        if (self.sequence_id, self.source, self.repeat_index, self.dt) != (
            other.sequence_id, other.source, other.repeat_index, other.dt
        ):
            return False
        if (self.tau is None) != (other.tau is None):
            return False
        names = ("t", "q", "q_dot", "action", "command") + (("tau",) if self.tau is not None else ())
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in names)


@dataclass(frozen=True)
class CommandGenConfig:
    f_policy_hz: int = 50
    duration_s: float = 10.0
    seed: int = 0
    resample_interval_s: float = 2.0
    forward_peak: float = 4.0
    forward_ramp_fraction: float = 0.4
    six_direction_speed: float = 1.5
    six_direction_active_fraction: float = 0.75


# Fixed stand-in for a teleoperated trace: (start fraction, v_x, v_y, omega_z).
USER_SCRIPT = (
    (0.00, 0.0, 0.0, 0.0),
    (0.10, 1.0, 0.0, 0.0),
    (0.30, 2.0, 0.0, 0.5),
    (0.45, 0.0, -0.8, 0.0),
    (0.60, 3.0, 0.0, -1.0),
    (0.75, -1.0, 0.3, 0.0),
    (0.90, 0.0, 0.0, 0.0),
)


def _forward_run(t: np.ndarray, cfg: CommandGenConfig) -> np.ndarray:
    ramp_end = cfg.forward_ramp_fraction * cfg.duration_s
    cmd = np.zeros((t.size, 3))
    cmd[:, 0] = cfg.forward_peak * np.clip(t / ramp_end, 0.0, 1.0) if ramp_end > 0 else cfg.forward_peak
    return cmd


def _six_direction(t: np.ndarray, cfg: CommandGenConfig) -> np.ndarray:
    axes = ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0))
    interval = cfg.duration_s / len(axes)
    cmd = np.zeros((t.size, 3))
    slot = np.minimum((t // interval).astype(int), len(axes) - 1)
    active = (t - slot * interval) < cfg.six_direction_active_fraction * interval
    for k, (axis, sign) in enumerate(axes):
        mask = (slot == k) & active
        cmd[mask, axis] = sign * cfg.six_direction_speed
    return cmd


def _randomized(t: np.ndarray, cfg: CommandGenConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x636D64,)))
    n_segments = int(math.ceil(cfg.duration_s / cfg.resample_interval_s)) + 1
    lows = np.array([VX_BOUNDS[0], VY_BOUNDS[0], WZ_BOUNDS[0]])
    highs = np.array([VX_BOUNDS[1], VY_BOUNDS[1], WZ_BOUNDS[1]])
    segments = rng.uniform(lows, highs, size=(n_segments, 3))
    idx = np.minimum((t // cfg.resample_interval_s).astype(int), n_segments - 1)
    return segments[idx]


def _user(t: np.ndarray, cfg: CommandGenConfig) -> np.ndarray:
    starts = np.array([row[0] for row in USER_SCRIPT]) * cfg.duration_s
    values = np.array([row[1:] for row in USER_SCRIPT])
    idx = np.searchsorted(starts, t, side="right") - 1
    return values[idx]


def gen_command_sequences(cfg: CommandGenConfig = CommandGenConfig(), seed: int | None = None) -> list[CommandSequence]:
    """Build the four evaluation sequences: forward run, six directions, randomized, user."""
    if not cfg.duration_s > 0:
        raise ValueError(f"duration must be > 0, got {cfg.duration_s}")
    if cfg.f_policy_hz <= 0 or cfg.resample_interval_s <= 0:
        raise ValueError("f_policy_hz and resample_interval_s must be > 0")
    seed = cfg.seed if seed is None else seed
    n = int(round(cfg.duration_s * cfg.f_policy_hz))
    if n < 1:
        raise ValueError("duration shorter than one policy step")
    t = np.arange(n) / cfg.f_policy_hz
    return [
        CommandSequence("forward_run", t, _forward_run(t, cfg)),
        CommandSequence("six_direction", t, _six_direction(t, cfg)),
        CommandSequence("randomized", t, _randomized(t, cfg, seed)),
        CommandSequence("user", t, _user(t, cfg)),
    ]


def extract_features(rollout: Rollout, gains: GainConfig = GainConfig()) -> np.ndarray:
    """Gain-normalized feature rows: ``[q k_p, q_dot k_d, a sigma_a k_p]`` (36 columns)."""
    if len(rollout) == 0:
        raise ValueError("rollout is empty")
    if gains.k_p <= 0 or gains.k_d <= 0 or gains.sigma_a <= 0:
        raise ValueError("gains must be positive")
    return np.hstack(
        [rollout.q * gains.k_p, rollout.q_dot * gains.k_d, rollout.action * (gains.sigma_a * gains.k_p)]
    )


# -- persistence -------------------------------------------------------------

def _fmt_rows(columns: list[np.ndarray]) -> list[list[str]]:
    block = np.column_stack(columns)
    return [[str(v) for v in row] for row in block.tolist()]


def _write_table(path: Path, meta: dict[str, object], header: tuple[str, ...], columns: list[np.ndarray]) -> None:
    buf = io.StringIO()
    for key, value in meta.items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(_fmt_rows(columns))
    Path(path).write_text(buf.getvalue())


def _read_table(path: Path) -> tuple[dict[str, str], list[str], np.ndarray, int]:
    """Return (metadata, header, values, header line number)."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise RolloutParseError("empty file", line=1)
    meta: dict[str, str] = {}
    i = 0
    while i < len(lines) and (lines[i].startswith("#") or not lines[i].strip()):
        body = lines[i][1:].strip()
        if body:
            if "=" not in body:
                raise RolloutParseError(f"metadata line must be '# key=value', got {lines[i]!r}", line=i + 1)
            key, value = body.split("=", 1)
            meta[key.strip()] = value.strip()
        i += 1
    if i == len(lines):
        raise RolloutParseError("missing header row", line=i)
    header_line = i + 1
    header = [h.strip() for h in next(csv.reader([lines[i]]))]
    rows: list[list[float]] = []
    for lineno, row in enumerate(csv.reader(lines[i + 1:]), start=header_line + 1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise RolloutParseError(
                f"expected {len(header)} fields, found {len(row)}", line=lineno, column=min(len(row), len(header)) + 1
            )
        parsed = []
        for col, cell in enumerate(row, start=1):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise RolloutParseError(f"not a number: {cell!r}", line=lineno, column=col) from None
        rows.append(parsed)
    if not rows:
        raise RolloutParseError("no data rows", line=header_line + 1)
    return meta, header, np.array(rows, dtype=float), header_line


def save_rollout(rollout: Rollout, path: str | Path) -> None:
    meta = {
        "sequence_id": rollout.sequence_id,
        "source": rollout.source,
        "repeat_index": rollout.repeat_index,
        "dt": repr(float(rollout.dt)),
    }
    header = ROLLOUT_COLS + (TAU_COLS if rollout.tau is not None else ())
    cols = [rollout.t, rollout.q, rollout.q_dot, rollout.action, rollout.command]
    if rollout.tau is not None:
        cols.append(rollout.tau)
    _write_table(Path(path), meta, header, cols)


def _check_columns(header: list[str], prefix: str, path: Path) -> None:
    found = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
    if len(found) != N_JOINTS:
        raise RolloutSchemaError(f"{path}: expected {N_JOINTS} '{prefix}*' columns, found {len(found)}")


def load_rollout(path: str | Path) -> Rollout:
    path = Path(path)
    meta, header, data, header_line = _read_table(path)
    for prefix in ("q_", "qd_", "a_"):
        _check_columns(header, prefix, path)
    has_tau = any(h.startswith("tau_") for h in header)
    if has_tau:
        _check_columns(header, "tau_", path)
    expected = list(ROLLOUT_COLS + (TAU_COLS if has_tau else ()))
    if header != expected:
        raise RolloutSchemaError(f"{path}: header does not match rollout layout {expected}")
    missing = [k for k in ("sequence_id", "source", "repeat_index", "dt") if k not in meta]
    if missing:
        raise RolloutSchemaError(f"{path}: missing metadata keys {missing}")
    try:
        repeat_index, dt = int(meta["repeat_index"]), float(meta["dt"])
    except ValueError as exc:
        raise RolloutParseError(f"bad metadata value: {exc}", line=1) from None
    j = N_JOINTS
    return Rollout(
        sequence_id=meta["sequence_id"],
        source=meta["source"],
        repeat_index=repeat_index,
        dt=dt,
        t=data[:, 0],
        q=data[:, 1:1 + j],
        q_dot=data[:, 1 + j:1 + 2 * j],
        action=data[:, 1 + 2 * j:1 + 3 * j],
        command=data[:, 1 + 3 * j:4 + 3 * j],
        tau=data[:, 4 + 3 * j:4 + 4 * j] if has_tau else None,
    )


def save_commands(seq: CommandSequence, path: str | Path) -> None:
    _write_table(Path(path), {"sequence_id": seq.id, "dt": repr(seq.dt)}, ("t",) + CMD_COLS, [seq.t, seq.commands])


def load_commands(path: str | Path) -> CommandSequence:
    path = Path(path)
    meta, header, data, _ = _read_table(path)
    if header != ["t", *CMD_COLS]:
        raise RolloutSchemaError(f"{path}: command file header must be t,{','.join(CMD_COLS)}")
    if "sequence_id" not in meta:
        raise RolloutSchemaError(f"{path}: missing sequence_id metadata")
    return CommandSequence(meta["sequence_id"], data[:, 0], data[:, 1:4])
