"""Calibration loop: CMA-ES over actuator parameters, scored against hardware rollouts."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from simgap import config as cfgfile
from simgap.actuator import PARAM_NAMES, ActuatorParams, GainConfig, TorquePositionCurve
from simgap.cmaes import (
    CmaesConfig,
    CmaesState,
    GenerationRecord,
    OptimizationError,
    OptimizeResult,
    optimize,
    read_history,
    write_history,
)
from simgap.metrics import Normalizer, ScoreReport, Scorer, ScoreWeights, normalizer_from
from simgap.plant import PlantConfig, ScriptedPolicy, _rollouts_from_arrays, initial_positions, simulate
from simgap.rollout_data import CommandSequence, Rollout
from simgap.seeding import derive_seed

DEFAULT_BOUNDS = (
    (0.0, 0.5),  # friction_hip
    (0.0, 0.5),  # friction_knee
    (30.0, 150.0),  # tau_max
    (-150.0, -30.0),  # tau_min
    (5.0, 40.0),  # omega_max
    (-40.0, -5.0),  # omega_min
    (0.0, 20.0),  # intersect_pos
    (-20.0, 0.0),  # intersect_neg
)


@dataclass(frozen=True)
class CalibrationSetup:
    gains: GainConfig = GainConfig()
    plant: PlantConfig = PlantConfig()
    policy: ScriptedPolicy = ScriptedPolicy()
    weights: ScoreWeights = ScoreWeights()
    n_sim: int = 2
    sim_seed: int = 0
    # Common random numbers: every candidate sees the same initial poses.
    common_random_numbers: bool = True
    bounds: tuple[tuple[float, float], ...] = DEFAULT_BOUNDS
    population: int = 10
    iterations: int = 100
    sigma0: float = 0.3
    cmaes_seed: int = 0
    initial: ActuatorParams = field(default_factory=ActuatorParams.initial_guess)
    pos_curve: TorquePositionCurve | None = None

    def cmaes_config(self) -> CmaesConfig:
        return CmaesConfig(
            bounds=self.bounds,
            population=self.population,
            iterations=self.iterations,
            sigma0=self.sigma0,
            seed=self.cmaes_seed,
            x0=tuple(self.initial.to_vector()),
        )


def simulate_candidates(
    sequences: Sequence[CommandSequence],
    candidates: Sequence[ActuatorParams],
    setup: CalibrationSetup,
    seed: int,
) -> list[list[Rollout]]:
    """Simulated rollouts for each candidate, all candidates batched per sequence."""
    stacked = ActuatorParams.stack(list(candidates)) if len(candidates) > 1 else candidates[0]
    n_c, n_s = len(candidates), setup.n_sim
    per_candidate: list[list[Rollout]] = [[] for _ in range(n_c)]
    for seq in sequences:
        q_init = initial_positions(seq.id, n_s, seed, setup.plant)
        params = stacked
        if n_c > 1:
            params = ActuatorParams(**{n: np.repeat(getattr(stacked, n), n_s, axis=0) for n in PARAM_NAMES})
        qs, qds, actions, _ = simulate(
            seq, params, np.tile(q_init, (n_c, 1)), setup.gains, setup.plant, setup.policy, setup.pos_curve
        )
        for c in range(n_c):
            block = slice(c * n_s, (c + 1) * n_s)
            per_candidate[c].extend(
                _rollouts_from_arrays(seq, "simulated", qs[block], qds[block], actions, setup.gains)
            )
    return per_candidate


@dataclass
class CandidateRecord:
    generation: int
    index: int
    params: np.ndarray
    fitness: float


@dataclass
class CalibrationRun:
    setup: CalibrationSetup
    normalizer: Normalizer
    initial_report: ScoreReport
    final_report: ScoreReport
    best_params: ActuatorParams
    result: OptimizeResult
    candidates: list[CandidateRecord]
    wall_clock_s: float
    best_rollouts: list[Rollout] = field(default_factory=list)

    @property
    def history(self) -> list[GenerationRecord]:
        return self.result.history

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_history(out / "history.csv", self.history)
        write_candidates(out / "candidates.csv", self.candidates)
        cfgfile.write_config(
            out / "best_params.cfg",
            {f"params.{k}": v for k, v in self.best_params.as_dict().items()},
            header=f"best combined score {self.result.best_f!r}",
        )
        self.initial_report.write(out, "initial_score")
        self.final_report.write(out, "final_score")
        cfgfile.write_config(out / "run.cfg", run_snapshot(self))
        (out / "run_meta.txt").write_text(f"wall_clock_s = {self.wall_clock_s:.3f}\n")
        if self.result.state is not None:
            self.result.state.save(out / "cmaes_state.json")


def write_candidates(path: Path, records: Sequence[CandidateRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["generation", "index", *PARAM_NAMES, "fitness"])
        for r in records:
            writer.writerow([r.generation, r.index, *(repr(float(v)) for v in r.params), repr(r.fitness)])


def run_snapshot(run: CalibrationRun) -> dict[str, object]:
    s = run.setup
    snap: dict[str, object] = {}
    snap.update(cfgfile.dataclass_items(s.gains, "gains"))
    snap.update(cfgfile.dataclass_items(s.plant, "plant"))
    snap.update(cfgfile.dataclass_items(s.policy, "policy"))
    snap.update({
        "cmaes.population": s.population,
        "cmaes.iterations": s.iterations,
        "cmaes.sigma0": s.sigma0,
        "cmaes.seed": s.cmaes_seed,
        "sim.n_rollouts": s.n_sim,
        "sim.seed": s.sim_seed,
        "sim.common_random_numbers": s.common_random_numbers,
        "score.wasserstein_weight": s.weights.wasserstein,
        "score.mmd_weight": s.weights.mmd,
        "normalizer.wasserstein": run.normalizer.wasserstein,
        "normalizer.mmd": run.normalizer.mmd,
        "result.initial_combined": run.initial_report.combined,
        "result.best_combined": run.result.best_f,
        "result.final_combined": run.final_report.combined,
    })
    for seq, weight in sorted(run.initial_report.sequence_weights.items()):
        snap[f"score.sequence.{seq}"] = weight
    for name, (lo, hi) in zip(PARAM_NAMES, s.bounds):
        snap[f"bounds.{name}"] = (lo, hi)
    for name, value in s.initial.as_dict().items():
        snap[f"initial.{name}"] = value
    return snap


def calibrate(
    hardware: Sequence[Rollout],
    sequences: Sequence[CommandSequence],
    setup: CalibrationSetup = CalibrationSetup(),
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
    progress=None,
) -> CalibrationRun:
    """Fit actuator parameters so simulated rollouts match ``hardware`` in distribution.

    Both measures are normalized by their values at ``setup.initial``, so the
    initial iterate scores exactly 1. With ``checkpoint_dir`` the optimizer
    state, history and candidate table are rewritten after every generation;
    ``resume=True`` continues from them. If the objective fails, the
    :class:`OptimizationError` carries ``partial_history``.
    """
    start = time.perf_counter()
    hw_ids = {r.sequence_id for r in hardware}
    sequences = [s for s in sequences if s.id in hw_ids]
    missing = sorted(hw_ids - {s.id for s in sequences})
    if missing:
        raise ValueError(f"no command sequence for hardware sequences: {', '.join(missing)}")
    scorer = Scorer(hardware, setup.gains, setup.weights)
    initial_sims = simulate_candidates(sequences, [setup.initial], setup, setup.sim_seed)[0]
    raw_initial = scorer.score(initial_sims)
    normalizer = normalizer_from(raw_initial)
    initial_report = scorer.aggregate(raw_initial.per_pair, normalizer)

    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    state, history, records = None, [], []
    if resume:
        if ckpt is None or not (ckpt / "cmaes_state.json").exists():
            raise FileNotFoundError("nothing to resume: no cmaes_state.json in the checkpoint directory")
        state = CmaesState.load(ckpt / "cmaes_state.json")
        history = read_history(ckpt / "history.csv")[: state.generation]
        records = [r for r in read_candidates(ckpt / "candidates.csv") if r.generation < state.generation]
    elif ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    history_so_far = list(history)

    def objective(xs: list[np.ndarray]) -> list[float]:
        params = [ActuatorParams.from_vector(x, repair=True) for x in xs]
        gen = len(history_so_far)
        seed = setup.sim_seed if setup.common_random_numbers else derive_seed(setup.sim_seed, "gen", gen)
        sims = simulate_candidates(sequences, params, setup, seed)
        fits = [scorer.score(s, normalizer).combined for s in sims]
        records.extend(CandidateRecord(gen, i, p.to_vector(), f) for i, (p, f) in enumerate(zip(params, fits)))
        return fits

    def after_generation(state: CmaesState, candidates, fitnesses) -> None:
        finite = [v for v in fitnesses if np.isfinite(v)]
        history_so_far.append(
            GenerationRecord(state.generation - 1, state.best_f, float(np.mean(finite)) if finite else np.nan, state.step_size)
        )
        if ckpt is not None:
            state.save(ckpt / "cmaes_state.json")
            write_history(ckpt / "history.csv", history_so_far)
            write_candidates(ckpt / "candidates.csv", records)
        if progress is not None:
            progress(state)

    try:
        result = optimize(
            objective, setup.cmaes_config(), vectorized=True, state=state, history=history,
            callback=after_generation,
        )
    except OptimizationError as exc:
        exc.partial_history = list(history_so_far)
        raise
    best = ActuatorParams.from_vector(result.best_x, repair=True)
    final_sims = simulate_candidates(sequences, [best], setup, setup.sim_seed)[0]
    final_report = scorer.score(final_sims, normalizer)
    run = CalibrationRun(
        setup, normalizer, initial_report, final_report, best, result, records, time.perf_counter() - start
    )
    run.best_rollouts = final_sims
    return run


def read_candidates(path: Path) -> list[CandidateRecord]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        CandidateRecord(int(r["generation"]), int(r["index"]), np.array([float(r[n]) for n in PARAM_NAMES]), float(r["fitness"]))
        for r in rows
    ]
