import numpy as np
import pytest

from simgap.actuator import ActuatorParams
from simgap.calibration import CalibrationSetup, calibrate, read_candidates, simulate_candidates
from simgap.cmaes import OptimizationError, read_history
from simgap.plant import rollout_sim, rollout_synthetic_hardware
from simgap.rollout_data import CommandGenConfig, gen_command_sequences

SEQS = gen_command_sequences(CommandGenConfig(duration_s=1.5), seed=7)
HARDWARE = [r for s in SEQS for r in rollout_synthetic_hardware(s, ActuatorParams.reference(), n_repeats=2, seed=1)]
SMALL = CalibrationSetup(population=4, iterations=3, sim_seed=2)


def test_smoke_run_shapes(tmp_path):
    run = calibrate(HARDWARE, SEQS, SMALL)
    assert len(run.history) == 3
    assert len(run.candidates) == 3 * 4
    assert run.initial_report.combined == pytest.approx(1.0, abs=1e-12)
    assert run.result.best_f <= 1.0 + 1e-12
    assert len(run.best_rollouts) == len(SEQS) * SMALL.n_sim
    run.write(tmp_path)
    assert len(read_history(tmp_path / "history.csv")) == 3
    assert (tmp_path / "best_params.cfg").exists() and (tmp_path / "final_score_pairs.csv").exists()
    assert "normalizer.wasserstein" in (tmp_path / "run.cfg").read_text()


def test_batched_candidates_match_rollout_sim():
    params = [ActuatorParams.reference(), ActuatorParams.initial_guess()]
    batched = simulate_candidates(SEQS[:1], params, SMALL, seed=4)
    for p, sims in zip(params, batched):
        assert sims == rollout_sim(SEQS[0], p, n_rollouts=SMALL.n_sim, seed=4)


def test_history_bytes_identical(tmp_path):
    for name in ("a", "b"):
        calibrate(HARDWARE, SEQS, SMALL).write(tmp_path / name)
    assert (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    assert (tmp_path / "a" / "candidates.csv").read_bytes() == (tmp_path / "b" / "candidates.csv").read_bytes()


def test_resume_matches_uninterrupted(tmp_path):
    full = calibrate(HARDWARE, SEQS, SMALL)
    short = CalibrationSetup(population=4, iterations=2, sim_seed=2)
    calibrate(HARDWARE, SEQS, short, checkpoint_dir=tmp_path)
    resumed = calibrate(HARDWARE, SEQS, SMALL, checkpoint_dir=tmp_path, resume=True)
    assert resumed.history == full.history
    assert np.array_equal(resumed.result.best_x, full.result.best_x)
    assert len(read_candidates(tmp_path / "candidates.csv")) == 12


def test_resume_without_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        calibrate(HARDWARE, SEQS, SMALL, checkpoint_dir=tmp_path, resume=True)


def test_failure_keeps_partial_history(tmp_path, monkeypatch):
    import simgap.calibration as cal

    real = cal.simulate_candidates
    calls = {"n": 0}

    def failing(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 4:  # initial evaluation + two generations, then fail
            raise FloatingPointError("diverged")
        return real(*args, **kwargs)

    monkeypatch.setattr(cal, "simulate_candidates", failing)
    with pytest.raises(OptimizationError) as info:
        calibrate(HARDWARE, SEQS, SMALL, checkpoint_dir=tmp_path)
    assert info.value.generation == 2
    assert len(info.value.partial_history) == 2
    assert len(read_history(tmp_path / "history.csv")) == 2


def test_missing_command_sequence():
    with pytest.raises(ValueError):
        calibrate(HARDWARE, SEQS[:2], SMALL)
