"""Acceptance criteria, each checked at its stated tolerance.

Every test emits exactly one PASS/FAIL line; the lines are repeated in the
"acceptance criteria" section of the pytest terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from simgap.actuator import N_JOINTS, PARAM_NAMES, ActuatorParams, DelayBuffer, GainConfig, TorquePositionCurve
from simgap.actuator import apply_limits, pd_torque, torque_speed_limit
from simgap.calibration import CalibrationSetup, calibrate
from simgap.cli import main
from simgap.cmaes import CmaesConfig, optimize
from simgap.metrics import median_heuristic, mmd, similarity_score, wasserstein_1d
from simgap.noise import estimate_sigma
from simgap.plant import PlantConfig, default_hardware_noise, rollout_sim, rollout_synthetic_hardware
from simgap.rollout_data import CommandGenConfig, Rollout, gen_command_sequences
from simgap.seeding import derive_seed

REF = ActuatorParams.reference()


def test_c01_wasserstein_matches_assignment_oracle(criterion):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n, m = rng.integers(1, 9, size=2)
        a, b = rng.normal(size=n) * rng.uniform(0.1, 10), rng.normal(size=m) * rng.uniform(0.1, 10)
        lcm = n * m // math.gcd(n, m)
        cost = np.abs(np.repeat(a, lcm // n)[:, None] - np.repeat(b, lcm // m)[None, :])
        r, c = linear_sum_assignment(cost)
        worst = max(worst, abs(wasserstein_1d(a, b) - cost[r, c].mean()))
    elapsed = time.perf_counter() - start
    criterion(1, "W1 equals optimal-assignment oracle on 200 pairs (n <= 8) to 1e-12 in < 5 s",
              worst <= 1e-12 and elapsed < 5.0, f"max |diff| = {worst:.2e}, {elapsed:.2f} s")


def test_c02_wasserstein_shift_law(criterion):
    a = np.random.default_rng(102).uniform(size=10_000)
    w = wasserstein_1d(a, a + 0.5)
    criterion(2, "W1 of 10 000 U(0,1) samples vs shift by 0.5 is 0.5 +/- 0.05", abs(w - 0.5) <= 0.05, f"W1 = {w:.6f}")


def test_c03_mmd_null_and_separation(criterion):
    rng = np.random.default_rng(103)
    A, B = rng.normal(size=(2000, 3)), rng.normal(size=(2000, 3))
    h = median_heuristic(A, B)
    null = mmd(A, B, h)
    direction = np.ones(3) / np.sqrt(3)
    far = mmd(A, B + 10 * h * direction, h)
    criterion(3, "MMD |null| < 3/2000 and MMD > 0.5 at 10x bandwidth separation",
              abs(null) < 3 / 2000 and far > 0.5, f"null = {null:.2e}, separated = {far:.4f}, h = {h:.4f}")


def test_c04_cmaes_benchmarks(criterion):
    start = time.perf_counter()
    x_star = np.linspace(-1, 1, 8) * 0.7
    sphere = lambda x: float(np.sum((x - x_star) ** 2))
    rosen = lambda x: float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))
    sphere_cfg = CmaesConfig(bounds=((-3.0, 3.0),) * 8, population=10, iterations=100, seed=0)
    rosen_cfg = CmaesConfig(bounds=((-5.0, 5.0),) * 4, population=10, iterations=300, seed=0)
    s1, s2 = optimize(sphere, sphere_cfg), optimize(sphere, sphere_cfg)
    r1, r2 = optimize(rosen, rosen_cfg), optimize(rosen, rosen_cfg)
    elapsed = time.perf_counter() - start
    deterministic = s1.history == s2.history and r1.history == r2.history
    ok = s1.best_f < 1e-6 and r1.best_f < 1e-3 and deterministic and elapsed < 30.0
    criterion(4, "CMA-ES sphere d=8 < 1e-6 in 100 gens, Rosenbrock d=4 < 1e-3 in 300, deterministic, < 30 s", ok,
              f"sphere {s1.best_f:.2e}, rosenbrock {r1.best_f:.2e}, deterministic={deterministic}, {elapsed:.2f} s")


def test_c05_noise_roundtrip(criterion):
    rng = np.random.default_rng(105)
    f_s, n = 50.0, 16_384
    white = rng.normal(0, 0.01, n)
    t = np.arange(n) / f_s
    plain = estimate_sigma(white, f_s)
    with_sine = estimate_sigma(white + 0.3 * np.sin(2 * np.pi * 2.0 * t), f_s)
    ok = abs(plain - 0.01) <= 0.001 and abs(with_sine - 0.01) <= 0.001
    criterion(5, "estimate_sigma on 16 384 samples of sigma=0.01 within 10%, with and without sub-band sinusoid", ok,
              f"plain {plain:.5f}, with sinusoid {with_sine:.5f}")


def test_c06_actuator_arithmetic(criterion):
    g, z, q0 = GainConfig(), np.zeros(N_JOINTS), np.full(N_JOINTS, 0.3)
    p = REF
    lo0, hi0 = torque_speed_limit(0.0, p)
    mid = torque_speed_limit((p.intersect_pos + p.omega_max) / 2, p)[1]
    curve = TorquePositionCurve(np.array([-1.0, 1.0]), np.array([80.0, 80.0]), np.array([-30.0, -30.0]))
    examples = {
        "pd equilibrium": np.array_equal(pd_torque(z, q0, z, q0, g), z),
        "pd unit action": np.all(pd_torque(np.ones(N_JOINTS), q0, z, q0, g) == 12.0),
        "pd damping": np.all(pd_torque(z, q0, np.full(N_JOINTS, 2.0), q0, g) == -3.0),
        "hi(0)": hi0 == 97.00,
        "lo(0)": lo0 == -108.79,
        "hi(omega_max)": torque_speed_limit(p.omega_max, p)[1] == 0.0,
        "midpoint": abs(mid - 48.5) <= 1e-12,
        "clip 150": apply_limits(150.0, 0.0, 0.0, p) == 97.0,
        "inside": apply_limits(10.0, 0.0, 0.0, p) == 10.0,
        "position curve": apply_limits(-50.0, 0.0, 0.0, p, curve) == -30.0,
    }
    rng = np.random.default_rng(106)
    tau, q, w = rng.uniform(-300, 300, 100_000), rng.uniform(-1, 1, 100_000), rng.uniform(-40, 40, 100_000)
    once = apply_limits(tau, q, w, p, curve)
    examples["idempotent on 1e5"] = np.array_equal(apply_limits(once, q, w, p, curve), once)
    failed = [k for k, v in examples.items() if not v]
    criterion(6, "actuator hand examples exact (hi(0)=97.00, midpoint 48.5) and apply_limits idempotent on 1e5 inputs",
              not failed, f"midpoint = {float(mid)!r}; failed: {failed or 'none'}")


def test_c07_delay_exactness(criterion):
    g = GainConfig()
    rng = np.random.default_rng(107)
    ok = g.delay_steps == 1
    for _ in range(5):
        seq = rng.normal(size=(1000, N_JOINTS))
        buf = DelayBuffer(g.delay_steps)
        out = np.array([buf.push_pop(a) for a in seq])
        ok &= np.array_equal(out, np.vstack([np.zeros((1, N_JOINTS)), seq[:-1]]))
    criterion(7, "delay at 5 ms / 200 Hz shifts random length-1000 sequences by exactly 1 step, zero prefix", ok,
              f"depth = {g.delay_steps}")


@pytest.mark.slow
def test_c08_hidden_parameter_recovery(criterion):
    seqs = gen_command_sequences(CommandGenConfig(duration_s=5.0), seed=7)
    hardware = [
        r
        for s in seqs
        for r in rollout_synthetic_hardware(
            s, REF, noise=default_hardware_noise(), n_repeats=5, seed=derive_seed(1, "hardware")
        )
    ]
    setup = CalibrationSetup(
        population=10, iterations=100, n_sim=2, sim_seed=derive_seed(1, "sim"), cmaes_seed=0,
        initial=ActuatorParams.initial_guess(),
    )
    run = calibrate(hardware, seqs, setup)
    initial, final = run.initial_report.combined, run.final_report.combined
    rec = run.best_params
    rel = {n: abs(getattr(rec, n) - getattr(REF, n)) / abs(getattr(REF, n)) for n in PARAM_NAMES}
    table = ", ".join(f"{n}={getattr(rec, n):.4g} ({rel[n]:.1%})" for n in PARAM_NAMES)
    ok = (
        final <= 0.25 * initial
        and abs(rec.friction_knee - 0.180) <= 0.06
        and abs(rec.tau_max - 97.00) <= 15.0
        and len(run.history) == 100
    )
    criterion(8, "calibration from the initial guess: final <= 25% of initial, friction_knee +/- 0.06, tau_max +/- 15",
              ok, f"score {initial:.4f} -> {final:.4f}, {run.wall_clock_s:.0f} s; {table}")


def test_c09_score_degeneracy(criterion):
    seqs = gen_command_sequences(CommandGenConfig(duration_s=2.0), seed=7)
    still = PlantConfig(init_perturbation=0.0)

    def as_hardware(rs):
        return [Rollout(r.sequence_id, "hardware", r.repeat_index, r.dt, r.t, r.q, r.q_dot, r.action, r.command) for r in rs]

    # One rollout per sequence, and five identical noise-free repeats per sequence.
    single = [r for s in seqs for r in rollout_sim(s, REF, n_rollouts=1, seed=3)]
    repeats = [r for s in seqs for r in rollout_sim(s, REF, config=still, n_rollouts=5, seed=3)]
    details, ok = [], True
    for name, sims in (("single", single), ("repeats", repeats)):
        report = similarity_score(as_hardware(sims), sims)
        w_zero = all(p.wasserstein == 0.0 for p in report.per_pair)
        mmd_max = max(p.mmd for p in report.per_pair)
        ok &= w_zero and mmd_max <= 0.0 and report.combined == 0.0
        details.append(f"{name}: W all 0={w_zero}, max raw MMD={mmd_max:.2e}, combined={report.combined!r}")
    criterion(9, "self-score: Wasserstein exactly 0, raw MMD <= 0, combined 0", ok, "; ".join(details))


def test_c10_calibrate_determinism(criterion, tmp_path):
    cmd, hw = tmp_path / "cmd", tmp_path / "hw"
    assert main(["gen-commands", "--out-dir", str(cmd), "--duration", "2", "--seed", "7"]) == 0
    assert main(["make-hardware", "--commands", str(cmd), "--out-dir", str(hw), "--repeats", "2"]) == 0
    outs = []
    for name in ("run_a", "run_b"):
        code = main(["calibrate", "--hardware", str(hw / "hardware"), "--commands", str(cmd), "--seed", "3",
                     "--iterations", "5", "--population", "6", "--out-dir", str(tmp_path / name)])
        assert code == 0
        outs.append((tmp_path / name / "history.csv").read_bytes())
    criterion(10, "two identical calibrate invocations give byte-identical fitness-history CSVs",
              outs[0] == outs[1] and len(outs[0].splitlines()) == 6, f"{len(outs[0])} bytes each")
