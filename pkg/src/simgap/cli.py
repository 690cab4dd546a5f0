"""``simgap`` command line: generate commands, make synthetic hardware, simulate, score, calibrate, report.

Exit codes: 0 success, 2 usage, 3 data/schema problem, 4 numerical/runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from simgap import config as cfgfile
from simgap.actuator import ActuatorConfigError, ActuatorParams, GainConfig, TorquePositionCurve
from simgap.calibration import DEFAULT_BOUNDS, CalibrationSetup, calibrate
from simgap.cmaes import OptimizationError, read_history, write_history
from simgap.metrics import ScoreError, Scorer, ScoreWeights
from simgap.noise import NoiseModel, estimate_sigma
from simgap.plant import (
    PlantConfig,
    PlantError,
    ScriptedPolicy,
    read_params_file,
    rollout_sim,
    rollout_synthetic_hardware,
    write_hidden_params,
)
from simgap.report import histogram_svg, history_svg, recovery_table
from simgap.rollout_data import (
    FEATURE_NAMES,
    QD_COLS,
    Q_COLS,
    CommandGenConfig,
    RolloutParseError,
    RolloutSchemaError,
    extract_features,
    gen_command_sequences,
    load_commands,
    load_rollout,
    save_commands,
    save_rollout,
)
from simgap.seeding import derive_seed

log = logging.getLogger("simgap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    """Missing or inconsistent input files (exit code 3)."""


# -- shared helpers ------------------------------------------------------------

def _load_config(args: argparse.Namespace) -> dict[str, str]:
    return cfgfile.read_config(args.config) if args.config else {}


def _gains(conf: dict[str, str]) -> GainConfig:
    return cfgfile.update_dataclass(GainConfig(), conf, "gains")


def _plant(conf: dict[str, str]) -> PlantConfig:
    return cfgfile.update_dataclass(PlantConfig(), conf, "plant")


def _policy(conf: dict[str, str]) -> ScriptedPolicy:
    return cfgfile.update_dataclass(ScriptedPolicy(), conf, "policy")


def _params(conf: dict[str, str], prefix: str, default: ActuatorParams) -> ActuatorParams:
    values = cfgfile.section(conf, prefix)
    merged = default.as_dict()
    unknown = sorted(set(values) - set(merged))
    if unknown:
        raise cfgfile.ConfigError(f"unknown {prefix} keys: {', '.join(unknown)}")
    merged.update({k: float(v) for k, v in values.items()})
    return ActuatorParams(**merged)


def _pos_curve(conf: dict[str, str]) -> TorquePositionCurve | None:
    path = conf.get("actuator.torque_position_csv")
    return TorquePositionCurve.from_csv(path) if path else None


def _weights(conf: dict[str, str]) -> ScoreWeights:
    seq = {k: float(v) for k, v in cfgfile.section(conf, "score.sequence").items()}
    return ScoreWeights(
        wasserstein=float(conf.get("score.wasserstein_weight", 0.5)),
        mmd=float(conf.get("score.mmd_weight", 0.5)),
        sequence=seq or None,
    )


def _load_sequences(directory: Path) -> list:
    if not directory.is_dir():
        raise DataError(f"command directory not found: {directory}")
    files = sorted(directory.glob("commands_*.csv"))
    if not files:
        raise DataError(f"no commands_*.csv files in {directory}")
    return [load_commands(f) for f in files]


def _load_rollouts(directory: Path, source: str) -> list:
    # Only *.csv is read, so sealed *.hidden files can never be picked up here.
    if not directory.is_dir():
        raise DataError(f"rollout directory not found: {directory}")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"no rollout CSV files in {directory}")
    rollouts = [load_rollout(f) for f in files]
    wrong = [f.name for f, r in zip(files, rollouts) if r.source != source]
    if wrong:
        raise DataError(f"expected {source} rollouts, found other sources in: {', '.join(wrong)}")
    return rollouts


def _rollout_name(r) -> str:
    return f"{r.sequence_id}_r{r.repeat_index:02d}.csv"


# -- subcommands -----------------------------------------------------------------

def cmd_gen_commands(args: argparse.Namespace) -> int:
    conf = _load_config(args)
    gen = cfgfile.update_dataclass(CommandGenConfig(), conf, "commands")
    overrides = {
        k: v
        for k, v in (
            ("duration_s", args.duration),
            ("f_policy_hz", args.f_policy),
            ("resample_interval_s", args.resample_interval),
        )
        if v is not None
    }
    gen = CommandGenConfig(**{**gen.__dict__, **overrides})
    if gen.duration_s <= 0:
        raise UsageError(f"--duration must be > 0, got {gen.duration_s}")
    seqs = gen_command_sequences(gen, seed=derive_seed(args.seed, "commands"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seq in seqs:
        save_commands(seq, out / f"commands_{seq.id}.csv")
        print(f"{seq.id}: {len(seq)} samples, {seq.duration(gen.f_policy_hz):g} s, "
              f"peak |v_x| {np.abs(seq.commands[:, 0]).max():.2f} m/s")
    return EXIT_OK


def cmd_make_hardware(args: argparse.Namespace) -> int:
    conf = _load_config(args)
    seqs = _load_sequences(Path(args.commands))
    hidden = _params(conf, "hidden", ActuatorParams.reference())
    noise = NoiseModel.load(args.noise) if args.noise else None
    out = Path(args.out_dir)
    rollout_dir = out / "hardware"
    rollout_dir.mkdir(parents=True, exist_ok=True)
    seed = derive_seed(args.seed, "hardware")
    gains, plant, policy = _gains(conf), _plant(conf), _policy(conf)
    count = 0
    for seq in seqs:
        for r in rollout_synthetic_hardware(
            seq, hidden, gains, plant, policy, noise, args.repeats, seed, _pos_curve(conf)
        ):
            save_rollout(r, rollout_dir / _rollout_name(r))
            count += 1
    sealed = write_hidden_params(out / "hidden_params.hidden", hidden)
    print(f"wrote {count} hardware rollouts to {rollout_dir}")
    print(f"sealed ground truth: {sealed}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    conf = _load_config(args)
    seqs = _load_sequences(Path(args.commands))
    if args.params:
        params = read_params_file(args.params)
    else:
        params = _params(conf, "params", ActuatorParams.initial_guess())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = args.n_rollouts or int(conf.get("sim.n_rollouts", 2))
    seed = derive_seed(args.seed, "simulation")
    count = 0
    for seq in seqs:
        for r in rollout_sim(seq, params, _gains(conf), _plant(conf), _policy(conf), n, seed, _pos_curve(conf)):
            save_rollout(r, out / _rollout_name(r))
            count += 1
    print(f"wrote {count} simulated rollouts to {out}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    conf = _load_config(args)
    hardware = _load_rollouts(Path(args.hardware), "hardware")
    simulated = _load_rollouts(Path(args.simulated), "simulated")
    hw_ids = {r.sequence_id for r in hardware}
    sim_ids = {r.sequence_id for r in simulated}
    if hw_ids != sim_ids:
        missing = sorted(hw_ids ^ sim_ids)
        raise DataError(f"sequence ids do not match between hardware and simulation: {', '.join(missing)}")
    report = Scorer(hardware, _gains(conf), _weights(conf)).score(simulated)
    report.write(args.out_dir, "score")
    sys.stdout.write(report.summary())
    return EXIT_OK


def _setup_from(conf: dict[str, str], args: argparse.Namespace) -> CalibrationSetup:
    return CalibrationSetup(
        gains=_gains(conf),
        plant=_plant(conf),
        policy=_policy(conf),
        weights=_weights(conf),
        n_sim=args.n_sim or int(conf.get("sim.n_rollouts", 2)),
        sim_seed=derive_seed(args.seed, "simulation"),
        common_random_numbers=not args.fresh_noise
        and conf.get("sim.common_random_numbers", "true").lower() == "true",
        bounds=tuple(
            tuple(float(v) for v in conf[f"bounds.{n}"].split(",")) if f"bounds.{n}" in conf else b
            for n, b in zip(ActuatorParams.reference().as_dict(), DEFAULT_BOUNDS)
        ),
        population=args.population or int(conf.get("cmaes.population", 10)),
        iterations=args.iterations or int(conf.get("cmaes.iterations", 100)),
        sigma0=float(conf.get("cmaes.sigma0", 0.3)),
        cmaes_seed=derive_seed(args.seed, "cmaes"),
        initial=_params(conf, "initial", ActuatorParams.initial_guess()),
        pos_curve=_pos_curve(conf),
    )


def cmd_calibrate(args: argparse.Namespace) -> int:
    conf = _load_config(args)
    hardware = _load_rollouts(Path(args.hardware), "hardware")
    seqs = _load_sequences(Path(args.commands))
    setup = _setup_from(conf, args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(state) -> None:
        log.info("generation %d: best %.6g, step size %.4g", state.generation, state.best_f, state.step_size)

    try:
        run = calibrate(hardware, seqs, setup, checkpoint_dir=out, resume=args.resume, progress=progress)
    except OptimizationError as exc:
        write_history(out / "history.csv", getattr(exc, "partial_history", []))
        raise
    run.write(out)
    sim_dir = out / "best_sim"
    sim_dir.mkdir(exist_ok=True)
    for r in run.best_rollouts:
        save_rollout(r, sim_dir / _rollout_name(r))
    (out / "inputs.cfg").write_text(
        f"inputs.hardware = {Path(args.hardware).resolve()}\ninputs.commands = {Path(args.commands).resolve()}\n"
    )
    print(f"initial score {run.initial_report.combined:.6g} -> best {run.result.best_f:.6g} "
          f"after {len(run.history)} generations")
    for name, value in run.best_params.as_dict().items():
        print(f"  {name} = {value:.6g}")
    return EXIT_OK


def cmd_noise_estimate(args: argparse.Namespace) -> int:
    path = Path(args.rollout)
    if not path.exists():
        raise DataError(f"rollout file not found: {path}")
    rollout = load_rollout(path)
    f_s = 1.0 / rollout.dt
    band = (args.band_lo, args.band_hi)
    channels = {**{c: rollout.q[:, j] for j, c in enumerate(Q_COLS)}, **{c: rollout.q_dot[:, j] for j, c in enumerate(QD_COLS)}}
    try:
        sigma = np.array([estimate_sigma(x, f_s, band) for x in channels.values()])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    model = NoiseModel(tuple(channels), sigma, f_s)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"wrote noise model for {len(channels)} channels to {out} (f_s = {f_s:g} Hz)")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    conf = _load_config(args)
    run_dir = Path(args.run_dir)
    if not (run_dir / "history.csv").exists() or not (run_dir / "best_params.cfg").exists():
        raise DataError(f"no calibration run in {run_dir}")
    inputs = cfgfile.read_config(run_dir / "inputs.cfg") if (run_dir / "inputs.cfg").exists() else {}
    hw_dir = Path(args.hardware or inputs.get("inputs.hardware", ""))
    out = Path(args.out_dir or run_dir)
    out.mkdir(parents=True, exist_ok=True)

    recovered = read_params_file(run_dir / "best_params.cfg")
    hidden = read_params_file(args.hidden) if args.hidden else None
    (out / "recovery.txt").write_text(recovery_table(recovered, hidden))
    (out / "fitness_history.svg").write_text(history_svg(read_history(run_dir / "history.csv")))

    gains = _gains(conf)
    hardware = _load_rollouts(hw_dir, "hardware")
    simulated = _load_rollouts(run_dir / "best_sim", "simulated")
    hw_feats = np.vstack([extract_features(r, gains) for r in hardware])
    sim_feats = np.vstack([extract_features(r, gains) for r in simulated])
    (out / "feature_histograms.svg").write_text(histogram_svg(hw_feats, sim_feats, FEATURE_NAMES, bins=args.bins))
    print(f"wrote recovery.txt, fitness_history.svg, feature_histograms.svg to {out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="run seed; every random stream derives from it")
    common.add_argument("--out-dir", default=".", help="output directory")
    common.add_argument("--config", help="flat 'key = value' config file (gains.k_p, cmaes.population, ...)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="simgap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-commands", parents=[common], help="write the four command sequences")
    p.add_argument("--duration", type=float, help="seconds per sequence (default 10)")
    p.add_argument("--f-policy", type=int, help="policy rate in Hz (default 50)")
    p.add_argument("--resample-interval", type=float, help="randomized-sequence hold time in s (default 2)")
    p.set_defaults(func=cmd_gen_commands)

    p = sub.add_parser("make-hardware", parents=[common], help="synthetic hardware rollouts from hidden parameters")
    p.add_argument("--commands", required=True, help="directory with commands_*.csv")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--noise", help="noise model CSV (channel,sigma); default noise-free")
    p.set_defaults(func=cmd_make_hardware)

    p = sub.add_parser("simulate", parents=[common], help="simulated rollouts for one parameter set")
    p.add_argument("--commands", required=True)
    p.add_argument("--params", help="params file (params.* keys), e.g. a run's best_params.cfg")
    p.add_argument("--n-rollouts", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score", parents=[common], help="Wasserstein/MMD similarity of two rollout directories")
    p.add_argument("--hardware", required=True)
    p.add_argument("--simulated", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("calibrate", parents=[common], help="CMA-ES fit of the actuator parameters")
    p.add_argument("--hardware", required=True, help="directory of hardware rollout CSVs")
    p.add_argument("--commands", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--n-sim", type=int, help="simulated rollouts per sequence and candidate (default 2)")
    p.add_argument("--fresh-noise", action="store_true",
                   help="re-draw initial poses every generation instead of common random numbers")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out-dir")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("noise-estimate", parents=[common], help="per-channel noise sigma from a rollout CSV")
    p.add_argument("rollout")
    p.add_argument("--out", default="noise_model.csv")
    p.add_argument("--band-lo", type=float, default=0.25, help="band start as a fraction of f_s")
    p.add_argument("--band-hi", type=float, default=0.5, help="band end as a fraction of f_s")
    p.set_defaults(func=cmd_noise_estimate)

    p = sub.add_parser("report", parents=[common], help="recovery table and SVG plots for a calibration run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--hidden", help="sealed *.hidden file (oracle comparison)")
    p.add_argument("--hardware", help="hardware rollout dir (default: the one used by calibrate)")
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"simgap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, RolloutParseError, RolloutSchemaError, ScoreError, cfgfile.ConfigError,
            ActuatorConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OptimizationError as exc:
        print(f"error: {exc} (partial history written)", file=sys.stderr)
        return EXIT_NUMERIC
    except (PlantError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
