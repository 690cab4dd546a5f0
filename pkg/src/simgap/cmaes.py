"""(mu/mu_w, lambda)-CMA-ES over a bounded box.

Search happens in coordinates normalized to ``[0, 1]^d`` by the bounds.
Sampled points are clipped to the box before they are handed out, and
``tell`` learns from the points it is given (the clipped ones).
Sampling for generation ``g`` draws from a stream keyed by ``(seed, g)``,
so a restored checkpoint continues exactly as an uninterrupted run.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from simgap.seeding import stream

EIG_FLOOR = 1e-14


class OptimizationError(RuntimeError):
    """The objective failed; carries the generation at which it happened."""

    def __init__(self, generation: int, cause: BaseException) -> None:
        super().__init__(f"objective failed in generation {generation}: {cause!r}")
        self.generation = generation


@dataclass(frozen=True)
class CmaesConfig:
    bounds: tuple[tuple[float, float], ...]
    population: int = 10
    iterations: int = 100
    sigma0: float = 0.3
    seed: int = 0
    x0: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be > 0")
        for lo, hi in self.bounds:
            if lo > hi:
                raise ValueError(f"bad bounds ({lo}, {hi})")
        if self.x0 is not None and len(self.x0) != len(self.bounds):
            raise ValueError("x0 and bounds differ in dimension")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds], dtype=float)


class _Strategy:
    """Default strategy constants for dimension ``n`` and population ``lam``."""

    def __init__(self, n: int, lam: int) -> None:
        self.n, self.lam = n, lam
        self.mu = lam // 2
        w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights**2)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.ds = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))


@dataclass
class CmaesState:
    mean: np.ndarray
    step_size: float
    covariance: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int = 0
    best_x: np.ndarray | None = None
    best_f: float = math.inf
    repairs: int = 0
    nan_fitnesses: int = 0
    evaluations: int = 0

    @classmethod
    def initial(cls, config: CmaesConfig) -> "CmaesState":
        d = config.dim
        if config.x0 is None:
            mean = np.full(d, 0.5)
        else:
            mean = _normalize(np.asarray(config.x0, dtype=float), config)
        return cls(
            mean=np.clip(mean, 0.0, 1.0),
            step_size=config.sigma0,
            covariance=np.eye(d),
            p_sigma=np.zeros(d),
            p_c=np.zeros(d),
        )

    def to_json(self) -> str:
        payload = {
            "mean": self.mean.tolist(),
            "step_size": self.step_size,
            "covariance": self.covariance.tolist(),
            "p_sigma": self.p_sigma.tolist(),
            "p_c": self.p_c.tolist(),
            "generation": self.generation,
            "best_x": None if self.best_x is None else self.best_x.tolist(),
            "best_f": self.best_f if math.isfinite(self.best_f) else None,
            "repairs": self.repairs,
            "nan_fitnesses": self.nan_fitnesses,
            "evaluations": self.evaluations,
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CmaesState":
        p = json.loads(text)
        return cls(
            mean=np.array(p["mean"]),
            step_size=p["step_size"],
            covariance=np.array(p["covariance"]),
            p_sigma=np.array(p["p_sigma"]),
            p_c=np.array(p["p_c"]),
            generation=p["generation"],
            best_x=None if p["best_x"] is None else np.array(p["best_x"]),
            best_f=math.inf if p["best_f"] is None else p["best_f"],
            repairs=p["repairs"],
            nan_fitnesses=p["nan_fitnesses"],
            evaluations=p["evaluations"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "CmaesState":
        return cls.from_json(Path(path).read_text())


def _span(config: CmaesConfig) -> np.ndarray:
    return config.upper - config.lower


def _normalize(x: np.ndarray, config: CmaesConfig) -> np.ndarray:
    span = _span(config)
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - config.lower) / safe, 0.0)


def _denormalize(z: np.ndarray, config: CmaesConfig) -> np.ndarray:
    span = _span(config)
    return np.where(span > 0, config.lower + z * span, config.lower)


def _eigen(state: CmaesState) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of the covariance, repairing asymmetry or tiny eigenvalues in place."""
    c = (state.covariance + state.covariance.T) / 2.0
    vals, vecs = np.linalg.eigh(c)
    floor = EIG_FLOOR * max(float(vals.max()), 1.0)
    if not np.all(np.isfinite(vals)) or vals.min() < floor:
        vals = np.where(np.isfinite(vals), np.maximum(vals, floor), 1.0)
        c = (vecs * vals) @ vecs.T
        state.repairs += 1
    state.covariance = c
    return vals, vecs


def ask(state: CmaesState, config: CmaesConfig) -> list[np.ndarray]:
    """Sample ``population`` candidates in the original (bounded) coordinates."""
    vals, vecs = _eigen(state)
    rng = stream(config.seed, "cmaes", state.generation)
    z = rng.standard_normal((config.population, config.dim))
    y = (z * np.sqrt(vals)) @ vecs.T
    x = np.clip(state.mean + state.step_size * y, 0.0, 1.0)
    return [_denormalize(row, config) for row in x]


def tell(
    state: CmaesState,
    candidates: Sequence[np.ndarray],
    fitnesses: Sequence[float],
    config: CmaesConfig,
) -> CmaesState:
    """Update the search distribution from evaluated candidates (minimization)."""
    if len(candidates) != len(fitnesses) or len(candidates) < 2:
        raise ValueError("need one fitness per candidate and at least two candidates")
    f = np.asarray(fitnesses, dtype=float)
    bad = ~np.isfinite(f)
    if bad.any():
        state.nan_fitnesses += int(bad.sum())
        f = np.where(bad, np.inf, f)
    n = config.dim
    strat = _Strategy(n, len(candidates))
    x = np.array([_normalize(np.asarray(c, dtype=float), config) for c in candidates])
    order = np.argsort(f, kind="stable")
    best = order[0]
    if f[best] < state.best_f:
        state.best_f = float(f[best])
        state.best_x = np.asarray(candidates[best], dtype=float).copy()
    state.evaluations += len(candidates)

    vals, vecs = _eigen(state)
    sigma = state.step_size
    y = (x[order[: strat.mu]] - state.mean) / sigma
    y_w = strat.weights @ y
    state.mean = state.mean + sigma * y_w

    inv_sqrt_c = (vecs / np.sqrt(vals)) @ vecs.T
    state.p_sigma = (1 - strat.cs) * state.p_sigma + math.sqrt(strat.cs * (2 - strat.cs) * strat.mueff) * (
        inv_sqrt_c @ y_w
    )
    ps_norm = float(np.linalg.norm(state.p_sigma))
    g = state.generation + 1
    h_sigma = ps_norm / math.sqrt(1 - (1 - strat.cs) ** (2 * g)) < (1.4 + 2 / (n + 1)) * strat.chi_n
    state.p_c = (1 - strat.cc) * state.p_c + (
        h_sigma * math.sqrt(strat.cc * (2 - strat.cc) * strat.mueff) * y_w
    )
    delta_h = (1 - h_sigma) * strat.cc * (2 - strat.cc)
    rank_mu = (y.T * strat.weights) @ y
    state.covariance = (
        (1 + strat.c1 * delta_h - strat.c1 - strat.cmu) * state.covariance
        + strat.c1 * np.outer(state.p_c, state.p_c)
        + strat.cmu * rank_mu
    )
    state.step_size = sigma * math.exp((strat.cs / strat.ds) * (ps_norm / strat.chi_n - 1))
    state.generation = g
    _eigen(state)
    return state


class GenerationRecord(NamedTuple):
    generation: int
    best: float
    mean: float
    step_size: float


@dataclass
class OptimizeResult:
    best_x: np.ndarray
    best_f: float
    history: list[GenerationRecord] = field(default_factory=list)
    state: CmaesState | None = None

    @property
    def best_history(self) -> list[float]:
        return [r.best for r in self.history]


def write_history(path: str | Path, history: Sequence[GenerationRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GenerationRecord._fields)
        for r in history:
            writer.writerow([r.generation, repr(r.best), repr(r.mean), repr(r.step_size)])


def read_history(path: str | Path) -> list[GenerationRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        GenerationRecord(int(r["generation"]), float(r["best"]), float(r["mean"]), float(r["step_size"]))
        for r in rows
    ]


def optimize(
    objective: Callable,
    config: CmaesConfig,
    vectorized: bool = False,
    state: CmaesState | None = None,
    history: Sequence[GenerationRecord] = (),
    callback: Callable[[CmaesState, list[np.ndarray], list[float]], None] | None = None,
) -> OptimizeResult:
    """Run ask/tell until ``config.iterations`` generations are done.

    ``objective`` maps one parameter vector to a float, or, with
    ``vectorized=True``, a list of vectors to a list of floats. Passing a
    saved ``state`` (and its history) resumes a run.
    """
    state = CmaesState.initial(config) if state is None else state
    history = list(history)
    while state.generation < config.iterations:
        gen = state.generation
        candidates = ask(state, config)
        try:
            if vectorized:
                fitnesses = [float(v) for v in objective(candidates)]
            else:
                fitnesses = [float(objective(c)) for c in candidates]
        except Exception as exc:
            raise OptimizationError(gen, exc) from exc
        if len(fitnesses) != len(candidates):
            raise OptimizationError(gen, ValueError("objective returned wrong number of fitnesses"))
        tell(state, candidates, fitnesses, config)
        finite = [v for v in fitnesses if math.isfinite(v)]
        history.append(
            GenerationRecord(gen, state.best_f, float(np.mean(finite)) if finite else math.nan, state.step_size)
        )
        if callback is not None:
            callback(state, candidates, fitnesses)
    return OptimizeResult(state.best_x, state.best_f, history, state)
