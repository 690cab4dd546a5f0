"""Two-sample distances between feature matrices and the aggregate similarity score."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from simgap.actuator import GainConfig
from simgap.rollout_data import Rollout, extract_features

MEDIAN_MAX_ROWS = 2000
BANDWIDTH_FLOOR = 1e-9


class ScoreError(ValueError):
    """Rollout sets that cannot be paired for scoring."""


def wasserstein_1d(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Empirical W1 distance between two 1-D samples."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    # Integrate |F_a - F_b| between consecutive pooled support points.
    support = np.sort(np.concatenate([a, b]))
    widths = np.diff(support)
    cdf_a = np.searchsorted(a, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def wasserstein_features(A: np.ndarray, B: np.ndarray) -> float:
    """Mean over columns of the per-column W1 distance; row order is ignored."""
    A, B = np.atleast_2d(np.asarray(A, dtype=float)), np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("feature matrices must be non-empty")
    if A.shape[0] == B.shape[0]:
        return float(np.mean(np.abs(np.sort(A, axis=0) - np.sort(B, axis=0))))
    return float(np.mean([wasserstein_1d(A[:, j], B[:, j]) for j in range(A.shape[1])]))


def _check_pair(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def _mmd_from_sqdist(d_aa: np.ndarray, d_bb: np.ndarray, d_ab: np.ndarray, bandwidth: float) -> float:
    scale = -1.0 / (2.0 * bandwidth * bandwidth)
    n, m = d_aa.shape[0], d_bb.shape[0]
    k_aa = np.exp(d_aa * scale)
    k_bb = np.exp(d_bb * scale)
    within_a = (k_aa.sum() - np.trace(k_aa)) / (n * (n - 1))
    within_b = (k_bb.sum() - np.trace(k_bb)) / (m * (m - 1))
    cross = np.exp(d_ab * scale).mean()
    return float(within_a + within_b - 2.0 * cross)


def mmd(A: np.ndarray, B: np.ndarray, bandwidth: float) -> float:
    """Unbiased squared MMD with a Gaussian RBF kernel. Can be slightly negative."""
    A, B = _check_pair(A, B)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise ValueError("mmd needs at least 2 rows per sample")
    return _mmd_from_sqdist(
        cdist(A, A, "sqeuclidean"), cdist(B, B, "sqeuclidean"), cdist(A, B, "sqeuclidean"), bandwidth
    )


def median_heuristic(A: np.ndarray, B: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled rows.

    Pools larger than 2000 rows are thinned by a fixed stride first.
    """
    A, B = _check_pair(A, B)
    pooled = np.vstack([A, B])
    if pooled.shape[0] < 2:
        raise ValueError("need at least 2 pooled rows")
    if pooled.shape[0] > MEDIAN_MAX_ROWS:
        stride = -(-pooled.shape[0] // MEDIAN_MAX_ROWS)
        pooled = pooled[::stride]
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else BANDWIDTH_FLOOR


def pair_distances(A: np.ndarray, B: np.ndarray) -> tuple[float, float]:
    """``(wasserstein_features, mmd)`` with the median-heuristic bandwidth of the pooled pair."""
    A, B = _check_pair(A, B)
    if A.shape[0] + B.shape[0] > MEDIAN_MAX_ROWS:
        return wasserstein_features(A, B), mmd(A, B, median_heuristic(A, B))
    return _cached_pair(_Prepared.of(A), _Prepared.of(B))


@dataclass(frozen=True)
class _Prepared:
    """A feature matrix with its column-sorted copy and within-sample squared distances."""

    rows: np.ndarray
    sorted_cols: np.ndarray
    tri_sqdist: np.ndarray

    @classmethod
    def of(cls, F: np.ndarray) -> "_Prepared":
        F = np.asarray(F, dtype=float)
        if F.shape[0] < 2:
            raise ValueError("mmd needs at least 2 rows per sample")
        return cls(F, np.sort(F, axis=0), pdist(F, "sqeuclidean"))


def _median_sqrt(sq: np.ndarray) -> float:
    k = sq.size // 2
    if sq.size % 2:
        return float(np.sqrt(np.partition(sq, k)[k]))
    part = np.partition(sq, (k - 1, k))
    return float((np.sqrt(part[k - 1]) + np.sqrt(part[k])) / 2.0)


def _cached_pair(a: _Prepared, b: _Prepared) -> tuple[float, float]:
    if a.rows.shape[1] != b.rows.shape[1]:
        raise ValueError(f"column mismatch: {a.rows.shape[1]} vs {b.rows.shape[1]}")
    if a.rows.shape[0] == b.rows.shape[0]:
        w = float(np.mean(np.abs(a.sorted_cols - b.sorted_cols)))
    else:
        w = wasserstein_features(a.rows, b.rows)
    d_ab = cdist(a.rows, b.rows, "sqeuclidean")
    med = _median_sqrt(np.concatenate([a.tri_sqdist, b.tri_sqdist, d_ab.ravel()]))
    bandwidth = med if med > 0 else BANDWIDTH_FLOOR
    scale = -1.0 / (2.0 * bandwidth * bandwidth)
    n, m = a.rows.shape[0], b.rows.shape[0]
    within_a = 2.0 * np.exp(a.tri_sqdist * scale).sum() / (n * (n - 1))
    within_b = 2.0 * np.exp(b.tri_sqdist * scale).sum() / (m * (m - 1))
    cross = np.exp(d_ab * scale).mean()
    return w, float(within_a + within_b - 2.0 * cross)


# -- aggregate score ---------------------------------------------------------

class PairScore(NamedTuple):
    sequence_id: str
    hardware_index: int
    sim_index: int
    wasserstein: float
    mmd: float


@dataclass(frozen=True)
class ScoreWeights:
    """Measure weights (summing to 1) and optional per-sequence weights.

    ``sequence=None`` means uniform over the sequences present.
    """

    wasserstein: float = 0.5
    mmd: float = 0.5
    sequence: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        if self.wasserstein < 0 or self.mmd < 0 or not np.isclose(self.wasserstein + self.mmd, 1.0):
            raise ValueError("measure weights must be >= 0 and sum to 1")
        if self.sequence is not None and any(w < 0 for w in self.sequence.values()):
            raise ValueError("sequence weights must be >= 0")

    def for_sequences(self, ids: Iterable[str]) -> dict[str, float]:
        ids = sorted(ids)
        if self.sequence is None:
            return {s: 1.0 / len(ids) for s in ids}
        missing = [s for s in ids if s not in self.sequence]
        if missing:
            raise ScoreError(f"no weight given for sequences: {', '.join(missing)}")
        total = sum(self.sequence[s] for s in ids)
        if total <= 0:
            raise ScoreError("sequence weights sum to zero")
        return {s: self.sequence[s] / total for s in ids}


@dataclass(frozen=True)
class Normalizer:
    """Reference values each measure is divided by before weighting.

    In calibration these are the weighted measure values of the first
    evaluated candidate, so both measures start at 1.
    """

    wasserstein: float = 1.0
    mmd: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "wasserstein", self.wasserstein if self.wasserstein > 0 else 1.0)
        object.__setattr__(self, "mmd", self.mmd if self.mmd > 0 else 1.0)


@dataclass
class ScoreReport:
    per_pair: list[PairScore]
    per_sequence: dict[str, tuple[float, float]]
    combined: float
    sequence_weights: dict[str, float]
    measure_weights: tuple[float, float]
    normalizer: Normalizer = field(default_factory=Normalizer)

    @property
    def raw_measures(self) -> tuple[float, float]:
        """Sequence-weighted (wasserstein, mmd) before normalization."""
        w = sum(self.sequence_weights[s] * v[0] for s, v in sorted(self.per_sequence.items()))
        m = sum(self.sequence_weights[s] * v[1] for s, v in sorted(self.per_sequence.items()))
        return float(w), float(m)

    def per_pair_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sequence_id", "hardware_index", "sim_index", "wasserstein", "mmd"])
        for p in self.per_pair:
            writer.writerow([p.sequence_id, p.hardware_index, p.sim_index, repr(p.wasserstein), repr(p.mmd)])
        return buf.getvalue()

    def summary(self) -> str:
        w_w, w_m = self.measure_weights
        raw_w, raw_m = self.raw_measures
        lines = [
            f"combined = {self.combined!r}",
            f"weights.wasserstein = {w_w!r}",
            f"weights.mmd = {w_m!r}",
            f"normalizer.wasserstein = {self.normalizer.wasserstein!r}",
            f"normalizer.mmd = {self.normalizer.mmd!r}",
            f"raw.wasserstein = {raw_w!r}",
            f"raw.mmd = {raw_m!r}",
            f"pairs = {len(self.per_pair)}",
        ]
        for seq, (w, m) in sorted(self.per_sequence.items()):
            lines.append(f"sequence.{seq}.weight = {self.sequence_weights[seq]!r}")
            lines.append(f"sequence.{seq}.wasserstein = {w!r}")
            lines.append(f"sequence.{seq}.mmd = {m!r}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "score") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pairs, summary = out / f"{stem}_pairs.csv", out / f"{stem}_summary.txt"
        pairs.write_text(self.per_pair_csv())
        summary.write_text(self.summary())
        return pairs, summary


def _canonical(rollouts: Iterable[Rollout]) -> list[Rollout]:
    """Sort so aggregation is independent of the caller's list order."""

    def key(r: Rollout) -> tuple:
        digest = hashlib.sha1(r.q.tobytes() + r.q_dot.tobytes() + r.action.tobytes()).hexdigest()
        return (r.sequence_id, r.repeat_index, digest)

    return sorted(rollouts, key=key)


class Scorer:
    """Similarity scoring against a fixed hardware set.

    Hardware features and their within-sample distances are computed once,
    so scoring many simulated candidates only pays for the cross terms.
    """

    def __init__(
        self,
        hardware: Sequence[Rollout],
        gains: GainConfig = GainConfig(),
        weights: ScoreWeights = ScoreWeights(),
    ) -> None:
        hardware = _canonical(hardware)
        if not hardware:
            raise ScoreError("no hardware rollouts")
        not_hw = sorted({r.sequence_id for r in hardware if r.source != "hardware"})
        if not_hw:
            raise ScoreError(f"hardware list contains non-hardware rollouts for: {', '.join(not_hw)}")
        self.gains = gains
        self.weights = weights
        self.hardware: dict[str, list[tuple[int, _Prepared]]] = {}
        for r in hardware:
            prepared = _Prepared.of(extract_features(r, gains))
            self.hardware.setdefault(r.sequence_id, []).append((r.repeat_index, prepared))

    @property
    def sequence_ids(self) -> list[str]:
        return sorted(self.hardware)

    def pair_scores(self, simulated: Sequence[Rollout]) -> list[PairScore]:
        simulated = _canonical(simulated)
        if not simulated:
            raise ScoreError("no simulated rollouts")
        missing = sorted({r.sequence_id for r in simulated} - set(self.hardware))
        if missing:
            raise ScoreError(f"no hardware rollouts for sequences: {', '.join(missing)}")
        pairs = []
        for sim in simulated:
            prepared = _Prepared.of(extract_features(sim, self.gains))
            for hw_index, hw in self.hardware[sim.sequence_id]:
                w, m = _cached_pair(hw, prepared)
                pairs.append(PairScore(sim.sequence_id, hw_index, sim.repeat_index, w, m))
        pairs.sort(key=lambda p: (p.sequence_id, p.hardware_index, p.sim_index))
        return pairs

    def aggregate(self, pairs: Sequence[PairScore], normalizer: Normalizer | None = None) -> ScoreReport:
        if not pairs:
            raise ScoreError("no hardware/simulation pairs share a sequence id")
        normalizer = normalizer or Normalizer()
        grouped: dict[str, list[PairScore]] = {}
        for p in pairs:
            grouped.setdefault(p.sequence_id, []).append(p)
        # Negative unbiased MMD estimates are clamped here, never in the pair table.
        per_sequence = {
            seq: (float(np.mean([p.wasserstein for p in ps])), float(np.mean([max(p.mmd, 0.0) for p in ps])))
            for seq, ps in sorted(grouped.items())
        }
        seq_w = self.weights.for_sequences(per_sequence)
        w_w, w_m = self.weights.wasserstein, self.weights.mmd
        combined = 0.0
        for seq in sorted(per_sequence):
            w, m = per_sequence[seq]
            combined += seq_w[seq] * (w_w * w / normalizer.wasserstein + w_m * m / normalizer.mmd)
        return ScoreReport(list(pairs), per_sequence, float(combined), seq_w, (w_w, w_m), normalizer)

    def score(self, simulated: Sequence[Rollout], normalizer: Normalizer | None = None) -> ScoreReport:
        pairs = self.pair_scores(simulated)
        uncovered = sorted(set(self.hardware) - {p.sequence_id for p in pairs})
        if uncovered:
            raise ScoreError(f"simulated rollouts missing for sequences: {', '.join(uncovered)}")
        return self.aggregate(pairs, normalizer)


def normalizer_from(report: ScoreReport) -> Normalizer:
    """Normalizer that maps ``report``'s own measures to 1."""
    return Normalizer(*report.raw_measures)


def similarity_score(
    hardware: Sequence[Rollout],
    simulated: Sequence[Rollout],
    gains: GainConfig = GainConfig(),
    weights: ScoreWeights = ScoreWeights(),
    normalizer: Normalizer | None = None,
) -> ScoreReport:
    """Pairwise (hardware, simulated) distances per sequence, averaged, then weighted.

    Every hardware sequence must have simulated counterparts and vice versa.
    Without ``normalizer`` the raw measures are combined.
    """
    return Scorer(hardware, gains, weights).score(simulated, normalizer)
