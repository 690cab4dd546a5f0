"""Gaussian observation-noise model estimated from the upper half of the spectrum."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_SAMPLES = 64


@dataclass(frozen=True, eq=False)
class NoiseModel:
    channels: tuple[str, ...]
    sigma: np.ndarray
    f_s: float

    def __post_init__(self) -> None:
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (len(self.channels),):
            raise ValueError("one sigma per channel required")
        if np.any(sigma < 0) or not np.all(np.isfinite(sigma)):
            raise ValueError("sigma must be finite and >= 0")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "sigma", sigma)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NoiseModel):
            return NotImplemented
        return self.channels == other.channels and self.f_s == other.f_s and np.array_equal(self.sigma, other.sigma)

    def lookup(self, names: tuple[str, ...] | list[str]) -> np.ndarray:
        """Sigmas for ``names``; channels the model does not know get 0."""
        index = dict(zip(self.channels, self.sigma))
        return np.array([index.get(n, 0.0) for n in names])

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# f_s={self.f_s!r}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["channel", "sigma"])
            writer.writerows([c, repr(float(s))] for c, s in zip(self.channels, self.sigma))

    @classmethod
    def load(cls, path: str | Path) -> "NoiseModel":
        f_s = float("nan")
        channels, sigma = [], []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                if row[0].startswith("#"):
                    key, _, value = row[0][1:].partition("=")
                    if key.strip() == "f_s":
                        f_s = float(value)
                    continue
                if row == ["channel", "sigma"]:
                    continue
                if len(row) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'channel,sigma'")
                channels.append(row[0])
                sigma.append(float(row[1]))
        if not channels:
            raise ValueError(f"{path}: no channels")
        return cls(tuple(channels), np.array(sigma), f_s)


def estimate_sigma(signal: np.ndarray, f_s: float, band: tuple[float, float] = (0.25, 0.5)) -> float:
    """Standard deviation of the white-noise floor of ``signal``.

    The spectrum is weighted by frequency and its power averaged over
    ``band`` (fractions of ``f_s``, default the top half up to Nyquist).
    The normalization divides by ``N * mean(f**2)`` over the same bins, so
    exact white noise of std ``s`` maps to ``s`` in expectation.
    """
    x = np.asarray(signal, dtype=float).ravel()
    if f_s <= 0:
        raise ValueError(f"sampling rate must be > 0, got {f_s}")
    if x.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    lo, hi = band
    if not 0 < lo < hi <= 0.5:
        raise ValueError("band must satisfy 0 < lo < hi <= 0.5 (fractions of f_s)")
    n = 1 << (x.size.bit_length() - 1)
    x = x[:n] - x[:n].mean()
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, d=1.0 / f_s)
    in_band = (freqs >= lo * f_s) & (freqs <= hi * f_s)
    weighted_power = np.abs(spectrum[in_band]) ** 2 * freqs[in_band] ** 2
    return float(np.sqrt(weighted_power.mean() / (n * np.mean(freqs[in_band] ** 2))))


def estimate_model(channels: dict[str, np.ndarray], f_s: float, band: tuple[float, float] = (0.25, 0.5)) -> NoiseModel:
    names = tuple(channels)
    return NoiseModel(names, np.array([estimate_sigma(channels[c], f_s, band) for c in names]), f_s)


def corrupt(obs: np.ndarray, model: NoiseModel, seed: int | np.random.Generator) -> np.ndarray:
    """Add independent zero-mean Gaussian noise per channel (last axis)."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1:] != model.sigma.shape:
        raise ValueError(f"observation has {obs.shape[-1:]} channels, model has {model.sigma.size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return obs + rng.standard_normal(obs.shape) * model.sigma
