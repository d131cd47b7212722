"""Hourly load profiles: synthetic generation and CSV import.

Profiles are dimensionless multipliers applied to every net load in a case;
they are always peak-normalized so the series maximum is exactly 1.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ProfileError

MIN_HOURS = 48
CLIP_FLOOR = 0.2

# double-sinusoid construction constants (daily + weekly with noise)
BASE_LEVEL = 0.65
DAILY_AMPLITUDE = 0.18
WEEKLY_AMPLITUDE = 0.08
DEFAULT_NOISE_AMP = 0.05


@dataclass(frozen=True)
class LoadProfile:
    """Peak-normalized multiplier series with its provenance record."""

    values: np.ndarray
    provenance: dict

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ProfileError("profile must be a nonempty 1-d series")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ProfileError("profile entries must be finite and nonnegative")
        if abs(values.max() - 1.0) > 1e-12:
            raise ProfileError("profile must be peak-normalized (max == 1)")
        object.__setattr__(self, "values", values)

    @property
    def hours(self) -> int:
        return self.values.size


def synth_profile(hours: int, seed: int,
                  noise_amp: float = DEFAULT_NOISE_AMP) -> LoadProfile:
    """Daily plus weekly sinusoids with seeded noise, floored and normalized."""
    if hours < MIN_HOURS:
        raise ProfileError(f"need at least {MIN_HOURS} hours, got {hours}")
    if noise_amp < 0:
        raise ProfileError("noise amplitude must be nonnegative")
    rng = np.random.Generator(np.random.PCG64(seed))
    phase_daily, phase_weekly = rng.uniform(0.0, 2.0 * np.pi, 2)
    t = np.arange(hours)
    series = (BASE_LEVEL
              + DAILY_AMPLITUDE * np.sin(2.0 * np.pi * t / 24.0 + phase_daily)
              + WEEKLY_AMPLITUDE * np.sin(2.0 * np.pi * t / 168.0 + phase_weekly)
              + noise_amp * rng.standard_normal(hours))
    series = np.maximum(series, CLIP_FLOOR)
    series = series / series.max()
    return LoadProfile(series, {
        "kind": "synthetic", "hours": hours, "seed": int(seed),
        "noise_amp": float(noise_amp),
    })


def import_profile(path: str | Path) -> LoadProfile:
    """Read one positive number per line and peak-normalize."""
    path = Path(path)
    text = path.read_text()
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            value = float(line)
        except ValueError:
            raise ProfileError(f"{path}:{lineno}: not a number: {line!r}") from None
        if not np.isfinite(value) or value <= 0:
            raise ProfileError(f"{path}:{lineno}: entries must be positive, got {value}")
        values.append(value)
    if not values:
        raise ProfileError(f"{path}: no values found")
    series = np.array(values)
    digest = hashlib.sha256(text.encode()).hexdigest()
    return LoadProfile(series / series.max(), {
        "kind": "imported", "path": str(path), "sha256": digest,
    })


def save_profile(profile: LoadProfile, path: str | Path) -> None:
    """One value per line; the file re-imports to an identical profile."""
    Path(path).write_text(
        "\n".join(repr(float(v)) for v in profile.values) + "\n")


def lag_autocorrelation(values: np.ndarray, lag: int) -> float:
    """Pearson correlation between the series and its lagged copy."""
    a = values[:-lag] - values[:-lag].mean()
    b = values[lag:] - values[lag:].mean()
    return float((a @ b) / np.sqrt((a @ a) * (b @ b)))
