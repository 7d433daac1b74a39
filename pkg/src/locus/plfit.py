"""Path loss parameter fitting from (distance, rssi) samples.

The log-distance model is linear in x = log10(d / d0):

    rssi = p_r_d0 - 10 * gamma * x

so ordinary least squares on (x, rssi) recovers p_r_d0 (intercept) and gamma
(slope / -10). The shadowing level sigma is estimated as the residual
standard deviation with an n - 2 denominator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import PathLossParams


@dataclass(frozen=True)
class FitSample:
    """One calibration measurement: distance in meters, received power in dBm."""

    d: float
    rssi: float

    def __post_init__(self):
        if not (math.isfinite(self.d) and math.isfinite(self.rssi)):
            raise ValueError("fit samples must be finite")
        if not self.d > 0:
            raise ValueError(f"distance must be positive, got {self.d}")


@dataclass(frozen=True)
class FitResult:
    params: PathLossParams
    residual_rms: float
    n_samples: int


def fit_path_loss(samples: list[FitSample], d0: float = 1.0) -> FitResult:
    """Least-squares fit of the log-distance model to pooled samples.

    Needs at least 3 samples spanning at least 2 distinct distances (the
    intercept/slope system is rank deficient otherwise).
    """
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    n = len(samples)
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    d = np.array([s.d for s in samples])
    rssi = np.array([s.rssi for s in samples])
    if np.unique(d).size < 2:
        raise ValueError("all distances identical; slope is unidentifiable")
    x = np.log10(d / d0)
    # Columns: intercept (p_r_d0) and slope term (-10 * x) whose coefficient is gamma.
    design = np.column_stack([np.ones(n), -10.0 * x])
    coef, _, _, _ = np.linalg.lstsq(design, rssi, rcond=None)
    p_r_d0, gamma = float(coef[0]), float(coef[1])
    if gamma <= 0:
        raise ValueError(f"fitted path loss exponent {gamma:.6f} is not positive")
    resid = rssi - design @ coef
    residual_rms = float(np.sqrt(np.mean(resid**2)))
    sigma = float(np.sqrt(np.sum(resid**2) / (n - 2)))
    return FitResult(
        params=PathLossParams(gamma=gamma, sigma=sigma, p_r_d0=p_r_d0, d0=d0),
        residual_rms=residual_rms,
        n_samples=n,
    )


def read_fit_samples_csv(text: str) -> list[FitSample]:
    """Parse 'd_m,rssi_dbm' CSV text; a single header line is tolerated."""
    samples = []
    for i, line in enumerate(text.strip().splitlines()):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"line {i + 1}: expected 2 columns, got {len(parts)}")
        try:
            d, rssi = float(parts[0]), float(parts[1])
        except ValueError:
            if i == 0:
                continue  # header
            raise ValueError(f"line {i + 1}: non-numeric values {parts}")
        samples.append(FitSample(d=d, rssi=rssi))
    return samples
