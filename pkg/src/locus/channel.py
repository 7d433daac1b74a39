"""Radio channel simulation: log-distance path loss, shadowing, array snapshots.

Received power follows the log-distance model with log-normal shadowing:

    rssi(d) = p_r_d0 - 10 * gamma * log10(d / d0) - X,   X ~ Normal(0, sigma^2)

Antenna arrays are uniform and linear; snapshots are narrowband baseband
samples with per-snapshot random complex Gaussian symbols and additive
complex white Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PathLossParams:
    """Log-distance path loss parameters.

    gamma: path loss exponent, > 0
    sigma: shadowing standard deviation in dB, >= 0
    p_r_d0: received power at the reference distance, dBm
    d0: reference distance in meters, > 0 (1 m by default)
    """

    gamma: float
    sigma: float
    p_r_d0: float
    d0: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.d0 > 0:
            raise ValueError(f"d0 must be positive, got {self.d0}")
        for v in (self.gamma, self.sigma, self.p_r_d0, self.d0):
            if not math.isfinite(v):
                raise ValueError("path loss parameters must be finite")


@dataclass(frozen=True)
class ArraySpec:
    """Uniform linear array: m sensors, spacing in wavelengths, snapshot count."""

    m: int = 8
    spacing_wavelengths: float = 0.5
    snapshots: int = 256

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"need at least 2 sensors, got {self.m}")
        if not self.spacing_wavelengths > 0:
            raise ValueError("sensor spacing must be positive")
        if self.snapshots < 1:
            raise ValueError("need at least 1 snapshot")


@dataclass(frozen=True)
class SourceSpec:
    """A far-field narrowband source at a broadside angle (degrees) and power (dB)."""

    theta_deg: float
    power_db: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.theta_deg <= 90.0:
            raise ValueError(f"source angle must lie in [-90, 90] deg, got {self.theta_deg}")


@dataclass(frozen=True)
class SnapshotMatrix:
    """Complex m x T sample block from a ULA."""

    data: np.ndarray
    array: ArraySpec

    def __post_init__(self):
        expect = (self.array.m, self.array.snapshots)
        if self.data.shape != expect:
            raise ValueError(f"snapshot shape {self.data.shape} != {expect}")
        if not np.all(np.isfinite(self.data.real)) or not np.all(np.isfinite(self.data.imag)):
            raise ValueError("snapshot data must be finite")


@dataclass(frozen=True)
class NlosModel:
    """Non-line-of-sight degradation: fixed extra attenuation plus angle error.

    excess_loss_db: extra attenuation subtracted from the RSSI, >= 0
    aoa_bias_deg_sigma: std of the additive Gaussian angle perturbation, >= 0
    """

    excess_loss_db: float = 0.0
    aoa_bias_deg_sigma: float = 0.0

    def __post_init__(self):
        if self.excess_loss_db < 0 or self.aoa_bias_deg_sigma < 0:
            raise ValueError("NLoS parameters must be nonnegative")


def db_to_power(db: float) -> float:
    # -inf dB maps to exactly zero power (noiseless flag).
    return 10.0 ** (db / 10.0)


def expected_rssi(params: PathLossParams, d: float) -> float:
    """Mean received power at distance d (meters), in dBm. Requires d >= d0."""
    if d < params.d0:
        raise ValueError(f"distance {d} below reference distance {params.d0}")
    return params.p_r_d0 - 10.0 * params.gamma * math.log10(d / params.d0)


def simulate_rssi(params: PathLossParams, d: float, rng: np.random.Generator) -> float:
    """One shadowed RSSI draw: expected value minus Normal(0, sigma^2)."""
    return expected_rssi(params, d) - rng.normal(0.0, params.sigma)


def steering_vector(array: ArraySpec, theta_deg: float) -> np.ndarray:
    """ULA steering vector, first sensor as phase reference, broadside = 0 deg."""
    n = np.arange(array.m)
    phase = -2j * np.pi * array.spacing_wavelengths * n * math.sin(math.radians(theta_deg))
    return np.exp(phase)


def steering_matrix(array: ArraySpec, thetas_deg: np.ndarray) -> np.ndarray:
    """Column-stacked steering vectors for a vector of angles: shape (m, len(thetas))."""
    n = np.arange(array.m)[:, None]
    s = np.sin(np.radians(np.asarray(thetas_deg, dtype=float)))[None, :]
    return np.exp(-2j * np.pi * array.spacing_wavelengths * n * s)


def simulate_snapshots(
    array: ArraySpec,
    sources: list[SourceSpec],
    noise_power_db: float,
    rng: np.random.Generator,
) -> SnapshotMatrix:
    """Simulate T narrowband snapshots of K sources plus white noise.

    Each source emits an independent complex Gaussian symbol per snapshot at
    its configured power. noise_power_db = -inf gives noiseless data.
    Requires 1 <= K < m.
    """
    k = len(sources)
    if k < 1 or k >= array.m:
        raise ValueError(f"need 1 <= sources < {array.m} sensors, got {k}")
    t = array.snapshots
    a = steering_matrix(array, np.array([s.theta_deg for s in sources]))
    powers = np.array([db_to_power(s.power_db) for s in sources])
    symbols = rng.standard_normal((k, t)) + 1j * rng.standard_normal((k, t))
    symbols *= np.sqrt(powers / 2.0)[:, None]
    x = a @ symbols
    npow = db_to_power(noise_power_db)
    if npow > 0.0:
        noise = rng.standard_normal((array.m, t)) + 1j * rng.standard_normal((array.m, t))
        x = x + math.sqrt(npow / 2.0) * noise
    return SnapshotMatrix(x, array)


def apply_nlos(
    rssi: float, aoa_deg: float, model: NlosModel, rng: np.random.Generator
) -> tuple[float, float]:
    """Degrade one (rssi, aoa) pair: fixed extra loss, Gaussian angle error."""
    return rssi - model.excess_loss_db, aoa_deg + rng.normal(0.0, model.aoa_bias_deg_sigma)


def snapshots_to_csv(snap: SnapshotMatrix) -> str:
    """One row per sensor; each snapshot contributes a re,im value pair."""
    lines = []
    for row in snap.data:
        parts = []
        for v in row:
            parts.append(repr(float(v.real)))
            parts.append(repr(float(v.imag)))
        lines.append(",".join(parts))
    return "\n".join(lines) + "\n"


def snapshots_from_csv(text: str, spacing_wavelengths: float = 0.5) -> SnapshotMatrix:
    """Parse the snapshots_to_csv format. Spacing is not stored in the CSV."""
    rows = []
    for line in text.strip().splitlines():
        vals = [float(v) for v in line.split(",")]
        if len(vals) % 2 != 0:
            raise ValueError("each row needs an even number of values (re,im pairs)")
        arr = np.array(vals).reshape(-1, 2)
        rows.append(arr[:, 0] + 1j * arr[:, 1])
    data = np.array(rows)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("snapshot CSV must contain at least two sensor rows")
    array = ArraySpec(m=data.shape[0], spacing_wavelengths=spacing_wavelengths, snapshots=data.shape[1])
    return SnapshotMatrix(data, array)
