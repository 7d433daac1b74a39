"""Angle-of-arrival estimation on ULA snapshots via subspace decomposition.

Chain: sample correlation matrix -> Hermitian eigendecomposition -> noise
subspace -> pseudo-spectrum scan -> peak picking with quadratic refinement.

The eigendecomposition is a cyclic complex Jacobi iteration written here so
the whole chain is self-contained and bitwise deterministic; at the array
sizes in play (m <= 16) it converges in a handful of sweeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ArraySpec, SnapshotMatrix, steering_matrix

# Floor for the pseudo-spectrum denominator: a steering vector exactly inside
# the signal subspace would otherwise divide by zero.
SPECTRUM_FLOOR = 1e-15

_JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class CorrelationMatrix:
    r: np.ndarray  # (m, m) complex, Hermitian

    def __post_init__(self):
        m = self.r.shape[0]
        if self.r.ndim != 2 or self.r.shape != (m, m):
            raise ValueError("correlation matrix must be square")
        if not np.all(np.isfinite(self.r.real)) or not np.all(np.isfinite(self.r.imag)):
            raise ValueError("correlation matrix must be finite")


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray  # (m,) real, descending
    vectors: np.ndarray  # (m, m) complex, columns orthonormal


@dataclass(frozen=True)
class SpatialSpectrum:
    grid_deg: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        if self.grid_deg.size == 0:
            raise ValueError("empty spectrum grid")
        if self.grid_deg.shape != self.power.shape:
            raise ValueError("grid and power shapes differ")


def correlation_matrix(x: SnapshotMatrix) -> CorrelationMatrix:
    """Sample correlation R = X X^H / T, symmetrized to kill roundoff skew."""
    t = x.array.snapshots
    r = (x.data @ x.data.conj().T) / t
    r = (r + r.conj().T) / 2.0
    return CorrelationMatrix(r)


def eigendecompose(corr: CorrelationMatrix) -> EigenDecomposition:
    """Full eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Returns eigenvalues sorted descending with matching orthonormal columns.
    """
    r = corr.r
    scale = float(np.linalg.norm(r))
    if not np.allclose(r, r.conj().T, atol=max(scale, 1.0) * 1e-10):
        raise ValueError("matrix is not Hermitian")
    a = r.astype(complex).copy()
    m = a.shape[0]
    v = np.eye(m, dtype=complex)
    tol = max(scale, 1e-300) * 1e-14
    off_mask = ~np.eye(m, dtype=bool)
    for _ in range(_JACOBI_MAX_SWEEPS):
        # Norm of the off-diagonal entries alone; subtracting the diagonal
        # from the full Frobenius norm would cancel away small residuals.
        off = float(np.linalg.norm(a[off_mask]))
        if off <= tol:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                r_abs = abs(apq)
                if r_abs <= tol / (m * m):
                    continue
                phase = apq / r_abs
                app = a[p, p].real
                aqq = a[q, q].real
                tau = (aqq - app) / (2.0 * r_abs)
                if tau >= 0:
                    t_ = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t_ = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t_ * t_)
                s = t_ * c
                # Unitary plane rotation G: G[p,p]=c, G[p,q]=s*phase,
                # G[q,p]=-s*conj(phase), G[q,q]=c; apply A <- G^H A G, V <- V G.
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * np.conj(phase) * col_q
                a[:, q] = s * phase * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * phase * row_q
                a[q, :] = s * np.conj(phase) * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                vol_p = v[:, p].copy()
                vol_q = v[:, q].copy()
                v[:, p] = c * vol_p - s * np.conj(phase) * vol_q
                v[:, q] = s * phase * vol_p + c * vol_q
    values = np.diag(a).real.copy()
    order = np.argsort(-values, kind="stable")
    return EigenDecomposition(values=values[order], vectors=v[:, order])


def noise_subspace(eig: EigenDecomposition, k: int) -> np.ndarray:
    """Columns spanning the m - k smallest eigenvalues; shape (m, m - k)."""
    m = eig.values.size
    if k < 1 or k >= m:
        raise ValueError(f"source count must satisfy 1 <= k < {m}, got {k}")
    return eig.vectors[:, k:]


def angle_grid(step_deg: float = 0.1) -> np.ndarray:
    """Uniform scan grid covering [-90, 90] inclusive."""
    if not step_deg > 0:
        raise ValueError("grid step must be positive")
    n = int(round(180.0 / step_deg))
    return -90.0 + step_deg * np.arange(n + 1)


def spatial_spectrum(un: np.ndarray, array: ArraySpec, grid_deg: np.ndarray) -> SpatialSpectrum:
    """Pseudo-spectrum P(theta) = 1 / (a^H U_N U_N^H a) over an ascending grid."""
    grid = np.asarray(grid_deg, dtype=float)
    if grid.size == 0:
        raise ValueError("empty scan grid")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("scan grid must be strictly ascending")
    if grid[0] < -90.0 or grid[-1] > 90.0:
        raise ValueError("scan grid must lie within [-90, 90] degrees")
    if un.shape[0] != array.m:
        raise ValueError("noise subspace row count does not match the array")
    a = steering_matrix(array, grid)  # (m, g)
    proj = un.conj().T @ a  # (m - k, g)
    denom = np.sum(np.abs(proj) ** 2, axis=0)
    denom = np.maximum(denom, SPECTRUM_FLOOR)
    return SpatialSpectrum(grid_deg=grid, power=1.0 / denom)


def _local_maxima(power: np.ndarray) -> list[int]:
    """Indices of local maxima: strictly above the left neighbor (so flat
    plateaus contribute their leading point only), at least as high as the
    right one. Endpoints count when they dominate their single neighbor."""
    g = power.size
    idx = []
    for i in range(g):
        left = power[i - 1] if i > 0 else -math.inf
        right = power[i + 1] if i < g - 1 else -math.inf
        if power[i] > left and power[i] >= right:
            idx.append(i)
    return idx


def _refine_peak(grid: np.ndarray, power: np.ndarray, i: int) -> float:
    """Quadratic 3-point interpolation around grid[i]; endpoints not refined."""
    if i == 0 or i == grid.size - 1:
        return float(grid[i])
    y0, y1, y2 = power[i - 1], power[i], power[i + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom == 0.0:
        return float(grid[i])
    delta = 0.5 * (y0 - y2) / denom
    step = grid[i] - grid[i - 1]
    return float(grid[i] + delta * step)


def estimate_aoa(x: SnapshotMatrix, k: int, grid_step_deg: float = 0.1) -> list[float]:
    """MUSIC estimate of k source angles from a snapshot block, ascending order.

    Takes the k largest local maxima of the pseudo-spectrum (ties broken
    toward the lower angle), each refined by quadratic interpolation.
    """
    if k < 1 or k >= x.array.m:
        raise ValueError(f"source count must satisfy 1 <= k < {x.array.m}, got {k}")
    eig = eigendecompose(correlation_matrix(x))
    un = noise_subspace(eig, k)
    spec = spatial_spectrum(un, x.array, angle_grid(grid_step_deg))
    maxima = _local_maxima(spec.power)
    if len(maxima) < k:
        raise ValueError(f"found {len(maxima)} spectrum peaks, need {k}")
    ranked = sorted(maxima, key=lambda i: (-spec.power[i], spec.grid_deg[i]))
    chosen = ranked[:k]
    angles = [_refine_peak(spec.grid_deg, spec.power, i) for i in chosen]
    return sorted(angles)
