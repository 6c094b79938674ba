"""Receive apodization and the apodized matched-filter beamformer ``B``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .acquisition import ImagingGrid, ProbeGeometry
from .errors import ValidationError
from .system_matrix import SystemMatrix

WINDOWS = ("tukey", "rectangular", "hann")


@dataclass(frozen=True)
class ApodizationSpec:
    """Receive window and f-number; ``f_number=None`` opens the full aperture."""

    window: str = "tukey"
    taper: float = 0.25
    f_number: float | None = 1.4

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise ValidationError(f"unknown window {self.window!r}; expected one of {WINDOWS}")
        if not 0.0 <= self.taper <= 1.0:
            raise ValidationError(f"taper must be in [0, 1], got {self.taper}")
        if self.f_number is not None and not self.f_number > 0:
            raise ValidationError(f"f_number must be > 0, got {self.f_number}")


@dataclass(frozen=True)
class BeamformerMatrix:
    matrix: sp.csr_matrix
    key: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def window_value(spec: ApodizationSpec, u) -> np.ndarray:
    """Window evaluated at normalized lateral offset ``u`` (0 on axis, 1 at the aperture edge)."""
    u = np.abs(np.asarray(u, dtype=float))
    inside = u <= 1.0
    if spec.window == "rectangular":
        w = np.ones_like(u)
    elif spec.window == "hann":
        w = 0.5 * (1.0 + np.cos(np.pi * np.minimum(u, 1.0)))
    else:
        flat = 1.0 - spec.taper
        w = np.ones_like(u)
        if spec.taper > 0:
            ramp = u > flat
            w[ramp] = 0.5 * (1.0 + np.cos(np.pi * (u[ramp] - flat) / spec.taper))
    return np.where(inside, w, 0.0)


def apodization_weights(probe: ProbeGeometry, grid: ImagingGrid, spec: ApodizationSpec) -> np.ndarray:
    """Receive weights ``a[n, j]`` of shape (N, L).

    The active half-aperture at depth z is ``z / (2 * f_number)``.
    """
    x, z = grid.pixel_positions()
    if spec.f_number is None:
        weights = np.ones((grid.N, probe.element_count))
    else:
        half = z / (2.0 * spec.f_number)
        u = np.abs(x[:, None] - probe.element_positions[None, :]) / half[:, None]
        weights = window_value(spec, u)
    empty = np.flatnonzero(~np.any(weights > 0, axis=1))
    if empty.size:
        listed = ", ".join(str(n) for n in empty[:20])
        more = "" if empty.size <= 20 else f" (+{empty.size - 20} more)"
        raise ValidationError(f"{empty.size} pixel(s) have an empty receive aperture: {listed}{more}")
    return weights


def build_beamformer(H: SystemMatrix, weights: np.ndarray, key: str = "") -> BeamformerMatrix:
    """``B = (W * H)^T`` where W repeats ``a[n, j]`` over every sample of element j."""
    weights = np.asarray(weights, dtype=float)
    N = H.shape[1]
    if weights.shape != (N, H.element_count):
        raise ValidationError(f"weights have shape {weights.shape}, expected {(N, H.element_count)}")
    M = H.matrix.tocoo()
    element = M.row // H.sample_count
    scaled = M.data * weights[M.col, element]
    W = sp.csr_matrix((scaled, (M.col, M.row)), shape=(N, H.shape[0]))
    W.eliminate_zeros()
    return BeamformerMatrix(W, key)


def das(B: BeamformerMatrix, y) -> np.ndarray:
    """Delay-and-sum image ``B y`` (N-vector, depth-major)."""
    y = np.ravel(np.asarray(y, dtype=float), order="F") if np.ndim(y) == 2 else np.asarray(y, dtype=float)
    if y.shape != (B.shape[1],):
        raise ValidationError(f"channel data has {y.size} samples, beamformer expects {B.shape[1]}")
    return B.matrix @ y
