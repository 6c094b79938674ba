"""Sparse plane-wave forward operator ``H`` (KL x N).

Row ``j * K + k`` holds time sample ``k`` of element ``j``; column ``n`` is
pixel ``n`` in depth-major order. Entry ``((j, k), n)`` equals
``h(t_k - tau_j(r_n))`` with the kernel evaluated analytically at the
continuous delay, and is absent whenever the offset leaves the kernel
support.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .acquisition import Setup, kernel_waveform, time_of_flight
from .errors import MemoryBudgetError, ValidationError

# bytes per stored nonzero in CSR (float64 value + int32/int64 index) plus
# the COO scratch used during assembly
_BYTES_PER_NNZ = 40

_CHUNK_PIXELS = 256


@dataclass(frozen=True)
class SystemMatrix:
    matrix: sp.csr_matrix
    sample_count: int
    element_count: int
    key: str = ""
    column_norms: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.column_norms is None:
            sq = np.asarray(self.matrix.multiply(self.matrix).sum(axis=0)).ravel()
            object.__setattr__(self, "column_norms", np.sqrt(sq))

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz


def _candidate_band(setup: Setup):
    acq, pulse = setup.acquisition, setup.pulse
    half = int(np.ceil(pulse.support_half_width * acq.sampling_rate))
    return np.arange(-half, half + 1)


def estimate_nnz(setup: Setup) -> int:
    """Upper bound on the stored nonzeros of ``H``."""
    return setup.grid.N * setup.probe.element_count * setup.pulse.band_width(setup.acquisition.sampling_rate)


def _assemble_triplets(setup: Setup, pixels: np.ndarray):
    acq, probe, grid, pulse = setup.acquisition, setup.probe, setup.grid, setup.pulse
    K, L = acq.sample_count, probe.element_count
    x, z = grid.pixel_positions()
    band = _candidate_band(setup)
    tau = time_of_flight(acq, probe, x[pixels][:, None], z[pixels][:, None], np.arange(L)[None, :])
    centre = np.rint((tau - acq.start_time) * acq.sampling_rate).astype(np.int64)
    k = centre[:, :, None] + band[None, None, :]
    t_k = acq.start_time + k / acq.sampling_rate
    values = kernel_waveform(pulse, t_k - tau[:, :, None])
    keep = (k >= 0) & (k < K) & (values != 0.0)
    rows = (np.arange(L)[None, :, None] * K + k)[keep]
    cols = np.broadcast_to(pixels[:, None, None], k.shape)[keep]
    return rows, cols, values[keep]


def build_system_matrix(setup: Setup, key: str = "") -> SystemMatrix:
    """Assemble ``H`` for the given acquisition setup.

    Raises
    ------
    MemoryBudgetError
        If the nonzero bound exceeds ``setup.memory_budget`` bytes.
    ValidationError
        If no pixel echoes inside the recorded time window.
    """
    need = estimate_nnz(setup) * _BYTES_PER_NNZ
    if need > setup.memory_budget:
        raise MemoryBudgetError(
            f"system matrix needs ~{need / 1e9:.2f} GB, budget is {setup.memory_budget / 1e9:.2f} GB"
        )
    K, L = setup.acquisition.sample_count, setup.probe.element_count
    N = setup.grid.N
    parts = [
        _assemble_triplets(setup, np.arange(start, min(start + _CHUNK_PIXELS, N)))
        for start in range(0, N, _CHUNK_PIXELS)
    ]
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    if vals.size == 0:
        raise ValidationError("every pixel echoes outside the recorded time window; H would be empty")
    H = sp.csr_matrix((vals, (rows, cols)), shape=(K * L, N))
    H.sum_duplicates()
    H.eliminate_zeros()
    return SystemMatrix(H, K, L, key)


def _check_length(vector, expected: int, name: str) -> np.ndarray:
    vector = np.asarray(vector, dtype=float)
    if vector.ndim != 1 or vector.shape[0] != expected:
        raise ValidationError(f"{name} has shape {vector.shape}, expected ({expected},)")
    return vector


def apply_forward(H: SystemMatrix, o) -> np.ndarray:
    """Noise-free channel data ``H o`` as a stacked KL-vector."""
    o = _check_length(o, H.shape[1], "image")
    return H.matrix @ o


def apply_adjoint(H: SystemMatrix, y) -> np.ndarray:
    """Matched-filter image ``H^T y``."""
    y = np.ravel(np.asarray(y, dtype=float), order="F") if np.ndim(y) == 2 else y
    y = _check_length(y, H.shape[0], "channel data")
    return H.matrix.T @ y


def channel_vector(data: np.ndarray) -> np.ndarray:
    """Stack a (K, L) channel matrix into the KL-vector used by ``H``."""
    return np.asarray(data, dtype=float).ravel(order="F")


def channel_matrix(vector: np.ndarray, sample_count: int) -> np.ndarray:
    """Inverse of :func:`channel_vector`."""
    return np.asarray(vector).reshape((sample_count, -1), order="F")
