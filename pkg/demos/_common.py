"""Shared setup for the demo scripts: a small grid whose record covers it."""

import os

from drus.acquisition import AcquisitionConfig, ImagingGrid, Setup, covering_sample_count

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "output")
os.makedirs(OUT, exist_ok=True)


def desk_setup(n_x=32, n_z=128, x_half=2.325e-3, z0=18e-3, dz=0.04e-3):
    """Grid of ``n_z`` x ``n_x`` pixels, RF-Nyquist in depth, default 128-element probe."""
    grid = ImagingGrid((-x_half, x_half), (z0, z0 + (n_z - 1) * dz), n_x, n_z)
    s = Setup(grid=grid)
    K = covering_sample_count(s.probe, s.acquisition, grid, s.pulse)
    return Setup(acquisition=AcquisitionConfig(sample_count=K), grid=grid)
