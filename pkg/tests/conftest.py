import numpy as np
import pytest

from drus.acquisition import AcquisitionConfig, ImagingGrid, ProbeGeometry, PulseKernel, Setup, covering_sample_count
from drus.beamformer import ApodizationSpec, apodization_weights, build_beamformer
from drus.spectral import compose_BH, factorize
from drus.system_matrix import build_system_matrix


def make_setup(n_z=16, n_x=16, dz=0.04e-3, dx=0.15e-3, z0=20e-3, elements=32, angle=0.0, noise_std=0.0):
    """Small setup whose record length just covers the grid."""
    half = (n_x - 1) * dx / 2
    grid = ImagingGrid((-half, half), (z0, z0 + (n_z - 1) * dz), n_x, n_z)
    probe = ProbeGeometry(elements)
    pulse = PulseKernel()
    acq = AcquisitionConfig(steering_angle=angle, noise_std=noise_std)
    K = covering_sample_count(probe, acq, grid, pulse)
    acq = AcquisitionConfig(sample_count=K, steering_angle=angle, noise_std=noise_std)
    return Setup(probe, acq, grid, pulse)


class Ops:
    def __init__(self, setup, apod=None, exact=True):
        self.setup = setup
        self.grid = setup.grid
        self.H = build_system_matrix(setup)
        self.apod = apod or ApodizationSpec()
        self.B = build_beamformer(self.H, apodization_weights(setup.probe, setup.grid, self.apod))
        self.fact = factorize(compose_BH(self.B, self.H)) if exact else None


@pytest.fixture(scope="session")
def small_ops():
    return Ops(make_setup())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES = []


def report(n, passed, detail):
    """Record and print one acceptance line; ``passed=None`` marks a skip."""
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    line = f"{status} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
