"""Probe, plane-wave acquisition, imaging grid and pulse kernel.

Everything here is an immutable description of the acquisition plus two
primitives used to assemble the forward and beamforming operators:
:func:`time_of_flight` and :func:`kernel_waveform`.

Pixel ordering
--------------
Images are flattened depth-major: the axial index runs fastest, so pixel
``n`` sits at lateral index ``n // n_z`` and axial index ``n % n_z``.
A 2-D image array is always shaped ``(n_z, n_x)`` (row 0 is the shallowest
depth) and is flattened with Fortran order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Gaussian envelope support, in standard deviations.
SUPPORT_SIGMAS = 4.0


@dataclass(frozen=True)
class ProbeGeometry:
    """Linear array centred on the origin, elements along x at z = 0."""

    element_count: int = 128
    pitch: float = 0.30e-3
    element_width: float = 0.27e-3

    def __post_init__(self):
        if int(self.element_count) != self.element_count or self.element_count < 2:
            raise ValidationError(f"element_count must be an integer >= 2, got {self.element_count}")
        if not self.pitch > 0:
            raise ValidationError(f"pitch must be positive, got {self.pitch}")
        if not self.element_width > 0:
            raise ValidationError(f"element_width must be positive, got {self.element_width}")

    @property
    def element_positions(self) -> np.ndarray:
        L = self.element_count
        return (np.arange(L) - (L - 1) / 2.0) * self.pitch

    @property
    def aperture(self) -> float:
        return (self.element_count - 1) * self.pitch


@dataclass(frozen=True)
class PulseKernel:
    """Two-way pulse-echo kernel as a Gaussian-modulated cosine.

    The envelope width is chosen so that the -6 dB two-sided width of the
    amplitude spectrum equals ``bandwidth_ratio * center_frequency``.
    """

    center_frequency: float = 5.208e6
    bandwidth_ratio: float = 0.67

    def __post_init__(self):
        if not self.center_frequency > 0:
            raise ValidationError("center_frequency must be positive")
        if not 0 < self.bandwidth_ratio <= 2:
            raise ValidationError("bandwidth_ratio must be in (0, 2]")

    @property
    def sigma(self) -> float:
        """Standard deviation (s) of the Gaussian envelope."""
        bw = self.bandwidth_ratio * self.center_frequency
        return math.sqrt(2.0 * math.log(2.0)) / (math.pi * bw)

    @property
    def support_half_width(self) -> float:
        return SUPPORT_SIGMAS * self.sigma

    def band_width(self, sampling_rate: float) -> int:
        """Number of candidate samples per (element, pixel) pair."""
        return 2 * math.ceil(self.support_half_width * sampling_rate) + 1

    def samples(self, sampling_rate: float) -> np.ndarray:
        """Kernel sampled at ``k / sampling_rate`` over its support."""
        half = math.ceil(self.support_half_width * sampling_rate)
        t = np.arange(-half, half + 1) / sampling_rate
        return kernel_waveform(self, t)


@dataclass(frozen=True)
class AcquisitionConfig:
    sound_speed: float = 1540.0
    sampling_rate: float = 20.8e6
    start_time: float = 0.0
    sample_count: int = 2048
    steering_angle: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.sound_speed > 0:
            raise ValidationError("sound_speed must be positive")
        if not self.sampling_rate > 0:
            raise ValidationError("sampling_rate must be positive")
        if int(self.sample_count) != self.sample_count or self.sample_count < 1:
            raise ValidationError("sample_count must be an integer >= 1")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        if abs(self.steering_angle) >= math.pi / 2:
            raise ValidationError("steering_angle must lie in (-pi/2, pi/2)")

    def check_pulse(self, pulse: PulseKernel) -> None:
        if self.sampling_rate <= 2 * pulse.center_frequency:
            raise ValidationError(
                f"sampling_rate {self.sampling_rate:g} Hz violates Nyquist for a "
                f"{pulse.center_frequency:g} Hz pulse"
            )

    @property
    def sample_times(self) -> np.ndarray:
        return self.start_time + np.arange(self.sample_count) / self.sampling_rate


@dataclass(frozen=True)
class ImagingGrid:
    """Uniform pixel grid; ``x_range``/``z_range`` give the first and last pixel centres."""

    x_range: tuple[float, float] = (-18e-3, 18e-3)
    z_range: tuple[float, float] = (10e-3, 46e-3)
    n_x: int = 64
    n_z: int = 64

    def __post_init__(self):
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "z_range", tuple(float(v) for v in self.z_range))
        if self.n_x < 1 or self.n_z < 1:
            raise ValidationError("grid needs at least one pixel along each axis")
        if self.z_range[0] <= 0:
            raise ValidationError(f"z_min must be > 0 (below the probe face), got {self.z_range[0]}")
        if self.z_range[1] < self.z_range[0] or self.x_range[1] < self.x_range[0]:
            raise ValidationError("grid ranges must be increasing")
        if (self.n_x > 1 and self.x_range[1] == self.x_range[0]) or (
            self.n_z > 1 and self.z_range[1] == self.z_range[0]
        ):
            raise ValidationError("degenerate grid extent")

    @property
    def N(self) -> int:
        return self.n_x * self.n_z

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_z, self.n_x)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.n_x)

    @property
    def z(self) -> np.ndarray:
        return np.linspace(*self.z_range, self.n_z)

    @property
    def dx(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / max(self.n_x - 1, 1)

    @property
    def dz(self) -> float:
        return (self.z_range[1] - self.z_range[0]) / max(self.n_z - 1, 1)

    def pixel_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened (x, z) coordinates of every pixel, depth-major."""
        xx, zz = np.meshgrid(self.x, self.z)  # both (n_z, n_x)
        return self.flatten(xx), self.flatten(zz)

    def flatten(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image)
        if image.shape != self.shape:
            raise ValidationError(f"image shape {image.shape} does not match grid {self.shape}")
        return image.ravel(order="F")

    def unflatten(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector)
        if vector.shape != (self.N,):
            raise ValidationError(f"vector of length {vector.shape} does not match N={self.N}")
        return vector.reshape(self.shape, order="F")

    def index(self, iz: int, ix: int) -> int:
        return ix * self.n_z + iz


@dataclass(frozen=True)
class Setup:
    """Bundle of the four acquisition descriptions plus the memory budget."""

    probe: ProbeGeometry = field(default_factory=ProbeGeometry)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    grid: ImagingGrid = field(default_factory=ImagingGrid)
    pulse: PulseKernel = field(default_factory=PulseKernel)
    memory_budget: float = 2.0e9

    def __post_init__(self):
        self.acquisition.check_pulse(self.pulse)


def time_of_flight(config: AcquisitionConfig, probe: ProbeGeometry, x, z, element) -> np.ndarray:
    """Plane-wave transmit delay plus receive path to ``element``.

    ``x``, ``z`` and ``element`` broadcast against each other. The transmit
    wavefront crosses the array centre at t = 0.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    element = np.asarray(element)
    if np.any(z <= 0):
        raise ValidationError("time_of_flight needs strictly positive depth")
    if np.any((element < 0) | (element >= probe.element_count)) or not np.issubdtype(
        element.dtype, np.integer
    ):
        raise ValidationError(f"element index out of range [0, {probe.element_count})")
    xj = probe.element_positions[element]
    a = config.steering_angle
    c = config.sound_speed
    transmit = (z * math.cos(a) + x * math.sin(a)) / c
    receive = np.hypot(x - xj, z) / c
    return transmit + receive


def kernel_waveform(pulse: PulseKernel, t) -> np.ndarray:
    """Pulse-echo kernel at time offsets ``t`` (s); zero outside the support."""
    t = np.asarray(t, dtype=float)
    s = pulse.sigma
    h = np.exp(-0.5 * (t / s) ** 2) * np.cos(2.0 * math.pi * pulse.center_frequency * t)
    return np.where(np.abs(t) <= pulse.support_half_width, h, 0.0)


def covering_sample_count(probe: ProbeGeometry, config: AcquisitionConfig, grid: ImagingGrid,
                          pulse: PulseKernel, margin: float | None = None) -> int:
    """Smallest ``K`` whose time window contains every pixel's echoes."""
    x, z = grid.pixel_positions()
    corners = np.array([0, grid.n_z - 1, grid.N - grid.n_z, grid.N - 1])
    # delays are convex in (x, z); the max over a box lies at a corner for
    # the outermost elements
    tau = time_of_flight(config, probe, x[corners][:, None], z[corners][:, None],
                         np.array([0, probe.element_count - 1])[None, :])
    if margin is None:
        margin = pulse.support_half_width
    t_end = tau.max() + margin
    return int(math.ceil((t_end - config.start_time) * config.sampling_rate)) + 1
