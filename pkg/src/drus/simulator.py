"""Phantoms, scatterer fields and direct time-domain channel synthesis.

Channel data is summed scatterer by scatterer at continuous positions and
never routed through the discrete operator ``H``, so reconstructions are
not validated on data produced by their own model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .acquisition import AcquisitionConfig, ImagingGrid, ProbeGeometry, PulseKernel, kernel_waveform, time_of_flight
from .errors import ValidationError

SHAPES = ("disk", "rectangle", "point")


@dataclass(frozen=True)
class Region:
    """``center`` is (x, z) in meters; ``size`` is the radius for a disk and
    (width, height) for a rectangle. Points ignore ``size``."""

    shape: str
    center: tuple[float, float]
    amplitude: float
    size: float | tuple[float, float] = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown region shape {self.shape!r}")
        if self.amplitude < 0:
            raise ValidationError("echogenicity amplitudes must be >= 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def contains(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        cx, cz = self.center
        if self.shape == "disk":
            return (x - cx) ** 2 + (z - cz) ** 2 <= float(self.size) ** 2
        if self.shape == "rectangle":
            w, h = self.size
            return (np.abs(x - cx) <= w / 2) & (np.abs(z - cz) <= h / 2)
        return np.zeros(np.broadcast(x, z).shape, dtype=bool)


@dataclass(frozen=True)
class Phantom:
    """Background echogenicity over ``extent`` with regions painted on top
    (later regions win). ``extent`` = ((x_min, x_max), (z_min, z_max))."""

    name: str
    extent: tuple[tuple[float, float], tuple[float, float]]
    background: float = 1.0
    regions: tuple[Region, ...] = ()

    def __post_init__(self):
        if self.background < 0:
            raise ValidationError("background echogenicity must be >= 0")
        (x0, x1), (z0, z1) = self.extent
        if not (x1 > x0 and z1 > z0 and z0 > 0):
            raise ValidationError(f"invalid phantom extent {self.extent}")
        for r in self.regions:
            cx, cz = r.center
            if not (x0 <= cx <= x1 and z0 <= cz <= z1):
                raise ValidationError(f"region centred at {r.center} lies outside the phantom extent")

    def echogenicity(self, x, z) -> np.ndarray:
        """Echogenicity at arbitrary positions (points excluded)."""
        p = np.full(np.broadcast(np.asarray(x), np.asarray(z)).shape, float(self.background))
        for r in self.regions:
            if r.shape != "point":
                p[r.contains(x, z)] = r.amplitude
        return p

    def echogenicity_map(self, grid: ImagingGrid) -> np.ndarray:
        """Ground-truth echogenicity on the grid (N-vector); point targets
        are painted on their nearest pixel."""
        x, z = grid.pixel_positions()
        p = self.echogenicity(x, z)
        for r in self.points:
            ix = int(np.argmin(np.abs(grid.x - r.center[0])))
            iz = int(np.argmin(np.abs(grid.z - r.center[1])))
            p[grid.index(iz, ix)] = max(p[grid.index(iz, ix)], r.amplitude)
        return p

    @property
    def points(self) -> list[Region]:
        return [r for r in self.regions if r.shape == "point"]

    @property
    def lesions(self) -> list[Region]:
        return [r for r in self.regions if r.shape != "point"]


@dataclass(frozen=True)
class ScattererField:
    x: np.ndarray
    z: np.ndarray
    amplitude: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.x.shape == self.z.shape == self.amplitude.shape):
            raise ValidationError("scatterer arrays must share one shape")

    def __len__(self):
        return self.x.size


def reflectivity_from_echogenicity(p, rng: np.random.Generator) -> np.ndarray:
    """Signed reflectivity ``o = d * p`` with ``d`` i.i.d. standard normal."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValidationError("echogenicity must be >= 0")
    return rng.standard_normal(p.shape) * p


def sample_scatterers(phantom: Phantom, density: float, rng: np.random.Generator,
                      point_amplitude: float | None = None) -> ScattererField:
    """Uniform random scatterers at ``density`` per mm^2.

    Amplitudes are the local echogenicity times a standard normal draw;
    scatterers falling where the echogenicity is 0 are dropped. Point
    targets become one deterministic scatterer each, of amplitude
    ``point_amplitude`` (default: the region's own amplitude).
    """
    (x0, x1), (z0, z1) = phantom.extent
    area_mm2 = (x1 - x0) * (z1 - z0) * 1e6
    if density <= 0 and phantom.background > 0:
        raise ValidationError("density must be > 0 where the background echoes")
    count = int(rng.poisson(density * area_mm2)) if density > 0 else 0
    x = rng.uniform(x0, x1, count)
    z = rng.uniform(z0, z1, count)
    p = phantom.echogenicity(x, z)
    amp = p * rng.standard_normal(count)
    keep = p > 0
    x, z, amp = x[keep], z[keep], amp[keep]
    pts = phantom.points
    if pts:
        x = np.concatenate([x, [r.center[0] for r in pts]])
        z = np.concatenate([z, [r.center[1] for r in pts]])
        amp = np.concatenate([amp, [r.amplitude if point_amplitude is None else point_amplitude for r in pts]])
    meta = {"density_per_mm2": float(density), "phantom": phantom.name}
    return ScattererField(x, z, amp, meta)


def scatterers_per_cell(density: float, probe: ProbeGeometry, acq: AcquisitionConfig, pulse: PulseKernel,
                        f_number: float = 1.4) -> float:
    """Expected scatterers in one lateral x axial resolution cell."""
    wavelength = acq.sound_speed / pulse.center_frequency
    lateral = wavelength * f_number
    axial = acq.sound_speed / (2 * pulse.bandwidth_ratio * pulse.center_frequency)
    return density * lateral * axial * 1e6


def noise_std_for_snr(signal: np.ndarray, snr_db: float) -> float:
    power = float(np.mean(np.asarray(signal) ** 2))
    return math.sqrt(power / 10.0 ** (snr_db / 10.0))


def synthesize_channel_data(field: ScattererField, probe: ProbeGeometry, config: AcquisitionConfig,
                            pulse: PulseKernel, rng: np.random.Generator | None = None,
                            snr_db: float | None = None) -> np.ndarray:
    """Received RF data, shape (K, L).

    Noise is i.i.d. Gaussian with std ``config.noise_std``, or set from
    ``snr_db`` (channel SNR of the noise-free data) when given. Each channel
    draws its noise from its own child stream of ``rng``.
    """
    K, L = config.sample_count, probe.element_count
    fs, t0 = config.sampling_rate, config.start_time
    half = int(math.ceil(pulse.support_half_width * fs))
    offsets = np.arange(-half, half + 1)
    data = np.zeros((K, L))
    if len(field):
        for j in range(L):
            tau = time_of_flight(config, probe, field.x, field.z, np.full(field.x.shape, j))
            k = np.rint((tau - t0) * fs).astype(np.int64)[:, None] + offsets[None, :]
            h = kernel_waveform(pulse, (t0 + k / fs) - tau[:, None]) * field.amplitude[:, None]
            ok = (k >= 0) & (k < K)
            data[:, j] = np.bincount(k[ok], weights=h[ok], minlength=K)
    gamma = config.noise_std if snr_db is None else noise_std_for_snr(data, snr_db)
    return add_channel_noise(data, gamma, rng)


def add_channel_noise(data: np.ndarray, gamma: float, rng: np.random.Generator | None) -> np.ndarray:
    """Add i.i.d. N(0, gamma^2) noise, one child stream of ``rng`` per channel (column)."""
    if gamma < 0:
        raise ValidationError("noise std must be >= 0")
    if gamma == 0:
        return data
    if rng is None:
        raise ValidationError("a random generator is needed to add noise")
    out = np.array(data, dtype=float)
    for j, child in enumerate(rng.spawn(out.shape[1])):
        out[:, j] += gamma * child.standard_normal(out.shape[0])
    return out


# -- presets ----------------------------------------------------------------


def _layout(extent):
    (x0, x1), (z0, z1) = extent
    w, h = x1 - x0, z1 - z0
    return x0, z0, w, h


def preset(name: str, extent) -> Phantom:
    """Built-in phantoms laid out relative to ``extent``.

    ``sr-like``  grid of point targets on an anechoic background
    ``sc-like``  3 x 3 anechoic disks in speckle
    ``er-like``  point targets plus one hyperechoic (2x) disk in speckle
    ``ec-like``  two anechoic disks in speckle
    """
    x0, z0, w, h = _layout(extent)
    at = lambda fx, fz: (x0 + fx * w, z0 + fz * h)  # noqa: E731
    if name == "sr-like":
        pts = [Region("point", at(fx, fz), 1.0) for fz in (0.25, 0.5, 0.75) for fx in (0.25, 0.5, 0.75)]
        return Phantom(name, extent, 0.0, tuple(pts))
    if name == "sc-like":
        r = 0.09 * min(w, h)
        disks = [Region("disk", at(fx, fz), 0.0, r) for fz in (0.2, 0.5, 0.8) for fx in (0.2, 0.5, 0.8)]
        return Phantom(name, extent, 1.0, tuple(disks))
    if name == "er-like":
        pts = [Region("point", at(fx, 0.25), 10.0) for fx in (0.25, 0.5, 0.75)]
        disk = Region("disk", at(0.5, 0.65), 2.0, 0.15 * min(w, h))
        return Phantom(name, extent, 1.0, tuple(pts) + (disk,))
    if name == "ec-like":
        r = 0.15 * min(w, h)
        return Phantom(name, extent, 1.0, (Region("disk", at(0.5, 0.3), 0.0, r), Region("disk", at(0.5, 0.72), 0.0, r)))
    raise ValidationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")


PRESETS = ("sr-like", "sc-like", "er-like", "ec-like")


def phantom_from_dict(d: dict, default_extent=None) -> Phantom:
    """Custom phantom from a config mapping (see README for the schema)."""
    extent = d.get("extent", default_extent)
    if extent is None:
        raise ValidationError("phantom needs an extent")
    extent = (tuple(extent[0]), tuple(extent[1]))
    if "preset" in d:
        return preset(d["preset"], extent)
    regions = []
    for r in d.get("regions", []):
        size = r.get("radius", r.get("size", 0.0))
        if isinstance(size, list):
            size = tuple(size)
        regions.append(Region(r["shape"], tuple(r["center"]), float(r.get("amplitude", 0.0)), size))
    return Phantom(d.get("name", "custom"), extent, float(d.get("background", 1.0)), tuple(regions))
