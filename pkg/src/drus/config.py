"""One YAML file describing probe, acquisition, grid, pulse and the
processing settings, with defaults for every key.

Schema (all lengths in meters, times in seconds, frequencies in Hz)::

    probe:        {element_count, pitch, element_width}
    acquisition:  {sound_speed, sampling_rate, start_time, sample_count, steering_angle, noise_std}
    grid:         {x_range: [min, max], z_range: [min, max], n_x, n_z}
    pulse:        {center_frequency, bandwidth_ratio}
    memory_budget: bytes
    apodization:  {window: tukey|rectangular|hann, taper, f_number (null = full aperture)}
    spectral:     {method: auto|exact|randomized, tol, rank, oversampling, power_iterations, rank_tol}
    sampler:      {eta, eta_b, sigma_d, it, T_full, sigma_min, sigma_max}
    denoiser:     {kind: wavelet|gaussian|external, ...}
    simulation:   {density_per_mm2, snr_db}

``acquisition.sample_count: auto`` sizes the record to cover the grid.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .acquisition import AcquisitionConfig, ImagingGrid, ProbeGeometry, PulseKernel, Setup, covering_sample_count
from .beamformer import ApodizationSpec
from .errors import ValidationError
from .sampler import SamplerConfig

SPECTRAL_DEFAULTS = {
    "method": "auto",
    "tol": 1e-8,
    "rank": None,
    "oversampling": 10,
    "power_iterations": 2,
    "rank_tol": 1e-6,
}
DENOISER_DEFAULTS = {
    "kind": "wavelet",
    "levels": 2,
    "k": 3.0,
    "wavelet": "haar",
    "threshold_approx": True,
    "endpoint": None,
}
SIMULATION_DEFAULTS = {"density_per_mm2": 100.0, "snr_db": None}

# sampler keys that belong to the command line rather than the file
_SAMPLER_RUNTIME = ("seed", "mode", "samples", "scale", "threads")


def _coerce(value):
    # YAML 1.1 reads "2e9" as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    if isinstance(value, list):
        return [_coerce(v) for v in value]
    return value


def _section(cls, raw: dict | None, name: str, skip=()):
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)} - set(skip)
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown key(s) in '{name}': {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(v) for k, v in raw.items()}
    for k in ("element_count", "sample_count", "n_x", "n_z", "it", "T_full"):
        if k in kwargs and isinstance(kwargs[k], float) and kwargs[k].is_integer():
            kwargs[k] = int(kwargs[k])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad '{name}' section: {exc}") from None


def _dict_section(defaults: dict, raw: dict | None, name: str, open_keys: bool = False) -> dict:
    raw = dict(raw or {})
    unknown = set(raw) - set(defaults)
    if unknown and not open_keys:
        raise ValidationError(f"unknown key(s) in '{name}': {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update({k: _coerce(v) for k, v in raw.items()})
    return out


@dataclass(frozen=True)
class Config:
    setup: Setup = field(default_factory=Setup)
    apodization: ApodizationSpec = field(default_factory=ApodizationSpec)
    spectral: dict = field(default_factory=lambda: dict(SPECTRAL_DEFAULTS))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    denoiser: dict = field(default_factory=lambda: dict(DENOISER_DEFAULTS))
    simulation: dict = field(default_factory=lambda: dict(SIMULATION_DEFAULTS))

    @property
    def grid(self) -> ImagingGrid:
        return self.setup.grid

    def snapshot(self) -> dict:
        """Plain-data view of the full configuration (what a run used)."""
        s = self.setup
        sampler = {k: v for k, v in asdict(self.sampler).items() if k not in _SAMPLER_RUNTIME}
        return {
            "probe": asdict(s.probe),
            "acquisition": asdict(s.acquisition),
            "grid": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(s.grid).items()},
            "pulse": asdict(s.pulse),
            "memory_budget": s.memory_budget,
            "apodization": asdict(self.apodization),
            "spectral": dict(self.spectral),
            "sampler": sampler,
            "denoiser": dict(self.denoiser),
            "simulation": dict(self.simulation),
        }


def config_from_dict(raw: dict | None) -> Config:
    raw = copy.deepcopy(raw or {})
    top = {"probe", "acquisition", "grid", "pulse", "memory_budget", "apodization", "spectral", "sampler",
           "denoiser", "simulation"}
    unknown = set(raw) - top
    if unknown:
        raise ValidationError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    probe = _section(ProbeGeometry, raw.get("probe"), "probe")
    grid = _section(ImagingGrid, raw.get("grid"), "grid")
    pulse = _section(PulseKernel, raw.get("pulse"), "pulse")
    acq_raw = dict(raw.get("acquisition") or {})
    auto = acq_raw.get("sample_count") == "auto"
    if auto:
        acq_raw.pop("sample_count")
    acq = _section(AcquisitionConfig, acq_raw, "acquisition")
    if auto:
        acq = AcquisitionConfig(**{**asdict(acq), "sample_count": covering_sample_count(probe, acq, grid, pulse)})
    budget = float(_coerce(raw.get("memory_budget", 2.0e9)))
    setup = Setup(probe, acq, grid, pulse, budget)
    apod = _section(ApodizationSpec, raw.get("apodization"), "apodization")
    sampler = _section(SamplerConfig, raw.get("sampler"), "sampler", skip=_SAMPLER_RUNTIME)
    spectral = _dict_section(SPECTRAL_DEFAULTS, raw.get("spectral"), "spectral")
    if spectral["method"] not in ("auto", "exact", "randomized"):
        raise ValidationError(f"spectral.method must be auto, exact or randomized, got {spectral['method']!r}")
    denoiser = _dict_section(DENOISER_DEFAULTS, raw.get("denoiser"), "denoiser", open_keys=True)
    simulation = _dict_section(SIMULATION_DEFAULTS, raw.get("simulation"), "simulation")
    return Config(setup, apod, spectral, sampler, denoiser, simulation)


def load_config(path=None) -> Config:
    """Read a YAML config; ``None`` gives the defaults."""
    if path is None:
        return Config()
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ValidationError(f"config {path} must be a mapping")
    return config_from_dict(raw)


def dump_config(config: Config) -> str:
    return yaml.safe_dump(config.snapshot(), sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float):
        return repr(obj)  # exact round trip, no json float formatting ambiguity
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def model_key(config: Config) -> str:
    """Cache key of H: probe, acquisition (less the noise level), grid and pulse."""
    snap = config.snapshot()
    parts = {k: snap[k] for k in ("probe", "acquisition", "grid", "pulse")}
    parts["acquisition"] = {k: v for k, v in parts["acquisition"].items() if k != "noise_std"}
    return content_hash(parts)


def beamformer_key(config: Config) -> str:
    return content_hash({"model": model_key(config), "apodization": config.snapshot()["apodization"]})


def factorization_key(config: Config) -> str:
    spec = dict(config.spectral)
    return content_hash({"beamformer": beamformer_key(config), "spectral": spec})
