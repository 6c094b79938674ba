"""Import plane-wave RF data from HDF5 files through a path mapping.

The mapping is YAML. Each entry is either an HDF5 dataset path (string
starting with ``/``) or a literal value::

    rf: /US/US_DATASET0000/data/real
    imag: /US/US_DATASET0000/data/imag          # optional
    modulation_frequency: /US/US_DATASET0000/modulation_frequency
    sampling_rate: /US/US_DATASET0000/sampling_frequency
    sound_speed: /US/US_DATASET0000/sound_speed
    start_time: /US/US_DATASET0000/initial_time
    angles: /US/US_DATASET0000/angles
    probe_geometry: /US/US_DATASET0000/probe_geometry   # (3, L) or (L, 3), x first
    rf_axes: [angle, element, sample]

Only RF data is accepted. A nonzero imaginary part marks the file as IQ;
without an imaginary dataset, a nonzero modulation frequency does.
"""

from __future__ import annotations

import os
from dataclasses import asdict

import h5py
import numpy as np
import yaml

from .acquisition import AcquisitionConfig, ProbeGeometry
from .errors import ValidationError

REQUIRED = ("rf", "sampling_rate", "sound_speed", "start_time")
AXES = ("angle", "element", "sample")

EXAMPLE_MAPPING = os.path.join(os.path.dirname(__file__), "data", "picmus_mapping.yaml")


class ImportErrorIQ(ValidationError):
    """The file holds IQ data."""


def load_mapping(path) -> dict:
    try:
        with open(path) as fh:
            m = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot read mapping {path}: {exc}") from None
    missing = [k for k in REQUIRED if k not in m]
    if missing:
        raise ValidationError(f"mapping {path} lacks required key(s): {', '.join(missing)}")
    axes = m.get("rf_axes", list(AXES))
    if sorted(axes) != sorted(AXES) and sorted(axes) != sorted(AXES[1:]):
        raise ValidationError(f"rf_axes must name element and sample (and optionally angle), got {axes}")
    return m


def _value(h5: h5py.File, mapping: dict, key: str, required: bool = True):
    v = mapping.get(key)
    if v is None:
        if required:
            raise ValidationError(f"mapping has no entry for {key!r}")
        return None
    if isinstance(v, str) and v.startswith("/"):
        if v not in h5:
            raise ValidationError(f"dataset path {v!r} (for {key}) not found in file")
        return np.asarray(h5[v][()])
    try:
        return np.asarray(float(v) if isinstance(v, str) else v)
    except ValueError:
        raise ValidationError(f"mapping entry {key} = {v!r} is neither a path nor a number") from None


def _scalar(v, key) -> float:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != 1:
        raise ValidationError(f"{key} must be a scalar, got {v.size} values")
    return float(v[0])


def select_angle(angles) -> int:
    """Index of the transmission closest to normal incidence."""
    angles = np.asarray(angles, dtype=float).ravel()
    if angles.size == 0:
        raise ValidationError("no transmit angles in file")
    return int(np.argmin(np.abs(angles)))


def import_rf(h5_path, mapping: dict) -> tuple[np.ndarray, dict]:
    """Read one normal-incidence RF frame.

    Returns ``(data, attrs)`` with ``data`` shaped ``(K, L)`` and ``attrs``
    holding ``acquisition`` and ``probe`` mappings for the container.
    """
    try:
        h5 = h5py.File(h5_path, "r")
    except OSError as exc:
        raise OSError(f"cannot open {h5_path}: {exc}") from None
    with h5:
        # some RF files still record the carrier as modulation frequency, so
        # the imaginary part decides whenever it is present
        imag = _value(h5, mapping, "imag", required=False)
        if imag is not None and np.any(imag != 0):
            raise ImportErrorIQ("file holds IQ data (nonzero imaginary part); only RF is supported")
        mod = _value(h5, mapping, "modulation_frequency", required=False)
        if imag is None and mod is not None and np.any(np.asarray(mod, dtype=float) != 0):
            raise ImportErrorIQ("file holds IQ data (nonzero modulation frequency); only RF is supported")
        rf = _value(h5, mapping, "rf")
        if np.iscomplexobj(rf):
            raise ImportErrorIQ("file holds complex (IQ) samples; only RF is supported")
        fs = _scalar(_value(h5, mapping, "sampling_rate"), "sampling_rate")
        c = _scalar(_value(h5, mapping, "sound_speed"), "sound_speed")
        t0_all = np.asarray(_value(h5, mapping, "start_time"), dtype=float).ravel()
        angles = _value(h5, mapping, "angles", required=False)
        geometry = _value(h5, mapping, "probe_geometry", required=False)

    axes = list(mapping.get("rf_axes", AXES))
    rf = np.squeeze(rf) if rf.ndim > len(axes) else rf
    if rf.ndim == 2 and len(axes) == 3:
        axes = [a for a in axes if a != "angle"]
    if rf.ndim != len(axes):
        raise ValidationError(f"rf dataset has {rf.ndim} axes, mapping declares {axes}")
    if "angle" in axes:
        angles = np.zeros(rf.shape[axes.index("angle")]) if angles is None else np.asarray(angles).ravel()
        if angles.size != rf.shape[axes.index("angle")]:
            raise ValidationError(f"{angles.size} angles for {rf.shape[axes.index('angle')]} transmissions")
        a = select_angle(angles)
        rf = np.take(rf, a, axis=axes.index("angle"))
        axes.remove("angle")
        angle = float(angles[a])
        t0 = float(t0_all[a] if t0_all.size == angles.size else t0_all[0])
    else:
        angle = 0.0 if angles is None else float(np.asarray(angles).ravel()[select_angle(angles)])
        t0 = float(t0_all[0])
    data = rf if axes == ["sample", "element"] else rf.T
    data = np.ascontiguousarray(data, dtype=float)
    K, L = data.shape

    if geometry is not None:
        g = np.asarray(geometry, dtype=float)
        if g.ndim != 2 or 3 not in g.shape:
            raise ValidationError(f"probe_geometry must be (3, L) or (L, 3), got {g.shape}")
        x = g[0] if g.shape[0] == 3 and g.shape[1] != 3 else g[:, 0]
        if x.size != L:
            raise ValidationError(f"probe_geometry has {x.size} elements, data has {L} channels")
        pitch = float(np.mean(np.diff(x)))
    else:
        pitch = float(mapping.get("pitch", ProbeGeometry().pitch))
    width = float(mapping.get("element_width", ProbeGeometry().element_width))
    probe = ProbeGeometry(L, pitch, min(width, pitch))
    acq = AcquisitionConfig(sound_speed=c, sampling_rate=fs, start_time=t0, sample_count=K, steering_angle=angle)
    attrs = {"acquisition": asdict(acq), "probe": asdict(probe), "source": os.path.basename(str(h5_path))}
    return data, attrs
