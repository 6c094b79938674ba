"""B-mode preprocessing and image quality metrics.

Contrast and speckle metrics are computed on the linear envelope; dB
images are for display and for the -6 dB resolution measurement only.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import hilbert
from scipy.stats import kstwobign

from .acquisition import ImagingGrid
from .errors import NumericalError, ValidationError

GCNR_BINS = 256
KS_PASS = 0.05
RAYLEIGH_SNR = math.sqrt(math.pi / 2) / math.sqrt(2 - math.pi / 2)

ROLES = ("target-in", "reference-out", "roi")


@dataclass(frozen=True)
class RegionMask:
    mask: np.ndarray  # boolean, (n_z, n_x)
    label: str
    role: str = "roi"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown mask role {self.role!r}")
        if not np.any(self.mask):
            raise ValidationError(f"region {self.label!r} is empty")


def disk_mask(grid: ImagingGrid, center, radius: float, inner_radius: float = 0.0) -> np.ndarray:
    xx, zz = np.meshgrid(grid.x, grid.z)
    d2 = (xx - center[0]) ** 2 + (zz - center[1]) ** 2
    return (d2 <= radius ** 2) & (d2 >= inner_radius ** 2)


def rect_mask(grid: ImagingGrid, center, size) -> np.ndarray:
    xx, zz = np.meshgrid(grid.x, grid.z)
    return (np.abs(xx - center[0]) <= size[0] / 2) & (np.abs(zz - center[1]) <= size[1] / 2)


def envelope(image: np.ndarray) -> np.ndarray:
    """Analytic-signal magnitude along each axial line of an ``(n_z, n_x)`` image."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.shape[0] < 4:
        raise ValidationError(f"envelope needs an (n_z >= 4, n_x) image, got {image.shape}")
    return np.abs(hilbert(image, axis=0))


def log_compress(env: np.ndarray, dynamic_range: float = 60.0) -> np.ndarray:
    """``20 log10(env / max)`` clipped to ``[-dynamic_range, 0]``."""
    env = np.asarray(env, dtype=float)
    if np.any(env < 0):
        raise ValidationError("envelope must be nonnegative")
    peak = env.max()
    if not peak > 0:
        raise ValidationError("cannot log-compress an all-zero envelope")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    return np.maximum(db, -float(dynamic_range))


def _crossing(profile, start, step, level):
    i = start
    while 0 <= i + step < profile.size:
        a, b = profile[i], profile[i + step]
        if b <= level:
            frac = (a - level) / (a - b) if a != b else 0.0
            return i + step * frac
        i += step
    return None


def fwhm(db_image: np.ndarray, seed, axis: str, grid: ImagingGrid, search: int = 3, level_db: float = 6.0) -> float:
    """-6 dB width (mm) of a point target along ``axis`` ("axial" or "lateral").

    The peak is refined as the maximum within ``search`` pixels of ``seed``
    = (iz, ix); crossings are found by linear interpolation on the dB profile.
    """
    db = np.asarray(db_image, dtype=float)
    iz, ix = seed
    z0, z1 = max(iz - search, 0), min(iz + search + 1, db.shape[0])
    x0, x1 = max(ix - search, 0), min(ix + search + 1, db.shape[1])
    win = db[z0:z1, x0:x1]
    pz, px = np.unravel_index(np.argmax(win), win.shape)
    pz, px = pz + z0, px + x0
    if axis == "axial":
        profile, centre, spacing = db[:, px], pz, grid.dz
    elif axis == "lateral":
        profile, centre, spacing = db[pz, :], px, grid.dx
    else:
        raise ValidationError(f"axis must be 'axial' or 'lateral', got {axis!r}")
    level = profile[centre] - level_db
    left = _crossing(profile, centre, -1, level)
    right = _crossing(profile, centre, +1, level)
    if left is None or right is None:
        raise NumericalError(f"-{level_db:g} dB crossings not found along {axis} around {seed}")
    return (right - left) * spacing * 1e3


def _regions(env, in_mask, out_mask):
    env = np.asarray(env, dtype=float)
    in_mask = np.asarray(in_mask, dtype=bool)
    out_mask = np.asarray(out_mask, dtype=bool)
    if not in_mask.any() or not out_mask.any():
        raise ValidationError("contrast masks must be nonempty")
    if np.any(in_mask & out_mask):
        raise ValidationError("inside and outside masks overlap")
    return env[in_mask], env[out_mask]


def cnr(env, in_mask, out_mask) -> float:
    """Contrast-to-noise ratio in dB.

    Returns ``-inf`` when the region means coincide; raises when both
    regions are constant.
    """
    a, b = _regions(env, in_mask, out_mask)
    num = (a.mean() - b.mean()) ** 2
    den = (a.var() + b.var()) / 2.0
    if den == 0:
        raise NumericalError("CNR undefined: both regions are constant")
    if num == 0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def gcnr(env, in_mask, out_mask, bins: int = GCNR_BINS) -> float:
    """One minus the overlap of the two normalized histograms."""
    if bins < 2:
        raise ValidationError("gcnr needs at least 2 bins")
    a, b = _regions(env, in_mask, out_mask)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return 0.0
    ga, _ = np.histogram(a, bins=bins, range=(lo, hi))
    gb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    overlap = np.minimum(ga / ga.sum(), gb / gb.sum()).sum()
    return float(min(max(1.0 - overlap, 0.0), 1.0))


def _roi_values(env, roi, stride) -> np.ndarray:
    env = np.asarray(env, dtype=float)
    roi = np.asarray(roi, dtype=bool)
    if stride != (1, 1):
        sub = np.zeros_like(roi)
        sub[:: stride[0], :: stride[1]] = True
        roi = roi & sub
    v = env[roi]
    if v.size < 100:
        raise ValidationError(f"ROI has {v.size} samples; at least 100 are required")
    return v


def speckle_snr(env, roi, stride=(1, 1)) -> float:
    """``mean / std`` of the envelope inside ``roi`` (about 1.91 for Rayleigh speckle)."""
    v = _roi_values(env, roi, tuple(stride))
    sd = v.std()
    if sd == 0:
        raise NumericalError("speckle SNR undefined on a constant ROI")
    return float(v.mean() / sd)


def ks_rayleigh_pvalue(env, roi, stride=(1, 1)) -> float:
    """Kolmogorov-Smirnov p-value against a Rayleigh law with ML scale.

    The scale is fit from the same samples, so the asymptotic p-value is
    conservative (Lilliefors effect). Neighbouring speckle pixels are
    correlated; ``stride`` = (axial, lateral) decimates the ROI to roughly
    independent samples.
    """
    v = np.sort(_roi_values(env, roi, tuple(stride)))
    n = v.size
    s2 = np.sum(v ** 2) / (2.0 * n)
    if s2 == 0:
        raise NumericalError("KS test undefined on an all-zero ROI")
    cdf = 1.0 - np.exp(-(v ** 2) / (2.0 * s2))
    i = np.arange(1, n + 1)
    d = max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n))
    return float(min(max(kstwobign.sf(math.sqrt(n) * d), 0.0), 1.0))


# -- reports -----------------------------------------------------------------

TABLE_COLUMNS = ("image_id", "region", "metric", "value", "unit", "threshold", "passed")


@dataclass
class MetricsReport:
    image_id: str
    rows: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def add(self, region: str, metric: str, value: float, unit: str = "", threshold: float | None = None,
            passed: bool | None = None) -> None:
        if metric == "gcnr" and not 0 <= value <= 1:
            raise NumericalError(f"gCNR {value} outside [0, 1]")
        if metric == "ks_p" and not 0 <= value <= 1:
            raise NumericalError(f"p-value {value} outside [0, 1]")
        self.rows.append((self.image_id, region, metric, float(value), unit,
                          "" if threshold is None else threshold, "" if passed is None else bool(passed)))

    def value(self, region: str, metric: str) -> float:
        for r in self.rows:
            if r[1] == region and r[2] == metric:
                return r[3]
        raise KeyError((region, metric))

    def to_text(self) -> str:
        lines = [f"# image {self.image_id}"]
        for k, v in sorted(self.settings.items()):
            lines.append(f"# {k} = {v}")
        for _, region, metric, value, unit, thr, ok in self.rows:
            extra = "" if thr == "" else f"  (pass mark {thr}: {'pass' if ok else 'fail'})"
            lines.append(f"{region:<20s} {metric:<14s} {value:12.6g} {unit}{extra}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in self.rows:
            w.writerow(r[:3] + (repr(r[3]),) + r[4:])
        return buf.getvalue()
