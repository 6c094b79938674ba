"""Mean and variance images from repeated reconstructions, the power-law
variance model, and the mean/variance colour fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib import colormaps

from .errors import ValidationError
from .metrics import log_compress
from .sampler import SampleBundle

# CIE D65 reference white
_WHITE = np.array([0.95047, 1.0, 1.08883])
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_EPS = 216 / 24389
_KAPPA = 24389 / 27


@dataclass(frozen=True)
class Aggregate:
    mean: np.ndarray
    variance: np.ndarray  # unbiased, raw

    @property
    def std(self) -> np.ndarray:
        """Display transform: square root of the variance."""
        return np.sqrt(self.variance)


def _images(bundle) -> np.ndarray:
    images = bundle.images if isinstance(bundle, SampleBundle) else np.asarray(bundle, dtype=float)
    if images.ndim != 2 or images.shape[0] < 1:
        raise ValidationError("expected an (M, N) stack of images")
    return images


def aggregate(bundle) -> Aggregate:
    """Pixelwise sample mean and unbiased variance.

    Samples are sorted per pixel before reduction so the result is
    bit-identical under any reordering of the bundle.
    """
    images = np.sort(_images(bundle), axis=0)
    M = images.shape[0]
    if M < 2:
        raise ValidationError("variance needs at least 2 samples")
    mean = images.sum(axis=0) / M
    var = ((images - mean) ** 2).sum(axis=0) / (M - 1)
    return Aggregate(mean, var)


def sample_mean(bundle) -> np.ndarray:
    images = np.sort(_images(bundle), axis=0)
    return images.sum(axis=0) / images.shape[0]


@dataclass(frozen=True)
class BetaFit:
    beta: float
    intercept: float
    residual: float  # RMS of the log-variance fit
    n_pixels: int


def beta_model_fit(bundle, echogenicity, percentile: float = 20.0) -> BetaFit:
    """Fit ``log Var = 2 beta log p + c`` over pixels with ``p`` above the
    given percentile."""
    images = _images(bundle)
    if images.shape[0] < 5:
        raise ValidationError("beta fit needs at least 5 samples")
    p = np.asarray(echogenicity, dtype=float).ravel()
    if p.shape[0] != images.shape[1]:
        raise ValidationError("echogenicity does not match the bundle's pixel count")
    var = aggregate(images).variance
    support = (p > np.percentile(p, percentile)) & (p > 0) & (var > 0)
    if support.sum() < 2 or np.ptp(np.log(p[support])) == 0:
        raise ValidationError("degenerate fit support: need at least two distinct positive echogenicities")
    lx = np.log(p[support])
    ly = np.log(var[support])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return BetaFit(slope / 2.0, float(intercept), float(np.sqrt(np.mean(resid ** 2))), int(support.sum()))


def echogenicity_from_variance(variance, beta: float = 0.5) -> np.ndarray:
    """``Var^(1 / (2 beta))``."""
    return np.asarray(variance, dtype=float) ** (1.0 / (2.0 * beta))


def variance_db(variance, dynamic_range: float = 60.0) -> np.ndarray:
    """dB image of the standard deviation, same convention as B-mode images."""
    return log_compress(np.sqrt(np.asarray(variance, dtype=float)), dynamic_range)


# -- colour ------------------------------------------------------------------


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1 / 2.4) - 0.055)


def rgb_to_lab(rgb) -> np.ndarray:
    xyz = _srgb_to_linear(np.asarray(rgb, dtype=float)) @ _RGB_TO_XYZ.T / _WHITE
    f = np.where(xyz > _EPS, np.cbrt(xyz), (_KAPPA * xyz + 16) / 116)
    return np.stack([116 * f[..., 1] - 16, 500 * (f[..., 0] - f[..., 1]), 200 * (f[..., 1] - f[..., 2])], axis=-1)


def _lab_to_linear_rgb(lab) -> np.ndarray:
    L, a, b = lab[..., 0], lab[..., 1], lab[..., 2]
    fy = (L + 16) / 116
    fx = fy + a / 500
    fz = fy - b / 200
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f ** 3 > _EPS, f ** 3, (116 * f - 16) / _KAPPA)
    return (xyz * _WHITE) @ _XYZ_TO_RGB.T


def lab_to_rgb(lab) -> np.ndarray:
    return _linear_to_srgb(_lab_to_linear_rgb(np.asarray(lab, dtype=float)))


def _in_gamut(lab, tol=1e-9):
    lin = _lab_to_linear_rgb(lab)
    return np.all((lin >= -tol) & (lin <= 1 + tol), axis=-1)


def lightness_for_gray(g) -> np.ndarray:
    """CIE L* of the sRGB gray level ``g`` in [0, 1]."""
    g = np.asarray(g, dtype=float)
    return rgb_to_lab(np.stack([g, g, g], axis=-1))[..., 0]


def luminance_render(mean_db, dynamic_range: float = 60.0, max_gray: float = 0.8) -> np.ndarray:
    """Grayscale rendering used as the luminance of :func:`fuse_display`.

    ``max_gray`` < 1 leaves headroom for chroma at the brightest pixels.
    """
    g = (np.asarray(mean_db, dtype=float) + dynamic_range) / dynamic_range * max_gray
    return np.repeat(g[..., None], 3, axis=-1)


def fuse_display(mean_db, var_db, colormap: str = "jet", dynamic_range: float = 60.0,
                 max_gray: float = 0.8) -> np.ndarray:
    """Fuse a mean image (luminance) and a variance image (chrominance).

    Works in CIELAB: L* comes from the gray rendering of ``mean_db``; the
    hue of ``colormap`` at the variance level sets (a*, b*), scaled by that
    level so the lowest variance carries no colour. Chroma is reduced
    wherever it would leave the sRGB gamut, which keeps L* exact.
    Returns an ``(n_z, n_x, 3)`` array in [0, 1].
    """
    mean_db = np.asarray(mean_db, dtype=float)
    var_db = np.asarray(var_db, dtype=float)
    if mean_db.shape != var_db.shape:
        raise ValidationError("mean and variance images must share one grid")
    for name, im in (("mean", mean_db), ("variance", var_db)):
        if im.min() < -dynamic_range - 1e-9 or im.max() > 1e-9:
            raise ValidationError(f"{name} image must lie in [-{dynamic_range:g}, 0] dB")
    gray = luminance_render(mean_db, dynamic_range, max_gray)[..., 0]
    L = lightness_for_gray(gray)
    level = np.clip((var_db + dynamic_range) / dynamic_range, 0.0, 1.0)
    hue_lab = rgb_to_lab(colormaps[colormap](level)[..., :3])
    ab = hue_lab[..., 1:] * level[..., None]

    # largest chroma factor in [0, 1] that stays in gamut, by bisection
    lo = np.zeros(L.shape)
    hi = np.ones(L.shape)
    full = _in_gamut(np.concatenate([L[..., None], ab], axis=-1))
    lo[full] = 1.0
    for _ in range(40):
        mid = (lo + hi) / 2
        ok = _in_gamut(np.concatenate([L[..., None], ab * mid[..., None]], axis=-1))
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    lab = np.concatenate([L[..., None], ab * lo[..., None]], axis=-1)
    rgb = np.clip(lab_to_rgb(lab), 0.0, 1.0)
    # zero chroma must reproduce the gray rendering exactly
    neutral = lo * np.abs(ab).max(axis=-1) == 0
    rgb[neutral] = np.repeat(gray[neutral][:, None], 3, axis=-1)
    return rgb
