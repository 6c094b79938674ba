"""8-bit PNG output. Row 0 of every PNG is the shallowest depth."""

from __future__ import annotations

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .errors import ValidationError
from .metrics import envelope, log_compress
from .multisample import fuse_display, variance_db


def bmode_db(image: np.ndarray, dynamic_range: float = 60.0) -> np.ndarray:
    """RF-domain ``(n_z, n_x)`` image to a clipped dB B-mode."""
    return log_compress(envelope(image), dynamic_range)


def db_to_rgb(db: np.ndarray, dynamic_range: float = 60.0, colormap: str = "gray") -> np.ndarray:
    """Map ``[-DR, 0]`` dB linearly onto ``[0, 1]`` and through ``colormap``."""
    db = np.asarray(db, dtype=float)
    level = np.clip((db + dynamic_range) / dynamic_range, 0.0, 1.0)
    if colormap == "gray":
        return np.repeat(level[..., None], 3, axis=-1)
    try:
        cmap = colormaps[colormap]
    except KeyError:
        raise ValidationError(f"unknown colormap {colormap!r}") from None
    return cmap(level)[..., :3]


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValidationError(f"expected an (n_z, n_x, 3) image, got {rgb.shape}")
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)


def write_png(path, rgb: np.ndarray) -> None:
    Image.fromarray(to_uint8(rgb), mode="RGB").save(path, format="PNG")


def render_bmode(path, image: np.ndarray, dynamic_range: float = 60.0, colormap: str = "gray") -> None:
    write_png(path, db_to_rgb(bmode_db(image, dynamic_range), dynamic_range, colormap))


def render_fused(path, mean_image: np.ndarray, variance_image: np.ndarray, dynamic_range: float = 60.0,
                 colormap: str = "jet") -> None:
    """Mean B-mode as luminance, ``sqrt(variance)`` in dB as colour."""
    mean_db = bmode_db(mean_image, dynamic_range)
    var_db = variance_db(variance_image, dynamic_range)
    write_png(path, fuse_display(mean_db, var_db, colormap, dynamic_range))
