import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drus.acquisition import ImagingGrid
from drus.errors import NumericalError, ValidationError
from drus.metrics import (
    RAYLEIGH_SNR,
    MetricsReport,
    RegionMask,
    cnr,
    disk_mask,
    envelope,
    fwhm,
    gcnr,
    ks_rayleigh_pvalue,
    log_compress,
    rect_mask,
    speckle_snr,
)


def _halves(a, b):
    """Stack two 1-D samples into one image with complementary masks."""
    env = np.concatenate([a, b])[:, None]
    m = np.zeros(env.shape, bool)
    m[: a.size] = True
    return env, m, ~m


class TestEnvelope:
    def test_gaussian_pulse(self):
        t = np.arange(512)
        g = np.exp(-0.5 * ((t - 256) / 30.0) ** 2)
        img = (g * np.cos(2 * np.pi * 0.2 * t))[:, None] * np.ones((1, 3))
        env = envelope(img)
        core = slice(156, 357)
        np.testing.assert_allclose(env[core, 1], g[core], rtol=0.02, atol=0.02 * g.max() * 1e-2)

    def test_small_image(self):
        with pytest.raises(ValidationError):
            envelope(np.zeros((2, 5)))


class TestLogCompress:
    def test_reference_points(self):
        env = np.array([[1.0, 0.5, 1e-3, 1e-5]])
        db = log_compress(env, 60.0)
        assert db[0, 0] == 0.0
        assert db[0, 1] == pytest.approx(-6.0206, abs=1e-4)
        assert db[0, 2] == pytest.approx(-60.0)
        assert db[0, 3] == -60.0

    def test_zero(self):
        with pytest.raises(ValidationError):
            log_compress(np.zeros((3, 3)))


class TestFWHM:
    grid = ImagingGrid((-1e-3, 1e-3), (10e-3, 12e-3), 101, 101)

    def test_gaussian_spot(self):
        xx, zz = np.meshgrid(self.grid.x, self.grid.z)
        sx, sz = 0.12e-3, 0.05e-3
        amp = np.exp(-0.5 * (xx ** 2 / sx ** 2 + (zz - 11e-3) ** 2 / sz ** 2))
        db = log_compress(amp, 60)
        k = 2 * math.sqrt(2 * math.log(2))  # full width at half amplitude
        assert fwhm(db, (50, 50), "lateral", self.grid) == pytest.approx(k * sx * 1e3, rel=0.01)
        assert fwhm(db, (50, 50), "axial", self.grid) == pytest.approx(k * sz * 1e3, rel=0.02)

    def test_symmetric_profile_centred(self):
        prof = np.zeros((5, 21))
        prof[2] = np.exp(-0.5 * ((np.arange(21) - 10) / 2.0) ** 2)
        db = log_compress(prof + 1e-6, 60)
        w = fwhm(db, (2, 8), "lateral", ImagingGrid((0, 20e-3), (1e-3, 5e-3), 21, 5))
        assert w == pytest.approx(2 * math.sqrt(2 * math.log(2)) * 2.0, rel=0.05)

    def test_no_crossing(self):
        with pytest.raises(NumericalError):
            fwhm(np.zeros((5, 5)), (2, 2), "lateral", ImagingGrid(n_x=5, n_z=5))


class TestContrast:
    def test_cnr_reference_value(self):
        env, a, b = _halves(np.array([0.0, 0.2] * 50), np.array([0.9, 1.1] * 50))
        assert cnr(env, a, b) == pytest.approx(10 * math.log10(0.81 / 0.01), abs=1e-9)
        assert cnr(env, a, b) == pytest.approx(19.08, abs=0.01)

    def test_cnr_identical_means(self):
        env, a, b = _halves(np.array([0.0, 2.0] * 10), np.array([1.0, 1.0, 0.5, 1.5] * 5))
        assert cnr(env, a, b) == -math.inf

    def test_cnr_constant_regions(self):
        env, a, b = _halves(np.ones(5), np.ones(5))
        with pytest.raises(NumericalError):
            cnr(env, a, b)

    def test_gcnr_extremes(self, rng):
        x = rng.random(500)
        env, a, b = _halves(x, x.copy())
        assert gcnr(env, a, b) == 0.0
        env, a, b = _halves(x, x + 2.0)
        assert gcnr(env, a, b) == 1.0

    def test_gcnr_monotone_remap(self, rng):
        env, a, b = _halves(rng.rayleigh(1.0, 10_000), rng.rayleigh(2.0, 10_000))
        assert abs(gcnr(env, a, b) - gcnr(env ** 3, a, b)) < 0.02

    def test_masks(self):
        env = np.ones((4, 4))
        m = np.zeros((4, 4), bool)
        m[0] = True
        with pytest.raises(ValidationError, match="overlap"):
            cnr(env, m, m)
        with pytest.raises(ValidationError):
            gcnr(env, m, np.zeros((4, 4), bool))


class TestSpeckle:
    def test_rayleigh_snr(self, rng):
        env = rng.rayleigh(3.0, (200, 200))
        roi = np.ones(env.shape, bool)
        assert speckle_snr(env, roi) == pytest.approx(RAYLEIGH_SNR, rel=0.01)
        assert RAYLEIGH_SNR == pytest.approx(1.91, abs=0.005)

    def test_exponential_snr(self, rng):
        env = rng.exponential(1.0, (100, 100))
        assert speckle_snr(env, np.ones(env.shape, bool)) == pytest.approx(1.0, abs=0.05)

    def test_constant(self):
        with pytest.raises(NumericalError):
            speckle_snr(np.ones((20, 20)), np.ones((20, 20), bool))

    def test_ks_rayleigh_accepts(self):
        passes = [ks_rayleigh_pvalue(np.random.default_rng(s).rayleigh(1.0, (50, 40)), np.ones((50, 40), bool)) > 0.05
                  for s in range(40)]
        assert np.mean(passes) > 0.85

    def test_ks_uniform_rejects(self, rng):
        env = rng.random((50, 100))
        assert ks_rayleigh_pvalue(env, np.ones(env.shape, bool)) < 0.01

    def test_stride_decimates(self, rng):
        env = rng.rayleigh(1.0, (60, 60))
        roi = np.ones(env.shape, bool)
        with pytest.raises(ValidationError, match="100"):
            speckle_snr(env, roi, (10, 10))
        assert speckle_snr(env, roi, (3, 2)) == speckle_snr(env[::3, ::2], np.ones((20, 30), bool))


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 2 ** 16))
def test_metrics_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    env = np.concatenate([rng.rayleigh(0.3, (20, 20)), rng.rayleigh(1.0, (20, 20))])
    a = np.zeros(env.shape, bool)
    a[:20] = True
    b = ~a
    assert cnr(scale * env, a, b) == pytest.approx(cnr(env, a, b), rel=1e-9, abs=1e-9)
    assert gcnr(scale * env, a, b) == pytest.approx(gcnr(env, a, b), abs=1e-12)
    assert speckle_snr(scale * env, b) == pytest.approx(speckle_snr(env, b), rel=1e-9)
    assert ks_rayleigh_pvalue(scale * env, b) == pytest.approx(ks_rayleigh_pvalue(env, b), rel=1e-6, abs=1e-12)


class TestRegions:
    def test_masks_shapes(self):
        g = ImagingGrid((-1e-3, 1e-3), (1e-3, 3e-3), 21, 21)
        ring = disk_mask(g, (0, 2e-3), 0.6e-3, 0.3e-3)
        assert not ring[10, 10] and ring[10, 15]
        box = rect_mask(g, (0, 2e-3), (0.45e-3, 0.25e-3))
        assert box.sum() == 5 * 3

    def test_empty_region(self):
        with pytest.raises(ValidationError, match="lesion"):
            RegionMask(np.zeros((3, 3), bool), "lesion")


class TestReport:
    def test_csv_and_bounds(self):
        r = MetricsReport("img")
        r.add("roi", "ks_p", 0.3, threshold=0.05, passed=True)
        r.add("a/b", "cnr", 3.5, "dB")
        lines = r.to_csv().splitlines()
        assert lines[0] == "image_id,region,metric,value,unit,threshold,passed"
        assert lines[1].endswith(",0.05,True")
        assert r.value("a/b", "cnr") == 3.5
        assert "pass mark 0.05" in r.to_text()
        with pytest.raises(NumericalError):
            r.add("x", "gcnr", 1.5)
