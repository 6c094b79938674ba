import numpy as np
import pytest

from drus.acquisition import ImagingGrid, ProbeGeometry
from drus.beamformer import ApodizationSpec, apodization_weights, build_beamformer, das, window_value
from drus.errors import ValidationError
from drus.metrics import envelope
from drus.simulator import ScattererField, synthesize_channel_data
from drus.system_matrix import apply_adjoint, build_system_matrix, channel_vector

from conftest import make_setup


class TestWindow:
    def test_tukey_flat_top_and_edge(self):
        spec = ApodizationSpec("tukey", 0.25)
        assert window_value(spec, 0.0) == 1.0
        assert window_value(spec, 0.75) == 1.0
        assert window_value(spec, 1.0) == pytest.approx(0.0, abs=1e-15)
        assert window_value(spec, 1.01) == 0.0
        # half-way down the cosine taper
        assert window_value(spec, 0.875) == pytest.approx(0.5)

    def test_hann_and_rect(self):
        assert window_value(ApodizationSpec("hann"), 0.5) == pytest.approx(0.5)
        assert window_value(ApodizationSpec("rectangular"), 0.99) == 1.0

    def test_bad_spec(self):
        with pytest.raises(ValidationError):
            ApodizationSpec("kaiser")
        with pytest.raises(ValidationError):
            ApodizationSpec(f_number=0.0)


class TestWeights:
    def test_element_under_pixel_has_unit_weight(self):
        probe = ProbeGeometry(8)
        x0 = probe.element_positions[3]
        grid = ImagingGrid((x0, x0), (10e-3, 10e-3), 1, 1)
        w = apodization_weights(probe, grid, ApodizationSpec())
        assert w[0, 3] == 1.0

    def test_aperture_grows_with_depth(self):
        probe = ProbeGeometry(64)
        grid = ImagingGrid((0.0, 0.0), (5e-3, 30e-3), 1, 2)
        w = apodization_weights(probe, grid, ApodizationSpec())
        assert (w[0] > 0).sum() < (w[1] > 0).sum()

    def test_empty_aperture_is_flagged(self):
        probe = ProbeGeometry(8)
        grid = ImagingGrid((20e-3, 20e-3), (2e-3, 2e-3), 1, 1)
        with pytest.raises(ValidationError, match="empty receive aperture"):
            apodization_weights(probe, grid, ApodizationSpec())


class TestDAS:
    def test_unit_weights_recover_matched_filter(self):
        s = make_setup(n_z=8, n_x=8, elements=16)
        H = build_system_matrix(s)
        W = apodization_weights(s.probe, s.grid, ApodizationSpec("rectangular", f_number=None))
        B = build_beamformer(H, W)
        y = np.random.default_rng(0).standard_normal(H.shape[0])
        np.testing.assert_array_equal(das(B, y), apply_adjoint(H, y))

    def test_zero_data(self, small_ops):
        assert not np.any(das(small_ops.B, np.zeros(small_ops.B.shape[1])))

    def test_weights_scale_matrix_entries(self, small_ops):
        W = apodization_weights(small_ops.setup.probe, small_ops.grid, small_ops.apod)
        B = small_ops.B.matrix.tocsr()
        H = small_ops.H.matrix.tocsc()
        K = small_ops.H.sample_count
        n = 100
        rows = H[:, n].indices
        expected = H[:, n].toarray().ravel()[rows] * W[n, rows // K]
        got = B[n].toarray().ravel()[rows]
        np.testing.assert_allclose(got, expected, rtol=0, atol=0)

    def test_point_scatterer_peak_location(self):
        s = make_setup(n_z=48, n_x=16, elements=64)
        H = build_system_matrix(s)
        B = build_beamformer(H, apodization_weights(s.probe, s.grid, ApodizationSpec()))
        iz, ix = 20, 7
        x, z = s.grid.x[ix] + 0.3 * s.grid.dx, s.grid.z[iz] + 0.2 * s.grid.dz
        field = ScattererField(np.array([x]), np.array([z]), np.array([1.0]))
        y = channel_vector(synthesize_channel_data(field, s.probe, s.acquisition, s.pulse))
        env = envelope(s.grid.unflatten(das(B, y)))
        pz, px = np.unravel_index(np.argmax(env), env.shape)
        assert abs(pz - iz) <= 1 and abs(px - ix) <= 1

    def test_length_check(self, small_ops):
        with pytest.raises(ValidationError):
            das(small_ops.B, np.zeros(7))
