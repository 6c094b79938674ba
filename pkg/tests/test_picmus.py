import h5py
import numpy as np
import pytest

from drus.errors import ValidationError
from drus.picmus import EXAMPLE_MAPPING, ImportErrorIQ, import_rf, load_mapping, select_angle

ROOT = "/US/US_DATASET0000"


def write_ustb(path, n_angles=3, L=8, K=50, imag=None, mod=0.0):
    """Small file in USTB layout, rf stored as (angle, element, sample)."""
    rng = np.random.default_rng(0)
    rf = rng.standard_normal((n_angles, L, K))
    with h5py.File(path, "w") as f:
        f[f"{ROOT}/data/real"] = rf
        f[f"{ROOT}/data/imag"] = np.zeros_like(rf) if imag is None else imag
        f[f"{ROOT}/modulation_frequency"] = mod
        f[f"{ROOT}/sampling_frequency"] = 20.8e6
        f[f"{ROOT}/sound_speed"] = 1540.0
        f[f"{ROOT}/initial_time"] = np.linspace(1e-6, 3e-6, n_angles)
        f[f"{ROOT}/angles"] = np.linspace(-0.1, 0.1, n_angles)
        x = (np.arange(L) - (L - 1) / 2) * 0.3e-3
        f[f"{ROOT}/probe_geometry"] = np.vstack([x, np.zeros(L), np.zeros(L)])
    return rf


class TestImport:
    mapping = load_mapping(EXAMPLE_MAPPING)

    def test_normal_incidence_frame(self, tmp_path):
        rf = write_ustb(tmp_path / "a.h5", mod=5.2e6)  # carrier recorded, imag is zero
        data, attrs = import_rf(tmp_path / "a.h5", self.mapping)
        np.testing.assert_array_equal(data, rf[1].T)
        acq = attrs["acquisition"]
        assert acq["sampling_rate"] == 20.8e6 and acq["steering_angle"] == 0.0
        assert acq["start_time"] == pytest.approx(2e-6) and acq["sample_count"] == 50
        assert attrs["probe"]["element_count"] == 8
        assert attrs["probe"]["pitch"] == pytest.approx(0.3e-3)

    def test_iq_rejected(self, tmp_path):
        write_ustb(tmp_path / "a.h5", imag=np.ones((3, 8, 50)))
        with pytest.raises(ImportErrorIQ, match="IQ"):
            import_rf(tmp_path / "a.h5", self.mapping)

    def test_modulation_without_imag(self, tmp_path):
        write_ustb(tmp_path / "a.h5", mod=5.2e6)
        m = {k: v for k, v in self.mapping.items() if k != "imag"}
        with pytest.raises(ImportErrorIQ, match="modulation"):
            import_rf(tmp_path / "a.h5", m)

    def test_missing_path_named(self, tmp_path):
        write_ustb(tmp_path / "a.h5")
        m = dict(self.mapping, sound_speed="/US/nowhere")
        with pytest.raises(ValidationError, match="/US/nowhere"):
            import_rf(tmp_path / "a.h5", m)

    def test_literal_values(self, tmp_path):
        write_ustb(tmp_path / "a.h5")
        m = dict(self.mapping, sound_speed="1500")
        _, attrs = import_rf(tmp_path / "a.h5", m)
        assert attrs["acquisition"]["sound_speed"] == 1500.0

    def test_geometry_mismatch(self, tmp_path):
        write_ustb(tmp_path / "a.h5")
        with h5py.File(tmp_path / "a.h5", "a") as f:
            del f[f"{ROOT}/probe_geometry"]
            f[f"{ROOT}/probe_geometry"] = np.zeros((3, 5))
        with pytest.raises(ValidationError, match="5 elements"):
            import_rf(tmp_path / "a.h5", self.mapping)


def test_select_angle():
    assert select_angle([-0.2, 0.05, -0.01, 0.3]) == 2
    with pytest.raises(ValidationError):
        select_angle([])


def test_mapping_requires_keys(tmp_path):
    p = tmp_path / "m.yaml"
    p.write_text("rf: /a\n")
    with pytest.raises(ValidationError, match="sampling_rate"):
        load_mapping(p)
