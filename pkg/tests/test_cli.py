import json
import os

import numpy as np
import pytest
import yaml
from PIL import Image

from drus import storage
from drus.cli import main

TINY = {
    "probe": {"element_count": 16},
    "acquisition": {"sample_count": "auto"},
    "grid": {"x_range": [-1.2e-3, 1.2e-3], "z_range": [19e-3, 21.8e-3], "n_x": 8, "n_z": 16},
}


@pytest.fixture
def tiny(tmp_path):
    """Config file plus a private cache directory."""
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return ["--config", str(p), "--cache-dir", str(tmp_path / "cache")]


@pytest.fixture
def simulated(tmp_path, tiny):
    out = tmp_path / "sim"
    assert main(tiny + ["simulate", "--phantom", "sc-like", "--out", str(out), "--snr-db", "30"]) == 0
    return out


def _run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


class TestBuildModel:
    def test_cache_hit(self, tiny, capsys):
        code, out = _run(tiny + ["build-model"], capsys)
        assert code == 0 and "built" in out.out
        code, out = _run(tiny + ["build-model"], capsys)
        assert code == 0 and out.out.count("cache hit") == 3

    def test_bad_grid(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text(yaml.safe_dump({"grid": {"z_range": [0.0, 1e-3]}}))
        code, out = _run(["--config", str(p), "build-model"], capsys)
        assert code == 2 and "error" in out.err


class TestSimulate:
    def test_unknown_preset(self, tiny, tmp_path, capsys):
        code, out = _run(tiny + ["simulate", "--phantom", "nope", "--out", str(tmp_path / "o")], capsys)
        assert code == 2 and "sc-like" in out.err

    def test_outputs_and_determinism(self, tiny, tmp_path, simulated):
        assert main(tiny + ["simulate", "--phantom", "sc-like", "--out", str(tmp_path / "again"), "--snr-db", "30"]) == 0
        for name in ("channel.usdr", "echogenicity.usdr", "regions.yaml"):
            assert storage.file_sha256(simulated / name) == storage.file_sha256(tmp_path / "again" / name)
        c = storage.read_container(simulated / "channel.usdr", "channel")
        assert c.data.shape[1] == 16
        regions = yaml.safe_load((simulated / "regions.yaml").read_text())
        assert len(regions["contrast"]) == 9
        man = json.loads((simulated / "simulate.manifest.json").read_text())
        assert set(man["outputs"]) == {"channel.usdr", "echogenicity.usdr", "regions.yaml"}


class TestReconstruct:
    def test_drus_bundle(self, tiny, simulated, tmp_path):
        out = tmp_path / "rec"
        argv = tiny + ["--seed", "4", "reconstruct", str(simulated / "channel.usdr"), "--it", "5", "-M", "3",
                       "--out", str(out)]
        assert main(argv) == 0
        b = storage.read_container(out / "bundle.usdr", "bundle")
        assert b.data.shape == (3, 128)
        assert b.attrs["seeds"] == [[4, 0], [4, 1], [4, 2]]
        var = storage.read_container(out / "var.usdr", "image")
        assert var.attrs["domain"] == "variance" and var.data.min() >= 0
        one = storage.image_from_container(storage.read_container(out / "one.usdr"))
        np.testing.assert_array_equal(one.ravel(order="F"), b.data[0])
        assert main(tiny + ["verify", str(out / "reconstruct.manifest.json")]) == 0

    def test_das_warns(self, tiny, simulated, tmp_path, capsys):
        code, out = _run(tiny + ["reconstruct", str(simulated / "channel.usdr"), "--mode", "das", "--it", "5",
                                 "--out", str(tmp_path / "d")], capsys)
        assert code == 0 and "ignores --it" in out.err
        assert (tmp_path / "d" / "das.usdr").exists()

    def test_no_build_without_cache(self, tiny, simulated, tmp_path, capsys):
        argv = tiny[:2] + ["--cache-dir", str(tmp_path / "empty"), "reconstruct", str(simulated / "channel.usdr"),
                           "--mode", "das", "--no-build", "--out", str(tmp_path / "d")]
        code, out = _run(argv, capsys)
        assert code == 4 and "build-model" in out.err

    def test_deno_single(self, tiny, simulated, tmp_path):
        out = tmp_path / "deno"
        argv = tiny + ["reconstruct", str(simulated / "channel.usdr"), "--mode", "deno", "--it", "4",
                       "--out", str(out)]
        assert main(argv) == 0
        assert (out / "one.usdr").exists() and not (out / "var.usdr").exists()


class TestMetricsAndRender:
    def test_metrics(self, tiny, simulated, tmp_path, capsys):
        regions = {"regions": [{"name": "bg", "shape": "rect", "center": [0, 20.4e-3], "size": [2.4e-3, 2.8e-3]},
                               {"name": "a", "shape": "rect", "center": [-0.6e-3, 20.4e-3],
                                "size": [1.0e-3, 2.8e-3], "role": "target-in"},
                               {"name": "b", "shape": "rect", "center": [0.6e-3, 20.4e-3],
                                "size": [1.0e-3, 2.8e-3], "role": "reference-out"}],
                   "contrast": [{"in": "a", "out": "b"}]}
        rp = tmp_path / "r.yaml"
        rp.write_text(yaml.safe_dump(regions))
        assert main(tiny + ["reconstruct", str(simulated / "channel.usdr"), "--mode", "das",
                            "--out", str(tmp_path / "d")]) == 0
        code, out = _run(tiny + ["metrics", str(tmp_path / "d" / "das.usdr"), "--regions", str(rp)], capsys)
        assert code == 0
        csv = (tmp_path / "d" / "das.metrics.csv").read_text().splitlines()
        ks = [row for row in csv if ",ks_p," in row]
        assert ks and ",0.05," in ks[0]
        assert any(",gcnr," in row for row in csv)

    def test_metrics_missing_region(self, tiny, simulated, tmp_path, capsys):
        rp = tmp_path / "r.yaml"
        rp.write_text(yaml.safe_dump({"regions": [], "contrast": [{"in": "lesion", "out": "ring"}]}))
        code, out = _run(tiny + ["metrics", str(simulated / "echogenicity.usdr"), "--regions", str(rp)], capsys)
        assert code == 2 and "lesion" in out.err

    def test_render_orientation(self, tiny, tmp_path):
        grid = {"x_range": [-1e-3, 1e-3], "z_range": [10e-3, 11e-3], "n_x": 4, "n_z": 6}
        img = np.full((6, 4), 1e-4)
        img[0] = 1.0  # shallow row bright
        storage.write_container(tmp_path / "e.usdr", "image", storage.image_payload(img),
                                {"grid": grid, "domain": "echogenicity"})
        assert main(tiny + ["render", str(tmp_path / "e.usdr"), "--out", str(tmp_path / "e.png")]) == 0
        png = np.asarray(Image.open(tmp_path / "e.png"))
        assert png.shape == (6, 4, 3)
        assert (png[0] == 255).all() and (png[1:] == 0).all()

    def test_render_fused(self, tiny, simulated, tmp_path):
        out = tmp_path / "rec"
        assert main(tiny + ["reconstruct", str(simulated / "channel.usdr"), "--it", "4", "-M", "2",
                            "--out", str(out)]) == 0
        code = main(tiny + ["render", str(out / "mean.usdr"), "--fuse", str(out / "var.usdr"),
                            "--out", str(out / "fused.png")])
        assert code == 0
        assert Image.open(out / "fused.png").mode == "RGB"


def test_verify_detects_tampering(tiny, simulated, capsys):
    man = str(simulated / "simulate.manifest.json")
    assert main(["verify", man]) == 0
    with open(simulated / "channel.usdr", "r+b") as fh:
        fh.seek(-1, os.SEEK_END)
        fh.write(b"\x7f")
    code, out = _run(["verify", man], capsys)
    assert code == 2 and "channel.usdr: hash mismatch" in out.out


def test_picmus_import(tmp_path, tiny):
    from test_picmus import write_ustb
    write_ustb(tmp_path / "p.h5", L=16, K=40)
    out = tmp_path / "p.usdr"
    assert main(tiny + ["picmus-import", str(tmp_path / "p.h5"), "--out", str(out)]) == 0
    c = storage.read_container(out, "channel")
    assert c.data.shape == (40, 16)
    assert c.attrs["acquisition"]["sampling_rate"] == 20.8e6
