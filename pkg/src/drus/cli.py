"""Command-line pipeline.

    drus [--config FILE] [--seed N] [--threads N] [--cache-dir DIR] COMMAND ...

Commands: build-model, simulate, reconstruct, metrics, render, verify,
picmus-import. Exit codes: 0 ok, 2 validation, 3 numerical failure, 4 I/O.
Every command that writes files also writes ``<command>.manifest.json``
next to its outputs.
"""

from __future__ import annotations

import argparse
import math
import os
import shlex
import sys
import time
from dataclasses import asdict, replace

import numpy as np
import yaml

from . import storage
from .acquisition import AcquisitionConfig, ProbeGeometry, Setup
from .beamformer import BeamformerMatrix, apodization_weights, build_beamformer, das
from .config import (
    Config,
    beamformer_key,
    content_hash,
    factorization_key,
    load_config,
    model_key,
)
from .denoisers import EndpointSpec, ExternalDenoiser, GaussianDenoiser, WaveletDenoiser
from .errors import DrusError, NumericalError, ValidationError
from .metrics import (
    KS_PASS,
    MetricsReport,
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
from .multisample import aggregate
from .picmus import import_rf, load_mapping
from .render import db_to_rgb, render_fused, write_png
from .sampler import sample_bundle
from .simulator import (
    PRESETS,
    add_channel_noise,
    noise_std_for_snr,
    phantom_from_dict,
    preset,
    sample_scatterers,
    scatterers_per_cell,
    synthesize_channel_data,
)
from .spectral import EXACT_LIMIT, compose_BH, factorize, projected_noise_std
from .system_matrix import SystemMatrix, build_system_matrix, channel_vector

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


# -- operators and caches --------------------------------------------------------


class Operators:
    def __init__(self, H: SystemMatrix, B: BeamformerMatrix, fact=None, hits=None):
        self.H, self.B, self.fact = H, B, fact
        self.hits = hits or {}


def _cache_path(cache_dir: str, prefix: str, key: str) -> str:
    return os.path.join(cache_dir, f"{prefix}-{key[:16]}.usdr")


def _factorize(config: Config, BH: np.ndarray, seed: int):
    spec = config.spectral
    method = spec["method"]
    if method == "auto":
        method = "exact" if BH.shape[0] <= EXACT_LIMIT else "randomized"
    return factorize(BH, method, tol=spec["tol"], rank=spec["rank"], oversampling=int(spec["oversampling"]),
                     power_iterations=int(spec["power_iterations"]), rank_tol=spec["rank_tol"], seed=seed)


def load_operators(config: Config, cache_dir: str, want_factorization: bool = True, build: bool = True,
                   log=print) -> Operators:
    """H, B and (optionally) the SVD of BH, from ``cache_dir`` when present.

    With ``build=False`` a missing cache is an error instead of a rebuild.
    """
    os.makedirs(cache_dir, exist_ok=True)
    hits = {}
    hk, bk, fk = model_key(config), beamformer_key(config), factorization_key(config)
    hp, bp, fp = (_cache_path(cache_dir, p, k) for p, k in (("H", hk), ("B", bk), ("F", fk)))
    setup = config.setup

    def missing(path, what):
        if not build:
            raise storage.ContainerError(f"{what} cache {path} not found; run `drus build-model` or drop --no-build")

    if os.path.exists(hp):
        m, attrs = storage.read_sparse_cache(hp)
        H = SystemMatrix(m, setup.acquisition.sample_count, setup.probe.element_count, hk)
        hits["H"] = True
    else:
        missing(hp, "system matrix")
        log("building system matrix ...")
        H = build_system_matrix(setup, hk)
        storage.write_sparse_cache(hp, H.matrix, {"key": hk, "sample_count": H.sample_count,
                                                  "element_count": H.element_count})
        hits["H"] = False
    if os.path.exists(bp):
        m, _ = storage.read_sparse_cache(bp)
        B = BeamformerMatrix(m, bk)
        hits["B"] = True
    else:
        missing(bp, "beamformer")
        log("building beamformer ...")
        B = build_beamformer(H, apodization_weights(setup.probe, setup.grid, config.apodization), bk)
        storage.write_sparse_cache(bp, B.matrix, {"key": bk})
        hits["B"] = False
    fact = None
    if want_factorization:
        if os.path.exists(fp):
            fact, _ = storage.read_factorization(fp)
            hits["F"] = True
        else:
            missing(fp, "factorization")
            log("factorizing BH ...")
            fact = _factorize(config, compose_BH(B, H, setup.memory_budget), seed=0)
            storage.write_factorization(fp, fact, {"key": fk})
            hits["F"] = False
    return Operators(H, B, fact, hits)


# -- helpers -----------------------------------------------------------------------


def _config_with_acquisition(config: Config, attrs: dict) -> Config:
    """Replace probe/acquisition by the ones recorded in a channel container."""
    s = config.setup
    probe = ProbeGeometry(**attrs["probe"]) if "probe" in attrs else s.probe
    acq = AcquisitionConfig(**attrs["acquisition"]) if "acquisition" in attrs else s.acquisition
    return replace(config, setup=Setup(probe, acq, s.grid, s.pulse, s.memory_budget))


def _grid_attrs(config: Config) -> dict:
    return config.snapshot()["grid"]


def _rel(path: str, base: str) -> str:
    return os.path.relpath(os.path.abspath(path), os.path.abspath(base))


class Recorder:
    """Collects hashes for one command and writes its manifest."""

    def __init__(self, command: str, config: Config, out_dir: str, args: dict):
        self.start = time.perf_counter()
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.manifest = storage.RunManifest(command, config.snapshot(), arguments=args)
        self.config_hash = content_hash(config.snapshot())

    def input(self, path: str) -> str:
        digest = storage.file_sha256(path)
        self.manifest.inputs[_rel(path, self.out_dir)] = digest
        return digest

    def provenance(self, seed=None, extra=None) -> dict:
        p = {"command": self.manifest.command, "config_hash": self.config_hash, "inputs": dict(self.manifest.inputs)}
        if seed is not None:
            p["seed"] = seed
        if extra:
            p.update(extra)
        return p

    def write(self, name: str, kind: str, data, attrs: dict) -> str:
        path = os.path.join(self.out_dir, name)
        self.manifest.outputs[name] = storage.write_container(path, kind, data, attrs)
        return path

    def output_file(self, name: str) -> None:
        self.manifest.outputs[name] = storage.file_sha256(os.path.join(self.out_dir, name))

    def finish(self) -> str:
        self.manifest.wall_time = time.perf_counter() - self.start
        path = os.path.join(self.out_dir, f"{self.manifest.command}.manifest.json")
        self.manifest.write(path)
        return path


def make_denoiser(spec: str | None, config: Config):
    """``wavelet``, ``gaussian``, ``tcp:HOST:PORT``, ``unix:PATH`` or ``process:CMD``."""
    d = dict(config.denoiser)
    kind = spec or d.get("kind", "wavelet")
    if kind == "wavelet":
        return WaveletDenoiser(int(d.get("levels", 2)), float(d.get("k", 3.0)), d.get("wavelet", "haar"),
                               bool(d.get("threshold_approx", True)))
    if kind == "gaussian":
        g = config.grid
        lz = float(d.get("axial_length", 2 * g.dz)) / g.dz
        lx = float(d.get("lateral_length", 2 * g.dx)) / g.dx
        corr = lambda ell: (lambda lag: np.exp(-0.5 * (lag / ell) ** 2))  # noqa: E731
        return GaussianDenoiser.stationary(g.n_z, g.n_x, corr(lz), corr(lx), float(d.get("variance", 1.0)))
    timeout = float(d.get("timeout", 60.0))
    if kind.startswith("tcp:"):
        return ExternalDenoiser(EndpointSpec("tcp", kind[4:], timeout=timeout))
    if kind.startswith("unix:"):
        return ExternalDenoiser(EndpointSpec("unix", kind[5:], timeout=timeout))
    if kind.startswith("process:"):
        return ExternalDenoiser(EndpointSpec("process", command=tuple(shlex.split(kind[8:])), timeout=timeout))
    if kind == "external" and d.get("endpoint"):
        return make_denoiser(str(d["endpoint"]), config)
    raise ValidationError(f"unknown denoiser spec {kind!r}")


# -- commands ------------------------------------------------------------------------


def cmd_build_model(args, config: Config) -> int:
    rec = Recorder("build-model", config, args.cache_dir, {"no_factorize": args.no_factorize})
    ops = load_operators(config, args.cache_dir, want_factorization=not args.no_factorize)
    print(f"H: {ops.H.shape[0]} x {ops.H.shape[1]}, nnz {ops.H.nnz} ({'cache hit' if ops.hits['H'] else 'built'})")
    print(f"B: {ops.B.shape[0]} x {ops.B.shape[1]}, nnz {ops.B.matrix.nnz} "
          f"({'cache hit' if ops.hits['B'] else 'built'})")
    if ops.fact is not None:
        f = ops.fact
        print(f"BH: {f.method} SVD, rank {f.rank} of {f.n_pixels}, residual {f.residual_norm:.3e} "
              f"({'cache hit' if ops.hits['F'] else 'built'})")
    for name in sorted(os.listdir(args.cache_dir)):
        if name.endswith(".usdr"):
            rec.output_file(name)
    rec.finish()
    return EXIT_OK


def _phantom(args, config: Config):
    g = config.grid
    extent = (g.x_range, g.z_range)
    if args.phantom in PRESETS:
        return preset(args.phantom, extent)
    if os.path.exists(args.phantom):
        with open(args.phantom) as fh:
            return phantom_from_dict(yaml.safe_load(fh) or {}, extent)
    raise ValidationError(f"unknown preset {args.phantom!r}; available: {', '.join(PRESETS)} or a phantom file")


def _region_file(phantom, grid) -> dict:
    """Metric regions matching the phantom: lesions with a surrounding ring, points."""
    regions, contrast, points = [], [], []
    for i, r in enumerate(phantom.lesions):
        if r.shape != "disk":
            continue
        rad = float(r.size)
        regions.append({"name": f"lesion{i}", "shape": "disk", "center": list(r.center), "radius": 0.8 * rad,
                        "role": "target-in"})
        regions.append({"name": f"ring{i}", "shape": "disk", "center": list(r.center), "radius": 1.6 * rad,
                        "inner_radius": 1.2 * rad, "role": "reference-out"})
        contrast.append({"in": f"lesion{i}", "out": f"ring{i}"})
    for i, r in enumerate(phantom.points):
        points.append({"name": f"point{i}", "center": list(r.center)})
    return {"regions": regions, "contrast": contrast, "points": points}


def cmd_simulate(args, config: Config) -> int:
    phantom = _phantom(args, config)
    sim = dict(config.simulation)
    density = float(args.density if args.density is not None else sim["density_per_mm2"])
    snr_db = args.snr_db if args.snr_db is not None else sim["snr_db"]
    rec = Recorder("simulate", config, args.out, {"phantom": args.phantom, "density": density, "snr_db": snr_db})
    if os.path.exists(args.phantom):
        rec.input(args.phantom)
    s = config.setup
    root = np.random.SeedSequence(args.seed)
    field_ss, noise_ss = root.spawn(2)
    field = sample_scatterers(phantom, density, np.random.default_rng(field_ss))
    per_cell = scatterers_per_cell(density, s.probe, s.acquisition, s.pulse,
                                   config.apodization.f_number or 1.4)
    if phantom.background > 0 and per_cell < 5:
        _warn(f"{per_cell:.2g} scatterers per resolution cell; speckle is not fully developed below 5")
    clean = synthesize_channel_data(field, s.probe, replace(s.acquisition, noise_std=0.0), s.pulse)
    noise_std = s.acquisition.noise_std if snr_db is None else noise_std_for_snr(clean, snr_db)
    data = add_channel_noise(clean, noise_std, np.random.default_rng(noise_ss))
    acq = replace(s.acquisition, noise_std=float(noise_std))
    prov = rec.provenance(seed=args.seed, extra={"phantom": phantom.name, "scatterers": len(field),
                                                    "scatterers_per_cell": per_cell})
    rec.write("channel.usdr", "channel", data,
              {"acquisition": asdict(acq), "probe": asdict(s.probe), "pulse": asdict(s.pulse), "provenance": prov})
    p = s.grid.unflatten(phantom.echogenicity_map(s.grid))
    rec.write("echogenicity.usdr", "image", storage.image_payload(p),
              {"grid": _grid_attrs(config), "domain": "echogenicity", "provenance": prov})
    with open(os.path.join(args.out, "regions.yaml"), "w") as fh:
        yaml.safe_dump(_region_file(phantom, s.grid), fh, sort_keys=True)
    rec.output_file("regions.yaml")
    print(f"{phantom.name}: {len(field)} scatterers, {data.shape[0]} samples x {data.shape[1]} channels, "
          f"noise std {noise_std:.3g}")
    rec.finish()
    return EXIT_OK


def cmd_reconstruct(args, config: Config) -> int:
    ch = storage.read_container(args.channel, "channel")
    config = _config_with_acquisition(config, ch.attrs)
    K, L = ch.data.shape
    s = config.setup
    if (K, L) != (s.acquisition.sample_count, s.probe.element_count):
        raise ValidationError(f"channel data is {K} x {L}, acquisition says "
                              f"{s.acquisition.sample_count} x {s.probe.element_count}")
    sampler = replace(config.sampler, seed=args.seed, threads=args.threads,
                      it=args.it if args.it is not None else config.sampler.it,
                      samples=args.samples if args.samples is not None else 1)
    if args.mode != "das":
        sampler = replace(sampler, mode=args.mode)
    config = replace(config, sampler=sampler)
    rec = Recorder("reconstruct", config, args.out,
                   {"mode": args.mode, "it": sampler.it, "samples": sampler.samples, "denoiser": args.denoiser})
    rec.input(args.channel)
    y = channel_vector(ch.data)
    grid = config.grid
    base = {"grid": _grid_attrs(config), "domain": "rf"}

    if args.mode == "das":
        ignored = [n for n in ("it", "samples", "denoiser") if getattr(args, n) is not None]
        if ignored:
            _warn(f"mode das ignores {', '.join('--' + n for n in ignored)}")
        ops = load_operators(config, args.cache_dir, want_factorization=False, build=not args.no_build,
                             log=lambda m: print(m, file=sys.stderr))
        image = grid.unflatten(das(ops.B, y))
        rec.write("das.usdr", "image", storage.image_payload(image),
                  {**base, "mode": "das", "provenance": rec.provenance()})
        rec.finish()
        return EXIT_OK

    ops = load_operators(config, args.cache_dir, want_factorization=args.mode == "drus", build=not args.no_build,
                         log=lambda m: print(m, file=sys.stderr))
    image = das(ops.B, y)
    fact = ops.fact
    if fact is None:
        from .spectral import identity_factorization
        fact = identity_factorization(grid.N)
    sigma_d = sampler.sigma_d
    if sigma_d is None and ch.attrs.get("acquisition", {}).get("noise_std", 0) > 0:
        sigma_d = projected_noise_std(ops.B, ch.attrs["acquisition"]["noise_std"])
    denoiser = make_denoiser(args.denoiser, config)
    try:
        bundle = sample_bundle(sampler, fact, image, denoiser, grid.shape, sigma_d=sigma_d,
                               config_hash=rec.config_hash)
    finally:
        if hasattr(denoiser, "close"):
            denoiser.close()
    prov = rec.provenance(seed=args.seed, extra={"chains": list(bundle.indices), "scale": bundle.meta["scale"],
                                                "sigma_d": bundle.meta["sigma_d"]})
    rec.write("bundle.usdr", "bundle", bundle.images,
              {**base, "mode": args.mode, "seeds": [[args.seed, i] for i in bundle.indices],
               "sampler": asdict(sampler), "provenance": prov})
    rec.write("one.usdr", "image", storage.image_payload(grid.unflatten(bundle.images[0])),
              {**base, "mode": args.mode, "provenance": prov})
    if bundle.M >= 2:
        agg = aggregate(bundle)
        rec.write("mean.usdr", "image", storage.image_payload(grid.unflatten(agg.mean)),
                  {**base, "mode": args.mode, "provenance": prov})
        rec.write("var.usdr", "image", storage.image_payload(grid.unflatten(agg.variance)),
                  {**base, "domain": "variance", "display": "sqrt", "mode": args.mode, "provenance": prov})
    print(f"{args.mode}: {bundle.M} sample(s), {sampler.it} steps, sigma_d {bundle.meta['sigma_d']:.3g}")
    rec.finish()
    return EXIT_OK


def _image_and_grid(path: str):
    c = storage.read_container(path, "image")
    if "grid" not in c.attrs:
        raise ValidationError(f"{path} carries no grid description")
    g = c.attrs["grid"]
    from .acquisition import ImagingGrid
    grid = ImagingGrid(tuple(g["x_range"]), tuple(g["z_range"]), int(g["n_x"]), int(g["n_z"]))
    return storage.image_from_container(c), grid, c.attrs


def amplitude_image(image: np.ndarray, attrs: dict) -> np.ndarray:
    """Linear amplitude used by metrics: envelope for RF, sqrt for variance."""
    domain = attrs.get("domain", "rf")
    if domain == "variance":
        return np.sqrt(np.clip(image, 0.0, None))
    if domain == "echogenicity":
        return image
    return envelope(image)


def _masks(spec: dict, grid) -> dict:
    from .metrics import RegionMask
    masks = {}
    for r in spec.get("regions", []):
        name = r.get("name")
        if not name:
            raise ValidationError("every region needs a name")
        need = {"disk": ("center", "radius"), "rect": ("center", "size"), "rectangle": ("center", "size")}
        lacking = [k for k in need.get(r.get("shape"), ()) if k not in r]
        if lacking:
            raise ValidationError(f"region {name!r} lacks {', '.join(lacking)}")
        if r.get("shape") == "disk":
            m = disk_mask(grid, r["center"], float(r["radius"]), float(r.get("inner_radius", 0.0)))
        elif r["shape"] in ("rect", "rectangle"):
            m = rect_mask(grid, r["center"], r["size"])
        else:
            raise ValidationError(f"region {name!r}: unknown shape {r.get('shape')!r}")
        if not m.any():
            raise ValidationError(f"region {name!r} covers no pixel of the grid")
        masks[name] = RegionMask(m, name, r.get("role", "roi"))
    return masks


def cmd_metrics(args, config: Config) -> int:
    image, grid, attrs = _image_and_grid(args.image)
    try:
        with open(args.regions) as fh:
            spec = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise OSError(f"cannot read regions file {args.regions}: {exc.strerror}") from None
    out = args.out or os.path.dirname(os.path.abspath(args.image))
    rec = Recorder("metrics", config, out, {"dynamic_range": args.dynamic_range})
    rec.input(args.image)
    rec.input(args.regions)
    masks = _masks(spec, grid)
    amp = amplitude_image(image, attrs)
    db = log_compress(amp, args.dynamic_range)
    image_id = os.path.splitext(os.path.basename(args.image))[0]
    stride = tuple(spec.get("ks_stride", (1, 1)))
    report = MetricsReport(image_id, settings={"dynamic_range": args.dynamic_range, "domain": "linear envelope",
                                               "ks_stride": list(stride)})
    for pair in spec.get("contrast", []):
        for key in ("in", "out"):
            if pair.get(key) not in masks:
                raise ValidationError(f"contrast pair refers to undefined region {pair.get(key)!r}")
        a, b = masks[pair["in"]].mask, masks[pair["out"]].mask
        label = f"{pair['in']}/{pair['out']}"
        report.add(label, "cnr", cnr(amp, a, b), "dB")
        report.add(label, "gcnr", gcnr(amp, a, b))
    for name, m in masks.items():
        if m.role == "roi":
            report.add(name, "speckle_snr", speckle_snr(amp, m.mask, stride))
            p = ks_rayleigh_pvalue(amp, m.mask, stride)
            report.add(name, "ks_p", p, threshold=KS_PASS, passed=p > KS_PASS)
    for pt in spec.get("points", []):
        ix = int(np.argmin(np.abs(grid.x - pt["center"][0])))
        iz = int(np.argmin(np.abs(grid.z - pt["center"][1])))
        for axis in ("axial", "lateral"):
            report.add(pt["name"], f"fwhm_{axis}", fwhm(db, (iz, ix), axis, grid), "mm")
    with open(os.path.join(out, f"{image_id}.metrics.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out, f"{image_id}.metrics.csv"), "w") as fh:
        fh.write(report.to_csv())
    rec.output_file(f"{image_id}.metrics.txt")
    rec.output_file(f"{image_id}.metrics.csv")
    sys.stdout.write(report.to_text())
    rec.finish()
    return EXIT_OK


def cmd_render(args, config: Config) -> int:
    image, grid, attrs = _image_and_grid(args.image)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    rec = Recorder("render", config, out_dir, {"dynamic_range": args.dynamic_range, "colormap": args.colormap,
                                               "fuse": args.fuse})
    rec.input(args.image)
    if args.fuse:
        var, vgrid, vattrs = _image_and_grid(args.fuse)
        rec.input(args.fuse)
        if vgrid != grid:
            raise ValidationError("mean and variance images are on different grids")
        if vattrs.get("domain") != "variance":
            _warn(f"{args.fuse} is not marked as a variance image")
        render_fused(args.out, image, var, args.dynamic_range, args.colormap if args.colormap != "gray" else "jet")
    else:
        db = log_compress(amplitude_image(image, attrs), args.dynamic_range)
        write_png(args.out, db_to_rgb(db, args.dynamic_range, args.colormap))
    rec.output_file(os.path.basename(args.out))
    rec.finish()
    return EXIT_OK


def cmd_verify(args, config: Config) -> int:
    bad = 0
    for path in args.paths:
        problems = storage.verify_manifest(path) if path.endswith(".json") else storage.verify_container(path)
        for p in problems:
            print(f"{path}: {p}")
        bad += len(problems)
        if not problems:
            print(f"{path}: ok")
    return EXIT_VALIDATION if bad else EXIT_OK


def cmd_picmus_import(args, config: Config) -> int:
    from .picmus import EXAMPLE_MAPPING
    mapping_path = args.mapping or EXAMPLE_MAPPING
    mapping = load_mapping(mapping_path)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    rec = Recorder("picmus-import", config, out_dir, {"mapping": mapping})
    rec.input(args.file)
    data, attrs = import_rf(args.file, mapping)
    attrs["pulse"] = asdict(config.setup.pulse)
    attrs["provenance"] = rec.provenance()
    rec.manifest.outputs[os.path.basename(args.out)] = storage.write_container(args.out, "channel", data, attrs)
    acq = attrs["acquisition"]
    print(f"{data.shape[0]} samples x {data.shape[1]} channels, fs {acq['sampling_rate']:g} Hz, "
          f"angle {math.degrees(acq['steering_angle']):.2f} deg")
    rec.finish()
    return EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root random seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="parallel chains")
    common.add_argument("--cache-dir", default=argparse.SUPPRESS, help="operator cache directory")

    p = argparse.ArgumentParser(prog="drus", description="Plane-wave ultrasound reconstruction pipeline.")
    p.add_argument("--config", default=None, help="YAML configuration file")
    p.add_argument("--seed", type=int, default=0, help="root random seed")
    p.add_argument("--threads", type=int, default=1, help="parallel chains")
    p.add_argument("--cache-dir", default=os.environ.get("DRUS_CACHE_DIR", ".drus-cache"),
                   help="operator cache directory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-model", parents=[common], help="build H, B and the SVD of BH")
    s.add_argument("--no-factorize", action="store_true", help="skip the SVD")
    s.set_defaults(func=cmd_build_model)

    s = sub.add_parser("simulate", parents=[common], help="synthesize channel data from a phantom")
    s.add_argument("--phantom", default="sc-like", help=f"preset ({', '.join(PRESETS)}) or phantom YAML file")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--density", type=float, default=None, help="scatterers per mm^2")
    s.add_argument("--snr-db", type=float, default=None, help="channel SNR; overrides acquisition.noise_std")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", parents=[common], help="DAS, DRUS or Deno reconstruction")
    s.add_argument("channel", help="channel container")
    s.add_argument("--mode", choices=("drus", "deno", "das"), default="drus")
    s.add_argument("--it", type=int, default=None, help="diffusion steps per sample")
    s.add_argument("--samples", "-M", type=int, default=None, help="number of independent samples")
    s.add_argument("--denoiser", default=None, help="wavelet | gaussian | tcp:HOST:PORT | unix:PATH | process:CMD")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--no-build", action="store_true", help="fail instead of building missing operator caches")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("metrics", parents=[common], help="image quality metrics")
    s.add_argument("image", help="image container")
    s.add_argument("--regions", required=True, help="regions YAML")
    s.add_argument("--dynamic-range", type=float, default=60.0)
    s.add_argument("--out", default=None, help="output directory (default: next to the image)")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("render", parents=[common], help="write an 8-bit PNG")
    s.add_argument("image", help="image container (the mean image when fusing)")
    s.add_argument("--out", required=True, help="PNG path")
    s.add_argument("--dynamic-range", type=float, default=60.0)
    s.add_argument("--colormap", default="gray")
    s.add_argument("--fuse", default=None, help="variance image container to fuse as colour")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("verify", parents=[common], help="re-hash manifests or containers")
    s.add_argument("paths", nargs="+")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("picmus-import", parents=[common], help="convert an HDF5 RF file to a channel container")
    s.add_argument("file", help="HDF5 file")
    s.add_argument("--mapping", default=None, help="path mapping YAML (default: bundled example)")
    s.add_argument("--out", required=True, help="channel container path")
    s.set_defaults(func=cmd_picmus_import)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DrusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
