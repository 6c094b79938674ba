"""Container files, operator caches and run manifests.

Container layout, all little-endian::

    offset  size       field
    0       4          magic b"USDR"
    4       2          version (uint16, currently 1)
    6       1          kind code: 0 channel, 1 image, 2 bundle, 3 matrix-cache
    7       1          ndim
    8       4          attribute block length A (uint32)
    12      8 * ndim   shape (uint64 each)
    ...     A          attribute block, UTF-8 JSON with sorted keys
    ...     8 * prod   payload, C order of ``shape``

Payload words are float64 except in matrix caches, whose attribute
``sections`` lists consecutive ``{name, dtype, count}`` runs (``<i8`` or
``<f8``), still 8 bytes per word.

Shapes by kind: channel ``(K, L)``; image ``(n_x, n_z)``, so the payload is
the depth-major pixel vector; bundle ``(M, N)`` with one depth-major image
per row.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .spectral import SpectralFactorization

MAGIC = b"USDR"
VERSION = 1
KINDS = ("channel", "image", "bundle", "matrix-cache")
_HEAD = struct.Struct("<4sHBBI")
_WORD_DTYPES = ("<f8", "<i8")


class ContainerError(OSError):
    """Malformed or unreadable container file."""


@dataclass
class Container:
    kind: str
    data: np.ndarray
    attrs: dict = field(default_factory=dict)


def _encode_attrs(attrs: dict) -> bytes:
    try:
        return json.dumps(attrs, sort_keys=True, allow_nan=False, separators=(",", ":")).encode()
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"attributes are not JSON-serializable: {exc}") from None


def encode_container(kind: str, data: np.ndarray, attrs: dict | None = None) -> bytes:
    if kind not in KINDS:
        raise ValidationError(f"unknown container kind {kind!r}")
    data = np.asarray(data, dtype="<f8")
    if data.ndim > 255:
        raise ValidationError("too many dimensions")
    blob = _encode_attrs(attrs or {})
    head = _HEAD.pack(MAGIC, VERSION, KINDS.index(kind), data.ndim, len(blob))
    shape = struct.pack(f"<{data.ndim}Q", *data.shape)
    payload = np.ascontiguousarray(data).tobytes()
    return head + shape + blob + payload


def decode_container(raw: bytes) -> Container:
    if len(raw) < _HEAD.size:
        raise ContainerError("file too short for a container header")
    magic, version, code, ndim, alen = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code >= len(KINDS):
        raise ContainerError(f"unknown kind code {code}")
    off = _HEAD.size
    shape = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    try:
        attrs = json.loads(raw[off:off + alen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt attribute block: {exc}") from None
    off += alen
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - off != 8 * count:
        raise ContainerError(f"payload has {len(raw) - off} bytes, shape {shape} needs {8 * count}")
    kind = KINDS[code]
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).copy()
    return Container(kind, data, attrs)


def sha256_bytes(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_container(path, kind: str, data: np.ndarray, attrs: dict | None = None) -> str:
    """Write atomically; returns the sha256 of the file."""
    raw = encode_container(kind, data, attrs)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(raw)
    os.replace(tmp, path)
    return sha256_bytes(raw)


def read_container(path, kind: str | None = None) -> Container:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ContainerError(f"cannot read {path}: {exc.strerror or exc}") from None
    c = decode_container(raw)
    if kind is not None and c.kind != kind:
        raise ValidationError(f"{path} holds a {c.kind} container, expected {kind}")
    return c


# -- typed helpers -------------------------------------------------------------


def image_payload(image: np.ndarray) -> np.ndarray:
    """``(n_z, n_x)`` image to the ``(n_x, n_z)`` stored array."""
    return np.asarray(image, dtype=float).T


def image_from_container(c: Container) -> np.ndarray:
    """Stored image back to ``(n_z, n_x)``."""
    if c.kind != "image" or c.data.ndim != 2:
        raise ValidationError(f"expected an image container, got {c.kind} {c.data.shape}")
    return np.ascontiguousarray(c.data.T)


def _pack_sections(sections: list[tuple[str, np.ndarray]]) -> tuple[np.ndarray, list[dict]]:
    words, table = [], []
    for name, arr in sections:
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        elif arr.dtype.kind in "iu":
            arr = arr.astype("<i8")
        else:
            raise ValidationError(f"section {name!r} has unsupported dtype {arr.dtype}")
        table.append({"name": name, "dtype": arr.dtype.str, "count": int(arr.size), "shape": list(arr.shape)})
        words.append(np.frombuffer(arr.tobytes(), dtype="<f8"))
    return (np.concatenate(words) if words else np.zeros(0)), table


def _unpack_sections(c: Container) -> dict[str, np.ndarray]:
    if c.kind != "matrix-cache":
        raise ValidationError(f"expected a matrix-cache container, got {c.kind}")
    raw = c.data.astype("<f8", copy=False).tobytes()
    out, off = {}, 0
    for s in c.attrs.get("sections", []):
        if s["dtype"] not in _WORD_DTYPES:
            raise ContainerError(f"section {s['name']!r} has unsupported dtype {s['dtype']}")
        n = int(s["count"])
        out[s["name"]] = np.frombuffer(raw, dtype=s["dtype"], count=n, offset=off).reshape(s["shape"]).copy()
        off += 8 * n
    if off != len(raw):
        raise ContainerError("matrix-cache sections do not cover the payload")
    return out


def write_sparse_cache(path, matrix: sp.csr_matrix, attrs: dict | None = None) -> str:
    m = sp.csr_matrix(matrix)
    words, table = _pack_sections([("indptr", m.indptr), ("indices", m.indices), ("data", m.data)])
    meta = dict(attrs or {})
    meta.update({"format": "csr", "matrix_shape": list(m.shape), "sections": table})
    return write_container(path, "matrix-cache", words, meta)


def read_sparse_cache(path) -> tuple[sp.csr_matrix, dict]:
    c = read_container(path, "matrix-cache")
    if c.attrs.get("format") != "csr":
        raise ContainerError(f"{path} is not a sparse matrix cache")
    s = _unpack_sections(c)
    m = sp.csr_matrix((s["data"], s["indices"], s["indptr"]), shape=tuple(c.attrs["matrix_shape"]))
    return m, c.attrs


def write_factorization(path, fact: SpectralFactorization, attrs: dict | None = None) -> str:
    meta = dict(attrs or {})
    meta.update({"format": "svd", "method": fact.method, "residual_norm": float(fact.residual_norm),
                 "rank_tol": float(fact.rank_tol)})
    words, table = _pack_sections([("U", fact.U), ("S", fact.S), ("V", fact.V)])
    meta["sections"] = table
    return write_container(path, "matrix-cache", words, meta)


def read_factorization(path) -> tuple[SpectralFactorization, dict]:
    c = read_container(path, "matrix-cache")
    if c.attrs.get("format") != "svd":
        raise ContainerError(f"{path} is not a factorization cache")
    s = _unpack_sections(c)
    a = c.attrs
    return SpectralFactorization(s["U"], s["S"], s["V"], a["residual_norm"], a["method"], a["rank_tol"]), a


# -- manifests -----------------------------------------------------------------


@dataclass
class RunManifest:
    """What a command read, wrote and was configured with.

    Wall time lives here and never in containers, so deterministic outputs
    hash the same across runs.
    """

    command: str
    config: dict
    seeds: list = field(default_factory=list)
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path -> sha256
    wall_time: float = 0.0
    arguments: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2, default=str)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ContainerError(f"cannot read manifest {path}: {exc}") from None
        return cls(**d)


def verify_manifest(path) -> list[str]:
    """Re-hash every file a manifest lists; returns one message per mismatch."""
    m = RunManifest.read(path)
    base = os.path.dirname(os.path.abspath(path))
    problems = []
    for role, table in (("input", m.inputs), ("output", m.outputs)):
        for name, digest in sorted(table.items()):
            p = name if os.path.isabs(name) else os.path.join(base, name)
            if not os.path.exists(p):
                problems.append(f"{role} {name}: missing")
            elif file_sha256(p) != digest:
                problems.append(f"{role} {name}: hash mismatch")
    return problems


def verify_container(path) -> list[str]:
    """Check a container's structure and its recorded input hashes."""
    c = read_container(path)
    problems = []
    base = os.path.dirname(os.path.abspath(path))
    for name, digest in sorted(c.attrs.get("provenance", {}).get("inputs", {}).items()):
        p = name if os.path.isabs(name) else os.path.join(base, name)
        if os.path.exists(p) and file_sha256(p) != digest:
            problems.append(f"input {name} of {os.path.basename(str(path))}: hash mismatch")
    return problems
