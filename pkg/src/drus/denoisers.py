"""Denoiser priors for the diffusion sampler.

A denoiser is any callable ``f(x, sigma) -> x0`` taking a noisy image of
shape ``(n_z, n_x)`` at noise level ``sigma`` and returning a prediction of
the clean image of the same shape. It must be deterministic.

Three kinds are provided:

* :class:`GaussianDenoiser` -- exact MMSE denoiser of a zero-mean Gaussian
  prior, used as an analytic oracle.
* :class:`WaveletDenoiser` -- soft thresholding in an orthogonal wavelet
  basis.
* :class:`ExternalDenoiser` -- forwards every call to another process over
  the ``DNZ1``/``DNZ2`` frame protocol described below.

Exchange protocol
-----------------
Frames travel over a byte stream (TCP socket, Unix socket, or the stdio of
a child process). Every frame is a little-endian ``u32`` byte count followed
by that many bytes of payload. Payloads:

request   ``b"DNZ1"``, ``u32 n_z``, ``u32 n_x``, ``f64 sigma``, then
          ``n_z * n_x`` ``f64`` pixels, depth-major (axial index fastest)
response  ``b"DNZ2"``, ``u32 n_z``, ``u32 n_x``, then the pixels in the
          same layout

All numbers are little-endian. One request is in flight per connection.
"""

from __future__ import annotations

import os
import select
import socket
import socketserver
import struct
import subprocess
import threading
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import pywt

from .errors import DenoiserTimeout, ProtocolError, ShapeMismatchError, ValidationError

Denoiser = Callable[[np.ndarray, float], np.ndarray]

REQUEST_MAGIC = b"DNZ1"
RESPONSE_MAGIC = b"DNZ2"
_LEN = struct.Struct("<I")
_REQ_HEAD = struct.Struct("<4sIId")
_RESP_HEAD = struct.Struct("<4sII")


class GaussianDenoiser:
    """``x0 = Sigma (Sigma + sigma^2 I)^{-1} x`` for a zero-mean Gaussian prior.

    The covariance is either diagonal or separable,
    ``Cov(X[iz, ix], X[jz, jx]) = axial[iz, jz] * lateral[ix, jx]``,
    and the filter is applied in its eigenbasis.
    """

    def __init__(self, axial=None, lateral=None, diagonal=None, tol: float = 1e-10):
        if diagonal is not None:
            d = np.asarray(diagonal, dtype=float)
            if np.any(d < 0):
                raise ValidationError("diagonal prior variances must be >= 0")
            self.diagonal = d
            self.shape = d.shape
            return
        self.diagonal = None
        if axial is None or lateral is None:
            raise ValidationError("separable prior needs both axial and lateral covariances")
        self._az, self._Qz = self._eig(axial, tol, "axial")
        self._ax, self._Qx = self._eig(lateral, tol, "lateral")
        self.shape = (self._az.size, self._ax.size)
        self._spectrum = np.outer(self._az, self._ax)

    @staticmethod
    def _eig(C, tol, name):
        C = np.asarray(C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or not np.allclose(C, C.T, atol=tol * max(1.0, np.abs(C).max())):
            raise ValidationError(f"{name} covariance must be a symmetric matrix")
        w, Q = np.linalg.eigh(C)
        if w.min() < -tol * max(1.0, w.max()):
            raise ValidationError(f"{name} covariance is not positive semidefinite (min eigenvalue {w.min():.3e})")
        return np.clip(w, 0.0, None), Q

    @classmethod
    def stationary(cls, n_z: int, n_x: int, axial_corr: Callable, lateral_corr: Callable, variance: float = 1.0):
        """Build from correlation functions of the integer pixel lag."""
        lz = np.arange(n_z)
        lx = np.arange(n_x)
        axial = variance * axial_corr(np.abs(lz[:, None] - lz[None, :]))
        lateral = lateral_corr(np.abs(lx[:, None] - lx[None, :]))
        return cls(axial=axial, lateral=lateral)

    def covariance(self) -> np.ndarray:
        """Dense N x N covariance in depth-major pixel order."""
        if self.diagonal is not None:
            return np.diag(self.diagonal.ravel(order="F"))
        Cz = (self._Qz * self._az) @ self._Qz.T
        Cx = (self._Qx * self._ax) @ self._Qx.T
        return np.kron(Cx, Cz)

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != self.shape:
            raise ValidationError(f"image shape {x.shape} does not match prior shape {self.shape}")
        s2 = float(sigma) ** 2
        if self.diagonal is not None:
            return self.diagonal / (self.diagonal + s2) * x if s2 > 0 else x.copy()
        coeff = self._Qz.T @ x @ self._Qx
        gain = self._spectrum / (self._spectrum + s2) if s2 > 0 else np.ones_like(self._spectrum)
        return self._Qz @ (gain * coeff) @ self._Qx.T


class WaveletDenoiser:
    """Soft-threshold the coefficients of an orthogonal 2-D wavelet transform
    at ``k * sigma``.

    RF images are band-pass, so by default the coarse approximation band is
    thresholded as well; ``threshold_approx=False`` gives the textbook
    detail-only variant. Short atoms (Haar, two levels) keep the sample
    variance local: long atoms smear it from speckle into anechoic regions.
    """

    def __init__(self, levels: int = 2, k: float = 3.0, wavelet: str = "haar", threshold_approx: bool = True):
        w = pywt.Wavelet(wavelet)
        if not w.orthogonal:
            raise ValidationError(f"wavelet {wavelet!r} is not orthogonal")
        if levels < 1:
            raise ValidationError("levels must be >= 1")
        self.levels = int(levels)
        self.k = float(k)
        self.wavelet = wavelet
        self.threshold_approx = bool(threshold_approx)

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        step = 2 ** self.levels
        if x.ndim != 2 or x.shape[0] % step or x.shape[1] % step:
            raise ValidationError(f"image dims {x.shape} must be divisible by 2**levels = {step}")
        with warnings.catch_warnings():
            # periodization has no boundary problem at any level
            warnings.simplefilter("ignore", UserWarning)
            coeffs = pywt.wavedec2(x, self.wavelet, mode="periodization", level=self.levels)
        thr = self.k * float(sigma)
        if thr > 0:
            approx = pywt.threshold(coeffs[0], thr, mode="soft") if self.threshold_approx else coeffs[0]
            coeffs = [approx] + [
                tuple(pywt.threshold(d, thr, mode="soft") for d in detail) for detail in coeffs[1:]
            ]
        return pywt.waverec2(coeffs, self.wavelet, mode="periodization")


# -- external protocol -----------------------------------------------------


def _recv_exact(read: Callable[[int], bytes], n: int) -> bytes:
    chunks = []
    while n:
        chunk = read(n)
        if not chunk:
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(read: Callable[[int], bytes]) -> bytes:
    (length,) = _LEN.unpack(_recv_exact(read, _LEN.size))
    return _recv_exact(read, length)


def write_frame(write: Callable[[bytes], None], payload: bytes) -> None:
    write(_LEN.pack(len(payload)) + payload)


def encode_request(x: np.ndarray, sigma: float) -> bytes:
    n_z, n_x = x.shape
    pixels = np.asarray(x, dtype="<f8").ravel(order="F").tobytes()
    return _REQ_HEAD.pack(REQUEST_MAGIC, n_z, n_x, float(sigma)) + pixels


def decode_request(payload: bytes) -> tuple[np.ndarray, float]:
    if len(payload) < _REQ_HEAD.size:
        raise ProtocolError("request frame too short")
    magic, n_z, n_x, sigma = _REQ_HEAD.unpack_from(payload)
    if magic != REQUEST_MAGIC:
        raise ProtocolError(f"bad request magic {magic!r}")
    body = payload[_REQ_HEAD.size:]
    if len(body) != 8 * n_z * n_x:
        raise ProtocolError(f"request carries {len(body)} pixel bytes, header says {8 * n_z * n_x}")
    x = np.frombuffer(body, dtype="<f8").reshape((n_z, n_x), order="F")
    return x.astype(float), sigma


def encode_response(x: np.ndarray) -> bytes:
    n_z, n_x = x.shape
    return _RESP_HEAD.pack(RESPONSE_MAGIC, n_z, n_x) + np.asarray(x, dtype="<f8").ravel(order="F").tobytes()


def decode_response(payload: bytes) -> np.ndarray:
    if len(payload) < _RESP_HEAD.size:
        raise ProtocolError("response frame too short")
    magic, n_z, n_x = _RESP_HEAD.unpack_from(payload)
    if magic != RESPONSE_MAGIC:
        raise ProtocolError(f"bad response magic {magic!r}")
    body = payload[_RESP_HEAD.size:]
    if len(body) != 8 * n_z * n_x:
        raise ProtocolError(f"response carries {len(body)} pixel bytes, header says {8 * n_z * n_x}")
    return np.frombuffer(body, dtype="<f8").reshape((n_z, n_x), order="F").astype(float)


@dataclass(frozen=True)
class EndpointSpec:
    """Where the external denoiser lives.

    ``kind`` is ``"tcp"`` (``address`` = ``"host:port"``), ``"unix"``
    (``address`` = socket path) or ``"process"`` (``command`` = argv list
    speaking the protocol on stdin/stdout).
    """

    kind: str
    address: str = ""
    command: tuple[str, ...] = ()
    timeout: float = 60.0


class ExternalDenoiser:
    """Client side of the frame protocol. Calls are serialized per connection."""

    def __init__(self, endpoint: EndpointSpec):
        self.endpoint = endpoint
        self._lock = threading.Lock()
        self._sock = None
        self._proc = None
        if endpoint.kind == "tcp":
            host, _, port = endpoint.address.rpartition(":")
            self._sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=endpoint.timeout)
        elif endpoint.kind == "unix":
            self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self._sock.settimeout(endpoint.timeout)
            self._sock.connect(endpoint.address)
        elif endpoint.kind == "process":
            if not endpoint.command:
                raise ValidationError("process endpoint needs a command")
            self._proc = subprocess.Popen(list(endpoint.command), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        else:
            raise ValidationError(f"unknown endpoint kind {endpoint.kind!r}")

    def _read(self, n: int) -> bytes:
        try:
            if self._sock is not None:
                return self._sock.recv(n)
            fd = self._proc.stdout.fileno()
            ready, _, _ = select.select([fd], [], [], self.endpoint.timeout)
            if not ready:
                raise DenoiserTimeout(f"no answer within {self.endpoint.timeout} s")
            return os.read(fd, n)
        except socket.timeout as exc:
            raise DenoiserTimeout(f"no answer within {self.endpoint.timeout} s") from exc

    def _write(self, data: bytes) -> None:
        if self._sock is not None:
            self._sock.sendall(data)
        else:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with self._lock:
            write_frame(self._write, encode_request(x, sigma))
            out = decode_response(read_frame(self._read))
        if out.shape != x.shape:
            raise ShapeMismatchError(f"denoiser returned shape {out.shape}, sent {x.shape}")
        return out

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=self.endpoint.timeout)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_stream(read: Callable[[int], bytes], write: Callable[[bytes], None], denoiser: Denoiser) -> None:
    """Answer requests until the peer closes the stream."""
    while True:
        try:
            payload = read_frame(read)
        except ProtocolError:
            return
        x, sigma = decode_request(payload)
        write_frame(write, encode_response(np.asarray(denoiser(x, sigma), dtype=float)))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        serve_stream(self.request.recv, self.request.sendall, self.server.denoiser)


class _TCPServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


def start_tcp_server(denoiser: Denoiser, host: str = "127.0.0.1", port: int = 0):
    """Serve ``denoiser`` on a background thread; returns ``(server, "host:port")``.

    Call ``server.shutdown()`` to stop it.
    """
    server = _TCPServer((host, port), _Handler)
    server.denoiser = denoiser
    threading.Thread(target=server.serve_forever, daemon=True).start()
    h, p = server.server_address[:2]
    return server, f"{h}:{p}"


def stdio_main(argv=None) -> None:
    """Run an echo or wavelet denoiser over stdio; handy for ``process`` endpoints."""
    import argparse
    import sys

    parser = argparse.ArgumentParser(prog="python -m drus.denoise_server")
    parser.add_argument("--kind", choices=("echo", "wavelet"), default="echo")
    args = parser.parse_args(argv)
    den = (lambda x, s: x) if args.kind == "echo" else WaveletDenoiser()
    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer

    def write(data):
        stdout.write(data)
        stdout.flush()

    serve_stream(stdin.read, write, den)

