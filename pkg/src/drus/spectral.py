"""Spectral factorization of the projected operator ``BH`` and the maps
between pixel space and its singular basis.

The projected model is ``B y = BH o + B n``; with ``BH = U S V^T`` the
measurement becomes ``ybar = S^+ U^T B y = V^T o + nbar`` where coordinate
``i`` carries white noise of standard deviation ``sigma_d / s_i``. Projected
noise is treated as white; its colour is not corrected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beamformer import BeamformerMatrix, das
from .errors import MemoryBudgetError, NumericalError, ValidationError
from .system_matrix import SystemMatrix

RANK_TOL = 1e-6
EXACT_LIMIT = 16384


@dataclass(frozen=True)
class SpectralFactorization:
    """``BH ~= U diag(S) V^T``; ``U`` and ``V`` are None for the identity."""

    U: np.ndarray | None
    S: np.ndarray
    V: np.ndarray | None
    residual_norm: float
    method: str
    rank_tol: float = RANK_TOL

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.S.shape[0] if self.V is None else self.V.shape[0]

    @property
    def is_identity(self) -> bool:
        return self.V is None

    @property
    def observed(self) -> np.ndarray:
        """Coordinates whose singular value clears ``rank_tol * s_1``."""
        if self.S.size == 0:
            return np.zeros(0, dtype=bool)
        return self.S > self.S[0] * self.rank_tol

    def Vt(self, x: np.ndarray) -> np.ndarray:
        return x.copy() if self.V is None else self.V.T @ x

    def Ut(self, b: np.ndarray) -> np.ndarray:
        return b.copy() if self.U is None else self.U.T @ b


def identity_factorization(n: int) -> SpectralFactorization:
    """Factorization of the identity, used by denoising-only reconstruction."""
    return SpectralFactorization(None, np.ones(n), None, 0.0, "identity")


def compose_BH(B: BeamformerMatrix, H: SystemMatrix, memory_budget: float = 2e9) -> np.ndarray:
    """Dense N x N product ``B H``."""
    N = B.shape[0]
    if B.shape[1] != H.shape[0] or H.shape[1] != N:
        raise ValidationError(f"cannot compose B{B.shape} with H{H.shape}")
    if 8.0 * N * N > memory_budget:
        raise MemoryBudgetError(f"dense BH needs {8.0 * N * N / 1e9:.2f} GB, budget {memory_budget / 1e9:.2f} GB")
    return (B.matrix @ H.matrix).toarray()


def _relative_residual(A, U, S, V) -> float:
    norm = np.linalg.norm(A)
    if norm == 0:
        return 0.0
    return float(np.linalg.norm(A - (U * S) @ V.T) / norm)


def randomized_svd(A: np.ndarray, rank: int, oversampling: int = 10, power_iterations: int = 2,
                   rng: np.random.Generator | None = None):
    """Truncated SVD by randomized subspace iteration.

    Each power step re-orthonormalizes through a QR factorization so the
    small singular directions are not lost to round-off.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    m, n = A.shape
    width = min(rank + oversampling, min(m, n))
    Q, _ = np.linalg.qr(A @ rng.standard_normal((n, width)))
    for _ in range(power_iterations):
        W, _ = np.linalg.qr(A.T @ Q)
        Q, _ = np.linalg.qr(A @ W)
    Ub, S, Vt = np.linalg.svd(Q.T @ A, full_matrices=False)
    U = Q @ Ub
    return U[:, :rank], S[:rank], Vt[:rank].T


def factorize(BH: np.ndarray, method: str = "exact", tol: float = 1e-8, rank: int | None = None,
              oversampling: int = 10, power_iterations: int = 2, rank_tol: float = RANK_TOL,
              seed: int = 0) -> SpectralFactorization:
    """SVD of ``BH``.

    Parameters
    ----------
    method : {"exact", "randomized"}
        ``exact`` runs LAPACK on the full matrix (N up to 16384).
        ``randomized`` needs a target ``rank``.
    tol : float
        Upper bound on ``||BH - U S V^T||_F / ||BH||_F``.

    Raises
    ------
    NumericalError
        When the factorization fails or its residual exceeds ``tol``.
    """
    BH = np.asarray(BH, dtype=float)
    if BH.ndim != 2 or BH.shape[0] != BH.shape[1]:
        raise ValidationError(f"BH must be square, got {BH.shape}")
    N = BH.shape[0]
    if not np.all(np.isfinite(BH)):
        raise NumericalError("BH contains non-finite entries")
    if method == "exact":
        if N > EXACT_LIMIT:
            raise ValidationError(f"exact factorization limited to N <= {EXACT_LIMIT}; use method='randomized'")
        try:
            U, S, Vt = np.linalg.svd(BH, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD did not converge: {exc}") from exc
        V = Vt.T
    elif method == "randomized":
        if rank is None or not 1 <= rank <= N:
            raise ValidationError("randomized factorization needs 1 <= rank <= N")
        U, S, V = randomized_svd(BH, rank, oversampling, power_iterations, np.random.default_rng(seed))
    else:
        raise ValidationError(f"unknown factorization method {method!r}")
    residual = _relative_residual(BH, U, S, V)
    if not residual <= tol:
        raise NumericalError(f"{method} factorization residual {residual:.3e} exceeds tolerance {tol:.1e}")
    # C order either way, so a factorization read back from a cache multiplies
    # in the same order (and to the same bits) as a fresh one
    U, V = np.ascontiguousarray(U), np.ascontiguousarray(V)
    return SpectralFactorization(U, S, V, residual, method, rank_tol)


@dataclass(frozen=True)
class SpectralMeasurement:
    """Measurements in the singular basis.

    ``noise_std`` is ``inf`` on unobserved coordinates, where ``ybar`` is 0.
    """

    ybar: np.ndarray
    noise_std: np.ndarray
    observed: np.ndarray


def spectral_measurement(fact: SpectralFactorization, image: np.ndarray, sigma_d: float) -> SpectralMeasurement:
    """Map an already beamformed image ``B y`` to the singular basis."""
    image = np.asarray(image, dtype=float)
    if image.shape != (fact.n_pixels,):
        raise ValidationError(f"beamformed image length {image.shape} does not match N={fact.n_pixels}")
    if sigma_d < 0:
        raise ValidationError("sigma_d must be >= 0")
    observed = fact.observed
    c = fact.Ut(image)
    ybar = np.zeros(fact.rank)
    noise = np.full(fact.rank, np.inf)
    ybar[observed] = c[observed] / fact.S[observed]
    noise[observed] = sigma_d / fact.S[observed]
    return SpectralMeasurement(ybar, noise, observed)


def to_spectral(fact: SpectralFactorization, B: BeamformerMatrix, y, sigma_d: float) -> SpectralMeasurement:
    """``ybar = S^+ U^T B y`` and per-coordinate noise ``sigma_d / s_i``."""
    return spectral_measurement(fact, das(B, y), sigma_d)


def from_spectral(fact: SpectralFactorization, xbar) -> np.ndarray:
    """Pixel image ``V xbar``."""
    xbar = np.asarray(xbar, dtype=float)
    if xbar.shape != (fact.rank,):
        raise ValidationError(f"spectral vector length {xbar.shape} does not match rank {fact.rank}")
    return xbar.copy() if fact.V is None else fact.V @ xbar


def estimate_sigma_d(fact: SpectralFactorization, image: np.ndarray) -> float:
    """Robust noise estimate from the weakest singular coordinates.

    Takes the median absolute value of ``(U^T B y)_i`` over the lowest decile
    of singular values, where signal energy is smallest, scaled to a
    Gaussian standard deviation.
    """
    c = fact.Ut(np.asarray(image, dtype=float))
    order = np.argsort(fact.S, kind="stable")
    low = order[: max(1, len(order) // 10)]
    return float(1.4826 * np.median(np.abs(c[low])))


def projected_noise_std(B: BeamformerMatrix, gamma: float) -> float:
    """White-noise equivalent of ``B n`` for channel noise of std ``gamma``.

    Uses the mean diagonal of ``gamma^2 B B^T``.
    """
    row_energy = np.asarray(B.matrix.multiply(B.matrix).sum(axis=1)).ravel()
    return float(gamma * np.sqrt(row_energy.mean()))
