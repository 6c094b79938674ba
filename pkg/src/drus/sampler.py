"""Conditioned diffusion sampling in the singular basis of ``BH``.

One step maps ``xbar_t`` to ``xbar_{t-1}`` coordinate by coordinate::

    xbar_{t-1} = A * xbar_t + B * ybar + C * xbar_theta + D * z

with ``xbar_theta = V^T f(V xbar_t, sigma_t)`` for a pixel-space denoiser
``f``. The coefficients satisfy ``A + B + C = 1`` and
``(A sigma_t)^2 + (B sigma_y)^2 + D^2 = sigma_{t-1}^2``, where
``sigma_y = sigma_d / s_i`` is the measurement noise of the coordinate.
``eta`` and ``eta_b`` fix the two remaining degrees of freedom.

The chain visits ``it`` noise levels ``sigma_it > ... > sigma_1`` and takes a
last step to ``sigma_0 = 0``, so a run costs exactly ``it`` denoiser calls.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .beamformer import BeamformerMatrix, das
from .denoisers import Denoiser
from .errors import NumericalError, ValidationError
from .spectral import (
    SpectralFactorization,
    SpectralMeasurement,
    estimate_sigma_d,
    from_spectral,
    identity_factorization,
    spectral_measurement,
)

BRANCH_UNOBSERVED, BRANCH_NOISY, BRANCH_ANCHORED = 0, 1, 2
NORMALIZATION_PERCENTILE = 99.9


@dataclass(frozen=True)
class NoiseSchedule:
    levels: np.ndarray  # descending, length it
    T_full: int

    @property
    def it(self) -> int:
        return self.levels.size

    def sigma(self, t: int) -> float:
        """Noise level at chain index ``t`` (``t = it`` first, ``sigma(0) = 0``)."""
        if t == 0:
            return 0.0
        return float(self.levels[self.it - t])


def make_schedule(T_full: int = 1000, it: int = 50, sigma_min: float = 1e-4, sigma_max: float = 1.0) -> NoiseSchedule:
    """Geometric ladder of ``T_full`` levels, uniformly strided down to ``it`` of them."""
    if not 0 < sigma_min < sigma_max:
        raise ValidationError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if not 1 <= it <= T_full:
        raise ValidationError(f"need 1 <= it <= T_full, got it={it}, T_full={T_full}")
    full = sigma_max * (sigma_min / sigma_max) ** (np.arange(T_full) / max(T_full - 1, 1))
    if it == 1:
        return NoiseSchedule(full[:1].copy(), T_full)
    idx = np.rint(np.linspace(0, T_full - 1, it)).astype(int)
    return NoiseSchedule(full[idx], T_full)


@dataclass(frozen=True)
class SamplerConfig:
    eta: float = 0.85
    eta_b: float = 1.0
    sigma_d: float | None = None
    it: int = 50
    T_full: int = 1000
    sigma_min: float = 1e-4
    sigma_max: float = 1.0
    seed: int = 0
    mode: str = "drus"
    samples: int = 1
    scale: float | None = None
    threads: int = 1

    def __post_init__(self):
        if not 0 <= self.eta <= 1 or not 0 <= self.eta_b <= 1:
            raise ValidationError("eta and eta_b must lie in [0, 1]")
        if self.sigma_d is not None and self.sigma_d < 0:
            raise ValidationError("sigma_d must be >= 0")
        if self.mode not in ("drus", "deno"):
            raise ValidationError(f"mode must be 'drus' or 'deno', got {self.mode!r}")
        if self.samples < 1:
            raise ValidationError("samples must be >= 1")
        if self.scale is not None and not self.scale > 0:
            raise ValidationError("scale must be positive")

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.T_full, self.it, self.sigma_min, self.sigma_max)


@dataclass
class ChainState:
    t: int
    xbar: np.ndarray
    rng: np.random.Generator


@dataclass(frozen=True)
class StepCoefficients:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    branch: np.ndarray


def coefficients(sigma_t: float, sigma_prev: float, noise_std, eta: float, eta_b: float) -> StepCoefficients:
    """Vectorized step coefficients; ``noise_std`` is ``inf`` on unobserved coordinates."""
    if not sigma_prev < sigma_t:
        raise ValidationError(f"need sigma_prev < sigma_t, got {sigma_prev} >= {sigma_t}")
    sy = np.asarray(noise_std, dtype=float)
    branch = np.where(np.isinf(sy), BRANCH_UNOBSERVED,
                      np.where(sigma_prev < sy, BRANCH_NOISY, BRANCH_ANCHORED))
    A = np.zeros(sy.shape)
    B = np.zeros(sy.shape)
    D = np.zeros(sy.shape)
    c = math.sqrt(1.0 - eta * eta)

    m = branch == BRANCH_UNOBSERVED
    A[m] = c * sigma_prev / sigma_t
    D[m] = eta * sigma_prev

    m = branch == BRANCH_NOISY
    B[m] = c * sigma_prev / sy[m]
    D[m] = eta * sigma_prev

    m = branch == BRANCH_ANCHORED
    B[m] = eta_b
    radicand = sigma_prev ** 2 - (eta_b * sy[m]) ** 2
    assert np.all(radicand >= 0), "negative radicand in anchored branch"
    D[m] = np.sqrt(radicand)

    C = 1.0 - A - B
    return StepCoefficients(A, B, C, D, branch)


def step_coefficients(sigma_t: float, sigma_prev: float, s_i: float, sigma_d: float, eta: float, eta_b: float,
                      observed: bool = True):
    """Scalar form: returns ``(A, B, C, D, branch)`` with branch in ``"a"``, ``"b"``, ``"c"``."""
    if s_i < 0:
        raise ValidationError("singular value must be >= 0")
    sy = sigma_d / s_i if (observed and s_i > 0) else math.inf
    k = coefficients(sigma_t, sigma_prev, np.array([sy]), eta, eta_b)
    return (float(k.A[0]), float(k.B[0]), float(k.C[0]), float(k.D[0]), "abc"[int(k.branch[0])])


def init_state(meas: SpectralMeasurement, schedule: NoiseSchedule, rng: np.random.Generator) -> ChainState:
    """Draw ``xbar_T``: anchored on ``ybar`` wherever ``sigma_T >= sigma_y``, pure noise elsewhere."""
    sT = schedule.sigma(schedule.it)
    z = rng.standard_normal(meas.ybar.shape)
    anchored = meas.observed & (meas.noise_std <= sT)
    xbar = sT * z
    extra = np.sqrt(sT ** 2 - meas.noise_std[anchored] ** 2)
    xbar[anchored] = meas.ybar[anchored] + extra * z[anchored]
    return ChainState(schedule.it, xbar, rng)


def _check_finite(values: np.ndarray, t: int, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        raise NumericalError(f"{what} has {int(bad.sum())} non-finite value(s) at step t={t}")


def sample_step(state: ChainState, fact: SpectralFactorization, meas: SpectralMeasurement, denoiser: Denoiser,
                schedule: NoiseSchedule, config: SamplerConfig, shape: tuple[int, int],
                trace: Callable | None = None) -> ChainState:
    """Advance the chain from ``t`` to ``t - 1``."""
    t = state.t
    if t <= 0:
        raise ValidationError("chain already finished")
    sigma_t, sigma_prev = schedule.sigma(t), schedule.sigma(t - 1)
    x = from_spectral(fact, state.xbar).reshape(shape, order="F")
    x0 = np.asarray(denoiser(x, sigma_t), dtype=float)
    if x0.shape != shape:
        raise ValidationError(f"denoiser returned shape {x0.shape}, expected {shape}")
    _check_finite(x0, t, "denoiser output")
    xbar_theta = fact.Vt(x0.ravel(order="F"))
    k = coefficients(sigma_t, sigma_prev, meas.noise_std, config.eta, config.eta_b)
    if trace is not None:
        trace(t, sigma_t, sigma_prev, k, meas.noise_std)
    z = state.rng.standard_normal(state.xbar.shape)
    nxt = k.A * state.xbar + k.B * meas.ybar + k.C * xbar_theta + k.D * z
    _check_finite(nxt, t, "chain state")
    return ChainState(t - 1, nxt, state.rng)


def chain_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for chain ``index``; same as ``SeedSequence(seed).spawn(...)[index]``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True)
class PreparedProblem:
    """Everything a chain needs, in normalized units."""

    fact: SpectralFactorization
    meas: SpectralMeasurement
    shape: tuple[int, int]
    scale: float
    sigma_d: float


def operator_gain(fact: SpectralFactorization) -> float:
    """RMS row norm of ``BH``, ``||S||_2 / sqrt(N)``."""
    return float(np.linalg.norm(fact.S) / math.sqrt(fact.n_pixels))


def prepare(config: SamplerConfig, fact: SpectralFactorization, image: np.ndarray, shape: tuple[int, int],
            sigma_d: float | None = None) -> PreparedProblem:
    """Normalize a beamformed image and project it onto the singular basis.

    ``image`` is ``B y``. Unless ``config.scale`` is set, images are divided
    by the 99.9th percentile of ``|B y|`` over the operator gain so the
    reconstruction's brightest pixels land near 1.
    """
    image = np.asarray(image, dtype=float)
    if config.mode == "deno" and not fact.is_identity:
        fact = identity_factorization(image.size)
    if image.size != shape[0] * shape[1]:
        raise ValidationError(f"image of {image.size} pixels does not match shape {shape}")
    sigma_d = config.sigma_d if sigma_d is None else sigma_d
    if sigma_d is None:
        sigma_d = estimate_sigma_d(fact, image)
    scale = config.scale
    if scale is None:
        scale = float(np.percentile(np.abs(image), NORMALIZATION_PERCENTILE)) / operator_gain(fact)
        if not scale > 0:
            raise NumericalError("beamformed image is identically zero; cannot normalize")
    meas = spectral_measurement(fact, image / scale, sigma_d / scale)
    return PreparedProblem(fact, meas, tuple(shape), scale, float(sigma_d))


def run_prepared(problem: PreparedProblem, config: SamplerConfig, denoiser: Denoiser, rng: np.random.Generator,
                 trace: Callable | None = None) -> np.ndarray:
    schedule = config.schedule()
    state = init_state(problem.meas, schedule, rng)
    _check_finite(state.xbar, state.t, "initial state")
    while state.t > 0:
        state = sample_step(state, problem.fact, problem.meas, denoiser, schedule, config, problem.shape, trace)
    return from_spectral(problem.fact, state.xbar) * problem.scale


def run_chain(config: SamplerConfig, fact: SpectralFactorization, B: BeamformerMatrix, y, denoiser: Denoiser,
              shape: tuple[int, int], index: int = 0, trace: Callable | None = None) -> np.ndarray:
    """One reconstruction (a single posterior sample) from channel data ``y``."""
    problem = prepare(config, fact, das(B, y), shape)
    return run_prepared(problem, config, denoiser, chain_rng(config.seed, index), trace)


@dataclass(frozen=True)
class SampleBundle:
    """``M`` chain outputs sharing a grid and normalization."""

    images: np.ndarray  # (M, N)
    seed: int
    indices: tuple[int, ...]
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[0] < 1:
            raise ValidationError("bundle needs an (M, N) array with M >= 1")
        if len(self.indices) != self.images.shape[0]:
            raise ValidationError("one chain index per image")

    @property
    def M(self) -> int:
        return self.images.shape[0]


def sample_bundle(config: SamplerConfig, fact: SpectralFactorization, image: np.ndarray, denoiser: Denoiser,
                  shape: tuple[int, int], sigma_d: float | None = None, config_hash: str = "") -> SampleBundle:
    """Run ``config.samples`` independent chains on the beamformed image ``B y``.

    Chain ``i`` draws from :func:`chain_rng` ``(config.seed, i)``, so the
    result does not depend on ``config.threads``.
    """
    problem = prepare(config, fact, image, shape, sigma_d)
    indices = tuple(range(config.samples))

    def one(i):
        return run_prepared(problem, config, denoiser, chain_rng(config.seed, i))

    if config.threads > 1 and config.samples > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            images = list(pool.map(one, indices))
    else:
        images = [one(i) for i in indices]
    meta = {"scale": problem.scale, "sigma_d": problem.sigma_d, "mode": config.mode}
    return SampleBundle(np.stack(images), config.seed, indices, config_hash, meta)


def with_mode(config: SamplerConfig, mode: str) -> SamplerConfig:
    return replace(config, mode=mode)
