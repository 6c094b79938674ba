import math
from dataclasses import replace

import numpy as np
import pytest

from drus.beamformer import ApodizationSpec, apodization_weights, build_beamformer, das
from drus.denoisers import GaussianDenoiser, WaveletDenoiser
from drus.errors import NumericalError, ValidationError
from drus.sampler import (
    BRANCH_ANCHORED,
    BRANCH_NOISY,
    BRANCH_UNOBSERVED,
    PreparedProblem,
    SamplerConfig,
    chain_rng,
    coefficients,
    init_state,
    make_schedule,
    operator_gain,
    prepare,
    run_chain,
    run_prepared,
    sample_bundle,
    step_coefficients,
)
from drus.spectral import SpectralFactorization, compose_BH, factorize, identity_factorization, spectral_measurement
from drus.system_matrix import apply_forward, build_system_matrix

from conftest import make_setup


class TestSchedule:
    def test_endpoints(self):
        s = make_schedule(1000, 50, 1e-4, 1.0)
        assert s.it == 50
        assert s.levels[0] == 1.0 and s.levels[-1] == pytest.approx(1e-4, rel=1e-12)
        assert np.all(np.diff(s.levels) < 0)
        assert s.sigma(50) == 1.0 and s.sigma(0) == 0.0

    def test_full_ladder(self):
        s = make_schedule(20, 20, 1e-2, 1.0)
        full = 1.0 * (1e-2) ** (np.arange(20) / 19)
        np.testing.assert_allclose(s.levels, full, rtol=1e-14)

    @pytest.mark.parametrize("args", [(10, 11, 1e-3, 1.0), (10, 5, 1.0, 0.5), (10, 0, 1e-3, 1.0)])
    def test_bad(self, args):
        with pytest.raises(ValidationError):
            make_schedule(*args)


class TestCoefficients:
    @pytest.mark.parametrize("eta,eta_b", [(0.85, 1.0), (0.0, 1.0), (1.0, 0.5), (0.3, 0.0)])
    def test_constraints_every_branch(self, eta, eta_b):
        st, sp = 0.8, 0.5
        sy = np.array([np.inf, 2.0, 0.6, 0.3, 0.0, 0.5])
        k = coefficients(st, sp, sy, eta, eta_b)
        np.testing.assert_allclose(k.A + k.B + k.C, 1.0, rtol=0, atol=1e-12)
        var = (k.A * st) ** 2 + np.where(np.isinf(sy), 0.0, (k.B * np.where(np.isinf(sy), 0, sy)) ** 2) + k.D ** 2
        np.testing.assert_allclose(var, sp ** 2, rtol=0, atol=1e-12)
        assert list(k.branch) == [BRANCH_UNOBSERVED, BRANCH_NOISY, BRANCH_NOISY,
                                  BRANCH_ANCHORED, BRANCH_ANCHORED, BRANCH_ANCHORED]

    def test_ancestral_unobserved(self):
        A, B, C, D, br = step_coefficients(0.9, 0.4, 0.0, 0.1, eta=1.0, eta_b=1.0)
        assert br == "a" and A == 0.0 and C == 1.0 and D == pytest.approx(0.4)

    def test_anchored_mean_is_measurement(self):
        A, B, C, D, br = step_coefficients(0.9, 0.4, s_i=2.0, sigma_d=0.2, eta=0.85, eta_b=1.0)
        assert br == "c" and A == 0.0 and B == 1.0 and C == 0.0
        assert D == pytest.approx(math.sqrt(0.4 ** 2 - 0.1 ** 2))

    def test_noisy_branch(self):
        A, B, C, D, br = step_coefficients(0.9, 0.4, s_i=0.5, sigma_d=0.5, eta=0.6, eta_b=1.0)
        assert br == "b"
        assert B == pytest.approx(0.8 * 0.4 / 1.0) and D == pytest.approx(0.6 * 0.4)

    def test_requires_decreasing_levels(self):
        with pytest.raises(ValidationError):
            coefficients(0.1, 0.2, np.array([1.0]), 0.85, 1.0)


@pytest.fixture(scope="module")
def problem():
    s = make_setup(n_z=8, n_x=8, elements=32)
    H = build_system_matrix(s)
    B = build_beamformer(H, apodization_weights(s.probe, s.grid, ApodizationSpec()))
    f = factorize(compose_BH(B, H))
    o = np.random.default_rng(0).standard_normal(s.grid.N)
    y = apply_forward(H, o)
    y = y + 0.02 * np.abs(y).max() * np.random.default_rng(1).standard_normal(y.size)
    return s, H, B, f, y


def test_constraint_identity_over_full_run(problem):
    s, H, B, f, y = problem
    seen = set()
    worst = 0.0

    def trace(t, st, sp, k, sy):
        nonlocal worst
        finite = np.where(np.isinf(sy), 0.0, sy)
        worst = max(worst, np.abs(k.A + k.B + k.C - 1).max(),
                    np.abs((k.A * st) ** 2 + (k.B * finite) ** 2 + k.D ** 2 - sp ** 2).max())
        seen.update(np.unique(k.branch).tolist())

    fact = SpectralFactorization(f.U, f.S, f.V, f.residual_norm, f.method, rank_tol=1e-3)
    cfg = SamplerConfig(it=50, sigma_d=None)
    run_chain(cfg, fact, B, y, WaveletDenoiser(levels=1), s.grid.shape, trace=trace)
    assert worst < 1e-12
    assert seen == {BRANCH_UNOBSERVED, BRANCH_NOISY, BRANCH_ANCHORED}


class TestChain:
    def test_denoiser_called_it_times(self, problem):
        s, H, B, f, y = problem
        calls = []

        def den(x, sigma):
            calls.append(sigma)
            return x

        run_chain(SamplerConfig(it=17), f, B, y, den, s.grid.shape)
        assert len(calls) == 17
        assert calls[0] == 1.0 and calls == sorted(calls, reverse=True)

    def test_seed_determinism(self, problem):
        s, H, B, f, y = problem
        cfg = SamplerConfig(it=10, seed=4)
        a = run_chain(cfg, f, B, y, WaveletDenoiser(1), s.grid.shape)
        b = run_chain(cfg, f, B, y, WaveletDenoiser(1), s.grid.shape)
        c = run_chain(replace(cfg, seed=5), f, B, y, WaveletDenoiser(1), s.grid.shape)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_bundle_independent_of_threads(self, problem):
        s, H, B, f, y = problem
        img = das(B, y)
        cfg = SamplerConfig(it=8, samples=4, seed=2)
        one = sample_bundle(cfg, f, img, WaveletDenoiser(1), s.grid.shape)
        many = sample_bundle(replace(cfg, threads=3), f, img, WaveletDenoiser(1), s.grid.shape)
        np.testing.assert_array_equal(one.images, many.images)
        assert one.indices == (0, 1, 2, 3)
        np.testing.assert_array_equal(one.images[0], run_chain(cfg, f, B, y, WaveletDenoiser(1), s.grid.shape))

    def test_chain_streams_match_spawn(self):
        a = chain_rng(7, 2).standard_normal(5)
        b = np.random.default_rng(np.random.SeedSequence(7).spawn(3)[2]).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_init_noise_free(self):
        f = identity_factorization(16)
        meas = spectral_measurement(f, np.arange(16.0), 0.0)
        sched = make_schedule(100, 10, 1e-3, 2.0)
        st = init_state(meas, sched, np.random.default_rng(0))
        z = np.random.default_rng(0).standard_normal(16)
        np.testing.assert_allclose(st.xbar, np.arange(16.0) + 2.0 * z, rtol=0, atol=1e-15)

    def test_deterministic_when_D_vanishes(self):
        # all coordinates unobserved and eta = 0: no fresh noise after init
        n = 16
        f = SpectralFactorization(np.eye(n), np.zeros(n), np.eye(n), 0.0, "exact")
        meas = spectral_measurement(f, np.zeros(n), 0.0)
        cfg = SamplerConfig(eta=0.0, it=5, scale=1.0, sigma_d=0.0)
        prob = PreparedProblem(f, meas, (4, 4), 1.0, 0.0)
        den = lambda x, s: 0.5 * x  # noqa: E731
        seq = np.random.SeedSequence(0)
        x1 = run_prepared(prob, cfg, den, np.random.default_rng(seq))
        # D = 0, so the output is the init draw pushed through A x + C f(x)
        sched = cfg.schedule()
        x = 1.0 * np.random.default_rng(seq).standard_normal(n)
        for t in range(sched.it, 0, -1):
            a = sched.sigma(t - 1) / sched.sigma(t)
            x = a * x + (1 - a) * 0.5 * x
        np.testing.assert_allclose(x1, x, rtol=1e-12)

    def test_nan_denoiser(self, problem):
        s, H, B, f, y = problem
        with pytest.raises(NumericalError, match="t=5"):
            run_chain(SamplerConfig(it=5), f, B, y, lambda x, sg: x * np.nan, s.grid.shape)

    def test_wrong_shape_denoiser(self, problem):
        s, H, B, f, y = problem
        with pytest.raises(ValidationError):
            run_chain(SamplerConfig(it=5), f, B, y, lambda x, sg: x.T[:3], s.grid.shape)

    def test_normalization(self, problem):
        s, H, B, f, y = problem
        img = das(B, y)
        p = prepare(SamplerConfig(), f, img, s.grid.shape, sigma_d=0.0)
        assert p.scale == pytest.approx(np.percentile(np.abs(img), 99.9) / operator_gain(f))
        assert operator_gain(f) == pytest.approx(np.linalg.norm(compose_BH(B, H)) / math.sqrt(s.grid.N))
        q = prepare(SamplerConfig(scale=2.0), f, img, s.grid.shape, sigma_d=0.0)
        assert q.scale == 2.0

    def test_deno_mode_uses_identity(self, problem):
        s, H, B, f, y = problem
        p = prepare(SamplerConfig(mode="deno"), f, das(B, y), s.grid.shape, sigma_d=0.1)
        assert p.fact.is_identity
        assert p.meas.noise_std == pytest.approx(np.full(s.grid.N, 0.1 / p.scale))

    def test_zero_image(self, problem):
        s, H, B, f, y = problem
        with pytest.raises(NumericalError):
            prepare(SamplerConfig(), f, np.zeros(s.grid.N), s.grid.shape, sigma_d=0.0)


def test_monte_carlo_matches_moment_recursion():
    """Linear-Gaussian chain: sample moments against exact moment propagation.

    With a Gaussian MMSE denoiser each step is affine in the state, so the
    mean and covariance of the chain output follow a closed recursion that
    does not touch the sampler code.
    """
    s = make_setup(n_z=8, n_x=8, dx=0.15e-3, elements=128)
    H = build_system_matrix(s)
    B = build_beamformer(H, apodization_weights(s.probe, s.grid, ApodizationSpec()))
    BH = compose_BH(B, H)
    BH = BH / np.linalg.norm(BH, 2)
    f = factorize(BH)
    corr = lambda ell: (lambda lag: np.exp(-0.5 * (lag / ell) ** 2))  # noqa: E731
    den = GaussianDenoiser.stationary(8, 8, corr(1.5), corr(1.0), 1.0)
    Sig = den.covariance()
    rng = np.random.default_rng(0)
    o = np.linalg.cholesky(Sig + 1e-12 * np.eye(64)) @ rng.standard_normal(64)
    sd = 0.05
    b = BH @ o + sd * rng.standard_normal(64)
    M = 200
    cfg = SamplerConfig(it=50, samples=M, seed=1, scale=1.0, sigma_d=sd, sigma_max=50.0, sigma_min=1e-3)
    X = sample_bundle(cfg, f, b, den, (8, 8)).images

    V, S = f.V, f.S
    obs = f.observed
    sy = np.where(obs, sd / np.where(obs, S, 1.0), np.inf)
    ybar = np.where(obs, (f.U.T @ b) / np.where(obs, S, 1.0), 0.0)
    sched = cfg.schedule()
    sT = sched.sigma(sched.it)
    anch = obs & (sy <= sT)
    mean = np.where(anch, ybar, 0.0)
    cov = np.diag(np.where(anch, sT ** 2 - np.where(anch, sy, 0.0) ** 2, sT ** 2))
    c = math.sqrt(1 - cfg.eta ** 2)
    for t in range(sched.it, 0, -1):
        st, sp = sched.sigma(t), sched.sigma(t - 1)
        G = V.T @ Sig @ np.linalg.inv(Sig + st ** 2 * np.eye(64)) @ V
        A, Bc, D = np.zeros(64), np.zeros(64), np.zeros(64)
        for i in range(64):
            if not obs[i]:
                A[i], D[i] = c * sp / st, cfg.eta * sp
            elif sp < sy[i]:
                Bc[i], D[i] = c * sp / sy[i], cfg.eta * sp
            else:
                Bc[i], D[i] = cfg.eta_b, math.sqrt(sp ** 2 - (cfg.eta_b * sy[i]) ** 2)
        T = np.diag(A) + np.diag(1 - A - Bc) @ G
        mean = T @ mean + Bc * ybar
        cov = T @ cov @ T.T + np.diag(D ** 2)
    pm, pc = V @ mean, V @ cov @ V.T
    z = np.abs(X.mean(0) - pm) / np.sqrt(np.diag(pc) / M)
    assert z.max() < 4.5
    assert X.var(0, ddof=1).sum() / np.trace(pc) == pytest.approx(1.0, abs=0.1)
