import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from spectradiff.diffusion import (LatentDDPM, ddpm_loss, linear_beta_schedule, p_sample_step,
                                   q_sample, reverse_step, sample)

N_DRAWS = 100_000


def test_schedule_endpoints_exact():
    s = linear_beta_schedule(500)
    assert s.betas[0] == 1e-4 and s.betas[-1] == 0.02
    assert np.all(np.diff(s.betas) > 0)
    np.testing.assert_array_equal(s.sigmas, np.sqrt(s.betas))


def test_alpha_bar_against_high_precision_product():
    s = linear_beta_schedule(500)
    getcontext().prec = 60
    prod = Decimal(1)
    for t in range(500):
        prod *= Decimal(1) - Decimal(float(s.betas[t]))
        assert abs(float(prod) - s.alpha_bars[t]) <= 1e-12 * float(prod)


def test_schedule_validation():
    with pytest.raises(ValueError):
        linear_beta_schedule(0)
    with pytest.raises(ValueError):
        linear_beta_schedule(10, beta_start=0.5, beta_end=0.1)


@pytest.mark.parametrize("t", [1, 250, 500])
def test_q_sample_moments(t):
    s = linear_beta_schedule(500)
    rng = np.random.default_rng(t)
    z0 = 1.5
    draws = q_sample(np.full(N_DRAWS, z0), t, rng.standard_normal(N_DRAWS), s)
    ab = s.alpha_bars[t - 1]
    mean, var = math.sqrt(ab) * z0, 1 - ab
    assert abs(draws.mean() - mean) < 3 * math.sqrt(var / N_DRAWS)
    assert abs(draws.var(ddof=1) - var) < 3 * var * math.sqrt(2 / (N_DRAWS - 1))


def test_q_sample_matches_iterated_chain():
    s = linear_beta_schedule(500)
    rng = np.random.default_rng(0)
    z0 = 1.5
    z = np.full(N_DRAWS, z0)
    for t in range(1, 501):
        z = math.sqrt(s.alphas[t - 1]) * z + math.sqrt(s.betas[t - 1]) * rng.standard_normal(N_DRAWS)
        if t in (1, 250, 500):
            closed = q_sample(np.full(N_DRAWS, z0), t, rng.standard_normal(N_DRAWS), s)
            var = 1 - s.alpha_bars[t - 1]
            se_mean = math.sqrt(2 * var / N_DRAWS)
            se_var = var * math.sqrt(2 * 2 / (N_DRAWS - 1))
            assert abs(z.mean() - closed.mean()) < 3 * se_mean
            assert abs(z.var(ddof=1) - closed.var(ddof=1)) < 3 * se_var


def test_q_sample_per_sample_steps():
    s = linear_beta_schedule(10)
    z0, eps = np.ones((2, 3)), np.zeros((2, 3))
    out = q_sample(z0, np.array([1, 10]), eps, s)
    np.testing.assert_allclose(out[0], np.sqrt(s.alpha_bars[0]))
    np.testing.assert_allclose(out[1], np.sqrt(s.alpha_bars[9]))
    with pytest.raises(ValueError):
        q_sample(z0, 11, eps, s)


def test_reverse_step_hand_case():
    expected = (1 / math.sqrt(0.99)) * (1 - 0.01 * 0.5 / math.sqrt(0.1))
    assert reverse_step(1.0, 0.5, 0.99, 0.9, 0.01, 0.0) == pytest.approx(expected, abs=1e-12)
    assert abs(reverse_step(1.0, 0.5, 0.99, 0.9, 0.01, 0.0) - 0.9891468) < 1e-6
    assert reverse_step(2.0, 0.0, 0.99, 0.9, 0.01, 0.0) == pytest.approx(2 / math.sqrt(0.99))


def exact_denoiser(z0, schedule):
    """The true noise for data concentrated at ``z0``."""
    def eps(z_t, t, y):
        ab = schedule.alpha_bars[np.asarray(t) - 1].reshape(-1, *([1] * (z_t.ndim - 1)))
        return (z_t - np.sqrt(ab) * z0) / np.sqrt(1 - ab)
    return eps


def test_final_step_inverts_exact_noise():
    s = linear_beta_schedule(500)
    rng = np.random.default_rng(1)
    z0 = rng.standard_normal((3, 2, 4, 4))
    z1 = q_sample(z0, 1, rng.standard_normal(z0.shape), s)
    out = p_sample_step(exact_denoiser(z0, s), s, z1, 1, np.zeros(3, int), rng)
    assert np.max(np.abs(out - z0)) < 1e-8


def test_sampler_recovers_point_mass():
    s = linear_beta_schedule(100, 5e-4, 0.1)
    c = np.array([[0.5, -1.0], [2.0, 0.0]])
    out = sample(exact_denoiser(c, s), s, 0, 4, c.shape, np.random.default_rng(2))
    assert out.shape == (4, 2, 2)
    assert np.max(np.abs(out - c)) < 1e-8


def test_sample_zero_count():
    s = linear_beta_schedule(5)
    assert sample(None, s, 0, 0, (2, 2), np.random.default_rng(0)).shape == (0, 2, 2)


def test_ddpm_loss_and_gradient():
    s = linear_beta_schedule(20)
    z0 = np.random.default_rng(3).standard_normal((4, 2, 2, 2))
    seen = {}

    def den(z_t, t, y):
        seen["z_t"] = z_t
        return 0.5 * z_t

    loss, t, grad = ddpm_loss(den, s, z0, np.zeros(4, int), np.random.default_rng(4))
    rng = np.random.default_rng(4)
    t_ref = rng.integers(1, 21, size=4)
    eps = rng.standard_normal(z0.shape)
    np.testing.assert_array_equal(t, t_ref)
    np.testing.assert_allclose(seen["z_t"], q_sample(z0, t_ref, eps, s))
    assert loss == pytest.approx(np.mean((0.5 * seen["z_t"] - eps) ** 2))
    np.testing.assert_allclose(grad, 2 * (0.5 * seen["z_t"] - eps) / eps.size)


def tiny_ddpm(seed=0, epochs=3):
    return LatentDDPM(steps=20, base_channels=4, depth=1, time_embed_dim=8, epochs=epochs,
                      batch_size=4, random_state=seed)


def test_latent_ddpm_fit_sample_and_state():
    rng = np.random.default_rng(5)
    Z = rng.standard_normal((8, 4, 4, 2)) * 3 + 1
    y = np.repeat([0, 1], 4)
    m = tiny_ddpm().fit(Z, y)
    assert len(m.history_) == 3 and np.isfinite(m.history_[-1]["loss"])
    out = m.sample(1, 3, random_state=0)
    assert out.shape == (3, 4, 4, 2)
    np.testing.assert_array_equal(out, m.sample(1, 3, random_state=0))
    back = LatentDDPM.from_state(*m.get_state())
    np.testing.assert_array_equal(back.sample(1, 3, random_state=0), out)
    with pytest.raises(ValueError):
        m.sample(2, 1)


def test_latent_ddpm_seeded_training():
    Z = np.random.default_rng(6).standard_normal((4, 4, 4, 2))
    y = np.array([0, 1, 0, 1])
    a, b = tiny_ddpm(1, 2).fit(Z, y), tiny_ddpm(1, 2).fit(Z, y)
    np.testing.assert_array_equal(a.sample(0, 2, random_state=0), b.sample(0, 2, random_state=0))
