import numpy as np
import pytest

from tsnl.priors import LogNormal, Normal, Prior, Uniform
from tsnl.samplers import McmcConfig, PosteriorSamples, ess_sample, rwm_sample, sample_posterior


def std_normal(z):
    return -0.5 * float(z @ z)


def test_rwm_standard_normal(rng):
    ch = rwm_sample(std_normal, np.zeros(1), 10_000, 2.0, rng)
    s = ch.samples[1000:, 0]
    assert abs(s.mean()) < 0.1 and abs(s.var() - 1) < 0.2


def test_rwm_tiny_scale_accepts_everything(rng):
    ch = rwm_sample(std_normal, np.zeros(1), 500, 1e-8, rng)
    assert ch.acceptance_rate > 0.99 and np.abs(ch.samples).max() < 1e-6


def test_rwm_rejects_off_support(rng):
    target = lambda z: 0.0 if 0 <= z[0] <= 1 else -np.inf
    ch = rwm_sample(target, np.array([0.5]), 2000, 0.5, rng)
    assert np.all((ch.samples >= 0) & (ch.samples <= 1))


def test_rwm_requires_finite_start(rng):
    with pytest.raises(ValueError):
        rwm_sample(lambda z: -np.inf, np.zeros(1), 10, 0.1, rng)


def test_ess_flat_likelihood_gives_prior(rng):
    ch = ess_sample(lambda z: 0.0, (np.array([1.0]), np.array([2.0])), np.array([1.0]), 20_000, rng)
    assert ch.samples.mean() == pytest.approx(1.0, abs=0.1)
    assert ch.samples.std() == pytest.approx(2.0, abs=0.1)
    assert ch.acceptance_rate == 1.0


def test_ess_conjugate(rng):
    # prior N(0, 1), likelihood N(y=2; z, 0.5^2) -> posterior N(1.6, 0.2)
    ll = lambda z: -0.5 * ((2.0 - z[0]) / 0.5) ** 2
    ch = ess_sample(ll, (np.zeros(1), np.ones(1)), np.zeros(1), 20_000, rng)
    s = ch.samples[2000:, 0]
    assert s.mean() == pytest.approx(1.6, abs=0.05) and s.var() == pytest.approx(0.2, abs=0.03)


def test_ess_rejects_non_gaussian_prior(rng):
    with pytest.raises(ValueError, match="rwm"):
        ess_sample(lambda z: 0.0, Prior([Uniform(-1, 1)]), np.zeros(1), 10, rng)


def test_sample_posterior_maps_to_support(rng):
    prior = Prior([LogNormal(-2, 1), Uniform(-1, 1)])
    post = sample_posterior(lambda th: 0.0, prior, np.array([0.1, 0.2]), McmcConfig(steps=500), rng)
    assert len(post) == 400 and prior.in_support(post.samples).all()


def test_posterior_samples_helpers(tmp_path):
    ps = PosteriorSamples(np.arange(10.0))
    assert ps.samples.shape == (10, 1)
    assert len(ps.burn(0.2)) == 8 and len(ps.thin(3)) == 3
    ps.to_csv(tmp_path / "c.csv", ["q"])
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "step,q,log_target,accepted"


def test_config_validation():
    with pytest.raises(ValueError):
        McmcConfig(steps=0)
    with pytest.raises(ValueError):
        McmcConfig(sampler="hmc")
