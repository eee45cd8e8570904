import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from tsnl.nde import (ConditionalFlow, FlowConfig, MadeLayer, TrainConfig, TrainingError, build_masks,
                      count_parameters, flow_logprob, flow_sample, load_flow, param_count, save_flow, train_flow,
                      zero_flow)

SMALL = FlowConfig(made_layers=2, hidden_layers=2, hidden_units=16)


def _randomize(flow, seed=0, scale=0.3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in flow.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return flow


def test_zero_flow_values():
    assert flow_logprob(zero_flow(1), [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert flow_logprob(zero_flow(2), [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi))


def test_zero_flow_samples_standard_normal(rng):
    s = flow_sample(zero_flow(2), None, rng, n=10_000)
    assert np.all(np.abs(s.mean(0)) < 0.05) and np.all(np.abs(s.std(0) - 1) < 0.05)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.integers(0, 1000))
def test_autoregressive_masking(D, d_c, seed):
    layer = MadeLayer(D, d_c, [8, 8], "tanh", np.random.default_rng(seed))
    with torch.no_grad():
        for p in layer.parameters():
            p.copy_(torch.randn(p.shape, dtype=p.dtype))
        x = torch.randn(1, D, dtype=torch.float64)
        c = torch.randn(1, d_c, dtype=torch.float64) if d_c else None
        mu, ls = layer(x, c)
        for d in range(D):
            x2 = x.clone()
            x2[0, d:] += torch.randn(D - d, dtype=torch.float64)
            mu2, ls2 = layer(x2, c)
            # heads 0..d only see inputs < their own index
            assert torch.allclose(mu[0, : d + 1], mu2[0, : d + 1]) and torch.allclose(ls[0, : d + 1], ls2[0, : d + 1])


def test_context_changes_every_head(rng):
    layer = MadeLayer(3, 2, [16, 16], "tanh", rng)
    x = torch.randn(1, 3, dtype=torch.float64)
    with torch.no_grad():
        a = torch.cat(layer(x, torch.zeros(1, 2, dtype=torch.float64)), -1)
        b = torch.cat(layer(x, torch.ones(1, 2, dtype=torch.float64)), -1)
    assert torch.all((a - b).abs() > 0)


def test_D1_heads_ignore_event(rng):
    layer = MadeLayer(1, 2, [8], "tanh", rng)
    c = torch.randn(1, 2, dtype=torch.float64)
    with torch.no_grad():
        a = layer(torch.zeros(1, 1, dtype=torch.float64), c)
        b = layer(torch.full((1, 1), 5.0, dtype=torch.float64), c)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_build_masks_degrees(rng):
    deg, masks = build_masks(3, 2, [10, 10], rng)
    assert masks[-1].shape[0] == 3


def test_roundtrip_and_logdet():
    flow = _randomize(ConditionalFlow(3, 2, SMALL, seed=1))
    u = torch.randn(50, 3, dtype=torch.float64)
    c = torch.randn(50, 2, dtype=torch.float64)
    with torch.no_grad():
        y = flow.forward_transform(u, c)
        u2, logdet = flow.inverse(y, c)
    assert (u2 - u).abs().max() < 1e-8
    # change of variables against an autograd Jacobian
    yi = y[0].clone()
    J = torch.autograd.functional.jacobian(lambda v: flow.inverse(v[None], c[:1])[0][0], yi)
    assert float(torch.linalg.slogdet(J)[1]) == pytest.approx(float(logdet[0]), abs=1e-10)


def test_density_normalizes_D2():
    flow = _randomize(ConditionalFlow(2, 1, SMALL, seed=3), seed=3, scale=0.2)
    g = np.linspace(-12, 12, 401)
    Y = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    p = np.exp(flow_logprob(flow, Y, np.full((Y.shape[0], 1), 0.7)))
    assert p.sum() * (g[1] - g[0]) ** 2 == pytest.approx(1.0, abs=0.02)


def test_gradients_match_finite_differences(rng):
    flow = _randomize(ConditionalFlow(2, 1, FlowConfig(2, 2, 8), seed=4), seed=4)
    y = torch.tensor(rng.normal(size=(16, 2)))
    c = torch.tensor(rng.normal(size=(16, 1)))
    loss = lambda: -flow.log_prob(y, c).mean()
    flow.zero_grad()
    loss().backward()
    params = list(flow.parameters())
    for _ in range(20):
        p = params[rng.integers(len(params))]
        idx = tuple(rng.integers(s) for s in p.shape)
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + 1e-5
            up = loss().item()
            p[idx] = orig - 1e-5
            down = loss().item()
            p[idx] = orig
        fd, an = (up - down) / 2e-5, p.grad[idx].item()
        assert abs(fd - an) <= 1e-4 * max(1.0, abs(an))


def test_training_gaussian_oracle(rng):
    data = rng.normal(3.0, 2.0, size=(10_000, 1))
    flow = ConditionalFlow(1, 0, FlowConfig(1, 1, 8), seed=0)
    res = train_flow(flow, data, None, TrainConfig(lr=1e-2), rng)
    s = flow_sample(flow, None, rng, n=20_000)
    assert 2.8 <= s.mean() <= 3.2 and 1.8 <= s.std() <= 2.2
    assert res.best_val_loss < res.val_losses[0]


def test_training_single_record_terminates(rng):
    flow = ConditionalFlow(3, 1, SMALL, seed=0)
    res = train_flow(flow, rng.normal(size=(1, 3)), np.ones((1, 1)), TrainConfig(max_epochs=5), rng)
    assert res.degenerate_validation and res.epochs <= 5


def test_training_nan_raises(rng):
    flow = ConditionalFlow(1, 0, FlowConfig(1, 1, 4), seed=0)
    with pytest.raises((TrainingError, ValueError)):
        train_flow(flow, np.array([[np.nan], [1.0], [2.0]]), None, TrainConfig(max_epochs=3), rng)


def test_param_count_formula():
    assert param_count(5, 5, 32, 1, 1, 1) == 21120
    assert param_count(5, 5, 32, 10, 1, 1) == 22560
    assert param_count(1, 1, 1, 1, 1, 1) == 4
    for L in (1, 3, 7):
        flow = ConditionalFlow(1, L + 1, FlowConfig(), seed=0)
        assert count_parameters(flow, "formula") == param_count(5, 5, 32, L, 1, 1)
        assert count_parameters(flow, "all") > count_parameters(flow, "formula")
        assert count_parameters(flow, "unmasked") <= count_parameters(flow, "all")


def test_input_width():
    L, d_y, d_theta = 4, 2, 3
    flow = ConditionalFlow(d_y, L * d_y + d_theta, SMALL, seed=0)
    assert flow.layers[0].weights[0].shape[1] == L * d_y + d_y + d_theta


def test_save_load_exact(tmp_path, rng):
    flow = _randomize(ConditionalFlow(2, 3, SMALL, seed=0))
    flow.fit_standardization(rng.normal(size=(10, 2)), rng.normal(size=(10, 3)))
    save_flow(tmp_path / "f.npz", flow)
    back = load_flow(tmp_path / "f.npz")
    assert back.checksum() == flow.checksum()
    y, c = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
    np.testing.assert_array_equal(flow_logprob(back, y, c), flow_logprob(flow, y, c))
