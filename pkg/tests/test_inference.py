import math
import warnings

import numpy as np
import pytest

from tsnl.inference import (LagChoice, Strategy, TruncatedLikelihood, amortized_extend, build_round_dataset,
                            exact_grid_posterior, select_lag, snl_run, truncated_loglik, tsnl_run,
                            tsnl_training_arrays)
from tsnl.models import make_model
from tsnl.nde import ConditionalFlow, FlowConfig, TrainConfig, train_flow, zero_flow
from tsnl.priors import LogNormal, PointMass, Prior
from tsnl.samplers import McmcConfig
from tsnl.ssm import CostLedger, LaggedDataset, simulate_batch, simulate_trajectory

FAST_FLOW = FlowConfig(2, 2, 16)
FAST_TRAIN = TrainConfig(max_epochs=30, lr=5e-3)
FAST_MCMC = McmcConfig(steps=200)


def _ds(n, T=4, offset=0.0):
    obs = offset + np.arange(n)[:, None, None] + np.zeros((n, T, 1))
    return LaggedDataset(np.arange(n, dtype=float)[:, None], obs, 2)


def test_strategy_all_and_last():
    a, b = _ds(3), _ds(5)
    assert build_round_dataset("all", a, b, np.zeros(4), 5).n_trajectories == 8
    assert build_round_dataset(Strategy.LAST, a, b, np.zeros(4), 5) is b


def test_strategy_best_ranking():
    # trajectories at constant levels 1.0, 0.5, 2.0 -> distances 2, 1, 4 from zero (T = 4)
    ds = LaggedDataset(np.arange(3.0)[:, None], np.array([1.0, 0.5, 2.0])[:, None, None] * np.ones((3, 4, 1)), 2)
    best = build_round_dataset("best", None, ds, np.zeros(4), 2)
    assert sorted(best.observations[:, 0, 0].tolist()) == [0.5, 1.0]
    assert len(best) == 2 * 4


def test_strategy_best_too_few():
    with pytest.warns(UserWarning):
        out = build_round_dataset("best", None, _ds(2), np.zeros(4), 5)
    assert out.n_trajectories == 2


def test_truncated_zero_flow(rng):
    y = rng.normal(size=(7, 1))
    ll = truncated_loglik(zero_flow(1, 3 + 1), y, [0.2], 3)
    assert ll == pytest.approx(float(np.sum(-0.5 * y ** 2 - 0.5 * math.log(2 * math.pi))))
    assert ll == pytest.approx(TruncatedLikelihood(zero_flow(1, 4), y, 3)([0.2]))


def test_truncated_single_step():
    assert truncated_loglik(zero_flow(1, 3), [[0.0]], [0.0], 2) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_truncated_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        truncated_loglik(zero_flow(1, 3), rng.normal(size=(5, 1)), [0.1], 5)


def test_select_lag_iid_and_tau(rng):
    y = rng.normal(size=2000)
    assert select_lag(y, 20, 0.2).L == 1
    assert select_lag(np.cumsum(y), 20, 1.0).L == 1


def test_select_lag_ar1(rng):
    T, phi = 20_000, 0.9
    e = rng.normal(size=T)
    y = np.empty(T)
    y[0] = e[0]
    for t in range(1, T):
        y[t] = phi * y[t - 1] + e[t]
    choice = select_lag(y, 30, 0.2)
    assert isinstance(choice, LagChoice) and abs(choice.L - 16) <= 2 and choice.L <= 30


def test_select_lag_constant_and_short():
    with pytest.warns(UserWarning):
        assert select_lag(np.ones(30), 5).L == 1
    with pytest.raises(ValueError):
        select_lag(np.zeros(5), 5)


def test_tsnl_single_simulation_end_to_end(rng):
    m = make_model("lgssm1d")
    y = simulate_trajectory(m, [0.1], 300, rng).observations
    led = CostLedger()
    res = tsnl_run(m, m.prior, y, 3, 1, 1, flow_cfg=FAST_FLOW, train_cfg=FAST_TRAIN, mcmc_cfg=FAST_MCMC,
                   rng=rng, ledger=led)
    assert led.dynamics_calls == 300 and len(res.dataset) == 300
    assert m.prior.in_support(res.samples.samples).all()


def test_ledger_and_record_counts(rng):
    m = make_model("lgssm1d")
    y = simulate_trajectory(m, [0.1], 40, rng).observations
    led_t, led_s = CostLedger(), CostLedger()
    rt = tsnl_run(m, m.prior, y, 2, 2, 3, flow_cfg=FAST_FLOW, train_cfg=FAST_TRAIN, mcmc_cfg=FAST_MCMC,
                  rng=rng, ledger=led_t)
    rs = snl_run(m, m.prior, y, 2, 3, flow_cfg=FAST_FLOW, train_cfg=FAST_TRAIN, mcmc_cfg=FAST_MCMC,
                 rng=rng, ledger=led_s)
    assert led_t.dynamics_calls == led_s.dynamics_calls == 2 * 3 * 40
    assert len(tsnl_training_arrays(rt.dataset, m.prior)[0]) == 40 * rs.dataset.n_trajectories
    assert rt.flow.d_c == 2 + 1 and rs.flow.D == 40 and rs.flow.d_c == 1
    assert [d.dynamics_calls for d in rt.diagnostics] == [120, 240]


def test_snl_single_simulation_terminates(rng):
    m = make_model("lgssm1d")
    y = simulate_trajectory(m, [0.1], 10, rng).observations
    res = snl_run(m, m.prior, y, 1, 1, flow_cfg=FAST_FLOW, train_cfg=FAST_TRAIN, mcmc_cfg=FAST_MCMC, rng=rng)
    assert len(res.samples) == 160


def test_point_mass_prior(rng):
    m = make_model("lgssm1d")
    prior = Prior([PointMass(0.1)])
    y = simulate_trajectory(m, [0.1], 30, rng).observations
    res = tsnl_run(m, prior, y, 2, 2, 3, flow_cfg=FAST_FLOW, train_cfg=FAST_TRAIN, mcmc_cfg=FAST_MCMC,
                   rng=rng)
    assert np.all(res.samples.samples == 0.1)


def test_diagnostics_csv(tmp_path, rng):
    m = make_model("lgssm1d")
    y = simulate_trajectory(m, [0.1], 20, rng).observations
    res = tsnl_run(m, m.prior, y, 2, 2, 2, flow_cfg=FAST_FLOW, train_cfg=FAST_TRAIN, mcmc_cfg=FAST_MCMC, rng=rng)
    res.write_diagnostics(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "round,train_loss,val_loss,acceptance_rate,dynamics_calls" and len(lines) == 3


def test_proposals_follow_previous_posterior(rng):
    """Round-1 proposals are drawn from the round-0 surrogate chain."""
    m = make_model("lgssm1d")
    y = simulate_trajectory(m, [0.1], 100, rng).observations
    res = tsnl_run(m, m.prior, y, 2, 2, 50, flow_cfg=FAST_FLOW, train_cfg=FAST_TRAIN,
                   mcmc_cfg=McmcConfig(steps=1000), rng=rng)
    prop0, prop1 = res.proposals
    # the prior spans decades; the surrogate posterior is much tighter
    assert np.log(prop1).std() < 0.5 * np.log(prop0).std()


def _iid_setup(rng, T=200, N=50):
    m = make_model("lgssm1d-iid")
    thetas, trajs, _ = simulate_batch(m, lambda s: m.prior.sample(s), N, T, rng)
    ds = LaggedDataset(thetas, np.stack([t.observations for t in trajs]), 1)
    ev, ctx = tsnl_training_arrays(ds, m.prior)
    flow = ConditionalFlow(1, 2, FlowConfig(2, 2, 32), seed=0)
    train_flow(flow, ev, ctx, TrainConfig(lr=3e-3, max_epochs=100), rng)
    return m, flow


def test_truncated_matches_kalman_when_iid(rng):
    m, flow = _iid_setup(rng)
    y = simulate_trajectory(m, [0.1], 100, rng).observations
    for q in (0.05, 0.1, 0.2):
        approx = truncated_loglik(flow, y, [q], 1, m.prior)
        exact = m.exact_loglik([q], y)
        assert abs(approx - exact) <= 0.05 * abs(exact)


def test_amortized_extend_contract(rng):
    m, flow = _iid_setup(rng, N=20)
    y = simulate_trajectory(m, [0.1], 60, rng).observations
    lik = TruncatedLikelihood(flow, y, 1, m.prior)
    same = TruncatedLikelihood(flow, y[:60], 1, m.prior)
    assert lik([0.2]) == same([0.2])
    before = flow.checksum()
    post = amortized_extend(flow, y, m.prior, 1, McmcConfig(steps=300), rng)
    assert flow.checksum() == before and len(post) == 240
    with pytest.raises(ValueError):
        amortized_extend(flow, y, m.prior, 3, McmcConfig(steps=10), rng)


def test_grid_posterior_normalized(rng):
    m = make_model("lgssm1d")
    y = simulate_trajectory(m, [0.1], 100, rng).observations
    grid, w, mu, sd = exact_grid_posterior(m, m.prior, y, np.exp(np.linspace(-7, 1, 200)))
    assert w.sum() == pytest.approx(1.0) and grid[0] < mu < grid[-1] and sd > 0


def test_failed_proposals_fall_back_to_prior(rng):
    from tsnl.inference import _proposal_from_chain
    from tsnl.priors import Normal
    from tsnl.samplers import PosteriorSamples
    chain = PosteriorSamples(np.full((100, 1), 5.0))
    propose = _proposal_from_chain(chain, 3, Prior([Normal(0.0, 1.0)]))
    draws = np.array([propose(rng)[0] for _ in range(10)])
    assert np.all(draws[:6] == 5.0) and np.all(draws[6:] != 5.0)
