# -*- coding: utf-8 -*-

from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from creencias import Categorical, GaussianBelief
from errores import DepthExceeded, ShapeMismatch
from rslds_continuo import (
    EmissionModel,
    GeneralisedConfig,
    RecurrentRule,
    RegimeParams,
    RsldsFilter,
    RsldsModel,
    collapse,
    default_model,
    embed_generalised,
    euler_discretise,
    filter_trajectory,
    fit_em,
    log_evidence_gradient,
    predictive_mse,
    simulate,
    smooth,
    switch_distribution,
    total_log_evidence,
    validate_model,
)


def _one_regime_model(dt: float = 0.1) -> RsldsModel:
    return RsldsModel(
        (RegimeParams([[-0.5, 0.2], [0.0, -0.3]], [0.1, -0.2], 0.05 * np.eye(2)),),
        RecurrentRule(np.zeros((1, 1)), np.zeros((1, 2)), np.zeros(1)),
        EmissionModel([[1.0, 0.0]], [[0.02]]),
        dt,
        Categorical(np.ones(1)),
        GaussianBelief(np.array([0.5, -0.5]), 0.3 * np.eye(2)),
    )


def _two_regime_model(W=(2.0, -2.0)) -> RsldsModel:
    return RsldsModel(
        (
            RegimeParams([[-1.0]], [0.5], [[0.02]]),
            RegimeParams([[0.5]], [-0.5], [[0.05]]),
        ),
        RecurrentRule([[1.0, -1.0], [-1.0, 1.0]], np.array(W)[:, None], [0.0, 0.0]),
        EmissionModel([[1.0]], [[0.01]]),
        0.1,
        Categorical(np.array([0.5, 0.5])),
        GaussianBelief(np.array([0.0]), np.array([[0.5]])),
    )


def _kalman_log_evidence(model: RsldsModel, y: np.ndarray) -> float:
    reg = euler_discretise(model.regimes[0], model.dt)
    C, R = model.emission.C, model.emission.R
    m, P = model.initial_state.mean.copy(), model.initial_state.covariance.copy()
    total = 0.0
    for t in range(y.shape[0]):
        if t > 0:
            m = reg.F @ m + reg.u
            P = reg.F @ P @ reg.F.T + reg.Q_d
        S = C @ P @ C.T + R
        total += multivariate_normal.logpdf(y[t], C @ m, S)
        K = P @ C.T @ np.linalg.inv(S)
        m = m + K @ (y[t] - C @ m)
        P = P - K @ C @ P
    return total


def test_euler_discretisation():
    reg = RegimeParams([[-1.0, 0.0], [0.0, -2.0]], [1.0, 0.0], np.eye(2))
    disc = euler_discretise(reg, 0.5)
    assert np.allclose(disc.F, [[0.5, 0.0], [0.0, 0.0]])
    assert np.allclose(disc.u, [0.5, 0.0])
    assert np.allclose(disc.Q_d, 0.5 * np.eye(2))
    with pytest.raises(ShapeMismatch):
        euler_discretise(reg, 0.0)


def test_regime_params_reject_non_psd_volatility():
    with pytest.raises(Exception):
        RegimeParams([[0.0]], [0.0], [[-1.0]])
    with pytest.raises(ShapeMismatch):
        RegimeParams(np.zeros((2, 2)), np.zeros(3), np.eye(2))


def test_model_rejects_rule_of_wrong_size():
    with pytest.raises(ShapeMismatch):
        RsldsModel(
            (RegimeParams([[0.0]], [0.0], [[1.0]]),),
            RecurrentRule(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros(2)),
            EmissionModel([[1.0]], [[1.0]]),
            0.1,
            Categorical(np.ones(1)),
            GaussianBelief(np.zeros(1), np.eye(1)),
        )


def test_single_regime_filter_is_kalman_filter():
    model = _one_regime_model()
    y = simulate(model, 30, seed=3).y
    res = filter_trajectory(model, y)
    assert res.log_evidence == pytest.approx(_kalman_log_evidence(model, y), abs=1e-8)
    assert np.allclose(res.regime_probs, 1.0)


def test_duplicated_regimes_match_single_regime_evidence():
    one = _one_regime_model()
    reg = one.regimes[0]
    two = RsldsModel(
        (reg, reg),
        RecurrentRule(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros(2)),
        one.emission,
        one.dt,
        Categorical(np.array([0.5, 0.5])),
        one.initial_state,
    )
    y = simulate(one, 20, seed=1).y
    assert filter_trajectory(two, y).log_evidence == pytest.approx(filter_trajectory(one, y).log_evidence, abs=1e-8)


def test_incremental_filter_matches_batch():
    model = _two_regime_model()
    y = simulate(model, 15, seed=8).y
    batch = filter_trajectory(model, y)
    online = RsldsFilter(model)
    for t in range(y.shape[0]):
        regime, state = online.update(y[t])
        assert np.allclose(regime.probs, batch.regime_probs[t], atol=1e-10)
        assert np.allclose(state.mean, batch.state_belief(t).mean, atol=1e-10)
    assert online.log_evidence == pytest.approx(batch.log_evidence, abs=1e-8)


def test_predict_observation_matches_filter_prediction():
    model = _two_regime_model()
    y = simulate(model, 6, seed=2).y
    batch = filter_trajectory(model, y)
    online = RsldsFilter(model)
    for t in range(5):
        online.update(y[t])
        assert np.allclose(online.predict_observation(), batch.predicted_obs[t + 1], atol=1e-10)


def test_simulation_is_seeded_and_shaped():
    model = _two_regime_model()
    a = simulate(model, 25, seed=4)
    b = simulate(model, 25, seed=4)
    assert a.y.shape == (25, 1) and a.x.shape == (25, 1) and a.z.shape == (25,)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.z, b.z)


def test_switch_distribution_depends_on_state():
    rule = _two_regime_model().rule
    low = switch_distribution(rule, 0, [-2.0])
    high = switch_distribution(rule, 0, [2.0])
    assert high.probs[0] > low.probs[0]


def test_gradient_matches_finite_differences():
    model = _two_regime_model()
    data = [simulate(model, 12, seed=s).y for s in (0, 1)]
    g = log_evidence_gradient(model, data)
    eps = 1e-5
    for name, idx in (("markov_logits", (0, 1)), ("recurrent_W", (1, 0)), ("recurrent_r", (0,))):
        plus = {k: np.array(v) for k, v in (
            ("markov_logits", model.rule.markov_logits),
            ("recurrent_W", model.rule.recurrent_W),
            ("recurrent_r", model.rule.recurrent_r),
        )}
        minus = {k: v.copy() for k, v in plus.items()}
        plus[name][idx] += eps
        minus[name][idx] -= eps

        def with_rule(p):
            rule = RecurrentRule(p["markov_logits"], p["recurrent_W"], p["recurrent_r"])
            return RsldsModel(model.regimes, rule, model.emission, model.dt, model.initial_regime, model.initial_state)

        fd = (total_log_evidence(with_rule(plus), data) - total_log_evidence(with_rule(minus), data)) / (2 * eps)
        assert g[name][idx] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_smoother_single_regime_variance_not_above_filter():
    model = _one_regime_model()
    y = simulate(model, 20, seed=5).y
    filt = filter_trajectory(model, y)
    st = smooth(model, y, filt)
    for t in range(20):
        assert np.trace(st.cov[t]) <= np.trace(filt.covs[t, 0]) + 1e-10
    assert np.allclose(st.cov[-1], filt.covs[-1, 0])


def test_em_trace_is_non_decreasing():
    truth = _two_regime_model()
    data = [simulate(truth, 30, seed=s).y for s in range(3)]
    init = default_model(1, truth.dt, initial_var=0.5)
    fit = fit_em(init, data, iters=4)
    trace = np.asarray(fit.trace)
    assert len(trace) == 5
    assert np.all(np.diff(trace) >= -1e-9)
    assert validate_model(fit.model) == []


def test_em_improves_predictions_of_drifting_data():
    truth = _one_regime_model()
    data = [simulate(truth, 40, seed=s).y for s in range(2)]
    init = default_model(1, truth.dt, initial_var=0.5)
    fit = fit_em(init, data, iters=3)
    assert fit.trace[-1] >= fit.trace[0]
    assert np.isfinite(predictive_mse(fit.model, data))


def test_generalised_embedding_dimensions():
    base = default_model(2, 0.1)
    emb = embed_generalised(base, GeneralisedConfig(2))
    assert emb.dim == 6
    assert emb.obs_dim == 2
    assert np.allclose(emb.emission.C[:, 2:], 0.0)
    assert embed_generalised(base, GeneralisedConfig(0)) is base
    with pytest.raises(DepthExceeded):
        embed_generalised(base, GeneralisedConfig(4))
    with pytest.raises(DepthExceeded):
        GeneralisedConfig(-1)


def _free_particle(bias: float = 0.0, q: float = 0.0) -> RsldsModel:
    return RsldsModel(
        (RegimeParams([[0.0]], [bias], [[q]]),),
        RecurrentRule(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1)),
        EmissionModel([[1.0]], [[0.01]]),
        0.1,
        Categorical(np.ones(1)),
        GaussianBelief(np.array([0.0]), np.array([[0.1]])),
    )


def test_generalised_free_particle_moves_in_straight_line():
    emb = embed_generalised(_free_particle(), GeneralisedConfig(1, smoothness=1.0))
    reg = euler_discretise(emb.regimes[0], emb.dt)
    x = np.array([0.0, 1.0])
    path = [x[0]]
    for _ in range(50):
        x = reg.F @ x + reg.u
        path.append(x[0])
        assert x[1] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.diff(path), 0.1, atol=1e-12)


def test_generalised_bias_drives_highest_order():
    emb = embed_generalised(_free_particle(bias=0.5), GeneralisedConfig(1))
    reg = euler_discretise(emb.regimes[0], emb.dt)
    x = np.zeros(2)
    path = [x[0]]
    for _ in range(20):
        x = reg.F @ x + reg.u
        path.append(x[0])
    # aceleración constante: segunda diferencia = dt² · b
    assert np.allclose(np.diff(path, n=2), 0.1 ** 2 * 0.5, atol=1e-12)

    emb2 = embed_generalised(_free_particle(bias=0.5), GeneralisedConfig(2))
    assert np.allclose(emb2.regimes[0].bias_b, [0.0, 0.0, 0.5])


def test_generalised_noise_enters_only_at_highest_order():
    base = _free_particle(q=0.4)
    emb = embed_generalised(base, GeneralisedConfig(2, smoothness=2.0))
    Q = emb.regimes[0].volatility_Q
    expected = np.zeros((3, 3))
    expected[2, 2] = 0.4 / 2.0 ** 4
    assert np.allclose(Q, expected)
    A = emb.regimes[0].drift_A
    assert np.allclose(A, [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])


def _relabel(model: RsldsModel, perm) -> RsldsModel:
    p = np.asarray(perm)
    rule = model.rule
    return RsldsModel(
        tuple(model.regimes[k] for k in p),
        RecurrentRule(rule.markov_logits[p][:, p], rule.recurrent_W[p], rule.recurrent_r[p]),
        model.emission,
        model.dt,
        Categorical(model.initial_regime.probs[p]),
        model.initial_state,
    )


def test_log_evidence_invariant_under_regime_relabelling():
    base = _two_regime_model()
    model = RsldsModel(
        base.regimes,
        RecurrentRule(base.rule.markov_logits, base.rule.recurrent_W, [0.3, -0.1]),
        base.emission,
        base.dt,
        Categorical(np.array([0.3, 0.7])),
        base.initial_state,
    )
    y = simulate(model, 25, seed=4).y
    swapped = _relabel(model, [1, 0])
    assert filter_trajectory(swapped, y).log_evidence == pytest.approx(
        filter_trajectory(model, y).log_evidence, abs=1e-12
    )


def test_collapse_matches_mixture_moments():
    w = np.array([0.25, 0.75])
    means = np.array([[0.0], [2.0]])
    covs = np.array([[[1.0]], [[0.5]]])
    g = collapse(w, means, covs)
    assert g.mean[0] == pytest.approx(1.5)
    assert g.covariance[0, 0] == pytest.approx(0.25 * 1.0 + 0.75 * 0.5 + 0.25 * 2.25 + 0.75 * 0.25)


def test_model_dict_round_trip_keeps_evidence():
    model = _two_regime_model()
    y = simulate(model, 10, seed=0).y
    back = RsldsModel.from_dict(model.to_dict())
    assert filter_trajectory(back, y).log_evidence == pytest.approx(filter_trajectory(model, y).log_evidence, abs=1e-12)
    assert back.parameter_count() == model.parameter_count()


def test_observation_shape_is_checked():
    model = _one_regime_model()
    with pytest.raises(ShapeMismatch):
        filter_trajectory(model, np.zeros((5, 2)))
    with pytest.raises(ShapeMismatch):
        RsldsFilter(model).update([0.0, 1.0])
