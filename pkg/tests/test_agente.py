# -*- coding: utf-8 -*-

from __future__ import annotations

import numpy as np
import pytest

from agente import DiscreteAgent, RsldsObserver, learning_prior
from conftest import make_spec
from entornos import CUE, LEFT, RIGHT, PoolTableEnv, TMazeEnv
from errores import ShapeMismatch
from pomdp_discreto import random_layer_model
from rslds_continuo import default_model


def _play(agent: DiscreteAgent, env: TMazeEnv, seed: int):
    agent.reset()
    obs = env.reset(seed)
    outcomes = []
    while True:
        out = agent.step(obs)
        outcomes.append(out)
        if out.action is None:
            return outcomes
        obs, _ = env.step(out.action)


def test_agent_needs_one_controllable_factor():
    spec = make_spec((2, 2), (2,), horizon=3)
    with pytest.raises(ShapeMismatch):
        DiscreteAgent(random_layer_model(spec, 0))


def test_known_model_agent_visits_cue_then_rewarded_arm():
    env = TMazeEnv(reward_prob=0.9)
    agent = DiscreteAgent(env.ground_truth_model(reward_pref=3.0), planning_horizon=2)
    for seed in range(4):
        outcomes = _play(agent, env, seed)
        assert outcomes[0].action == CUE
        rewarded = LEFT if env.reward_arm == 0 else RIGHT
        assert outcomes[1].action == rewarded
        assert len(outcomes) == 3
        assert outcomes[-1].action is None and outcomes[-1].efe == []


def test_step_outcome_carries_policies_and_efe():
    env = TMazeEnv(reward_prob=0.9)
    agent = DiscreteAgent(env.ground_truth_model())
    agent.reset()
    out = agent.step(env.reset(0))
    assert out.t == 0
    assert len(out.policies) == 16 == len(out.efe)
    assert np.isfinite(out.free_energy)
    assert out.info_gain >= -1e-12
    # la segunda decisión solo mira un paso
    obs, _ = env.step(out.action)
    assert len(agent.step(obs).policies) == 4


def test_cue_observation_gives_information():
    env = TMazeEnv(reward_prob=0.9)
    agent = DiscreteAgent(env.ground_truth_model())
    agent.reset()
    first = agent.step(env.reset(0))
    assert first.action == CUE
    obs, _ = env.step(first.action)
    second = agent.step(obs)
    assert first.info_gain == pytest.approx(0.0, abs=1e-6)
    # el contexto pasa de 50/50 a conocido
    assert second.info_gain >= np.log(2.0) - 1e-6


def test_learning_prior_keeps_unlearned_tensors_tight():
    model = TMazeEnv().ground_truth_model()
    prior = learning_prior(model, ("A",), prior_scale=2.0, known_scale=50.0)
    assert prior.a_counts[0].counts.sum() == pytest.approx(2.0 * model.A[0].sum())
    assert prior.b_counts[0].counts.sum() == pytest.approx(50.0 * model.B[0].sum())


def test_learning_without_counts_is_a_no_op():
    env = TMazeEnv()
    agent = DiscreteAgent(env.ground_truth_model())
    _play(agent, env, 0)
    assert agent.learn_from_episode() == 0.0
    assert agent.learned_model() is agent.model


def test_learning_adds_parameter_information():
    env = TMazeEnv(reward_prob=1.0)
    model = env.ground_truth_model()
    agent = DiscreteAgent(model, learning_prior(model, ("A",)), learning_rate=1.0)
    gains = []
    for seed in range(3):
        _play(agent, env, seed)
        gains.append(agent.learn_from_episode())
    assert all(g > 0.0 for g in gains)
    learned = agent.learned_model()
    assert learned.A[1].shape == model.A[1].shape
    assert np.allclose(learned.A[1].sum(axis=0), 1.0)


def test_observer_free_energy_is_cumulative():
    env = PoolTableEnv(max_steps=10)
    observer = RsldsObserver(env.ground_truth_model())
    y = env.reset(seed=0)
    values = [observer.step(y).free_energy]
    while not env.done:
        y, _ = env.step()
        values.append(observer.step(y).free_energy)
    assert len(values) == 11
    assert values[-1] == pytest.approx(-observer.filter.log_evidence)
    assert observer.learn_from_episode() == 0.0
    assert len(observer.history) == 1


def test_observer_learning_does_not_lower_evidence():
    env = PoolTableEnv(max_steps=30)
    observer = RsldsObserver(default_model(2, env.dt, initial_mean=np.full(2, 0.5), initial_var=0.1), learn=True, em_iters=2)
    for seed in range(2):
        observer.reset()
        y = env.reset(seed)
        observer.step(y)
        while not env.done:
            y, _ = env.step()
            observer.step(y)
        assert observer.learn_from_episode() >= 0.0


def test_observer_regime_belief_starts_at_initial_regime():
    env = PoolTableEnv(max_steps=5)
    model = env.ground_truth_model()
    observer = RsldsObserver(model)
    assert np.allclose(observer.regime_belief.probs, model.initial_regime.probs)
    observer.step(env.reset(seed=1))
    assert observer.regime_belief.probs.shape == (5,)
    assert observer.regime_belief.probs.sum() == pytest.approx(1.0)
    observer.reset()
    assert np.allclose(observer.regime_belief.probs, model.initial_regime.probs)
