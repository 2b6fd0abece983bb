# -*- coding: utf-8 -*-

from __future__ import annotations

import itertools

import numpy as np
import pytest

from conftest import make_spec
from creencias import normalize
from entornos import CENTRE, CUE, TMazeEnv
from errores import HorizonExceeded, PolicySpaceTooLarge
from inferencia_discreta import infer_states
from planificacion import (
    EfeBreakdown,
    Policy,
    dirichlet_novelty_terms,
    enumerate_policies,
    evaluate_policies,
    expected_free_energy,
    policy_posterior,
    select_action,
)
from pomdp_discreto import DirichletModel, random_layer_model


def _tmaze_start(reward_prob: float = 0.9, reward_pref: float = 0.0):
    env = TMazeEnv(reward_prob=reward_prob)
    model = env.ground_truth_model(reward_pref)
    obs = env.reset(seed=0)
    post, _ = infer_states(model, [obs], np.array([[-1, 0], [-1, 0]]))
    return model, post


def _oracle_efe(model, q0: np.ndarray, policy: Policy) -> tuple[float, float]:
    """Riesgo y ambigüedad por enumeración explícita de estados conjuntos."""
    sizes = model.factor_sizes
    states = list(itertools.product(*[range(n) for n in sizes]))
    q = {s: float(q0[s]) for s in states}
    risk = ambiguity = 0.0
    for tau, row in enumerate(policy.actions):
        nxt = {s: 0.0 for s in states}
        for s_prev, w in q.items():
            for s in states:
                p = 1.0
                for f in range(len(sizes)):
                    p *= model.B[f][s[f], s_prev[f], int(row[f])]
                nxt[s] += p * w
        q = nxt
        t = tau + 1
        for m, A in enumerate(model.A):
            q_o = np.zeros(A.shape[0])
            for s, w in q.items():
                q_o += w * A[(slice(None),) + s]
                col = A[(slice(None),) + s]
                nz = col[col > 0]
                ambiguity += w * float(-np.sum(nz * np.log(nz)))
            pref = np.exp(model.C[m][:, t] - model.C[m][:, t].max())
            pref /= pref.sum()
            nz = q_o > 0
            risk += float(np.sum(q_o[nz] * (np.log(q_o[nz]) - np.log(pref[nz]))))
    return risk, ambiguity


def test_enumerate_policies_lexicographic():
    spec = make_spec((3, 2), (2,), horizon=3, controllable=(True, False))
    policies = enumerate_policies(spec, 2)
    assert len(policies) == 9
    assert policies[0].key() == (0, 0, 0, 0)
    assert policies[1].key() == (0, 0, 1, 0)
    assert policies[-1].key() == (2, 0, 2, 0)


def test_enumerate_policies_without_control():
    spec = make_spec((2,), (2,), horizon=3)
    assert len(enumerate_policies(spec, 2)) == 1


def test_policy_space_cap():
    spec = make_spec((5,), (2,), horizon=8, controllable=(True,))
    with pytest.raises(PolicySpaceTooLarge):
        enumerate_policies(spec, 6)


def test_efe_total_is_risk_plus_ambiguity_minus_novelty():
    e = EfeBreakdown(1.25, 0.5, 0.125)
    assert e.total == 1.25 + 0.5 - 0.125
    assert e.to_dict()["total"] == e.total


def test_horizon_exceeded():
    model, post = _tmaze_start()
    policy = Policy(np.zeros((3, 2), dtype=int))
    with pytest.raises(HorizonExceeded):
        expected_free_energy(model, None, post, policy, time=0)


def test_tmaze_efe_matches_enumeration_oracle():
    model, post = _tmaze_start(reward_prob=0.8, reward_pref=2.0)
    q0 = np.multiply.outer(post.marginals[0][0], post.marginals[1][0])
    policies = enumerate_policies(model.spec, 2)
    efes = evaluate_policies(model, None, post, policies, time=0)
    for p, e in zip(policies, efes):
        risk, ambiguity = _oracle_efe(model, q0, p)
        assert e.risk == pytest.approx(risk, abs=1e-9)
        assert e.ambiguity == pytest.approx(ambiguity, abs=1e-9)
        assert e.novelty == 0.0


def test_flat_preferences_choose_cue_first():
    model, post = _tmaze_start(reward_prob=0.9, reward_pref=0.0)
    policies = enumerate_policies(model.spec, 2)
    assert len(policies) == 16
    efes = evaluate_policies(model, None, post, policies, time=0)
    totals = [e.total for e in efes]
    best = int(np.argmin(totals))
    assert policies[best].first_action[0] == CUE
    non_cue = [t for p, t in zip(policies, totals) if p.first_action[0] != CUE]
    assert min(totals) < min(non_cue)
    action = select_action(policies, policy_posterior(efes, 16.0))
    assert action[0] == CUE


def test_novelty_is_positive_and_shrinks_with_counts():
    model, post = _tmaze_start()
    policy = Policy(np.array([[CUE, 0], [CENTRE, 0]]))
    loose = DirichletModel.from_model(model, scale=1.0, floor=0.1)
    tight = DirichletModel.from_model(model, scale=100.0, floor=0.1)
    e_loose = expected_free_energy(model, loose, post, policy, time=0)
    e_tight = expected_free_energy(model, tight, post, policy, time=0)
    assert e_loose.novelty > e_tight.novelty > 0.0


def test_dirichlet_novelty_terms_zero_count():
    terms = dirichlet_novelty_terms(np.array([[0.0], [2.0], [1.0]]))
    assert terms[0, 0] == 0.0
    assert terms[1, 0] > 0.0


def test_evaluate_policies_independent_of_workers():
    spec = make_spec((3, 2), (3, 2), horizon=4, controllable=(True, False))
    model = random_layer_model(spec, 11)
    dirichlet = DirichletModel.from_model(model, scale=2.0)
    post, _ = infer_states(model, [[0, 1]], np.array([[-1, 0]] * 3), dirichlet=dirichlet)
    policies = enumerate_policies(spec, 2)
    serial = evaluate_policies(model, dirichlet, post, policies, time=0, workers=1)
    threaded = evaluate_policies(model, dirichlet, post, policies, time=0, workers=4)
    assert [e.to_dict() for e in serial] == [e.to_dict() for e in threaded]


def test_policy_posterior_and_tie_break():
    policies = [Policy(np.array([[a]])) for a in range(3)]
    post = policy_posterior([1.0, 1.0, 2.0], precision=1.0)
    assert post.probs[0] == pytest.approx(post.probs[1])
    assert select_action(policies, post) == (0,)
    assert select_action(policies, normalize([0.1, 0.2, 0.7])) == (2,)
