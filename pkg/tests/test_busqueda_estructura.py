# -*- coding: utf-8 -*-

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from busqueda_estructura import (
    FAMILY_CONTINUOUS,
    ContinuousDataset,
    DiscreteDataset,
    KnobBounds,
    StructureKnobs,
    StructureScorer,
    StructureSearch,
    bounds_for,
    build_candidate,
    greedy_search,
    neighbors,
    score,
    validate_knobs,
    write_trace,
)
from conftest import make_spec
from creencias import Categorical, GaussianBelief
from errores import ShapeMismatch
from jerarquia import LayerStack
from pomdp_discreto import random_layer_model, sample_trajectory
from rslds_continuo import EmissionModel, RecurrentRule, RegimeParams, RsldsModel, simulate


def _discrete_data(n_episodes: int = 4, length: int = 12, seed: int = 0) -> DiscreteDataset:
    spec = make_spec((3,), (3,), horizon=length)
    model = random_layer_model(spec, seed, accuracy=0.9, stickiness=0.8)
    episodes = [sample_trajectory(model, None, seed + 10 + e).observations for e in range(n_episodes)]
    return DiscreteDataset(tuple(episodes), (3,))


def _switching_data(n: int = 3, length: int = 60) -> ContinuousDataset:
    truth = RsldsModel(
        (
            RegimeParams([[-0.5]], [1.0], [[0.01]]),
            RegimeParams([[-0.5]], [-1.0], [[0.01]]),
        ),
        RecurrentRule([[3.0, -3.0], [-3.0, 3.0]], np.zeros((2, 1)), np.zeros(2)),
        EmissionModel([[1.0]], [[1e-3]]),
        0.1,
        Categorical(np.array([0.5, 0.5])),
        GaussianBelief(np.zeros(1), np.array([[0.1]])),
    )
    return ContinuousDataset(tuple(simulate(truth, length, seed=s).y for s in range(n)), 0.1)


def test_neighbors_are_single_edits_within_bounds():
    s = StructureKnobs(factor_sizes=(2,), horizon=1)
    bounds = KnobBounds(max_horizon=4)
    out = neighbors(s, bounds)
    assert s not in out
    assert len(out) == len(set(out))
    assert all(validate_knobs(n, bounds) == [] for n in out)
    assert StructureKnobs(factor_sizes=(3,), horizon=1) in out
    assert StructureKnobs(hierarchical_depth=2, factor_sizes=(2,), horizon=1) in out
    assert StructureKnobs(factor_sizes=(2,), horizon=1, controllable=(True,)) in out
    assert not any(n.factor_sizes == (1,) for n in out)


def test_continuous_neighbors_only_move_k_and_order():
    s = StructureKnobs(family=FAMILY_CONTINUOUS, K=1, order_n=0)
    out = neighbors(s)
    assert out == [
        StructureKnobs(family=FAMILY_CONTINUOUS, K=2, order_n=0),
        StructureKnobs(family=FAMILY_CONTINUOUS, K=1, order_n=1),
    ]


def test_validate_knobs_reports_each_problem():
    s = StructureKnobs(hierarchical_depth=5, factor_sizes=(9,), horizon=0)
    problems = validate_knobs(s)
    assert len(problems) == 3
    assert validate_knobs(StructureKnobs(family=FAMILY_CONTINUOUS, K=9)) != []


def test_knobs_dict_round_trip():
    s = StructureKnobs(factor_sizes=(2, 3), controllable=(True, False), horizon=2, hierarchical_depth=2)
    assert StructureKnobs.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_discrete_dataset_validation():
    with pytest.raises(ShapeMismatch):
        DiscreteDataset((), (2,))
    with pytest.raises(ShapeMismatch):
        DiscreteDataset((np.array([[0], [2]]),), (2,))
    with pytest.raises(ShapeMismatch):
        DiscreteDataset((np.array([[0], [1]]),), (2,), actions=(np.array([0, 1]),))


def test_dataset_windows_pad_the_last_one():
    data = DiscreteDataset((np.array([[0], [1], [0], [1], [1]]),), (2,), actions=(np.array([1, 0, 1, 0]),))
    wins = data.windows(2)
    assert len(wins) == 3
    obs, acts = wins[-1]
    assert obs.shape == (1, 1)
    assert acts.tolist() == [-1]
    assert wins[0][1].tolist() == [1]


def test_horizon_bound_follows_shortest_episode():
    data = DiscreteDataset((np.zeros((3, 1), dtype=int), np.zeros((7, 1), dtype=int)), (2,))
    assert bounds_for(data).max_horizon == 3


def test_build_candidate_stacks_context_layers():
    data = _discrete_data()
    stack = build_candidate(StructureKnobs(hierarchical_depth=3, factor_sizes=(3,), horizon=2), data, seed=1)
    assert isinstance(stack, LayerStack)
    assert stack.depth == 3
    assert stack.layers[-1].spec.factor_sizes == (3,)
    assert stack.links[-1].temporal_ratio == 2
    with pytest.raises(ShapeMismatch):
        build_candidate(StructureKnobs(family=FAMILY_CONTINUOUS), data)


def test_score_is_deterministic_for_a_seed():
    data = _discrete_data()
    s = StructureKnobs(factor_sizes=(3,), horizon=3)
    a = score(s, data, seed=5)
    b = score(s, data, seed=5)
    assert a.free_energy == b.free_energy
    assert math.isfinite(a.free_energy)
    assert a.parameter_count > 0


def test_hierarchical_candidate_scores_finite():
    data = _discrete_data()
    res = score(StructureKnobs(hierarchical_depth=2, factor_sizes=(2,), horizon=3), data, seed=0)
    assert math.isfinite(res.free_energy)
    assert not res.diverged


def test_scorer_caches_and_rejects_out_of_bounds():
    data = _discrete_data()
    scorer = StructureScorer(data, seed=0)
    s = StructureKnobs(factor_sizes=(2,), horizon=2)
    first = scorer.score(s)
    assert scorer.score(s) is first
    assert scorer.fits == 1
    with pytest.raises(ShapeMismatch):
        scorer.score(StructureKnobs(factor_sizes=(2,), horizon=50))


def test_search_never_increases_free_energy():
    data = _discrete_data()
    init = StructureKnobs(factor_sizes=(2,), horizon=1)
    result = StructureSearch(data, seed=0).run(init, move_budget=2)
    path = [e.score.free_energy for e in result.accepted_path()]
    assert path[0] == result.trace[0].score.free_energy
    assert all(b < a for a, b in zip(path, path[1:]))
    assert result.best_score.free_energy <= path[0]
    assert result.stopped_by in ("local_optimum", "move_budget")


def test_search_result_independent_of_workers():
    data = _discrete_data(n_episodes=3, length=8)
    init = StructureKnobs(factor_sizes=(2,), horizon=1)
    a = StructureSearch(data, seed=3, workers=1).run(init, move_budget=1)
    b = StructureSearch(data, seed=3, workers=4).run(init, move_budget=1)
    assert a.best == b.best
    assert [e.to_record() for e in a.trace] == [e.to_record() for e in b.trace]


def test_fit_budget_stops_search():
    data = _discrete_data(n_episodes=2, length=6)
    init = StructureKnobs(factor_sizes=(2,), horizon=1)
    result = StructureSearch(data, seed=0, fit_budget=3).run(init, move_budget=5)
    assert result.fits <= 3
    assert result.stopped_by == "fit_budget"


def test_greedy_search_writes_trace(tmp_path):
    data = _discrete_data(n_episodes=2, length=6)
    path = tmp_path / "trace.jsonl"
    best, trace = greedy_search(StructureKnobs(factor_sizes=(2,), horizon=1), data, 1, trace_path=path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(trace)
    first = json.loads(lines[0])
    assert first["role"] == "init" and first["accepted"] is True
    assert first["fit_seconds"] is None
    assert list(first) == sorted(first)
    assert validate_knobs(best) == []


def test_write_trace_records_wall_clock_on_request(tmp_path):
    data = _discrete_data(n_episodes=2, length=6)
    result = StructureSearch(data, seed=0).run(StructureKnobs(factor_sizes=(2,), horizon=1), move_budget=1)
    path = write_trace(result.trace, tmp_path / "t.jsonl", record_wall_clock=True)
    first = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
    assert first["fit_seconds"] is not None


def test_continuous_scoring_returns_fitted_model():
    data = _switching_data(n=2, length=30)
    scorer = StructureScorer(data, seed=0, em_iters=2)
    s = StructureKnobs(family=FAMILY_CONTINUOUS, K=1)
    res = scorer.score(s)
    assert math.isfinite(res.free_energy)
    model = scorer.fitted_model(s)
    assert model.K == 1
    assert res.parameter_count == model.parameter_count()
    with pytest.raises(ShapeMismatch):
        scorer.fitted_model(StructureKnobs())


@pytest.mark.slow
def test_switching_data_prefers_two_regimes():
    data = _switching_data()
    scorer = StructureScorer(data, seed=0)
    one = scorer.score(StructureKnobs(family=FAMILY_CONTINUOUS, K=1))
    two = scorer.score(StructureKnobs(family=FAMILY_CONTINUOUS, K=2))
    assert two.free_energy < one.free_energy
