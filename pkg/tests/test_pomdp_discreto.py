# -*- coding: utf-8 -*-

from __future__ import annotations

import numpy as np
import pytest

from conftest import make_spec
from errores import DepthExceeded, InvalidAction, LengthMismatch, ShapeMismatch
from pomdp_discreto import (
    MOD_ACTION,
    MOD_FACTOR,
    MOD_NONE,
    DirichletModel,
    DiscreteLayerModel,
    apply_generalised_structure,
    as_action_array,
    build_ring_kinematics,
    centred_values,
    load_model,
    random_layer_model,
    ring_shift_transitions,
    sample_trajectory,
    save_model,
    validate,
)


def _tiny_model(**kw) -> DiscreteLayerModel:
    spec = make_spec((2,), (3,), horizon=2)
    A = (np.array([[0.8, 0.1], [0.1, 0.1], [0.1, 0.8]]),)
    B = (np.eye(2),)
    D = (np.array([0.5, 0.5]),)
    return DiscreteLayerModel(spec, A, B, D, **kw)


def test_spec_default_control_sizes():
    spec = make_spec((3, 2), (2,), controllable=(True, False))
    assert spec.control_sizes == (3, 1)
    assert spec.factor_names == ("f0", "f1")


def test_spec_rejects_bad_cardinalities():
    with pytest.raises(ShapeMismatch):
        make_spec((1,), (2,))
    with pytest.raises(ShapeMismatch):
        make_spec((2,), (2,), horizon=0)


def test_model_promotes_two_dimensional_b_and_fills_preferences():
    model = _tiny_model()
    assert model.B[0].shape == (2, 2, 1)
    assert model.C[0].shape == (3, 2)
    assert np.all(model.C[0] == 0.0)


def test_model_shape_mismatch():
    spec = make_spec((2,), (3,), horizon=2)
    with pytest.raises(ShapeMismatch):
        DiscreteLayerModel(spec, (np.ones((2, 2)) / 2,), (np.eye(2),), (np.array([0.5, 0.5]),))


def test_parameter_count():
    # A: 2·2, B: 1·2·1, D: 1
    assert _tiny_model().parameter_count() == 7


def test_validate_reports_bad_column():
    spec = make_spec((2,), (2,), horizon=2)
    A = (np.array([[0.9, 0.5], [0.2, 0.5]]),)
    model = DiscreteLayerModel(spec, A, (np.eye(2),), (np.array([0.5, 0.5]),))
    problems = validate(model)
    assert len(problems) == 1
    assert problems[0].tensor == "A[0]"
    assert problems[0].index == (":", 0)
    assert validate(_tiny_model()) == []


def test_random_models_are_valid():
    spec = make_spec((2, 3), (2, 4), horizon=4, controllable=(True, False))
    for seed in range(5):
        assert validate(random_layer_model(spec, seed)) == []


def test_generalised_structure_chain():
    spec = make_spec((5,), (5,), generalised_depth=2)
    factors = apply_generalised_structure(spec)
    assert [f.order for f in factors] == [0, 1, 2]
    assert factors[0].modulator == MOD_FACTOR and factors[0].modulator_index == 1
    assert factors[1].modulator == MOD_FACTOR and factors[1].modulator_index == 2
    assert factors[2].modulator == MOD_NONE


def test_generalised_top_order_takes_action():
    spec = make_spec((4,), (4,), generalised_depth=1, controllable=(True,))
    factors = apply_generalised_structure(spec)
    assert factors[1].modulator == MOD_ACTION
    assert spec.control_sizes == (3,)


def test_generalised_depth_above_bound():
    spec = make_spec((3,), (3,), generalised_depth=4)
    with pytest.raises(DepthExceeded):
        apply_generalised_structure(spec)


def test_ring_kinematics_moves_at_constant_velocity():
    assert centred_values(3) == [-1, 0, 1]
    model = build_ring_kinematics(5, (3,), horizon=6, initial_orders=[2], initial_position=3)
    traj = sample_trajectory(model, None, seed=0)
    assert traj.observations[:, 0].tolist() == [3, 4, 0, 1, 2, 3]
    assert np.all(traj.states[:, 1] == 2)


def test_ring_shift_transitions_are_permutations():
    B = ring_shift_transitions(4, [-1, 0, 1])
    assert np.allclose(B.sum(axis=0), 1.0)
    assert B[3, 0, 0] == 1.0
    assert B[1, 0, 2] == 1.0


def test_as_action_array_variants():
    spec = make_spec((2, 3), (2,), horizon=4, controllable=(False, True))
    arr = as_action_array(spec, [0, 2, -1])
    assert arr.tolist() == [[0, 0], [0, 2], [0, -1]]
    with pytest.raises(InvalidAction):
        as_action_array(spec, [0, 3, 0])
    with pytest.raises(LengthMismatch):
        as_action_array(spec, [0, 1])
    with pytest.raises(LengthMismatch):
        as_action_array(spec, None)


def test_dirichlet_from_model_recovers_means():
    model = _tiny_model()
    dirichlet = DirichletModel.from_model(model, scale=10.0)
    back = dirichlet.expected_model(model)
    assert np.allclose(back.A[0], model.A[0])
    assert len(dirichlet.all_counts()) == 3


def test_save_and_load_model(tmp_path):
    spec = make_spec((2, 2), (3,), horizon=3, controllable=(True, False))
    model = random_layer_model(spec, seed=9)
    path = save_model(model, tmp_path / "model.json")
    back = load_model(path)
    assert back.spec == model.spec
    for a, b in zip(model.A, back.A):
        assert np.array_equal(a, b)


def test_sampling_is_seeded():
    spec = make_spec((3,), (3,), horizon=5)
    model = random_layer_model(spec, seed=2)
    a = sample_trajectory(model, None, seed=4)
    b = sample_trajectory(model, None, seed=4)
    assert np.array_equal(a.observations, b.observations)
