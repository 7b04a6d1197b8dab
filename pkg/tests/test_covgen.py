import json

import numpy as np
import pytest

from covdrive.catalog import AbstractScenario, coverage_model, covered_by, parse_catalog, project
from covdrive.covgen import (
    GenerationState,
    add_blocking_constraint,
    generate_suite,
    next_scenario,
    scenario_gain,
)

from oracles import catalog_json, feasible_rows, max_gain, min_cover_size, random_catalog, tuple_matrix


def _example_oracle(example_catalog):
    cats = [(c.name, list(c.elements)) for c in example_catalog.categories]
    imps = [("road", "straight", "ego-action", "left-turn", True)]
    rows = feasible_rows(cats, imps)
    return rows, tuple_matrix(rows, cats, 2)


def test_oracle_matches_example(example_catalog):
    rows, (m, keys) = _example_oracle(example_catalog)
    assert len(rows) == 15 and len(keys) == 20


def test_gain_three_after_first_scenario(example_catalog):
    state = GenerationState.fresh(example_catalog, 2)
    first = AbstractScenario.from_mapping(example_catalog, {"weather": "sunny", "road": "straight", "ego-action": "drive-straight"})
    state.model = state.model.with_covered(project(first, state.subsets))
    s = next_scenario(state)
    assert state.last_gain == 3
    assert scenario_gain(s, coverage_model(example_catalog, 2).with_covered(project(first, state.subsets))) == 3


def test_full_suite_is_minimal(example_catalog):
    suite = generate_suite(example_catalog, 2, "full")
    _, (m, _) = _example_oracle(example_catalog)
    assert len(suite) == min_cover_size(m) == 9
    assert covered_by(suite, example_catalog, 2) == coverage_model(example_catalog, 2).feasible_tuples


def test_gains_are_positive_and_non_increasing(example_catalog):
    state = GenerationState.fresh(example_catalog, 2)
    gains = []
    while next_scenario(state) is not None:
        gains.append(state.last_gain)
    assert all(g > 0 for g in gains)
    assert gains == sorted(gains, reverse=True)
    assert next_scenario(state) is None and state.exhausted


def test_limit(example_catalog):
    assert len(generate_suite(example_catalog, 2, 4)) == 4


def test_generation_is_deterministic(town_catalog):
    a = generate_suite(town_catalog, 2, 10)
    b = generate_suite(town_catalog, 2, 10)
    assert a == b


@pytest.mark.parametrize("seed", range(100))
def test_exact_gain_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cats, imps = random_catalog(rng)
    catalog = parse_catalog(json.dumps(catalog_json(cats, imps)))
    rows = feasible_rows(cats, imps)
    assert len(catalog.feasible_assignments) == len(rows)
    k = min(2, len(cats))
    state = GenerationState.fresh(catalog, k)
    if not rows:
        assert next_scenario(state) is None
        return
    m, keys = tuple_matrix(rows, cats, k)
    assert len(state.model.feasible_tuples) == len(keys)
    covered = np.zeros(len(keys), dtype=bool)
    seen = set()
    index = {r: i for i, r in enumerate(rows)}
    while True:
        expected = max_gain(m, covered)
        s = next_scenario(state)
        if expected == 0:
            assert s is None
            break
        assert s is not None and state.last_gain == expected
        assert s.values() not in seen
        seen.add(s.values())
        row = index[s.values()]
        assert int((m[row] & ~covered).sum()) == expected
        covered |= m[row]
    assert covered.all()


def test_greedy_reaches_full_coverage(town_catalog):
    suite = generate_suite(town_catalog, 2, "full", greedy=True)
    assert covered_by(suite, town_catalog, 2) == coverage_model(town_catalog, 2).feasible_tuples


def test_blocking_withdraws_and_forbids(example_catalog):
    state = GenerationState.fresh(example_catalog, 2)
    first = next_scenario(state)
    before = len(state.model.covered_tuples)
    add_blocking_constraint(state, first)
    assert first not in state.emitted
    assert len(state.model.covered_tuples) < before
    while next_scenario(state) is not None:
        pass
    assert first not in state.emitted
    assert all(state.catalog.satisfies(s.assignment) is True for s in state.emitted)


def test_blocking_can_make_tuples_infeasible():
    cat = parse_catalog(json.dumps({"categories": [{"name": "a", "elements": ["x", "y"]}, {"name": "b", "elements": ["p", "q"]}],
                                    "constraints": ["a.x -> b.p"]}))
    state = GenerationState.fresh(cat, 2)
    n = len(state.model.feasible_tuples)
    add_blocking_constraint(state, AbstractScenario.from_mapping(cat, {"a": "x", "b": "p"}))
    assert len(state.model.feasible_tuples) == n - 1
