import json

import pytest

from covdrive.catalog import (
    AbstractScenario,
    CatalogError,
    coverage_model,
    covered_by,
    enumerate_feasible_tuples,
    is_feasible,
    parse_catalog,
    parse_formula,
)


def test_example_catalog_has_twenty_pairs(example_catalog):
    tuples = enumerate_feasible_tuples(example_catalog, 2)
    assert len(tuples) == 20
    assert (("road", "ego-action"), ("straight", "left-turn")) not in tuples


def test_per_subset_counts(example_catalog):
    per = coverage_model(example_catalog, 2).per_subset()
    assert per[("weather", "road")] == (0, 6)
    assert per[("weather", "ego-action")] == (0, 9)
    assert per[("road", "ego-action")] == (0, 5)


def test_three_way_tuples_equal_feasible_scenarios(example_catalog):
    assert len(enumerate_feasible_tuples(example_catalog, 3)) == len(example_catalog.feasible_assignments) == 15


@pytest.mark.parametrize("text, expect", [
    ("a.x", {"a": "x"}),
    ("!a.x", {"a": "y"}),
    ("a.x & b.y", {"a": "x", "b": "y"}),
    ("a.x | b.y", {"a": "z", "b": "y"}),
    ("a.x -> b.y", {"a": "z", "b": "q"}),
    ("a.x -> b.y -> c.z", {"a": "x", "b": "y", "c": "z"}),
])
def test_formula_true(text, expect):
    assert parse_formula(text).eval(expect) is True


def test_three_valued_evaluation():
    f = parse_formula("a.x -> b.y")
    assert f.eval({}) is None
    assert f.eval({"a": "z"}) is True
    assert f.eval({"a": "x"}) is None
    assert f.eval({"a": "x", "b": "q"}) is False
    assert parse_formula("a.x & b.y").eval({"a": "q"}) is False
    assert parse_formula("a.x | b.y").eval({"b": "y"}) is True


def test_implication_is_right_associative():
    f = parse_formula("a.x -> b.y -> c.z")
    # a -> (b -> c) is true when a holds, b holds and c holds; (a -> b) -> c would be false for a=F,c=F
    assert f.eval({"a": "q", "b": "q", "c": "q"}) is True


def test_hyphenated_names(example_catalog):
    assert is_feasible({"road": "T-shaped", "ego-action": "left-turn"}, example_catalog)
    assert not is_feasible({"road": "straight", "ego-action": "left-turn"}, example_catalog)


def test_partial_feasibility_looks_ahead():
    cat = parse_catalog(json.dumps({
        "categories": [{"name": "a", "elements": ["x", "y"]}, {"name": "b", "elements": ["p", "q"]}],
        "constraints": ["a.x -> b.p", "a.x -> b.q"],
    }))
    assert not is_feasible({"a": "x"}, cat)
    assert is_feasible({"a": "y"}, cat)


@pytest.mark.parametrize("text", [
    "{",
    '{"categories": [{"name": "a", "elements": ["x"]}]}',
    '{"categories": [{"name": "a", "elements": ["x", "x"]}]}',
    '{"categories": [{"name": "a", "elements": ["x", "y"]}], "constraints": ["a.z"]}',
    '{"categories": [{"name": "a", "elements": ["x", "y"]}], "constraints": ["b.x"]}',
    '{"categories": [{"name": "a", "elements": ["x", "y"]}], "constraints": ["a.x ->"]}',
    '{"categories": [{"name": "a", "elements": ["x", "y"]}, {"name": "a", "elements": ["x", "y"]}]}',
])
def test_malformed_catalogs_rejected(text):
    with pytest.raises(CatalogError):
        parse_catalog(text)


def test_syntax_error_carries_position():
    with pytest.raises(CatalogError) as info:
        parse_catalog('{\n "categories": [,]}')
    assert info.value.line == 2


def test_unknown_assignment_rejected(example_catalog):
    with pytest.raises(CatalogError):
        is_feasible({"weather": "snow"}, example_catalog)


def test_covered_by_counts_projections(example_catalog):
    s = AbstractScenario.from_mapping(example_catalog, {"weather": "sunny", "road": "straight", "ego-action": "drive-straight"})
    assert len(covered_by([s], example_catalog, 2)) == 3
    assert s.to_dict() == {"weather": "sunny", "road": "straight", "ego-action": "drive-straight"}


def test_k_out_of_range(example_catalog):
    with pytest.raises(ValueError):
        enumerate_feasible_tuples(example_catalog, 4)
