"""Coverage-maximizing abstract scenario generation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from .catalog import (
    AbstractScenario,
    And,
    Atom,
    Catalog,
    Constraint,
    CoverageModel,
    Not,
    coverage_model,
    covered_by,
    is_feasible,
    project,
)


@dataclass
class GenerationState:
    catalog: Catalog
    model: CoverageModel
    emitted: List[AbstractScenario] = field(default_factory=list)
    exhausted: bool = False
    greedy: bool = False
    last_gain: int = 0

    @classmethod
    def fresh(cls, catalog: Catalog, k: int = 2, greedy: bool = False) -> "GenerationState":
        model = coverage_model(catalog, k)
        return cls(catalog, model, exhausted=not model.uncovered, greedy=greedy)

    @property
    def subsets(self) -> List[Tuple[str, ...]]:
        return list(itertools.combinations(self.catalog.names, self.model.k))


def scenario_gain(scenario: AbstractScenario, model: CoverageModel) -> int:
    subsets = itertools.combinations([c for c, _ in scenario.items], model.k)
    return sum(1 for t in project(scenario, list(subsets)) if t in model.uncovered)


def best_scenario(catalog: Catalog, model: CoverageModel) -> Tuple[Optional[AbstractScenario], int]:
    """Exact maximizer of newly covered k-tuples.

    Depth-first branch-and-bound over categories in declaration order.  The
    bound adds, for every category subset not yet fully assigned, one if an
    uncovered tuple still agrees with the assigned prefix.  Only strict
    improvements replace the incumbent, so ties resolve to the
    lexicographically first assignment in declaration order.
    """
    cats = catalog.categories
    n = len(cats)
    names = [c.name for c in cats]
    subsets = list(itertools.combinations(range(n), model.k))
    if not model.uncovered:
        return None, 0

    elem_index = [{e: i for i, e in enumerate(c.elements)} for c in cats]
    name_index = {c: i for i, c in enumerate(names)}
    # prefixes[s][m]: uncovered element-index tuples of subset s truncated to m entries
    prefixes: List[List[set]] = []
    uncovered_by_subset: Dict[Tuple[int, ...], List[Tuple[int, ...]]] = {s: [] for s in subsets}
    for cat_names, elems in model.uncovered:
        s = tuple(name_index[c] for c in cat_names)
        uncovered_by_subset[s].append(tuple(elem_index[i][e] for i, e in zip(s, elems)))
    for s in subsets:
        tuples = uncovered_by_subset[s]
        prefixes.append([{t[:m] for t in tuples} for m in range(model.k + 1)])
    # subsets grouped by the depth at which they become fully assigned
    closing: List[List[int]] = [[] for _ in range(n)]
    for si, s in enumerate(subsets):
        closing[s[-1]].append(si)

    assign = [0] * n
    partial: Dict[str, str] = {}
    best_gain = 0
    best: Optional[Tuple[int, ...]] = None
    max_gain = len(subsets)

    def bound(depth: int, exact: int) -> int:
        extra = 0
        for si, s in enumerate(subsets):
            if s[-1] < depth:
                continue
            m = 0
            while m < len(s) and s[m] < depth:
                m += 1
            if tuple(assign[i] for i in s[:m]) in prefixes[si][m]:
                extra += 1
        return exact + extra

    def rec(depth: int, exact: int) -> None:
        nonlocal best_gain, best
        if best_gain == max_gain:
            return
        if depth == n:
            if exact > best_gain and catalog.satisfies(partial) is True:
                best_gain = exact
                best = tuple(assign)
            return
        cat = cats[depth]
        for ei, elem in enumerate(cat.elements):
            assign[depth] = ei
            partial[cat.name] = elem
            if catalog.satisfies(partial) is False:
                continue
            gained = exact
            for si in closing[depth]:
                if tuple(assign[i] for i in subsets[si]) in prefixes[si][model.k]:
                    gained += 1
            if bound(depth + 1, gained) <= best_gain:
                continue
            rec(depth + 1, gained)
        del partial[cat.name]

    rec(0, 0)
    if best is None:
        return None, 0
    scen = AbstractScenario(tuple((names[i], cats[i].elements[best[i]]) for i in range(n)))
    return scen, best_gain


def greedy_scenario(catalog: Catalog, model: CoverageModel) -> Tuple[Optional[AbstractScenario], int]:
    """Category-by-category heuristic for large catalogs.  Not optimal."""
    if not model.uncovered:
        return None, 0
    partial: Dict[str, str] = {}
    uncovered = model.uncovered
    for cat in catalog.categories:
        best_elem, best_score = None, -1
        for elem in cat.elements:
            trial = dict(partial, **{cat.name: elem})
            if not is_feasible(trial, catalog):
                continue
            score = sum(
                1 for cats, elems in uncovered
                if all(trial.get(c, e) == e for c, e in zip(cats, elems))
            )
            if score > best_score:
                best_elem, best_score = elem, score
        if best_elem is None:
            return None, 0
        partial[cat.name] = best_elem
    scen = AbstractScenario.from_mapping(catalog, partial)
    return scen, scenario_gain(scen, model)


def next_scenario(state: GenerationState) -> Optional[AbstractScenario]:
    """Emit the scenario with maximal coverage gain, or ``None`` once everything is covered."""
    if not state.model.uncovered:
        state.exhausted = True
        return None
    scen, gain = (None, 0)
    if state.greedy:
        scen, gain = greedy_scenario(state.catalog, state.model)
    if gain == 0:  # greedy can stall on tuples its scoring misjudges
        scen, gain = best_scenario(state.catalog, state.model)
    if scen is None or gain == 0:
        state.exhausted = True
        return None
    state.model = state.model.with_covered(project(scen, state.subsets))
    state.emitted.append(scen)
    state.last_gain = gain
    state.exhausted = not state.model.uncovered
    return scen


def generate_suite(
    catalog: Catalog, k: int = 2, limit: Union[int, str, None] = "full", greedy: bool = False
) -> List[AbstractScenario]:
    """Iterate :func:`next_scenario` until ``limit`` scenarios or full coverage."""
    state = GenerationState.fresh(catalog, k, greedy=greedy)
    cap = None if limit in (None, "full") else int(limit)
    while cap is None or len(state.emitted) < cap:
        if next_scenario(state) is None:
            break
    return list(state.emitted)


def blocking_constraint(scenario: AbstractScenario) -> Constraint:
    atoms = tuple(Atom(c, e) for c, e in scenario.items)
    formula = Not(And(atoms))
    return Constraint(formula, str(formula))


def add_blocking_constraint(state: GenerationState, scenario: AbstractScenario) -> GenerationState:
    """Forbid ``scenario`` for good and re-derive the feasible tuples.

    If it was already emitted it is withdrawn, and the tuples only it covered
    become uncovered again.
    """
    catalog = state.catalog.with_constraint(blocking_constraint(scenario))
    state.catalog = catalog
    state.emitted = [s for s in state.emitted if s != scenario]
    fresh = coverage_model(catalog, state.model.k)
    state.model = fresh.with_covered(covered_by(state.emitted, catalog, fresh.k))
    state.exhausted = not state.model.uncovered
    return state
