"""Scenario meta-model: categories, feasibility constraints and k-way coverage.

A catalog file is JSON with two keys::

    {
      "categories": [{"name": "weather", "elements": ["sunny", "rainy"]}, ...],
      "constraints": ["road.straight -> !ego-action.left-turn", ...]
    }

Constraint grammar (lowest to highest precedence)::

    expr    := disj ( "->" expr )?          # right associative
    disj    := conj ( "|" conj )*
    conj    := unary ( "&" unary )*
    unary   := "!" unary | "(" expr ")" | atom
    atom    := NAME "." NAME

``NAME`` is ``[A-Za-z_][A-Za-z0-9_]*`` with inner hyphens allowed
(``ego-action``, ``T-shaped``); a hyphen directly followed by ``>`` always
starts an implication.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

# (category names, element names), both in catalog declaration order
KTuple = Tuple[Tuple[str, ...], Tuple[str, ...]]


class CatalogError(ValueError):
    """Malformed catalog file or dangling reference."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


# -- formulas ---------------------------------------------------------------


class Formula:
    def eval(self, assignment: Mapping[str, str]) -> Optional[bool]:
        """Three-valued evaluation; ``None`` when the partial assignment leaves it open."""
        raise NotImplementedError

    def atoms(self) -> Iterator["Atom"]:
        raise NotImplementedError


@dataclass(frozen=True)
class Atom(Formula):
    category: str
    element: str

    def eval(self, assignment):
        value = assignment.get(self.category)
        if value is None:
            return None
        return value == self.element

    def atoms(self):
        yield self

    def __str__(self):
        return f"{self.category}.{self.element}"


@dataclass(frozen=True)
class Not(Formula):
    operand: Formula

    def eval(self, assignment):
        v = self.operand.eval(assignment)
        return None if v is None else not v

    def atoms(self):
        return self.operand.atoms()

    def __str__(self):
        return f"!{_wrap(self.operand)}"


@dataclass(frozen=True)
class And(Formula):
    operands: Tuple[Formula, ...]

    def eval(self, assignment):
        result: Optional[bool] = True
        for op in self.operands:
            v = op.eval(assignment)
            if v is False:
                return False
            if v is None:
                result = None
        return result

    def atoms(self):
        for op in self.operands:
            yield from op.atoms()

    def __str__(self):
        return " & ".join(_wrap(op) for op in self.operands)


@dataclass(frozen=True)
class Or(Formula):
    operands: Tuple[Formula, ...]

    def eval(self, assignment):
        result: Optional[bool] = False
        for op in self.operands:
            v = op.eval(assignment)
            if v is True:
                return True
            if v is None:
                result = None
        return result

    def atoms(self):
        for op in self.operands:
            yield from op.atoms()

    def __str__(self):
        return " | ".join(_wrap(op) for op in self.operands)


@dataclass(frozen=True)
class Implies(Formula):
    premise: Formula
    conclusion: Formula

    def eval(self, assignment):
        p = self.premise.eval(assignment)
        if p is False:
            return True
        c = self.conclusion.eval(assignment)
        if c is True:
            return True
        if p is True and c is False:
            return False
        return None

    def atoms(self):
        yield from self.premise.atoms()
        yield from self.conclusion.atoms()

    def __str__(self):
        return f"{_wrap(self.premise)} -> {_wrap(self.conclusion)}"


def _wrap(f: Formula) -> str:
    return str(f) if isinstance(f, (Atom, Not)) else f"({f})"


_TOKEN = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<op>[!&|().])|(?P<name>[A-Za-z_][A-Za-z0-9_]*(?:-(?!>)[A-Za-z0-9_]+)*))"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: List[Tuple[str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                col = pos + len(text[pos:]) - len(text[pos:].lstrip())
                raise CatalogError(f"unexpected character {text[col]!r} in constraint {text!r}", 1, col + 1)
            tok = m.group("arrow") or m.group("op") or m.group("name")
            self.tokens.append((tok, m.start(m.lastgroup) + 1))
            pos = m.end()
        self.i = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def take(self, expected: Optional[str] = None) -> str:
        if self.i >= len(self.tokens):
            raise CatalogError(f"unexpected end of constraint {self.text!r}", 1, len(self.text) + 1)
        tok, col = self.tokens[self.i]
        if expected is not None and tok != expected:
            raise CatalogError(f"expected {expected!r}, got {tok!r} in constraint {self.text!r}", 1, col)
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.expr()
        if self.i != len(self.tokens):
            tok, col = self.tokens[self.i]
            raise CatalogError(f"trailing token {tok!r} in constraint {self.text!r}", 1, col)
        return f

    def expr(self) -> Formula:
        left = self.disj()
        if self.peek() == "->":
            self.take()
            return Implies(left, self.expr())
        return left

    def disj(self) -> Formula:
        ops = [self.conj()]
        while self.peek() == "|":
            self.take()
            ops.append(self.conj())
        return ops[0] if len(ops) == 1 else Or(tuple(ops))

    def conj(self) -> Formula:
        ops = [self.unary()]
        while self.peek() == "&":
            self.take()
            ops.append(self.unary())
        return ops[0] if len(ops) == 1 else And(tuple(ops))

    def unary(self) -> Formula:
        tok = self.peek()
        if tok == "!":
            self.take()
            return Not(self.unary())
        if tok == "(":
            self.take()
            f = self.expr()
            self.take(")")
            return f
        if tok is None or not (tok[0].isalpha() or tok[0] == "_"):
            col = self.tokens[self.i][1] if self.i < len(self.tokens) else len(self.text) + 1
            raise CatalogError(f"expected atom, got {tok!r} in constraint {self.text!r}", 1, col)
        cat = self.take()
        self.take(".")
        elem = self.take()
        if not (elem[0].isalpha() or elem[0] == "_"):
            raise CatalogError(f"bad element name {elem!r} in constraint {self.text!r}")
        return Atom(cat, elem)


def parse_formula(text: str) -> Formula:
    return _Parser(text).parse()


# -- catalog ------------------------------------------------------------------


@dataclass(frozen=True)
class Category:
    name: str
    elements: Tuple[str, ...]

    def __post_init__(self):
        if len(self.elements) < 2:
            raise CatalogError(f"category {self.name!r} needs at least 2 elements")
        if len(set(self.elements)) != len(self.elements):
            raise CatalogError(f"duplicate element in category {self.name!r}")


@dataclass(frozen=True)
class Constraint:
    formula: Formula
    source: str = ""

    def __str__(self):
        return self.source or str(self.formula)


@dataclass(frozen=True)
class AbstractScenario:
    """A total assignment, one element per category, in declaration order."""

    items: Tuple[Tuple[str, str], ...]

    @classmethod
    def from_mapping(cls, catalog: "Catalog", assignment: Mapping[str, str]) -> "AbstractScenario":
        return cls(tuple((c.name, assignment[c.name]) for c in catalog.categories))

    def __getitem__(self, category: str) -> str:
        for c, e in self.items:
            if c == category:
                return e
        raise KeyError(category)

    def get(self, category: str, default=None):
        try:
            return self[category]
        except KeyError:
            return default

    @property
    def assignment(self) -> Dict[str, str]:
        return dict(self.items)

    def values(self) -> Tuple[str, ...]:
        return tuple(e for _, e in self.items)

    def to_dict(self) -> Dict[str, str]:
        return dict(self.items)

    def __str__(self):
        return "<" + ", ".join(self.values()) + ">"


@dataclass(frozen=True)
class Catalog:
    categories: Tuple[Category, ...]
    constraints: Tuple[Constraint, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise CatalogError("duplicate category name")
        for con in self.constraints:
            for atom in con.formula.atoms():
                self._check_atom(atom)

    def _check_atom(self, atom: Atom) -> None:
        cat = self.category(atom.category)
        if cat is None:
            raise CatalogError(f"unknown category {atom.category!r} in constraint")
        if atom.element not in cat.elements:
            raise CatalogError(f"unknown element {atom.category}.{atom.element} in constraint")

    def category(self, name: str) -> Optional[Category]:
        for c in self.categories:
            if c.name == name:
                return c
        return None

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def with_constraint(self, constraint: Constraint) -> "Catalog":
        return Catalog(self.categories, self.constraints + (constraint,))

    def check_assignment(self, assignment: Mapping[str, str]) -> None:
        for cat, elem in assignment.items():
            c = self.category(cat)
            if c is None:
                raise CatalogError(f"unknown category {cat!r}")
            if elem not in c.elements:
                raise CatalogError(f"unknown element {cat}.{elem}")

    def satisfies(self, assignment: Mapping[str, str]) -> Optional[bool]:
        """Three-valued conjunction of all constraints."""
        result: Optional[bool] = True
        for con in self.constraints:
            v = con.formula.eval(assignment)
            if v is False:
                return False
            if v is None:
                result = None
        return result

    def to_dict(self) -> dict:
        return {
            "categories": [{"name": c.name, "elements": list(c.elements)} for c in self.categories],
            "constraints": [str(c) for c in self.constraints],
        }

    @cached_property
    def feasible_assignments(self) -> Tuple[AbstractScenario, ...]:
        """All constraint-satisfying total assignments, in lexicographic declaration order."""
        return tuple(AbstractScenario(tuple(zip(self.names, vals))) for vals in _extensions(self, {}))


def _extensions(catalog: Catalog, fixed: Mapping[str, str]) -> Iterator[Tuple[str, ...]]:
    """Depth-first enumeration of satisfying total extensions of ``fixed``.

    Branches are cut as soon as the three-valued evaluation turns false.
    """
    cats = catalog.categories
    current = dict(fixed)

    def rec(i: int) -> Iterator[Tuple[str, ...]]:
        if i == len(cats):
            if catalog.satisfies(current) is True:
                yield tuple(current[c.name] for c in cats)
            return
        cat = cats[i]
        if cat.name in fixed:
            yield from rec(i + 1)
            return
        for elem in cat.elements:
            current[cat.name] = elem
            if catalog.satisfies(current) is not False:
                yield from rec(i + 1)
        del current[cat.name]

    if catalog.satisfies(current) is False:
        return iter(())
    return rec(0)


def parse_catalog(text: str) -> Catalog:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"syntax error: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(data, dict) or "categories" not in data:
        raise CatalogError("catalog must be an object with a 'categories' list")
    cats = []
    for entry in data["categories"]:
        if not isinstance(entry, dict) or "name" not in entry or "elements" not in entry:
            raise CatalogError(f"malformed category entry {entry!r}")
        cats.append(Category(str(entry["name"]), tuple(str(e) for e in entry["elements"])))
    constraints = []
    for i, src in enumerate(data.get("constraints") or []):
        try:
            formula = parse_formula(src)
        except CatalogError as exc:
            raise CatalogError(f"constraint {i}: {exc}") from None
        constraints.append(Constraint(formula, src))
    return Catalog(tuple(cats), tuple(constraints))


def load_catalog(path) -> Catalog:
    with open(path) as fh:
        return parse_catalog(fh.read())


def is_feasible(assignment: Mapping[str, str], catalog: Catalog) -> bool:
    """True iff some constraint-satisfying total extension of ``assignment`` exists."""
    catalog.check_assignment(assignment)
    if catalog.satisfies(assignment) is False:
        return False
    for _ in _extensions(catalog, assignment):
        return True
    return False


# -- coverage -----------------------------------------------------------------


@dataclass(frozen=True)
class CoverageModel:
    k: int
    feasible_tuples: frozenset
    covered_tuples: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.covered_tuples <= self.feasible_tuples:
            raise ValueError("covered tuples must be feasible")

    @property
    def uncovered(self) -> frozenset:
        return self.feasible_tuples - self.covered_tuples

    def with_covered(self, tuples: Iterable[KTuple]) -> "CoverageModel":
        return CoverageModel(self.k, self.feasible_tuples, self.covered_tuples | (frozenset(tuples) & self.feasible_tuples))

    def ratio(self) -> Fraction:
        if not self.feasible_tuples:
            return Fraction(1)
        return Fraction(len(self.covered_tuples), len(self.feasible_tuples))

    def per_subset(self) -> Dict[Tuple[str, ...], Tuple[int, int]]:
        """Category subset -> (covered, feasible)."""
        out: Dict[Tuple[str, ...], List[int]] = {}
        for cats, _ in self.feasible_tuples:
            out.setdefault(cats, [0, 0])[1] += 1
        for cats, _ in self.covered_tuples:
            out[cats][0] += 1
        return {k: (v[0], v[1]) for k, v in sorted(out.items())}


def category_subsets(catalog: Catalog, k: int) -> List[Tuple[str, ...]]:
    if not 1 <= k <= len(catalog.categories):
        raise ValueError(f"k={k} out of range 1..{len(catalog.categories)}")
    return list(itertools.combinations(catalog.names, k))


def project(scenario: AbstractScenario, subsets: Sequence[Tuple[str, ...]]) -> List[KTuple]:
    a = scenario.assignment
    return [(s, tuple(a[c] for c in s)) for s in subsets]


def enumerate_feasible_tuples(catalog: Catalog, k: int) -> frozenset:
    """The k-tuples that extend to at least one feasible total assignment."""
    subsets = category_subsets(catalog, k)
    out = set()
    for scen in catalog.feasible_assignments:
        out.update(project(scen, subsets))
    return frozenset(out)


def coverage_model(catalog: Catalog, k: int = 2) -> CoverageModel:
    return CoverageModel(k, enumerate_feasible_tuples(catalog, k))


def covered_by(scenarios: Iterable[AbstractScenario], catalog: Catalog, k: int) -> frozenset:
    subsets = category_subsets(catalog, k)
    out = set()
    for s in scenarios:
        out.update(project(s, subsets))
    return frozenset(out)


def coverage_ratio(scenarios: Iterable[AbstractScenario], model: CoverageModel) -> Fraction:
    if not model.feasible_tuples:
        return Fraction(1)
    covered = set()
    cached_subsets: Dict[Tuple[str, ...], List[Tuple[str, ...]]] = {}
    for s in scenarios:
        names = tuple(c for c, _ in s.items)
        subsets = cached_subsets.get(names)
        if subsets is None:
            subsets = cached_subsets[names] = list(itertools.combinations(names, model.k))
        covered.update(project(s, subsets))
    return Fraction(len(covered & model.feasible_tuples), len(model.feasible_tuples))
