"""Rule predicates and rule sampling.

relation_holds is the oracle every generated problem is verified against:
constant rows are all-equal, progression rows advance by a fixed step,
arithmetic rows satisfy third = first +/- second, and distribute_three
requires all three rows to share one multiset of three distinct values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .types import (ARITHMETIC, ARITHMETIC_SIGNS, CONSTANT, DISTRIBUTE_THREE,
                    DOMAIN_SIZE, PROGRESSION, PROGRESSION_STEPS, Attribute,
                    Layout, Relation, RuleSpec)


class ConstraintError(ValueError):
    """Rule sampling constraints cannot be satisfied."""


HeldoutPair = tuple[Attribute, str]  # (attribute, relation kind)


@dataclass(frozen=True)
class HeldoutFilter:
    """Either forbid the listed (attribute, kind) pairs everywhere, or require
    at least one of them to be present in every sampled rule set."""

    mode: str  # "exclude" | "require"
    pairs: frozenset[HeldoutPair]

    def __post_init__(self) -> None:
        if self.mode not in ("exclude", "require"):
            raise ValueError(f"bad heldout mode {self.mode!r}")


def relation_kinds(attr: Attribute) -> tuple[str, ...]:
    """Relation kinds admissible for an attribute's domain. Arithmetic over
    shape identity is meaningless, so TYPE excludes it."""
    if attr is Attribute.TYPE:
        return (CONSTANT, PROGRESSION, DISTRIBUTE_THREE)
    return (CONSTANT, PROGRESSION, ARITHMETIC, DISTRIBUTE_THREE)


def _check_domain(attr: Attribute, values) -> None:
    for v in values:
        if not 0 <= v < DOMAIN_SIZE[attr]:
            raise ValueError(f"value {v} outside domain of {attr.label}")


def relation_holds(rel: Relation, triple: Sequence[int], attr: Attribute,
                   rows: Optional[Sequence[Sequence[int]]] = None) -> bool:
    """Does the relation hold on one row (given as a value triple)?

    distribute_three is a whole-matrix property, so it additionally needs
    rows: the three value triples of the completed matrix.
    """
    _check_domain(attr, triple)
    v1, v2, v3 = triple
    if rel.kind == CONSTANT:
        return v1 == v2 == v3
    if rel.kind == PROGRESSION:
        s = rel.param
        return v2 == v1 + s and v3 == v2 + s
    if rel.kind == ARITHMETIC:
        return v3 == (v1 + v2 if rel.param > 0 else v1 - v2)
    # distribute_three
    if rows is None:
        raise ValueError("distribute_three needs all three rows")
    for row in rows:
        _check_domain(attr, row)
    first = sorted(rows[0])
    if len(set(first)) != 3:
        return False
    return all(sorted(row) == first for row in rows)


def sample_relation(attr: Attribute, rng: np.random.Generator,
                    exclude: frozenset[HeldoutPair] = frozenset()) -> Relation:
    """Uniform over admissible kinds (then uniform over the kind's parameter),
    skipping excluded (attribute, kind) pairs."""
    kinds = [k for k in relation_kinds(attr) if (attr, k) not in exclude]
    if not kinds:
        raise ConstraintError(f"no admissible relations left for {attr.label}")
    kind = kinds[rng.integers(len(kinds))]
    return _with_param(kind, rng)


def _with_param(kind: str, rng: np.random.Generator) -> Relation:
    if kind == PROGRESSION:
        return Relation(kind, PROGRESSION_STEPS[rng.integers(len(PROGRESSION_STEPS))])
    if kind == ARITHMETIC:
        return Relation(kind, ARITHMETIC_SIGNS[rng.integers(len(ARITHMETIC_SIGNS))])
    return Relation(kind)


def sample_rules(layout: Layout, rng: np.random.Generator,
                 heldout: Optional[HeldoutFilter] = None,
                 rel_count: int = 3) -> list[RuleSpec]:
    """One relation per governed attribute per component.

    rel_count caps the governed attributes per component (a random subset;
    the rest stay ungoverned noise). With an exclude filter no sampled
    (attribute, kind) pair is in the filter; with a require filter at least
    one is, forced onto a uniformly chosen compatible slot if needed.
    """
    if rel_count < 1:
        raise ConstraintError(f"rel_count must be >= 1, got {rel_count}")
    exclude = heldout.pairs if heldout is not None and heldout.mode == "exclude" \
        else frozenset()

    rules: list[RuleSpec] = []
    for comp in range(layout.n_components):
        attrs = list(layout.governable(comp))
        k = min(rel_count, len(attrs))
        if k < len(attrs):
            picked = sorted(rng.choice(len(attrs), size=k, replace=False))
            attrs = [attrs[i] for i in picked]
        for attr in attrs:
            rules.append(RuleSpec(comp, attr, sample_relation(attr, rng, exclude)))

    if heldout is not None and heldout.mode == "require":
        hit = any((r.attribute, r.relation.kind) in heldout.pairs for r in rules)
        if not hit:
            slots = [(i, pair) for i, r in enumerate(rules)
                     for pair in heldout.pairs
                     if pair[0] == r.attribute and pair[1] in relation_kinds(r.attribute)]
            if not slots:
                raise ConstraintError(
                    "no governed slot can host any required heldout pair")
            idx, (attr, kind) = slots[rng.integers(len(slots))]
            old = rules[idx]
            rules[idx] = RuleSpec(old.component, attr, _with_param(kind, rng))
    return rules
