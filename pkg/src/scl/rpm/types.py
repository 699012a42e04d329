"""Symbolic vocabulary for generated matrix puzzles.

A puzzle is a 3x3 grid of panels (position 9 missing from the context) plus
8 candidate panels. Each panel holds one object per layout component, and
each object is an integer triple over the attributes (type, size, color).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class Attribute(enum.IntEnum):
    TYPE = 0
    SIZE = 1
    COLOR = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Attribute":
        return cls[label.upper()]


# Integer value domains, all starting at 0.
DOMAIN_SIZE = {Attribute.TYPE: 5, Attribute.SIZE: 6, Attribute.COLOR: 10}


def domain(attr: Attribute) -> range:
    return range(DOMAIN_SIZE[attr])


def domain_max(attr: Attribute) -> int:
    return DOMAIN_SIZE[attr] - 1


CONSTANT = "constant"
PROGRESSION = "progression"
ARITHMETIC = "arithmetic"
DISTRIBUTE_THREE = "distribute_three"

RELATION_KINDS = (CONSTANT, PROGRESSION, ARITHMETIC, DISTRIBUTE_THREE)
PROGRESSION_STEPS = (-2, -1, 1, 2)
ARITHMETIC_SIGNS = (1, -1)


@dataclass(frozen=True)
class Relation:
    """A row rule. param is the progression step, the arithmetic sign
    (+1 or -1), and 0 otherwise."""

    kind: str
    param: int = 0

    def __post_init__(self) -> None:
        if self.kind not in RELATION_KINDS:
            raise ValueError(f"unknown relation kind {self.kind!r}")
        if self.kind == PROGRESSION and self.param not in PROGRESSION_STEPS:
            raise ValueError(f"bad progression step {self.param}")
        if self.kind == ARITHMETIC and self.param not in ARITHMETIC_SIGNS:
            raise ValueError(f"bad arithmetic sign {self.param}")

    def describe(self) -> str:
        if self.kind == PROGRESSION:
            return f"progression({self.param:+d})"
        if self.kind == ARITHMETIC:
            return f"arithmetic({'+' if self.param > 0 else '-'})"
        return self.kind


@dataclass(frozen=True)
class RuleSpec:
    component: int
    attribute: Attribute
    relation: Relation


class Layout(enum.Enum):
    CENTER = "center"
    LEFT_RIGHT = "lr"
    UP_DOWN = "ud"
    OUT_IN_CENTER = "oic"

    @property
    def n_components(self) -> int:
        return 1 if self is Layout.CENTER else 2

    def governable(self, component: int) -> tuple[Attribute, ...]:
        """Attributes that rules may govern for this component.

        The outer component of OUT_IN_CENTER is drawn as an unfilled outline,
        so its color carries no pixels and is pinned instead of governed.
        """
        if self is Layout.OUT_IN_CENTER and component == 0:
            return (Attribute.TYPE, Attribute.SIZE)
        return (Attribute.TYPE, Attribute.SIZE, Attribute.COLOR)

    @classmethod
    def from_tag(cls, tag: str) -> "Layout":
        for layout in cls:
            if layout.value == tag:
                return layout
        raise ValueError(f"unknown layout {tag!r}")


# One object per component: ((type, size, color), ...) indexed by Attribute.
ObjectSpec = tuple[int, int, int]
Assignment = tuple[ObjectSpec, ...]


@dataclass
class ProblemSpec:
    """One fully-specified puzzle with symbolic ground truth.

    panels holds all nine grid positions row-major; panels[8] is the true
    answer. candidates holds the shuffled 8-way choice set, and exactly
    candidates[answer_index] satisfies every rule at position 9.
    """

    layout: Layout
    rules: list[RuleSpec]
    panels: list[Assignment]
    candidates: list[Assignment]
    answer_index: int
    rng_seed: int
    rel_count: int = 3

    def governed_slots(self) -> list[tuple[int, Attribute]]:
        return [(r.component, r.attribute) for r in self.rules]

    def rule_for(self, component: int, attribute: Attribute) -> Optional[RuleSpec]:
        for r in self.rules:
            if r.component == component and r.attribute == attribute:
                return r
        return None

    def to_json_obj(self) -> dict:
        return {
            "layout": self.layout.value,
            "rel_count": self.rel_count,
            "rng_seed": self.rng_seed,
            "answer_index": self.answer_index,
            "rules": [{"component": r.component, "attribute": r.attribute.label,
                       "kind": r.relation.kind, "param": r.relation.param}
                      for r in self.rules],
            "panels": [[list(obj) for obj in panel] for panel in self.panels],
            "candidates": [[list(obj) for obj in panel] for panel in self.candidates],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ProblemSpec":
        return cls(
            layout=Layout.from_tag(obj["layout"]),
            rules=[RuleSpec(r["component"], Attribute.from_label(r["attribute"]),
                            Relation(r["kind"], r["param"]))
                   for r in obj["rules"]],
            panels=[tuple(tuple(o) for o in panel) for panel in obj["panels"]],
            candidates=[tuple(tuple(o) for o in panel) for panel in obj["candidates"]],
            answer_index=obj["answer_index"],
            rng_seed=obj["rng_seed"],
            rel_count=obj.get("rel_count", 3),
        )
