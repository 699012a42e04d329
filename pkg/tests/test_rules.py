"""Relation predicates and rule sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scl.rpm import (Attribute, ConstraintError, HeldoutFilter, Layout,
                     Relation, relation_holds, relation_kinds, sample_rules)
from scl.rpm.types import DOMAIN_SIZE


def test_constant():
    assert relation_holds(Relation("constant"), [5, 5, 5], Attribute.COLOR)
    assert not relation_holds(Relation("constant"), [5, 5, 4], Attribute.COLOR)


def test_progression():
    assert relation_holds(Relation("progression", 1), [2, 3, 4], Attribute.SIZE)
    assert not relation_holds(Relation("progression", 1), [2, 3, 5], Attribute.SIZE)
    assert relation_holds(Relation("progression", -2), [4, 2, 0], Attribute.SIZE)


def test_arithmetic():
    assert relation_holds(Relation("arithmetic", 1), [2, 3, 5], Attribute.COLOR)
    assert not relation_holds(Relation("arithmetic", 1), [2, 3, 6], Attribute.COLOR)
    assert relation_holds(Relation("arithmetic", -1), [7, 3, 4], Attribute.COLOR)


def test_distribute_three():
    d3 = Relation("distribute_three")
    rows = [[1, 2, 3], [3, 1, 2], [2, 3, 1]]
    assert relation_holds(d3, rows[2], Attribute.COLOR, rows=rows)
    bad = [[1, 2, 3], [1, 2, 3], [1, 1, 2]]
    assert not relation_holds(d3, bad[2], Attribute.COLOR, rows=bad)
    # repeated values within the multiset do not count
    rep = [[1, 1, 2], [1, 1, 2], [2, 1, 1]]
    assert not relation_holds(d3, rep[2], Attribute.COLOR, rows=rep)


def test_distribute_three_requires_rows():
    with pytest.raises(ValueError, match="rows"):
        relation_holds(Relation("distribute_three"), [1, 2, 3], Attribute.COLOR)


def test_out_of_domain_value():
    with pytest.raises(ValueError, match="domain"):
        relation_holds(Relation("constant"), [5, 5, 5], Attribute.TYPE)


@given(st.integers(0, 5), st.sampled_from([-2, -1, 1, 2]))
@settings(max_examples=50)
def test_progression_property(v1, step):
    triple = [v1, v1 + step, v1 + 2 * step]
    if all(0 <= v <= 5 for v in triple):
        assert relation_holds(Relation("progression", step), triple, Attribute.SIZE)


@given(st.integers(0, 9), st.integers(0, 9))
@settings(max_examples=50)
def test_arithmetic_property(v1, v2):
    if v1 + v2 <= 9:
        assert relation_holds(Relation("arithmetic", 1), [v1, v2, v1 + v2],
                              Attribute.COLOR)
    if v1 - v2 >= 0:
        assert relation_holds(Relation("arithmetic", -1), [v1, v2, v1 - v2],
                              Attribute.COLOR)


def test_type_excludes_arithmetic():
    assert "arithmetic" not in relation_kinds(Attribute.TYPE)
    assert "arithmetic" in relation_kinds(Attribute.SIZE)


def test_sample_rules_center_rel3():
    rules = sample_rules(Layout.CENTER, np.random.default_rng(0))
    assert len(rules) == 3
    assert {r.attribute for r in rules} == set(Attribute)


def test_sample_rules_rel1_leaves_noise_attributes():
    rules = sample_rules(Layout.CENTER, np.random.default_rng(1), rel_count=1)
    assert len(rules) == 1


def test_sample_rules_two_components():
    rules = sample_rules(Layout.LEFT_RIGHT, np.random.default_rng(2))
    assert len(rules) == 6
    assert {r.component for r in rules} == {0, 1}


def test_sample_rules_oic_outer_has_no_color():
    for seed in range(20):
        rules = sample_rules(Layout.OUT_IN_CENTER, np.random.default_rng(seed))
        outer = [r for r in rules if r.component == 0]
        assert len(outer) == 2
        assert all(r.attribute is not Attribute.COLOR for r in outer)


def test_exclusion_filter_never_samples_pair():
    heldout = HeldoutFilter("exclude", frozenset({(Attribute.COLOR, "progression")}))
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        rules = sample_rules(Layout.CENTER, rng, heldout=heldout)
        assert not any(r.attribute is Attribute.COLOR and
                       r.relation.kind == "progression" for r in rules)


def test_requirement_filter_always_present():
    heldout = HeldoutFilter("require", frozenset({(Attribute.COLOR, "progression")}))
    rng = np.random.default_rng(4)
    for _ in range(500):
        rules = sample_rules(Layout.CENTER, rng, heldout=heldout)
        assert any(r.attribute is Attribute.COLOR and
                   r.relation.kind == "progression" for r in rules)


def test_infeasible_exclusion_raises():
    pairs = frozenset((Attribute.SIZE, k) for k in relation_kinds(Attribute.SIZE))
    with pytest.raises(ConstraintError):
        sample_rules(Layout.CENTER, np.random.default_rng(5),
                     heldout=HeldoutFilter("exclude", pairs))


def test_infeasible_requirement_raises():
    heldout = HeldoutFilter("require", frozenset({(Attribute.TYPE, "arithmetic")}))
    with pytest.raises(ConstraintError):
        sample_rules(Layout.CENTER, np.random.default_rng(6), heldout=heldout)


def test_relation_kind_distribution_uniform():
    rng = np.random.default_rng(7)
    counts = {k: 0 for k in relation_kinds(Attribute.SIZE)}
    n = 4000
    for _ in range(n):
        rules = sample_rules(Layout.CENTER, rng)
        rule = next(r for r in rules if r.attribute is Attribute.SIZE)
        counts[rule.relation.kind] += 1
    for kind, c in counts.items():
        assert abs(c / n - 0.25) < 0.04, counts
