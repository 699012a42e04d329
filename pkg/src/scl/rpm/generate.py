"""Procedural problem generation with symbolic ground truth.

Each problem is generated from its own RNG, derived from (global seed,
problem index), so any index can be regenerated in isolation. Every
generated problem is verified against the rule oracle: all rules hold on
all three rows, and exactly one candidate completes the matrix.

Candidate sets are built to carry no answer signal on their own: three
governed attribute slots are chosen, each gets one alternative value, and
the 8 candidates enumerate the flip patterns (the answer is the all-original
corner). Every chosen slot then shows each of its two values in exactly four
candidates, so per-attribute value frequencies are identical across the set.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .rules import HeldoutFilter, relation_holds, sample_rules
from .types import (CONSTANT, DISTRIBUTE_THREE, DOMAIN_SIZE, PROGRESSION,
                    Assignment, Attribute, Layout, ProblemSpec, Relation,
                    RuleSpec)

_MAX_TRIES = 1000

# Pinned outer-component color for OUT_IN_CENTER (unfilled outline).
OIC_OUTER_COLOR = 0


class GenerationError(RuntimeError):
    """Sampling budget exhausted or an internal consistency check failed."""


def derive_seed(global_seed: int, index: int) -> int:
    """Per-problem RNG seed; stable across bulk and isolated generation."""
    ss = np.random.SeedSequence([int(global_seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def _sample_rows(rel: Relation, attr: Attribute,
                 rng: np.random.Generator) -> np.ndarray:
    """3x3 value grid (rows x columns) satisfying rel on every row."""
    n = DOMAIN_SIZE[attr]
    if rel.kind == DISTRIBUTE_THREE:
        values = rng.choice(n, size=3, replace=False)
        return np.stack([rng.permutation(values) for _ in range(3)])

    rows = []
    for _ in range(3):
        if rel.kind == CONSTANT:
            v = int(rng.integers(n))
            rows.append((v, v, v))
        elif rel.kind == PROGRESSION:
            s = rel.param
            lo, hi = (0, n - 1 - 2 * s) if s > 0 else (-2 * s, n - 1)
            v1 = int(rng.integers(lo, hi + 1))
            rows.append((v1, v1 + s, v1 + 2 * s))
        else:  # arithmetic, rejection keeps the result in-domain
            for attempt in range(_MAX_TRIES):
                v1 = int(rng.integers(n))
                v2 = int(rng.integers(n))
                v3 = v1 + v2 if rel.param > 0 else v1 - v2
                if 0 <= v3 < n:
                    rows.append((v1, v2, v3))
                    break
            else:
                raise GenerationError(f"arithmetic sampling failed for {attr.label}")
    return np.asarray(rows)


def _noise_value(attr: Attribute, rng: np.random.Generator) -> int:
    return int(rng.integers(DOMAIN_SIZE[attr]))


def _pinned_value(layout: Layout, component: int, attr: Attribute) -> Optional[int]:
    if layout is Layout.OUT_IN_CENTER and component == 0 and attr is Attribute.COLOR:
        return OIC_OUTER_COLOR
    return None


def make_distractors(answer: Assignment, rules: Sequence[RuleSpec],
                     rng: np.random.Generator) -> list[Assignment]:
    """Seven wrong candidates, each differing from the answer in at least one
    governed attribute, with balanced per-attribute value frequencies.

    With >= 3 governed slots: pick 3, one alternative value each, and emit
    the 7 non-identity flip patterns of the {original, alternative}^3 cube.
    With 2 slots: the first slot uses three alternative values (split 2/2/2/2
    with the original); with 1 slot the 7 alternatives cycle the remaining
    domain as evenly as possible (perfect balance is impossible there, since
    every wrong candidate must change the one governed value).
    """
    slots = [(r.component, r.attribute) for r in rules]

    def build(changes: dict[tuple[int, Attribute], int]) -> Assignment:
        objs = [list(obj) for obj in answer]
        for (comp, attr), value in changes.items():
            objs[comp][attr] = value
        return tuple(tuple(o) for o in objs)

    def alternatives(slot, count) -> list[int]:
        comp, attr = slot
        current = answer[comp][attr]
        pool = [v for v in range(DOMAIN_SIZE[attr]) if v != current]
        if len(pool) < count:
            raise GenerationError(f"domain of {attr.label} too small")
        picked = rng.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in picked]

    if len(slots) >= 3:
        chosen = [slots[i] for i in rng.choice(len(slots), size=3, replace=False)]
        alts = {slot: alternatives(slot, 1)[0] for slot in chosen}
        out = []
        for mask in range(1, 8):
            changes = {slot: alts[slot] for bit, slot in enumerate(chosen)
                       if mask >> bit & 1}
            out.append(build(changes))
        return out

    if len(slots) == 2:
        a, b = slots
        alt_a = alternatives(a, 3)
        alt_b = alternatives(b, 1)[0]
        values_a = [answer[a[0]][a[1]]] + alt_a
        out = []
        for ia in range(4):
            for ib in range(2):
                if ia == 0 and ib == 0:
                    continue  # the answer itself
                changes = {}
                if ia > 0:
                    changes[a] = values_a[ia]
                if ib > 0:
                    changes[b] = alt_b
                out.append(build(changes))
        return out

    # single governed slot: all 7 must differ there
    slot = slots[0]
    comp, attr = slot
    pool = [v for v in range(DOMAIN_SIZE[attr]) if v != answer[comp][attr]]
    reps = -(-7 // len(pool))  # ceil
    values = (pool * reps)[:7]
    rng.shuffle(values)
    return [build({slot: v}) for v in values]


def _resample_noise(candidates: list[Assignment], layout: Layout,
                    governed: set[tuple[int, Attribute]],
                    rng: np.random.Generator) -> list[Assignment]:
    """Ungoverned attributes are i.i.d. uniform per candidate (pinned ones
    stay pinned); resample on full-assignment collisions."""
    noise_slots = [(c, a) for c in range(layout.n_components) for a in Attribute
                   if (c, a) not in governed and _pinned_value(layout, c, a) is None]
    if not noise_slots:
        return candidates
    out: list[Assignment] = []
    seen = set()
    for cand in candidates:
        for attempt in range(_MAX_TRIES):
            objs = [list(obj) for obj in cand]
            for comp, attr in noise_slots:
                objs[comp][attr] = _noise_value(attr, rng)
            fresh = tuple(tuple(o) for o in objs)
            if fresh not in seen:
                break
        else:
            raise GenerationError("could not de-duplicate candidate noise")
        seen.add(fresh)
        out.append(fresh)
    return out


def check_candidates(panels: Sequence[Assignment], candidates: Sequence[Assignment],
                     rules: Sequence[RuleSpec]) -> list[int]:
    """Indices of candidates that satisfy every rule when placed at position 9."""
    valid = []
    for idx, cand in enumerate(candidates):
        grid = list(panels[:8]) + [cand]
        ok = True
        for rule in rules:
            rows = [[grid[r * 3 + c][rule.component][rule.attribute]
                     for c in range(3)] for r in range(3)]
            if not relation_holds(rule.relation, rows[2], rule.attribute, rows=rows):
                ok = False
                break
        if ok:
            valid.append(idx)
    return valid


def generate_problem(layout: Layout, seed: int,
                     heldout: Optional[HeldoutFilter] = None,
                     rel_count: int = 3) -> ProblemSpec:
    """Sample rules, fill the 3x3 grid, build the candidate set, verify."""
    rng = np.random.default_rng(np.uint64(seed))
    rules = sample_rules(layout, rng, heldout, rel_count)
    governed = {(r.component, r.attribute) for r in rules}

    values: dict[tuple[int, Attribute], np.ndarray] = {}
    for rule in rules:
        values[(rule.component, rule.attribute)] = _sample_rows(
            rule.relation, rule.attribute, rng)

    panels: list[Assignment] = []
    for r in range(3):
        for c in range(3):
            objs = []
            for comp in range(layout.n_components):
                obj = []
                for attr in Attribute:
                    pinned = _pinned_value(layout, comp, attr)
                    if (comp, attr) in governed:
                        obj.append(int(values[(comp, attr)][r, c]))
                    elif pinned is not None:
                        obj.append(pinned)
                    else:
                        obj.append(_noise_value(attr, rng))
                objs.append(tuple(obj))
            panels.append(tuple(objs))

    answer = panels[8]
    distractors = make_distractors(answer, rules, rng)
    distractors = _resample_noise(distractors, layout, governed, rng)
    candidates = [answer] + distractors
    order = rng.permutation(8)
    candidates = [candidates[i] for i in order]
    answer_index = int(np.where(order == 0)[0][0])

    valid = check_candidates(panels, candidates, rules)
    if valid != [answer_index]:
        raise GenerationError(f"candidate check failed: valid={valid}, "
                              f"answer={answer_index}")
    return ProblemSpec(layout=layout, rules=rules, panels=panels,
                       candidates=candidates, answer_index=answer_index,
                       rng_seed=seed, rel_count=rel_count)


def generate_problems(layout: Layout, count: int, global_seed: int,
                      heldout: Optional[HeldoutFilter] = None,
                      rel_count: int = 3, start_index: int = 0) -> list[ProblemSpec]:
    return [generate_problem(layout, derive_seed(global_seed, start_index + i),
                             heldout, rel_count)
            for i in range(count)]


def frequency_audit(problems: Sequence[ProblemSpec], mode: str = "most") -> float:
    """Expected accuracy of a context-blind frequency classifier.

    For every candidate, sum over attribute columns the count of candidates
    sharing its value; pick the max (mode="most") or min ("least") scorer,
    splitting ties uniformly. A balanced candidate set scores 1/8.
    """
    if mode not in ("most", "least"):
        raise ValueError(f"bad audit mode {mode!r}")
    total = 0.0
    for spec in problems:
        cols = np.asarray([[obj[attr] for obj in cand for attr in Attribute]
                           for cand in spec.candidates])  # [8, C*3]
        scores = np.zeros(8)
        for j in range(cols.shape[1]):
            col = cols[:, j]
            _, inverse, counts = np.unique(col, return_inverse=True,
                                           return_counts=True)
            scores += counts[inverse]
        best = scores.max() if mode == "most" else scores.min()
        winners = np.flatnonzero(scores == best)
        if spec.answer_index in winners:
            total += 1.0 / len(winners)
    return total / len(problems)
