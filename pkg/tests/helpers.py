"""Shared test utilities: seeded random rule bases and independent oracles.

The random generator builds layered DAGs (inputs at level 0, derived
propositions above, the top level marked as output classes) so depth is
bounded by construction and cycles are impossible.  The oracles here stay
deliberately dumb: reachability by scanning antecedents, full re-evaluation
for incremental checks.
"""

from __future__ import annotations

import random

from cf_forge import (
    And,
    Not,
    Or,
    Proposition,
    Ref,
    Rule,
    RuleBase,
    TrainingObject,
    referenced_props,
)
from cf_forge.model import DERIVED, INPUT


def random_expr(rng: random.Random, candidates: list[str], max_leaves: int = 3):
    n = rng.randint(1, min(max_leaves, len(candidates)))
    leaves = [Ref(p) for p in rng.sample(candidates, n)]
    leaves = [Not(l) if rng.random() < 0.2 else l for l in leaves]
    if len(leaves) == 1:
        return leaves[0]
    node = And(tuple(leaves)) if rng.random() < 0.5 else Or(tuple(leaves))
    if rng.random() < 0.1:
        node = Not(node)
    return node


def random_rulebase(
    rng: random.Random,
    max_rules: int = 100,
    max_depth: int = 6,
) -> RuleBase:
    depth = rng.randint(1, max_depth)
    levels: list[list[str]] = [[f"in{i}" for i in range(rng.randint(2, 5))]]
    for d in range(1, depth + 1):
        levels.append([f"d{d}_{i}" for i in range(rng.randint(1, 4))])
    props = [Proposition(p, INPUT) for p in levels[0]]
    for d in range(1, depth + 1):
        top = d == depth
        props += [Proposition(p, DERIVED, output_class=top) for p in levels[d]]
    n_rules = rng.randint(depth, max_rules)
    rules = []
    for k in range(n_rules):
        lvl = rng.randint(1, depth)
        below = [p for lev in levels[:lvl] for p in lev]
        rules.append(
            Rule(
                id=f"r{k:03d}",
                antecedent=random_expr(rng, below),
                consequent=rng.choice(levels[lvl]),
                weight=rng.uniform(-1.0, 1.0),
            )
        )
    return RuleBase(props, rules)


def random_object(rng: random.Random, rb: RuleBase, oid: str = "obj0") -> TrainingObject:
    facts = {}
    for p in rb.propositions.values():
        if p.kind == INPUT and rng.random() < 0.9:
            facts[p.id] = rng.uniform(-1.0, 1.0)
    label = rng.choice(rb.output_classes)
    return TrainingObject(id=oid, facts=facts, label=label)


def brute_force_closure(rb: RuleBase, rule_id: str) -> frozenset[str]:
    """Reachability on edges recomputed from scratch by scanning every
    antecedent; independent of the rule base's cached graph."""
    seen = {rule_id}
    frontier = [rule_id]
    while frontier:
        current = rb.rules_by_id[frontier.pop()]
        for r in rb.rules:
            if r.id not in seen and current.consequent in referenced_props(r.antecedent):
                seen.add(r.id)
                frontier.append(r.id)
    return frozenset(seen)
