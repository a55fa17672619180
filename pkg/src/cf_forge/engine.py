"""Forward-chaining evaluation of one object, full-pass and incremental.

``evaluate_full`` fires every rule once in topological order.  A rule fires
when its antecedent CF exceeds the firing threshold; its contribution,
weight x antecedent CF, is pooled into the consequent's CF.

``perturb_weight`` is the incremental path: changing a single rule's weight
re-fires only that rule and the rules downstream of its consequent.  Each
affected proposition is refolded from its stored contribution list in the
static topological order of its incoming rules, which replays exactly the
fold sequence a full pass would execute.  Incremental results are therefore
bit-identical to a fresh full pass, except where propagation is cut off
because a proposition moved by less than ``propagation_cutoff`` (pure
floating-point noise); that slack is far inside the engine's 1e-12
equivalence budget.

Evaluations of distinct objects are independent; a single ObjectEvaluation
is single-owner mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .algebra import combine_parallel, eval_expr
from .errors import InconsistentState, NoOutputClasses
from .model import INPUT, RuleBase, TrainingObject


@dataclass
class FiringPolicy:
    """Engine knobs.

    threshold: a rule fires only when its antecedent CF is strictly above
    this value (default 0.0; raising it introduces discontinuities into the
    objective-over-weights surface for deep bases, so train with care).

    propagation_cutoff: incremental propagation stops along branches whose
    proposition CF changed by less than this (0.0 means propagate any
    bitwise change).
    """

    threshold: float = 0.0
    propagation_cutoff: float = 1e-15

    def __post_init__(self) -> None:
        if not (0.0 <= self.threshold < 1.0):
            raise ValueError(f"firing threshold must be in [0, 1): {self.threshold!r}")
        if self.propagation_cutoff < 0.0:
            raise ValueError("propagation_cutoff must be >= 0")


DEFAULT_POLICY = FiringPolicy()


@dataclass
class EvalCounters:
    """Monotone work counters: rules_fired accumulates every rule firing
    (full passes and incremental re-fires); full_passes counts only
    evaluate_full calls."""

    rules_fired: int = 0
    full_passes: int = 0


class ObjectEvaluation:
    """Cached inference state for one object.

    prop_cf holds every proposition's combined CF; rule_ante every rule's
    antecedent CF; contributions maps each produced proposition to the
    contributions of its currently-firing rules, keyed by rule id.  The
    refold invariant: each produced proposition's CF equals the fold of its
    stored contributions in the rule base's incoming order.
    """

    __slots__ = ("object_id", "prop_cf", "rule_ante", "contributions", "counters")

    def __init__(self, object_id: str):
        self.object_id = object_id
        self.prop_cf: dict[str, float] = {}
        self.rule_ante: dict[str, float] = {}
        self.contributions: dict[str, dict[str, float]] = {}
        self.counters = EvalCounters()

    def contribution(self, rb: RuleBase, rule_id: str) -> float | None:
        """The rule's current contribution, or None when it is not firing."""
        rule = rb.rule(rule_id)
        return self.contributions.get(rule.consequent, {}).get(rule_id)

    def class_cfs(self, rb: RuleBase) -> dict[str, float]:
        return {cid: self.prop_cf[cid] for cid in rb.output_classes}

    def check_consistent(self, rb: RuleBase) -> None:
        """Verify the refold invariant; raises InconsistentState."""
        for prop_id, bucket in self.contributions.items():
            acc = 0.0
            for rid in rb.incoming_rules(prop_id):
                c = bucket.get(rid)
                if c is not None:
                    acc = combine_parallel(acc, c)
            if acc != self.prop_cf[prop_id]:
                raise InconsistentState(
                    f"object {self.object_id!r}: proposition {prop_id!r} CF "
                    f"{self.prop_cf[prop_id]!r} != refold {acc!r}"
                )


def evaluate_full(
    rb: RuleBase,
    obj: TrainingObject,
    policy: FiringPolicy = DEFAULT_POLICY,
    into: ObjectEvaluation | None = None,
) -> ObjectEvaluation:
    """Evaluate every rule once, in topological order.

    Inputs missing from the object's facts default to CF 0; derived
    propositions no rule fires into stay at CF 0.  Pass ``into`` to reuse a
    state object: its CF maps are rebuilt from scratch and its counters
    keep accumulating.
    """
    if into is None:
        state = ObjectEvaluation(obj.id)
    else:
        if into.object_id != obj.id:
            raise InconsistentState(
                f"state for object {into.object_id!r} reused for {obj.id!r}"
            )
        state = into
    facts = obj.facts
    env: dict[str, float] = {}
    for p in rb.propositions.values():
        env[p.id] = facts.get(p.id, 0.0) if p.kind == INPUT else 0.0
    contribs: dict[str, dict[str, float]] = {}
    ante: dict[str, float] = {}
    threshold = policy.threshold
    fired = 0
    rules_by_id = rb.rules_by_id
    for rule_id in rb.topological_order():
        rule = rules_by_id[rule_id]
        a = eval_expr(rule.antecedent, env)
        ante[rule_id] = a
        bucket = contribs.setdefault(rule.consequent, {})
        if a > threshold:
            c = rule.weight * a
            bucket[rule_id] = c
            env[rule.consequent] = combine_parallel(env[rule.consequent], c)
            fired += 1
    state.prop_cf = env
    state.rule_ante = ante
    state.contributions = contribs
    state.counters.rules_fired += fired
    state.counters.full_passes += 1
    return state


def _refold(rb: RuleBase, bucket: Mapping[str, float], prop_id: str) -> float:
    acc = 0.0
    for rid in rb.incoming_rules(prop_id):
        c = bucket.get(rid)
        if c is not None:
            acc = combine_parallel(acc, c)
    return acc


def perturb_weight(
    state: ObjectEvaluation,
    rb: RuleBase,
    rule_id: str,
    new_weight: float,
    policy: FiringPolicy = DEFAULT_POLICY,
) -> int:
    """Re-evaluate the state as if the rule's weight were ``new_weight``.

    Only the rule itself and the affected part of its downstream closure
    re-fire; the state is updated in place.  Returns the number of rules
    re-fired (at most the size of the downstream closure).  The rule base
    itself is not consulted for the perturbed rule's weight, so probing
    never requires mutating the base.
    """
    rule = rb.rule(rule_id)
    a = state.rule_ante.get(rule_id)
    if a is None:
        raise InconsistentState(f"no antecedent recorded for rule {rule_id!r}")
    threshold = policy.threshold
    cutoff = policy.propagation_cutoff
    bucket = state.contributions.get(rule.consequent)
    if bucket is None:
        raise InconsistentState(f"no contribution bucket for proposition {rule.consequent!r}")
    firing = a > threshold
    if firing != (rule_id in bucket):
        raise InconsistentState(
            f"rule {rule_id!r} firing status disagrees with stored contributions"
        )
    if not firing:
        return 0  # weight is irrelevant while the rule does not fire
    fired = 1
    prop_cf = state.prop_cf
    bucket[rule_id] = new_weight * a
    old_cf = prop_cf[rule.consequent]
    new_cf = _refold(rb, bucket, rule.consequent)
    prop_cf[rule.consequent] = new_cf
    delta = new_cf - old_cf
    if delta == 0.0 or abs(delta) < cutoff:
        state.counters.rules_fired += fired
        return fired
    changed = {rule.consequent}
    for rid in rb.closure_order(rule_id):
        if rid == rule_id:
            continue
        if not (rb.antecedent_refs(rid) & changed):
            continue
        r = rb.rules_by_id[rid]
        a2 = eval_expr(r.antecedent, prop_cf)
        state.rule_ante[rid] = a2
        fired += 1
        b2 = state.contributions[r.consequent]
        if a2 > threshold:
            b2[rid] = r.weight * a2
        else:
            b2.pop(rid, None)
        old2 = prop_cf[r.consequent]
        new2 = _refold(rb, b2, r.consequent)
        prop_cf[r.consequent] = new2
        d2 = new2 - old2
        if d2 != 0.0 and abs(d2) >= cutoff:
            changed.add(r.consequent)
    state.counters.rules_fired += fired
    return fired


def restore_weight(
    state: ObjectEvaluation,
    rb: RuleBase,
    rule_id: str,
    old_weight: float,
    policy: FiringPolicy = DEFAULT_POLICY,
) -> int:
    """Inverse of perturb_weight: re-fires the same downstream set back to
    the original weight; after perturb-then-restore the state matches the
    original bit for bit (modulo the propagation cutoff)."""
    return perturb_weight(state, rb, rule_id, old_weight, policy)


def classify(state: ObjectEvaluation, rb: RuleBase) -> str:
    """The output class with the highest CF; ties go to the
    lexicographically smallest class id."""
    classes = rb.output_classes
    if not classes:
        raise NoOutputClasses("rule base declares no output classes")
    best_id = classes[0]
    best_cf = state.prop_cf[best_id]
    for cid in classes[1:]:
        cf = state.prop_cf[cid]
        if cf > best_cf:
            best_id, best_cf = cid, cf
    return best_id
