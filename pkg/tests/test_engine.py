"""Engine: full-pass evaluation, incremental re-evaluation, classification.

The incremental path's oracle throughout is a fresh full evaluation under
the perturbed weight.
"""

import random

import pytest

from cf_forge import (
    FiringPolicy,
    InconsistentState,
    NoOutputClasses,
    Proposition,
    Ref,
    Rule,
    RuleBase,
    TrainingObject,
    classify,
    combine_parallel,
    evaluate_full,
    perturb_weight,
    restore_weight,
)
from cf_forge.model import DERIVED, INPUT
from helpers import random_object, random_rulebase

EXACT = FiringPolicy(propagation_cutoff=0.0)


def single_rule_base(weight=0.8):
    props = [
        Proposition("f", INPUT),
        Proposition("c", DERIVED, output_class=True),
        Proposition("d", DERIVED, output_class=True),
    ]
    return RuleBase(props, [Rule(id="r1", antecedent=Ref("f"), consequent="c", weight=weight)])


def chain3_base():
    props = [
        Proposition("f", INPUT),
        Proposition("p1", DERIVED),
        Proposition("p2", DERIVED),
        Proposition("c", DERIVED, output_class=True),
    ]
    rules = [
        Rule(id="r1", antecedent=Ref("f"), consequent="p1", weight=0.9),
        Rule(id="r2", antecedent=Ref("p1"), consequent="p2", weight=0.8),
        Rule(id="r3", antecedent=Ref("p2"), consequent="c", weight=0.7),
    ]
    return RuleBase(props, rules)


def full_oracle(rb, obj, rule_id, new_weight):
    """Independent check: full pass with the weight actually swapped in."""
    rule = rb.rule(rule_id)
    old = rule.weight
    rule.weight = new_weight
    try:
        return evaluate_full(rb, obj)
    finally:
        rule.weight = old


class TestEvaluateFull:
    def test_single_product(self):
        rb = single_rule_base(weight=0.8)
        st = evaluate_full(rb, TrainingObject(id="o", facts={"f": 0.5}, label="c"))
        assert st.prop_cf["c"] == 0.8 * 0.5
        assert st.prop_cf["d"] == 0.0
        assert st.counters.rules_fired == 1
        assert st.counters.full_passes == 1

    def test_two_contributions_pool(self):
        props = [
            Proposition("f", INPUT),
            Proposition("g", INPUT),
            Proposition("c", DERIVED, output_class=True),
        ]
        rules = [
            Rule(id="r1", antecedent=Ref("f"), consequent="c", weight=0.4),
            Rule(id="r2", antecedent=Ref("g"), consequent="c", weight=0.5),
        ]
        rb = RuleBase(props, rules)
        st = evaluate_full(rb, TrainingObject(id="o", facts={"f": 1.0, "g": 1.0}, label="c"))
        assert st.prop_cf["c"] == combine_parallel(0.4, 0.5)

    def test_missing_fact_defaults_to_zero(self):
        rb = single_rule_base()
        st = evaluate_full(rb, TrainingObject(id="o", facts={}, label="c"))
        assert st.prop_cf["f"] == 0.0
        assert st.prop_cf["c"] == 0.0
        assert st.counters.rules_fired == 0  # antecedent 0 is not above threshold

    def test_negative_antecedent_does_not_fire(self):
        rb = single_rule_base()
        st = evaluate_full(rb, TrainingObject(id="o", facts={"f": -0.5}, label="c"))
        assert st.prop_cf["c"] == 0.0

    def test_threshold_gates_firing(self):
        rb = single_rule_base()
        obj = TrainingObject(id="o", facts={"f": 0.25}, label="c")
        st = evaluate_full(rb, obj, FiringPolicy(threshold=0.3))
        assert st.prop_cf["c"] == 0.0
        st = evaluate_full(rb, obj, FiringPolicy(threshold=0.2))
        assert st.prop_cf["c"] == pytest.approx(0.2)

    def test_zero_weight_equals_deleted_rule(self):
        rng = random.Random(5)
        for _ in range(20):
            rb = random_rulebase(rng, max_rules=30)
            obj = random_object(rng, rb)
            victim = rng.choice(rb.rules)
            old = victim.weight
            victim.weight = 0.0
            with_zero = evaluate_full(rb, obj)
            victim.weight = old
            removed = RuleBase(
                list(rb.propositions.values()),
                [r for r in rb.rules if r.id != victim.id],
            )
            without = evaluate_full(removed, obj)
            assert with_zero.prop_cf == without.prop_cf  # exact

    def test_idempotent(self):
        rng = random.Random(9)
        rb = random_rulebase(rng, max_rules=40)
        obj = random_object(rng, rb)
        first = evaluate_full(rb, obj)
        second = evaluate_full(rb, obj)
        assert first.prop_cf == second.prop_cf
        assert first.rule_ante == second.rule_ante

    def test_into_reuse_accumulates_counters(self):
        rb = single_rule_base()
        obj = TrainingObject(id="o", facts={"f": 0.5}, label="c")
        st = evaluate_full(rb, obj)
        evaluate_full(rb, obj, into=st)
        assert st.counters.full_passes == 2
        assert st.counters.rules_fired == 2

    def test_into_rejects_wrong_object(self):
        rb = single_rule_base()
        st = evaluate_full(rb, TrainingObject(id="o1", facts={}, label="c"))
        with pytest.raises(InconsistentState):
            evaluate_full(rb, TrainingObject(id="o2", facts={}, label="c"), into=st)


class TestPerturb:
    def test_flat_fires_exactly_one(self):
        rb = single_rule_base(weight=0.8)
        obj = TrainingObject(id="o", facts={"f": 0.5}, label="c")
        st = evaluate_full(rb, obj)
        fired = perturb_weight(st, rb, "r1", 0.3)
        assert fired == 1
        assert st.prop_cf["c"] == 0.3 * 0.5

    def test_chain_matches_full_pass(self):
        rb = chain3_base()
        obj = TrainingObject(id="o", facts={"f": 0.6}, label="c")
        st = evaluate_full(rb, obj)
        fired = perturb_weight(st, rb, "r1", 0.2, EXACT)
        assert fired <= 3
        oracle = full_oracle(rb, obj, "r1", 0.2)
        for p in st.prop_cf:
            assert st.prop_cf[p] == pytest.approx(oracle.prop_cf[p], abs=1e-12)

    def test_same_weight_is_noop(self):
        rb = chain3_base()
        obj = TrainingObject(id="o", facts={"f": 0.6}, label="c")
        st = evaluate_full(rb, obj)
        before = dict(st.prop_cf)
        fired = perturb_weight(st, rb, "r1", rb.rule("r1").weight)
        assert fired <= 1
        assert st.prop_cf == before

    def test_perturb_then_restore_is_identity(self):
        rng = random.Random(21)
        for _ in range(30):
            rb = random_rulebase(rng, max_rules=40)
            obj = random_object(rng, rb)
            st = evaluate_full(rb, obj)
            original = dict(st.prop_cf)
            rule = rng.choice(rb.rules)
            perturb_weight(st, rb, rule.id, rng.uniform(-1, 1), EXACT)
            restore_weight(st, rb, rule.id, rule.weight, EXACT)
            assert st.prop_cf == original  # bit-identical

    def test_restore_without_perturb_is_noop(self):
        rb = chain3_base()
        obj = TrainingObject(id="o", facts={"f": 0.6}, label="c")
        st = evaluate_full(rb, obj)
        before = dict(st.prop_cf)
        restore_weight(st, rb, "r1", rb.rule("r1").weight)
        assert st.prop_cf == before

    def test_randomized_sequences_match_full_oracle(self):
        rng = random.Random(77)
        for _ in range(25):
            rb = random_rulebase(rng, max_rules=50)
            obj = random_object(rng, rb)
            st = evaluate_full(rb, obj)
            for _ in range(10):
                rule = rng.choice(rb.rules)
                w_new = rng.uniform(-1, 1)
                perturb_weight(st, rb, rule.id, w_new, EXACT)
                rule.weight = w_new  # persist so the sequence compounds
                oracle = evaluate_full(rb, obj)
                for p in st.prop_cf:
                    assert st.prop_cf[p] == pytest.approx(oracle.prop_cf[p], abs=1e-12)

    def test_fired_bounded_by_closure_with_equality_when_all_propagate(self):
        from cf_forge import generate_shaped

        rb, objs = generate_shaped(15, "tree", seed=2)
        st = evaluate_full(rb, objs[0])
        for r in rb.rules:
            fired = perturb_weight(st, rb, r.id, min(r.weight + 0.05, 1.0), EXACT)
            assert fired == len(rb.downstream_closure(r.id))
            restore_weight(st, rb, r.id, r.weight, EXACT)

    def test_cutoff_stops_propagation(self):
        rb = chain3_base()
        obj = TrainingObject(id="o", facts={"f": 0.6}, label="c")
        st = evaluate_full(rb, obj)
        # a 1e-18 weight change moves p1 by ~6e-19, far below the cutoff
        fired = perturb_weight(st, rb, "r1", rb.rule("r1").weight + 1e-18, FiringPolicy())
        assert fired == 1
        assert fired < len(rb.downstream_closure("r1"))

    def test_non_firing_rule_perturb_changes_nothing(self):
        rb = single_rule_base()
        obj = TrainingObject(id="o", facts={"f": -0.4}, label="c")
        st = evaluate_full(rb, obj)
        fired = perturb_weight(st, rb, "r1", 0.1)
        assert fired == 0
        assert st.prop_cf["c"] == 0.0

    def test_firing_status_flip_matches_oracle(self):
        # downstream antecedent crosses the threshold because of the perturb
        props = [
            Proposition("f", INPUT),
            Proposition("p", DERIVED),
            Proposition("c", DERIVED, output_class=True),
        ]
        rules = [
            Rule(id="r1", antecedent=Ref("f"), consequent="p", weight=-0.5),
            Rule(id="r2", antecedent=Ref("p"), consequent="c", weight=0.9),
        ]
        rb = RuleBase(props, rules)
        obj = TrainingObject(id="o", facts={"f": 0.8}, label="c")
        st = evaluate_full(rb, obj)
        assert st.prop_cf["c"] == 0.0  # r2 silent: its antecedent is negative
        perturb_weight(st, rb, "r1", 0.5, EXACT)
        oracle = full_oracle(rb, obj, "r1", 0.5)
        assert st.prop_cf == oracle.prop_cf
        restore_weight(st, rb, "r1", -0.5, EXACT)
        oracle_back = evaluate_full(rb, obj)
        assert st.prop_cf == oracle_back.prop_cf

    def test_tampered_state_raises(self):
        rb = single_rule_base()
        obj = TrainingObject(id="o", facts={"f": 0.5}, label="c")
        st = evaluate_full(rb, obj)
        del st.rule_ante["r1"]
        with pytest.raises(InconsistentState):
            perturb_weight(st, rb, "r1", 0.2)

    def test_refold_check(self):
        rb = single_rule_base()
        obj = TrainingObject(id="o", facts={"f": 0.5}, label="c")
        st = evaluate_full(rb, obj)
        st.check_consistent(rb)
        st.prop_cf["c"] = 0.123
        with pytest.raises(InconsistentState):
            st.check_consistent(rb)


class TestClassify:
    def classed_state(self, cfs):
        props = [Proposition(k, DERIVED, output_class=True) for k in cfs]
        rb = RuleBase(props, [])
        st = evaluate_full(rb, TrainingObject(id="o", facts={}, label=next(iter(cfs))))
        st.prop_cf.update(cfs)
        return rb, st

    def test_strict_max(self):
        rb, st = self.classed_state({"A": 0.9, "B": 0.2})
        assert classify(st, rb) == "A"

    def test_tie_breaks_lexicographically(self):
        rb, st = self.classed_state({"B": 0.0, "A": 0.0})
        assert classify(st, rb) == "A"

    def test_max_of_negatives(self):
        rb, st = self.classed_state({"A": -0.5, "B": -0.1})
        assert classify(st, rb) == "B"

    def test_no_output_classes(self):
        props = [Proposition("f", INPUT), Proposition("p", DERIVED)]
        rb = RuleBase(props, [])
        st = evaluate_full(rb, TrainingObject(id="o", facts={}, label="p"))
        with pytest.raises(NoOutputClasses):
            classify(st, rb)


class TestFiringPolicy:
    def test_threshold_range(self):
        with pytest.raises(ValueError):
            FiringPolicy(threshold=1.0)
        with pytest.raises(ValueError):
            FiringPolicy(threshold=-0.1)
        FiringPolicy(threshold=0.99)

    def test_incremental_equivalence_under_default_cutoff(self):
        # the acceptance-scale version runs 200 bases; this is the quick one
        rng = random.Random(1234)
        for _ in range(40):
            rb = random_rulebase(rng, max_rules=60)
            obj = random_object(rng, rb)
            st = evaluate_full(rb, obj)
            for _ in range(10):
                rule = rng.choice(rb.rules)
                w_new = rng.uniform(-1, 1)
                perturb_weight(st, rb, rule.id, w_new)
                oracle = full_oracle(rb, obj, rule.id, w_new)
                for p in st.prop_cf:
                    assert st.prop_cf[p] == pytest.approx(oracle.prop_cf[p], abs=1e-12)
                restore_weight(st, rb, rule.id, rule.weight)
