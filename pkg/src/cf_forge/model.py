"""Rule-base data model: propositions, weighted rules, the dependency graph,
validation, and the on-disk JSON formats.

A rule base is a DAG over propositions: rules produce derived propositions
(their consequents) and read propositions in their antecedents.  Cyclic
bases are rejected outright; the certainty-factor calculus used here has no
fixed-point semantics, and both single-pass forward chaining and
incremental refolding are only sound on acyclic graphs.

File formats
------------
Rule base (UTF-8 JSON)::

    { "propositions": [ {"id": "...", "kind": "input"|"derived",
                         "output_class": bool} ],
      "rules": [ {"id": "...", "if": EXPR, "then": "<prop-id>",
                  "weight": number, "bounds": [lo, hi],
                  "bound_kind": "hard"|"soft", "trainable": bool} ] }

    EXPR ::= "<prop-id>" | {"and":[EXPR,...]} | {"or":[EXPR,...]}
           | {"not": EXPR}

``bounds``, ``bound_kind`` and ``trainable`` default to [-1, 1], "hard"
and true.  Dataset files are JSON Lines, one object per line::

    {"id": "...", "facts": {"<input-prop-id>": number, ...},
     "label": "<class-prop-id>"}

Numbers round-trip bit-exactly (serialized via the shortest repr).
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .algebra import And, Expr, Not, Or, Ref, is_cf, referenced_props
from .errors import CyclicDependency, ParseError, UnknownRule, ValidationError

INPUT = "input"
DERIVED = "derived"
KINDS = (INPUT, DERIVED)

HARD = "hard"
SOFT = "soft"
BOUND_KINDS = (HARD, SOFT)


@dataclass(frozen=True)
class Proposition:
    id: str
    kind: str
    output_class: bool = False


@dataclass
class Rule:
    """One weighted implication.

    The weight scales the antecedent's CF into a contribution to the
    consequent.  Bounds restrict the weights the optimizer may explore:
    hard bounds are enforced by projection after every accepted step, soft
    bounds only through the penalty term of the objective.
    """

    id: str
    antecedent: Expr
    consequent: str
    weight: float = 0.0
    bounds: tuple[float, float] = (-1.0, 1.0)
    bound_kind: str = HARD
    trainable: bool = True


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by validate()."""

    code: str
    detail: str

    def __str__(self) -> str:
        return f"{self.code}: {self.detail}"


@dataclass
class TrainingObject:
    """One labeled object: input-fact CFs plus its true output class.

    Facts omit unknown inputs; the engine defaults them to CF 0.
    """

    id: str
    facts: dict[str, float]
    label: str


class RuleBase:
    """Propositions plus rules, with cached dependency-graph queries.

    The structure (propositions, rule antecedents/consequents) is treated
    as frozen once built; only rule *weights* may be mutated, and only
    under exclusive access.  Graph caches therefore never invalidate.
    """

    def __init__(self, propositions: Iterable[Proposition], rules: Iterable[Rule]):
        self.propositions: dict[str, Proposition] = {}
        for p in propositions:
            if p.id in self.propositions:
                raise ParseError(f"duplicate proposition id {p.id!r}")
            self.propositions[p.id] = p
        self.rules: list[Rule] = list(rules)
        self.rules_by_id: dict[str, Rule] = {}
        for r in self.rules:
            if r.id in self.rules_by_id:
                raise ParseError(f"duplicate rule id {r.id!r}")
            self.rules_by_id[r.id] = r
        self._topo: tuple[str, ...] | None = None
        self._refs: dict[str, frozenset[str]] = {}
        self._dependents: dict[str, tuple[str, ...]] = {}
        self._incoming: dict[str, tuple[str, ...]] = {}
        self._closures: dict[str, frozenset[str]] = {}
        self._closure_orders: dict[str, tuple[str, ...]] = {}

    def __eq__(self, other) -> bool:
        if not isinstance(other, RuleBase):
            return NotImplemented
        return self.propositions == other.propositions and self.rules == other.rules

    def rule(self, rule_id: str) -> Rule:
        try:
            return self.rules_by_id[rule_id]
        except KeyError:
            raise UnknownRule(rule_id) from None

    @property
    def output_classes(self) -> tuple[str, ...]:
        return tuple(sorted(p.id for p in self.propositions.values() if p.output_class))

    def antecedent_refs(self, rule_id: str) -> frozenset[str]:
        self._ensure_graph()
        return self._refs[rule_id]

    def incoming_rules(self, prop_id: str) -> tuple[str, ...]:
        """Rules with this consequent, in topological firing order."""
        self._ensure_graph()
        return self._incoming.get(prop_id, ())

    def dependents(self, rule_id: str) -> tuple[str, ...]:
        """Rules whose antecedents read this rule's consequent."""
        self._ensure_graph()
        return self._dependents[rule_id]

    def topological_order(self) -> tuple[str, ...]:
        """Rule ids ordered so every rule follows all producers of the
        propositions its antecedent reads; ties broken by rule id."""
        self._ensure_graph()
        return self._topo

    def downstream_closure(self, rule_id: str) -> frozenset[str]:
        """The rule plus, transitively, every rule depending on a member's
        consequent."""
        self.rule(rule_id)
        self._ensure_graph()
        cached = self._closures.get(rule_id)
        if cached is not None:
            return cached
        seen = {rule_id}
        stack = [rule_id]
        while stack:
            for nxt in self._dependents[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        closure = frozenset(seen)
        self._closures[rule_id] = closure
        return closure

    def closure_order(self, rule_id: str) -> tuple[str, ...]:
        """downstream_closure restricted to topological order."""
        cached = self._closure_orders.get(rule_id)
        if cached is not None:
            return cached
        closure = self.downstream_closure(rule_id)
        order = tuple(rid for rid in self.topological_order() if rid in closure)
        self._closure_orders[rule_id] = order
        return order

    def _ensure_graph(self) -> None:
        if self._topo is not None:
            return
        refs, producers, out, indeg = _rule_edges(self.rules)
        ready = [rid for rid, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        topo: list[str] = []
        while ready:
            rid = heapq.heappop(ready)
            topo.append(rid)
            for nxt in out[rid]:
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    heapq.heappush(ready, nxt)
        if len(topo) != len(self.rules):
            stuck = [rid for rid, d in indeg.items() if d > 0]
            raise CyclicDependency(" -> ".join(_find_cycle(out, stuck)))
        pos = {rid: i for i, rid in enumerate(topo)}
        self._topo = tuple(topo)
        self._refs = refs
        self._dependents = {rid: tuple(lst) for rid, lst in out.items()}
        self._incoming = {
            p: tuple(sorted(ids, key=pos.__getitem__)) for p, ids in producers.items()
        }


def _rule_edges(rules: Sequence[Rule]):
    """Shared edge construction: rule a -> rule b when b's antecedent reads
    a's consequent.  Unknown proposition references contribute no edges."""
    refs = {r.id: referenced_props(r.antecedent) for r in rules}
    producers: dict[str, list[str]] = {}
    for r in rules:
        producers.setdefault(r.consequent, []).append(r.id)
    out: dict[str, list[str]] = {r.id: [] for r in rules}
    indeg = {r.id: 0 for r in rules}
    for b in rules:
        for p in sorted(refs[b.id]):
            for a_id in producers.get(p, ()):
                out[a_id].append(b.id)
                indeg[b.id] += 1
    return refs, producers, out, indeg


def _find_cycle(out: dict[str, list[str]], stuck: list[str]) -> list[str]:
    remaining = set(stuck)
    path: list[str] = []
    seen: dict[str, int] = {}
    node = stuck[0]
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        node = next(n for n in out[node] if n in remaining)
    return path[seen[node]:] + [node]


def validate(rb: RuleBase) -> list[Violation]:
    """Check every model invariant; returns violations instead of raising.

    An empty list means the base is sound: ids resolve, weights and bounds
    are in range, the graph is acyclic, and at least one output class
    exists.
    """
    violations: list[Violation] = []
    for p in rb.propositions.values():
        if p.kind not in KINDS:
            violations.append(Violation("InvalidKind", f"proposition {p.id!r} has kind {p.kind!r}"))
        if p.output_class and p.kind != DERIVED:
            violations.append(
                Violation("OutputClassNotDerived", f"output class {p.id!r} must be derived")
            )
    for r in rb.rules:
        cons = rb.propositions.get(r.consequent)
        if cons is None:
            violations.append(
                Violation("UnknownConsequent", f"rule {r.id!r} concludes unknown proposition {r.consequent!r}")
            )
        elif cons.kind == INPUT:
            violations.append(
                Violation("InputAsConsequent", f"rule {r.id!r} concludes input proposition {r.consequent!r}")
            )
        violations.extend(_check_expr(rb, r))
        if not is_cf(r.weight):
            violations.append(
                Violation("WeightOutOfRange", f"rule {r.id!r} weight {r.weight!r} outside [-1, +1]")
            )
        lo, hi = r.bounds
        if not (is_cf(lo) and is_cf(hi) and lo <= hi):
            violations.append(
                Violation("InvalidBounds", f"rule {r.id!r} bounds {r.bounds!r} not a subinterval of [-1, +1]")
            )
        if r.bound_kind not in BOUND_KINDS:
            violations.append(
                Violation("InvalidBoundKind", f"rule {r.id!r} bound_kind {r.bound_kind!r}")
            )
    cycle = _detect_cycle(rb.rules)
    if cycle:
        violations.append(Violation("CyclicDependency", " -> ".join(cycle)))
    if not any(p.output_class for p in rb.propositions.values()):
        violations.append(Violation("NoOutputClass", "no output-class proposition declared"))
    return violations


def _check_expr(rb: RuleBase, r: Rule) -> list[Violation]:
    violations = []

    def walk(e) -> None:
        t = type(e)
        if t is Ref:
            if e.prop not in rb.propositions:
                violations.append(
                    Violation("UnknownAntecedentRef", f"rule {r.id!r} reads unknown proposition {e.prop!r}")
                )
        elif t is Not:
            walk(e.member)
        elif t is And or t is Or:
            if len(e.members) < 1:
                violations.append(Violation("EmptyExpr", f"rule {r.id!r} has an empty AND/OR"))
            for m in e.members:
                walk(m)
        else:
            violations.append(Violation("EmptyExpr", f"rule {r.id!r} has a malformed antecedent node {e!r}"))

    walk(r.antecedent)
    return violations


def _detect_cycle(rules: Sequence[Rule]) -> list[str] | None:
    _, _, out, indeg = _rule_edges(rules)
    ready = [rid for rid, d in indeg.items() if d == 0]
    done = 0
    while ready:
        rid = ready.pop()
        done += 1
        for nxt in out[rid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if done == len(rules):
        return None
    stuck = [rid for rid, d in indeg.items() if d > 0]
    return _find_cycle(out, stuck)


def topological_order(rb: RuleBase) -> tuple[str, ...]:
    """Module-level alias of RuleBase.topological_order."""
    return rb.topological_order()


def downstream_closure(rb: RuleBase, rule_id: str) -> frozenset[str]:
    """Module-level alias of RuleBase.downstream_closure."""
    return rb.downstream_closure(rule_id)


# ---------------------------------------------------------------------------
# serialization

def expr_to_json(expr: Expr):
    t = type(expr)
    if t is Ref:
        return expr.prop
    if t is And:
        return {"and": [expr_to_json(m) for m in expr.members]}
    if t is Or:
        return {"or": [expr_to_json(m) for m in expr.members]}
    if t is Not:
        return {"not": expr_to_json(expr.member)}
    raise TypeError(f"not an antecedent expression: {expr!r}")


def expr_from_json(doc, where: str) -> Expr:
    if isinstance(doc, str):
        return Ref(doc)
    if isinstance(doc, dict) and len(doc) == 1:
        op, body = next(iter(doc.items()))
        if op == "not":
            return Not(expr_from_json(body, f"{where}.not"))
        if op in ("and", "or"):
            if not isinstance(body, list):
                raise ParseError(f"{op!r} expects a list", where)
            members = tuple(
                expr_from_json(m, f"{where}.{op}[{i}]") for i, m in enumerate(body)
            )
            return And(members) if op == "and" else Or(members)
    raise ParseError(f"malformed antecedent expression {doc!r}", where)


def to_dict(rb: RuleBase) -> dict:
    return {
        "propositions": [
            {"id": p.id, "kind": p.kind, "output_class": p.output_class}
            for p in rb.propositions.values()
        ],
        "rules": [
            {
                "id": r.id,
                "if": expr_to_json(r.antecedent),
                "then": r.consequent,
                "weight": r.weight,
                "bounds": [r.bounds[0], r.bounds[1]],
                "bound_kind": r.bound_kind,
                "trainable": r.trainable,
            }
            for r in rb.rules
        ],
    }


def _take(doc: dict, key: str, where: str, types, required=True, default=None):
    if key not in doc:
        if required:
            raise ParseError(f"missing field {key!r}", where)
        return default
    value = doc[key]
    if types is bool:
        ok = isinstance(value, bool)
    else:
        ok = not isinstance(value, bool) and isinstance(value, types)
    if not ok:
        raise ParseError(f"field {key!r} has wrong type {type(value).__name__}", where)
    return value


def from_dict(doc, check: bool = True) -> RuleBase:
    if not isinstance(doc, dict):
        raise ParseError("rule-base document must be a JSON object", "$")
    props = []
    raw_props = _take(doc, "propositions", "$", list)
    for i, pd in enumerate(raw_props):
        where = f"propositions[{i}]"
        if not isinstance(pd, dict):
            raise ParseError("proposition must be an object", where)
        props.append(
            Proposition(
                id=_take(pd, "id", where, str),
                kind=_take(pd, "kind", where, str),
                output_class=_take(pd, "output_class", where, bool, required=False, default=False),
            )
        )
    rules = []
    raw_rules = _take(doc, "rules", "$", list)
    for i, rd in enumerate(raw_rules):
        where = f"rules[{i}]"
        if not isinstance(rd, dict):
            raise ParseError("rule must be an object", where)
        bounds = _take(rd, "bounds", where, list, required=False, default=[-1.0, 1.0])
        if len(bounds) != 2 or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in bounds):
            raise ParseError(f"field 'bounds' must be [lo, hi], got {bounds!r}", where)
        weight = _take(rd, "weight", where, (int, float))
        rules.append(
            Rule(
                id=_take(rd, "id", where, str),
                antecedent=expr_from_json(_take(rd, "if", where, (str, dict)), f"{where}.if"),
                consequent=_take(rd, "then", where, str),
                weight=float(weight),
                bounds=(float(bounds[0]), float(bounds[1])),
                bound_kind=_take(rd, "bound_kind", where, str, required=False, default=HARD),
                trainable=_take(rd, "trainable", where, bool, required=False, default=True),
            )
        )
    rb = RuleBase(props, rules)
    if check:
        violations = validate(rb)
        if violations:
            raise ValidationError(violations)
    return rb


def serialize(rb: RuleBase) -> str:
    """Rule base to its JSON document; parse(serialize(rb)) == rb with
    weights bit-identical."""
    return json.dumps(to_dict(rb), indent=2) + "\n"


def parse(text: str, check: bool = True) -> RuleBase:
    """Parse a rule-base document.  Structural problems raise ParseError
    with a field location; invariant violations raise ValidationError
    unless check is False."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, f"line {e.lineno} col {e.colno}") from None
    return from_dict(doc, check=check)


def save_rulebase(rb: RuleBase, path) -> None:
    Path(path).write_text(serialize(rb), encoding="utf-8")


def load_rulebase(path, check: bool = True) -> RuleBase:
    return parse(Path(path).read_text(encoding="utf-8"), check=check)


# ---------------------------------------------------------------------------
# datasets

def object_to_dict(obj: TrainingObject) -> dict:
    return {"id": obj.id, "facts": obj.facts, "label": obj.label}


def save_dataset(objects: Sequence[TrainingObject], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(json.dumps(object_to_dict(obj)) + "\n")


def load_dataset(path) -> list[TrainingObject]:
    """Read a JSON Lines dataset; ParseError carries the line number."""
    objects = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"line {lineno}"
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(e.msg, where) from None
            if not isinstance(doc, dict):
                raise ParseError("object must be a JSON object", where)
            oid = _take(doc, "id", where, str)
            label = _take(doc, "label", where, str)
            raw_facts = _take(doc, "facts", where, dict, required=False, default={})
            facts = {}
            for k, v in raw_facts.items():
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not is_cf(float(v)):
                    raise ParseError(f"fact {k!r} is not a certainty factor: {v!r}", where)
                facts[k] = float(v)
            if oid in seen:
                raise ParseError(f"duplicate object id {oid!r}", where)
            seen.add(oid)
            objects.append(TrainingObject(id=oid, facts=facts, label=label))
    return objects


def validate_dataset(rb: RuleBase, objects: Sequence[TrainingObject]) -> list[Violation]:
    """Check dataset/rule-base agreement: labels are declared output
    classes, fact keys are declared input propositions, values are CFs."""
    violations = []
    classes = set(rb.output_classes)
    inputs = {p.id for p in rb.propositions.values() if p.kind == INPUT}
    for obj in objects:
        if obj.label not in classes:
            violations.append(
                Violation("UnknownLabel", f"object {obj.id!r} labeled {obj.label!r}, not an output class")
            )
        for k, v in obj.facts.items():
            if k not in inputs:
                violations.append(
                    Violation("UnknownFact", f"object {obj.id!r} has fact for non-input {k!r}")
                )
            if not is_cf(v):
                violations.append(
                    Violation("FactOutOfRange", f"object {obj.id!r} fact {k!r} = {v!r}")
                )
    return violations
