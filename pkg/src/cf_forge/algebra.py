"""Certainty-factor arithmetic and antecedent expressions.

A certainty factor (CF) is a confidence in [-1.0, +1.0]: +1 certainly true,
-1 certainly false, 0 unknown.  Evidence for one proposition arriving from
several rules is pooled with ``combine_parallel``; the combination rule is
commutative and associative, so a proposition's contribution list can be
folded in any order and refolded incrementally without changing the result.
That order-independence is what makes incremental re-evaluation in the
engine sound.

Antecedents are trees of AND / OR / NOT over proposition references,
evaluated with the usual min / max / negation semantics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

from .errors import UnboundProposition

CF_MIN = -1.0
CF_MAX = 1.0


class CertaintyFactor(float):
    """A float constrained to [-1, +1] at construction.

    Subclassing float keeps arithmetic painless; results of arithmetic decay
    to plain floats, and the engine re-clamps where rounding could drift.
    """

    __slots__ = ()

    def __new__(cls, value: float) -> "CertaintyFactor":
        v = float(value)
        if not (CF_MIN <= v <= CF_MAX):  # also rejects NaN
            raise ValueError(f"certainty factor out of range [-1, +1]: {value!r}")
        return super().__new__(cls, v)


def is_cf(x: float) -> bool:
    """True when x is a valid certainty factor (rejects NaN and infinities)."""
    return CF_MIN <= x <= CF_MAX


def clamp(x: float) -> float:
    """Clamp to [-1, +1]; absorbs ulp drift from combination arithmetic."""
    if x > CF_MAX:
        return CF_MAX
    if x < CF_MIN:
        return CF_MIN
    return x


def combine_parallel(x: float, y: float) -> float:
    """Pool two independent pieces of evidence for the same proposition.

    x + y - xy when both support, x + y + xy when both oppose, and
    (x + y) / (1 - min(|x|, |y|)) when they conflict.  0 is the identity,
    +1 and -1 absorb everything except their opposite, and the conflicting
    pair (+1, -1) has no continuous limit: it is defined to give 0.0
    (a symmetric tie of total conflict).  Absorption is handled explicitly
    because the sum formulas lose it to rounding (1 + y - y need not be 1
    in floating point); the conflicting branch absorbs exactly on its own.
    """
    if x >= 0.0:
        if y >= 0.0:
            if x == 1.0 or y == 1.0:
                return 1.0
            return clamp(x + y - x * y)
    elif y <= 0.0:
        if x == -1.0 or y == -1.0:
            return -1.0
        return clamp(x + y + x * y)
    denom = 1.0 - min(abs(x), abs(y))
    if denom == 0.0:
        return 0.0
    return clamp((x + y) / denom)


def combine_all(contributions: Sequence[float]) -> float:
    """Left fold of combine_parallel starting from 0.0 (no evidence)."""
    acc = 0.0
    for c in contributions:
        acc = combine_parallel(acc, c)
    return acc


@dataclass(frozen=True)
class Ref:
    """Leaf node: the certainty factor of one proposition."""

    prop: str


@dataclass(frozen=True)
class And:
    members: tuple


@dataclass(frozen=True)
class Or:
    members: tuple


@dataclass(frozen=True)
class Not:
    member: "Expr"


Expr = Union[Ref, And, Or, Not]


def eval_expr(expr: Expr, env: Mapping[str, float]) -> float:
    """Evaluate an antecedent: AND is the minimum of its members, OR the
    maximum, NOT the arithmetic negation, and a leaf reads ``env``.

    Raises UnboundProposition when a referenced proposition has no CF.
    """
    if type(expr) is Ref:
        try:
            return env[expr.prop]
        except KeyError:
            raise UnboundProposition(expr.prop) from None
    if type(expr) is And:
        return min(eval_expr(m, env) for m in expr.members)
    if type(expr) is Or:
        return max(eval_expr(m, env) for m in expr.members)
    if type(expr) is Not:
        return -eval_expr(expr.member, env)
    raise TypeError(f"not an antecedent expression: {expr!r}")


def _walk_refs(expr: Expr) -> Iterator[str]:
    if type(expr) is Ref:
        yield expr.prop
    elif type(expr) is Not:
        yield from _walk_refs(expr.member)
    elif type(expr) is And or type(expr) is Or:
        for m in expr.members:
            yield from _walk_refs(m)
    else:
        raise TypeError(f"not an antecedent expression: {expr!r}")


def referenced_props(expr: Expr) -> frozenset[str]:
    """All proposition ids an antecedent reads."""
    return frozenset(_walk_refs(expr))
