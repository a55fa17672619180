"""Steepest-descent training of rule weights with exact work accounting.

The loop: evaluate the objective, estimate its gradient with finite
differences, backtrack along the negative gradient until the Armijo
condition holds, project hard-bounded weights onto their bounds, repeat.
Candidates are projected *before* the Armijo test: weights outside [-1, +1]
are not valid certainty factors and the objective is undefined there, and
testing the projected point is what guarantees the recorded objective
sequence never increases.

Gradient probes displace one weight at a time, so with incremental
re-evaluation enabled (``use_tms``) each probe re-fires only the perturbed
rule's downstream closure per object; probes then cost O(closure) firings
instead of a full pass.  Probe propagation uses an exact (bitwise) change
cutoff, which makes the incremental gradient equal the full-evaluation
gradient bit for bit: the speedup is never a semantics change.  Line-search
candidates move every trainable weight at once, so those are full passes
and are accounted separately.

Accounting: ``probe_evals`` counts one per (rule, object) probe (two per
pair for non-degenerate central differences).  In naive forward mode every
probe is a genuine full pass, so at termination
``probe_evals == gradients x objects x trainable_rules`` exactly;
``audit_budget`` checks that identity.  Line-search evaluations are counted
in their own field and excluded by definition.
"""

from __future__ import annotations

import copy
import random
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .engine import FiringPolicy, ObjectEvaluation, evaluate_full, perturb_weight, restore_weight
from .errors import EmptyDataset, NoTrainableRules
from .metric import MetricFn, PenaltyConfig, margin_metric, penalty
from .model import HARD, Rule, RuleBase, TrainingObject


@dataclass
class OptimizerConfig:
    fd_eps: float = 1e-4
    fd_scheme: str = "forward"  # "forward" | "central"
    step_init: float = 0.5
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 30
    max_iters: int = 200
    tol_objective: float = 1e-6  # relative decrease, over tol_objective_window iterations
    tol_objective_window: int = 3
    tol_grad: float = 1e-6  # infinity norm
    use_tms: bool = True
    seed: int = 0
    multi_start: int = 1
    holdout_fraction: float = 0.0
    threshold: float = 0.0  # rule firing threshold
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    train_only: tuple[str, ...] | None = None  # None trains every trainable rule

    def __post_init__(self) -> None:
        if self.fd_eps <= 0.0:
            raise ValueError("fd_eps must be > 0")
        if self.fd_scheme not in ("forward", "central"):
            raise ValueError(f"unknown fd_scheme {self.fd_scheme!r}")
        if self.step_init <= 0.0:
            raise ValueError("step_init must be > 0")
        if not (0.0 < self.shrink < 1.0):
            raise ValueError("shrink must be in (0, 1)")
        if self.max_backtracks < 0 or self.max_iters < 1:
            raise ValueError("max_backtracks must be >= 0 and max_iters >= 1")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ValueError("holdout_fraction must be in [0, 1)")
        if self.multi_start < 1:
            raise ValueError("multi_start must be >= 1")
        if self.tol_objective_window < 1:
            raise ValueError("tol_objective_window must be >= 1")
        if self.train_only is not None:
            self.train_only = tuple(self.train_only)


@dataclass
class EvaluationBudget:
    """Exact work counters for a training run.

    gradients: gradient determinations; objects: training objects;
    trainable_rules: weights being optimized; probe_evals: gradient probes,
    one per (rule, object) displacement; line_search_evals: full rule-base
    evaluations spent on line-search candidates (excluded from
    probe_evals); firings: total rule firings through the engine.
    """

    gradients: int = 0
    objects: int = 0
    trainable_rules: int = 0
    probe_evals: int = 0
    line_search_evals: int = 0
    firings: int = 0


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    metric: float
    penalty: float
    step: float
    grad_inf_norm: float
    backtracks: int
    holdout_objective: float | None = None


@dataclass
class TrainingTrace:
    config: dict
    status: str  # converged_objective | converged_gradient | max_iters | line_search_failed
    boundary_stall: bool
    initial: dict
    iterations: list[IterationRecord]
    final_weights: dict[str, float]
    budget: EvaluationBudget
    holdout_size: int = 0
    starts: list[dict] | None = None

    @property
    def final_objective(self) -> float:
        if self.iterations:
            return self.iterations[-1].objective
        return self.initial["objective"]

    def to_dict(self) -> dict:
        doc = {
            "config": self.config,
            "status": self.status,
            "boundary_stall": self.boundary_stall,
            "initial": self.initial,
            "iterations": [asdict(rec) for rec in self.iterations],
            "final_weights": self.final_weights,
            "budget": asdict(self.budget),
            "holdout_size": self.holdout_size,
        }
        if self.starts is not None:
            doc["starts"] = self.starts
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingTrace":
        return cls(
            config=doc["config"],
            status=doc["status"],
            boundary_stall=doc["boundary_stall"],
            initial=doc["initial"],
            iterations=[IterationRecord(**rec) for rec in doc["iterations"]],
            final_weights=doc["final_weights"],
            budget=EvaluationBudget(**doc["budget"]),
            holdout_size=doc.get("holdout_size", 0),
            starts=doc.get("starts"),
        )


def _config_dict(cfg: OptimizerConfig) -> dict:
    doc = asdict(cfg)
    doc["penalty"] = asdict(cfg.penalty)
    if cfg.train_only is not None:
        doc["train_only"] = list(cfg.train_only)
    return doc


def _projection_interval(rule: Rule) -> tuple[float, float]:
    if rule.bound_kind == HARD:
        lo, hi = rule.bounds
        return max(lo, -1.0), min(hi, 1.0)
    return -1.0, 1.0


def _project(rule: Rule, w: float) -> float:
    lo, hi = _projection_interval(rule)
    return min(max(w, lo), hi)


def _is_trainable(rule: Rule, cfg: OptimizerConfig) -> bool:
    if not rule.trainable:
        return False
    return cfg.train_only is None or rule.id in cfg.train_only


class _Session:
    """Exclusive-access training state: the working rule base, per-object
    evaluation caches, and the budget counters."""

    def __init__(
        self,
        rb: RuleBase,
        objects: Sequence[TrainingObject],
        cfg: OptimizerConfig,
        metric_fn: MetricFn,
    ):
        self.rb = rb
        self.objects = list(objects)
        self.cfg = cfg
        self.metric_fn = metric_fn
        self.policy = FiringPolicy(threshold=cfg.threshold)
        # exact-cutoff propagation keeps probe results bit-identical to
        # full evaluation, so tms on/off changes cost, never results
        self.probe_policy = FiringPolicy(threshold=cfg.threshold, propagation_cutoff=0.0)
        self.labels = {o.id: o.label for o in self.objects}
        self.classes = rb.output_classes
        if cfg.train_only is not None:
            for rid in cfg.train_only:
                rb.rule(rid)
        self.trainable = [r for r in rb.rules if _is_trainable(r, cfg)]
        self.budget = EvaluationBudget(
            objects=len(self.objects), trainable_rules=len(self.trainable)
        )
        self.states: list[ObjectEvaluation] = []

    def init_states(self) -> None:
        for obj in self.objects:
            st = evaluate_full(self.rb, obj, self.policy)
            self.budget.firings += st.counters.rules_fired
            self.states.append(st)

    def refresh_states(self, line_search: bool = False) -> None:
        for st, obj in zip(self.states, self.objects):
            before = st.counters.rules_fired
            evaluate_full(self.rb, obj, self.policy, into=st)
            self.budget.firings += st.counters.rules_fired - before
        if line_search:
            self.budget.line_search_evals += len(self.states)

    def objective_parts(self) -> tuple[float, float, float]:
        m = self.metric_fn(self.states, self.labels, self.classes).value
        p = penalty(self.rb, self.cfg.penalty)
        return m + p, m, p

    def _probe_objective(self, rule: Rule, w_probe: float) -> float:
        """Objective with one weight displaced, everything else fixed."""
        old = rule.weight
        rule.weight = w_probe
        try:
            if self.cfg.use_tms:
                for st in self.states:
                    self.budget.firings += perturb_weight(
                        st, self.rb, rule.id, w_probe, self.probe_policy
                    )
                value = self.metric_fn(self.states, self.labels, self.classes).value
                value += penalty(self.rb, self.cfg.penalty)
                for st in self.states:
                    self.budget.firings += restore_weight(
                        st, self.rb, rule.id, old, self.probe_policy
                    )
            else:
                probe_states = []
                for obj in self.objects:
                    st = evaluate_full(self.rb, obj, self.policy)
                    self.budget.firings += st.counters.rules_fired
                    probe_states.append(st)
                value = self.metric_fn(probe_states, self.labels, self.classes).value
                value += penalty(self.rb, self.cfg.penalty)
        finally:
            rule.weight = old
        self.budget.probe_evals += len(self.objects)
        return value

    def gradient(self, base_objective: float) -> dict[str, float]:
        cfg = self.cfg
        g: dict[str, float] = {}
        for rule in self.trainable:
            w = rule.weight
            h = cfg.fd_eps * max(1.0, abs(w))
            if cfg.fd_scheme == "forward":
                e = h if w + h <= 1.0 else -h
                f1 = self._probe_objective(rule, w + e)
                g[rule.id] = (f1 - base_objective) / e
            else:
                hi_ok = w + h <= 1.0
                lo_ok = w - h >= -1.0
                if hi_ok and lo_ok:
                    f_hi = self._probe_objective(rule, w + h)
                    f_lo = self._probe_objective(rule, w - h)
                    g[rule.id] = (f_hi - f_lo) / (2.0 * h)
                elif hi_ok:
                    f_hi = self._probe_objective(rule, w + h)
                    g[rule.id] = (f_hi - base_objective) / h
                else:
                    f_lo = self._probe_objective(rule, w - h)
                    g[rule.id] = (base_objective - f_lo) / h
        self.budget.gradients += 1
        return g

    def line_search(
        self, f_base: float, g: dict[str, float], g_sq: float
    ) -> tuple[bool, float, int, float, float, float]:
        """Backtracking Armijo search along -g from the current weights.
        Candidates are projected before evaluation.  On failure the
        original weights and states are restored."""
        cfg = self.cfg
        w0 = {r.id: r.weight for r in self.trainable}
        step = cfg.step_init
        backtracks = 0
        while True:
            for r in self.trainable:
                r.weight = _project(r, w0[r.id] - step * g[r.id])
            self.refresh_states(line_search=True)
            f_cand, m_cand, p_cand = self.objective_parts()
            if f_cand <= f_base - cfg.armijo_c * step * g_sq:
                return True, step, backtracks, f_cand, m_cand, p_cand
            backtracks += 1
            if backtracks > cfg.max_backtracks:
                for r in self.trainable:
                    r.weight = w0[r.id]
                self.refresh_states(line_search=True)
                return False, 0.0, backtracks, f_base, 0.0, 0.0
            step *= cfg.shrink

    def boundary_stall(self) -> bool:
        if not self.trainable:
            return False
        on_bound = 0
        for r in self.trainable:
            lo, hi = _projection_interval(r)
            if r.weight == lo or r.weight == hi:
                on_bound += 1
        return on_bound >= 0.2 * len(self.trainable)


def gradient(
    rb: RuleBase,
    dataset: Sequence[TrainingObject],
    cfg: OptimizerConfig | None = None,
    metric_fn: MetricFn = margin_metric,
    budget: EvaluationBudget | None = None,
) -> dict[str, float]:
    """Finite-difference gradient of the objective at the rule base's
    current weights, indexed by trainable rule id.  Weights and dataset are
    left untouched; pass a budget to observe the probe accounting."""
    cfg = cfg or OptimizerConfig()
    if not dataset:
        raise EmptyDataset("gradient needs at least one object")
    sess = _Session(rb, dataset, cfg, metric_fn)
    if not sess.trainable:
        raise NoTrainableRules("no rule is trainable")
    if budget is not None:
        sess.budget = budget
        budget.objects = len(sess.objects)
        budget.trainable_rules = len(sess.trainable)
    sess.init_states()
    base, _, _ = sess.objective_parts()
    return sess.gradient(base)


def _split_dataset(
    dataset: Sequence[TrainingObject], cfg: OptimizerConfig
) -> tuple[list[TrainingObject], list[TrainingObject]]:
    if cfg.holdout_fraction <= 0.0:
        return list(dataset), []
    rng = random.Random(cfg.seed)
    idx = list(range(len(dataset)))
    rng.shuffle(idx)
    k = int(round(cfg.holdout_fraction * len(dataset)))
    hold = sorted(idx[:k])
    train_idx = sorted(idx[k:])
    return [dataset[i] for i in train_idx], [dataset[i] for i in hold]


class _HoldoutTracker:
    def __init__(self, sess: _Session, objects: list[TrainingObject]):
        self.sess = sess
        self.objects = objects
        self.labels = {o.id: o.label for o in objects}
        self.states = [ObjectEvaluation(o.id) for o in objects]

    def evaluate(self) -> float:
        sess = self.sess
        for st, obj in zip(self.states, self.objects):
            before = st.counters.rules_fired
            evaluate_full(sess.rb, obj, sess.policy, into=st)
            sess.budget.firings += st.counters.rules_fired - before
        m = sess.metric_fn(self.states, self.labels, sess.classes).value
        return m + penalty(sess.rb, sess.cfg.penalty)


def train(
    rb: RuleBase,
    dataset: Sequence[TrainingObject],
    cfg: OptimizerConfig | None = None,
    metric_fn: MetricFn = margin_metric,
) -> tuple[RuleBase, TrainingTrace]:
    """Minimize the objective over the trainable weights.

    Returns a trained copy of the rule base (the input is never mutated)
    and the run's trace.  The accepted-iterate objective sequence is
    non-increasing by construction; non-trainable weights come back bit
    identical.
    """
    cfg = cfg or OptimizerConfig()
    if not dataset:
        raise EmptyDataset("training needs at least one object")
    work = copy.deepcopy(rb)
    train_objs, holdout_objs = _split_dataset(dataset, cfg)
    if not train_objs:
        raise EmptyDataset("holdout split left no training objects")
    sess = _Session(work, train_objs, cfg, metric_fn)
    if not sess.trainable:
        raise NoTrainableRules("no rule is trainable")
    sess.init_states()
    f_cur, m_cur, p_cur = sess.objective_parts()
    holdout = _HoldoutTracker(sess, holdout_objs) if holdout_objs else None
    initial = {"objective": f_cur, "metric": m_cur, "penalty": p_cur}
    if holdout:
        initial["holdout_objective"] = holdout.evaluate()
    records: list[IterationRecord] = []
    status = "max_iters"
    stall = 0
    for it in range(1, cfg.max_iters + 1):
        g = sess.gradient(f_cur)
        g_inf = max(abs(v) for v in g.values())
        if g_inf <= cfg.tol_grad:
            status = "converged_gradient"
            break
        g_sq = sum(v * v for v in g.values())
        ok, step, backtracks, f_new, m_new, p_new = sess.line_search(f_cur, g, g_sq)
        if not ok:
            status = "line_search_failed"
            break
        rel = (f_cur - f_new) / max(1.0, abs(f_cur))
        f_cur, m_cur, p_cur = f_new, m_new, p_new
        records.append(
            IterationRecord(
                iteration=it,
                objective=f_cur,
                metric=m_cur,
                penalty=p_cur,
                step=step,
                grad_inf_norm=g_inf,
                backtracks=backtracks,
                holdout_objective=holdout.evaluate() if holdout else None,
            )
        )
        if rel < cfg.tol_objective:
            stall += 1
            if stall >= cfg.tol_objective_window:
                status = "converged_objective"
                break
        else:
            stall = 0
    trace = TrainingTrace(
        config=_config_dict(cfg),
        status=status,
        boundary_stall=sess.boundary_stall(),
        initial=initial,
        iterations=records,
        final_weights={r.id: r.weight for r in work.rules},
        budget=sess.budget,
        holdout_size=len(holdout_objs),
    )
    return work, trace


def train_multi(
    rb: RuleBase,
    dataset: Sequence[TrainingObject],
    cfg: OptimizerConfig | None = None,
    metric_fn: MetricFn = margin_metric,
) -> tuple[RuleBase, TrainingTrace, list[TrainingTrace]]:
    """Run train() from several initializations and keep the best.

    Start 0 uses the declared weights; each later start adds a seeded
    uniform perturbation in [-0.3, +0.3] to every trainable weight,
    projected back onto its bounds.  The run with the lowest final
    objective wins; ties go to the earliest start.
    """
    cfg = cfg or OptimizerConfig()
    rng = random.Random(cfg.seed)
    best: tuple[float, int, RuleBase, TrainingTrace] | None = None
    traces: list[TrainingTrace] = []
    summaries: list[dict] = []
    for start in range(cfg.multi_start):
        init_rb = copy.deepcopy(rb)
        if start > 0:
            for r in init_rb.rules:
                if _is_trainable(r, cfg):
                    r.weight = _project(r, r.weight + rng.uniform(-0.3, 0.3))
        trained, trace = train(init_rb, dataset, cfg, metric_fn)
        traces.append(trace)
        summaries.append(
            {
                "start": start,
                "initial_objective": trace.initial["objective"],
                "final_objective": trace.final_objective,
                "status": trace.status,
                "iterations": len(trace.iterations),
            }
        )
        if best is None or trace.final_objective < best[0]:
            best = (trace.final_objective, start, trained, trace)
    assert best is not None
    best_trace = best[3]
    if cfg.multi_start > 1:
        best_trace.starts = summaries
    return best[2], best_trace, traces


def audit_budget(trace: TrainingTrace) -> str:
    """Check the exact probe-count identity for naive forward-difference
    runs: probe_evals == gradients x objects x trainable_rules.  Returns
    "pass", "fail", or "skipped" (incremental or central runs, where the
    identity is not the defined cost model)."""
    cfg = trace.config
    if cfg.get("use_tms", True) or cfg.get("fd_scheme", "forward") != "forward":
        return "skipped"
    b = trace.budget
    expected = b.gradients * b.objects * b.trainable_rules
    return "pass" if b.probe_evals == expected else "fail"


def run_gradient_bench(
    shape: str, n_rules: int, mode: str = "tms", seed: int = 0
) -> dict:
    """One gradient determination on a freshly generated shaped base,
    returning the engine's exact work counters (no wall-clock anywhere)."""
    from .synth import generate_shaped

    rb, objects = generate_shaped(n_rules, shape, seed)
    cfg = OptimizerConfig(use_tms=(mode == "tms"), seed=seed)
    sess = _Session(rb, objects, cfg, margin_metric)
    sess.init_states()
    base, _, _ = sess.objective_parts()
    fired_before = sess.budget.firings
    sess.gradient(base)
    return {
        "shape": shape,
        "rules": n_rules,
        "mode": mode,
        "objects": len(objects),
        "trainable_rules": sess.budget.trainable_rules,
        "gradient_firings": sess.budget.firings - fired_before,
        "probe_evals": sess.budget.probe_evals,
    }
