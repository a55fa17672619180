"""Command-line surface: generate, train, evaluate, bench, audit.

Exit codes: 0 success, 2 invalid flags or input files, 3 optimization
failure (line search exhausted; partial outputs are still written), and 1
for a failed audit.  Every command is bit-reproducible for a fixed seed;
the environment variable CF_FORGE_SEED supplies the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .errors import CfForgeError
from .metric import PenaltyConfig, accuracy, margin_metric, penalty
from .model import (
    load_dataset,
    load_rulebase,
    save_dataset,
    save_rulebase,
    validate_dataset,
)
from .engine import FiringPolicy, evaluate_full
from .optimizer import (
    OptimizerConfig,
    TrainingTrace,
    audit_budget,
    run_gradient_bench,
    train_multi,
)
from .synth import SynthSpec, generate, generate_shaped


def _default_seed() -> int:
    try:
        return int(os.environ.get("CF_FORGE_SEED", "0"))
    except ValueError:
        return 0


def _write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _emit(doc, out: str | None) -> None:
    if out:
        _write_json(doc, out)
    else:
        print(json.dumps(doc, indent=2))


def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.shape:
        rb, objects = generate_shaped(args.rules, args.shape, seed=args.seed)
        save_rulebase(rb, out / "rules.json")
        save_dataset(objects, out / "train.jsonl")
        print(f"wrote {out / 'rules.json'} ({len(rb.rules)} rules) and {out / 'train.jsonl'}")
        return 0
    spec = SynthSpec(
        features=args.features,
        classes=args.classes,
        objects=args.objects,
        irrelevant_features=args.irrelevant,
        noise=args.noise,
        seed=args.seed,
    )
    rb_zero, rb_expert, objects, _ = generate(spec)
    if args.holdout > 0.0:
        k = int(round(args.holdout * len(objects)))
        holdout, objects = objects[:k], objects[k:]
        save_dataset(holdout, out / "holdout.jsonl")
    save_rulebase(rb_zero, out / "rules.json")
    save_rulebase(rb_expert, out / "expert.json")
    save_dataset(objects, out / "train.jsonl")
    print(
        f"wrote {out / 'rules.json'} ({len(rb_zero.rules)} rules), "
        f"{out / 'expert.json'}, {out / 'train.jsonl'} ({len(objects)} objects)"
    )
    return 0


def _evaluate(rb, objects, mu: float, threshold: float, per_object: bool = False) -> dict:
    policy = FiringPolicy(threshold=threshold)
    states = [evaluate_full(rb, o, policy) for o in objects]
    labels = {o.id: o.label for o in objects}
    m = margin_metric(states, labels, rb.output_classes, per_object=per_object)
    p = penalty(rb, PenaltyConfig(coefficient=mu))
    doc = {
        "metric": m.value,
        "penalty": p,
        "objective": m.value + p,
        "accuracy": accuracy(states, labels, rb),
    }
    if per_object:
        doc["per_object"] = m.per_object
    return doc


def cmd_train(args) -> int:
    rb = load_rulebase(args.rules)
    dataset = load_dataset(args.data)
    problems = validate_dataset(rb, dataset)
    if problems:
        for v in problems:
            print(f"error: {v}", file=sys.stderr)
        return 2
    cfg = OptimizerConfig(
        fd_eps=args.fd_eps,
        fd_scheme=args.fd,
        step_init=args.step_init,
        max_iters=args.max_iters,
        use_tms=not args.no_tms,
        seed=args.seed,
        multi_start=args.multi_start,
        holdout_fraction=args.holdout,
        threshold=args.tau,
        penalty=PenaltyConfig(coefficient=args.mu),
        train_only=tuple(args.train_only.split(",")) if args.train_only else None,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    trained, trace, _ = train_multi(rb, dataset, cfg, margin_metric)
    wall = time.perf_counter() - started
    save_rulebase(trained, out / "trained.json")
    _write_json(trace.to_dict(), out / "trace.json")
    report = {
        "config": trace.config,
        "status": trace.status,
        "initial": dict(trace.initial, accuracy=_evaluate(rb, dataset, args.mu, args.tau)["accuracy"]),
        "final": {
            "objective": trace.final_objective,
            **{k: v for k, v in _evaluate(trained, dataset, args.mu, args.tau).items() if k != "objective"},
        },
        "holdout_curve": [
            rec.holdout_objective for rec in trace.iterations
        ] if trace.holdout_size else [],
        "budget": trace.to_dict()["budget"],
        "boundary_stall": trace.boundary_stall,
        "iterations": len(trace.iterations),
        "wall_time_s": wall,
    }
    _write_json(report, out / "report.json")
    print(
        f"status={trace.status} iterations={len(trace.iterations)} "
        f"objective {trace.initial['objective']:.6g} -> {trace.final_objective:.6g}"
    )
    return 3 if trace.status == "line_search_failed" else 0


def cmd_eval(args) -> int:
    rb = load_rulebase(args.rules)
    objects = load_dataset(args.data)
    problems = validate_dataset(rb, objects)
    if problems:
        for v in problems:
            print(f"error: {v}", file=sys.stderr)
        return 2
    _emit(_evaluate(rb, objects, args.mu, args.tau, per_object=args.per_object), args.out)
    return 0


def cmd_bench(args) -> int:
    ladder = [int(x) for x in args.ladder.split(",")]
    modes = ["tms", "naive"] if args.mode == "both" else [args.mode]
    results = {mode: [run_gradient_bench(args.shape, r, mode, args.seed) for r in ladder]
               for mode in modes}
    doc = {"shape": args.shape, "ladder": ladder, "seed": args.seed, "modes": {}}
    for mode, rows in results.items():
        firings = [row["gradient_firings"] for row in rows]
        ratios = [firings[i + 1] / firings[i] for i in range(len(firings) - 1)]
        doc["modes"][mode] = {"runs": rows, "firing_ratios": ratios}
    _emit(doc, args.out)
    return 0


def cmd_audit(args) -> int:
    trace = TrainingTrace.from_dict(json.loads(Path(args.trace).read_text(encoding="utf-8")))
    verdict = audit_budget(trace)
    b = trace.budget
    _emit(
        {
            "status": verdict,
            "gradients": b.gradients,
            "objects": b.objects,
            "trainable_rules": b.trainable_rules,
            "probe_evals": b.probe_evals,
            "expected": b.gradients * b.objects * b.trainable_rules,
        },
        args.out,
    )
    return 1 if verdict == "fail" else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cf-forge",
        description="Trainable certainty-factor rule bases",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed = _default_seed()

    p = sub.add_parser("gen", help="generate a synthetic rule base and dataset")
    p.add_argument("--features", type=int, default=10)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--objects", type=int, default=100)
    p.add_argument("--irrelevant", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--holdout", type=float, default=0.0, help="fraction written to holdout.jsonl")
    p.add_argument("--shape", choices=["flat", "chain", "tree"], default=None,
                   help="generate a shaped single-object base instead")
    p.add_argument("--rules", type=int, default=7, help="rule count for --shape")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="fit trainable rule weights to a dataset")
    p.add_argument("--rules", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--fd", choices=["forward", "central"], default="forward")
    p.add_argument("--fd-eps", type=float, default=1e-4)
    p.add_argument("--step-init", type=float, default=0.5)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--no-tms", action="store_true",
                   help="disable incremental re-evaluation (every probe is a full pass)")
    p.add_argument("--train-only", default=None, help="comma-separated rule ids to optimize")
    p.add_argument("--holdout", type=float, default=0.0)
    p.add_argument("--multi-start", type=int, default=1)
    p.add_argument("--mu", type=float, default=10.0, help="soft-bound penalty coefficient")
    p.add_argument("--tau", type=float, default=0.0, help="rule firing threshold")
    p.add_argument("--threads", type=int, default=1,
                   help="concurrency cap (results are identical at any value)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a rule base against a dataset")
    p.add_argument("--rules", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--mu", type=float, default=10.0)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--per-object", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="count per-gradient rule firings across a size ladder")
    p.add_argument("--shape", choices=["flat", "chain", "tree"], default="flat")
    p.add_argument("--ladder", default="64,128", help="comma-separated rule counts")
    p.add_argument("--mode", choices=["tms", "naive", "both"], default="both")
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("audit", help="check a trace's probe-count identity")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_audit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "threads", 1) < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        return args.func(args)
    except (CfForgeError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
