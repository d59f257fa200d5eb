"""Command-line harness: verify bounds, learn and evaluate weights, generate
data, and run the full batch experiment.

Exit codes: 0 success (all checks pass), 1 check or run failure, 2 usage or
enumeration-guard error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import bounds as _bounds
from .datagen import (
    DbParseError,
    db_to_world,
    domain_spec_for,
    generate_friends_smokers,
    generation_metadata,
    parse_db,
    serialize_db,
)
from .experiment import ExperimentConfig, run_experiment, write_outputs
from .learning import LEARN_MAX_ATOMS, LearnConfig, learn, target_log_likelihoods
from .logic import MlnParseError, formula_to_text, normalize_distinct, parse_mln, serialize_mln
from .model import DEFAULT_MAX_ATOMS
from .worlds import DomainSpec, DomainTooLargeError

FORCED_MAX_ATOMS = 34


def _load_mln(path: str):
    with open(path, encoding="utf-8") as fh:
        return normalize_distinct(parse_mln(fh.read()))


def _load_db(path: str, signature):
    with open(path, encoding="utf-8") as fh:
        return parse_db(fh.read(), signature)


def _spec_for(model, n: int | None, split_at: int = 0) -> DomainSpec:
    sizes = dict(model.signature.types)
    if n is not None:
        if len(sizes) != 1:
            raise ValueError("--n requires a single-type signature; edit the model file instead")
        sizes = {next(iter(sizes)): n}
    tau = next(iter(sizes))
    if split_at:
        return DomainSpec(sizes, split_type=tau, split_at=split_at)
    return DomainSpec(sizes)


def cmd_verify(args) -> int:
    model = _load_mln(args.mln)
    max_atoms = FORCED_MAX_ATOMS if args.force_guard else args.max_atoms
    report = _bounds.verify_all(model, args.n, args.m, tol=args.tol, max_atoms=max_atoms)
    print(report.to_text())
    if args.out:
        lines = ["check,n,m,log_spread,worst_slack,pass"]
        lines += [
            f"{r['check']},{r['n']},{r['m']},{r['log_spread']:.17g},"
            f"{r['worst_slack']:.17g},{str(r['pass']).lower()}"
            for r in report.to_rows()
        ]
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0 if report.all_passed else 1


def cmd_learn(args) -> int:
    model = _load_mln(args.mln)
    db = _load_db(args.db, model.signature)
    spec = _spec_for(model, args.n) if args.n else domain_spec_for(db)
    data = db_to_world(db, spec)
    config = LearnConfig(
        regularizer=args.reg,
        lam=args.lam,
        da=args.da,
        max_iter=args.max_iter,
        tol=args.tol,
        tie_split_weights=args.tie_split_weights,
        max_atoms=FORCED_MAX_ATOMS if args.force_guard else min(args.max_atoms, LEARN_MAX_ATOMS),
    )
    result = learn(model, spec, data, config)
    print(f"converged: {result.converged} after {result.iterations} iterations")
    print(f"final objective (penalized negative log-likelihood): {result.objective:.12g}")
    print(f"train log-likelihood: {-result.trace[-1].neg_log_likelihood:.12g}")
    for clause, w in zip(result.model.clauses, result.weights):
        print(f"  {w: .12g}  {formula_to_text(clause.formula)}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(serialize_mln(result.model))
        print(f"learned model written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = _load_mln(args.mln)
    db = _load_db(args.db, model.signature)
    spec = _spec_for(model, args.n) if args.n else domain_spec_for(db)
    data = db_to_world(db, spec)
    da_sizes = dict(spec.sizes) if args.da else None
    max_atoms = FORCED_MAX_ATOMS if args.force_guard else args.max_atoms
    ll = target_log_likelihoods(model, spec, [data], da_sizes=da_sizes, max_atoms=max_atoms)[0]
    print(f"log-likelihood: {ll:.17g}")
    return 0


def cmd_generate(args) -> int:
    if args.kind != "fs":
        raise ValueError(f"unknown generator kind {args.kind!r}")
    os.makedirs(args.out, exist_ok=True)
    for seed in args.seeds:
        db = generate_friends_smokers(args.population, seed)
        stem = os.path.join(args.out, f"fs_pop{args.population}_seed{seed}")
        with open(stem + ".db", "w", encoding="utf-8") as fh:
            fh.write(serialize_db(db))
        with open(stem + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(generation_metadata(args.population, seed, db), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {stem}.db ({len(db.atoms)} atoms)")
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for key in (
        "mln",
        "out",
        "train_sets",
        "train_population",
        "train_size",
        "target_replicates",
        "seed",
        "max_iter",
        "workers",
    ):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.targets is not None:
        overrides["target_sizes"] = tuple(args.targets)
    if args.grid is not None:
        overrides["grid"] = tuple(args.grid)
    if args.methods is not None:
        overrides["methods"] = tuple(args.methods)
    if args.da_eval_only:
        overrides["da_eval_only"] = True
    if args.force_guard:
        overrides["max_atoms"] = FORCED_MAX_ATOMS
    cfg = replace(cfg, **overrides) if overrides else cfg
    rows, models = run_experiment(cfg)
    csv_path = write_outputs(cfg, rows, models)
    ok = sum(1 for r in rows if r.status == "ok")
    print(f"{len(rows)} rows ({ok} ok) written to {csv_path}")
    if ok == 0:
        return 1
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--force-guard", action="store_true", help="raise the enumeration guard")
    p.add_argument("--max-atoms", type=int, default=DEFAULT_MAX_ATOMS, dest="max_atoms")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlnexact",
        description="Exact Markov logic engine for small domains: bound verification, "
        "weight learning, data generation, batch experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run every bound check by exhaustive enumeration")
    p.add_argument("--mln", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", help="write machine-readable check rows to this CSV")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("learn", help="learn weights on one database by exact likelihood")
    p.add_argument("--mln", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--n", type=int, help="domain size (defaults to database constants)")
    p.add_argument("--reg", choices=("none", "l1", "l2"), default="none")
    p.add_argument("--lambda", type=float, default=0.0, dest="lam")
    p.add_argument("--da", action="store_true", help="scale weights by train-size factors")
    p.add_argument("--max-iter", type=int, default=500, dest="max_iter")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--tie-split-weights", action="store_true", dest="tie_split_weights")
    p.add_argument("--out", help="write the learned model here")
    _add_common(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("eval", help="log-likelihood of a database under a model")
    p.add_argument("--mln", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--da", action="store_true", help="apply scale-down factors at this size")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="generate seeded synthetic databases")
    p.add_argument("--kind", default="fs", choices=("fs",))
    p.add_argument("--population", type=int, required=True)
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("experiment", help="run the batch learning experiment")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--mln")
    p.add_argument("--out")
    p.add_argument("--train-sets", type=int, dest="train_sets")
    p.add_argument("--train-population", type=int, dest="train_population")
    p.add_argument("--train-size", type=int, dest="train_size")
    p.add_argument("--targets", type=lambda s: [int(x) for x in s.split(",")])
    p.add_argument("--target-replicates", type=int, dest="target_replicates")
    p.add_argument("--methods", type=lambda s: [x.strip() for x in s.split(",")])
    p.add_argument("--grid", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--workers", type=int)
    p.add_argument("--da-eval-only", action="store_true", dest="da_eval_only")
    p.add_argument("--force-guard", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DomainTooLargeError as exc:
        print(f"error: {exc} (use --force-guard to override)", file=sys.stderr)
        return 2
    except (MlnParseError, DbParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
