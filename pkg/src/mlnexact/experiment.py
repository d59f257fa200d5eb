"""Batch experiment pipeline: generate, subsample, learn with each method,
evaluate on target sets, and emit deterministic CSV rows.

The pipeline is fully seeded: training sets come from generated populations
subsampled to the training size, target sets are generated fresh per size and
replicate, and every derived seed is an arithmetic function of the base seed.
Rerunning a config reproduces every numeric cell byte for byte.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from . import bounds as _bounds
from .datagen import (
    FRIENDS_SMOKERS_MLN,
    PERSON,
    SampleSpec,
    db_to_world,
    domain_spec_for,
    generate_friends_smokers,
    subsample,
)
from .learning import (
    GRID_DEFAULT,
    LearnConfig,
    lambda_sweep,
    learn,
)
from .logic import MlnModel, normalize_distinct, parse_mln, serialize_mln
from .model import (
    DEFAULT_CHUNK,
    RunningLogSumExp,
    _guard,
    _table,
    da_scale_factors,
    world_chunks,
)
from .worlds import AtomIndex, DomainSpec, World

SCHEMA = "mlnexact-experiment schema=1"
METHODS_ALL = ("none", "l1", "l2", "da")

CSV_COLUMNS = (
    "run",
    "regularizer",
    "lambda",
    "train_size",
    "target_size",
    "replicate",
    "status",
    "converged",
    "train_ll",
    "target_ll",
    "delta_ll",
    "log_spread",
)


@dataclass(frozen=True)
class ExperimentConfig:
    mln: str | None = None  # model file; None uses the built-in smokers model
    out: str = "results"
    train_dbs: tuple[str, ...] = ()  # explicit training databases instead of the generator
    train_sets: int = 20
    train_population: int = 10
    train_size: int = 3
    target_sizes: tuple[int, ...] = (3, 4)
    target_replicates: int = 5
    methods: tuple[str, ...] = METHODS_ALL
    grid: tuple[float, ...] = GRID_DEFAULT
    seed: int = 7
    max_iter: int = 2000
    tol: float = 1e-6
    max_atoms: int = 28
    workers: int = 1
    da_eval_only: bool = False
    tie_split_weights: bool = False

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS_ALL:
                raise ValueError(f"unknown method {m!r}")
        if any(m != "none" for m in self.methods) and "none" not in self.methods:
            raise ValueError("the unregularized baseline 'none' is required for deltas")
        if self.train_sets < 1 and not self.train_dbs:
            raise ValueError("need at least one training set")

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        kwargs = {}
        by_name = {f.name: f for f in fields(cls)}
        for key, raw in values.items():
            if key not in by_name:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, by_name[key].type)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        values = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                stripped = raw.split("//", 1)[0].split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = stripped.partition("=")
                values[key.strip()] = value.strip()
        return cls.from_mapping(values)


def _coerce(raw, annotation: str | type):
    if not isinstance(raw, str):
        return raw
    ann = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", "")
    if ann.startswith("tuple[str"):
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if ann.startswith("tuple[int"):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if ann.startswith("tuple[float"):
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if ann == "int":
        return int(raw)
    if ann == "float":
        return float(raw)
    if ann == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {raw!r}")
    if ann.startswith("str | None") or ann == "str":
        return raw
    raise ValueError(f"cannot coerce config value {raw!r} to {ann}")


@dataclass(frozen=True)
class Row:
    run: int
    regularizer: str
    lam: float | None
    train_size: int
    target_size: int
    replicate: int
    status: str
    converged: bool
    train_ll: float
    target_ll: float
    delta_ll: float
    log_spread: float


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def rows_to_csv(rows: Sequence[Row], timestamp: str | None = None) -> str:
    if timestamp is None:
        timestamp = datetime.now(timezone.utc).isoformat()
    lines = [f"# {SCHEMA}", f"# generated={timestamp}", ",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.run,
                    r.regularizer,
                    r.lam,
                    r.train_size,
                    r.target_size,
                    r.replicate,
                    r.status,
                    r.converged,
                    r.train_ll,
                    r.target_ll,
                    r.delta_ll,
                    r.log_spread,
                )
            )
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Seed schedule
# ---------------------------------------------------------------------------


def seed_train_generation(base: int, run: int) -> int:
    return base + 1_000 + run


def seed_train_subsample(base: int, run: int) -> int:
    return base + 2_000 + run


def seed_target(base: int, size_index: int, replicate: int) -> int:
    return base + 3_000 + 100 * size_index + replicate


# ---------------------------------------------------------------------------
# Target-size evaluation cache
# ---------------------------------------------------------------------------


class SizeEvaluator:
    """Reusable per-size evaluation: caches the per-world count matrix when it fits.

    One target size is evaluated for many weight vectors (every run and method),
    so the count statistics are computed once and each log partition becomes a
    chunked dot product.
    """

    def __init__(
        self,
        model: MlnModel,
        spec: DomainSpec,
        *,
        max_atoms: int = 28,
        budget_bytes: int = 256 << 20,
        chunk: int = DEFAULT_CHUNK,
    ):
        self.model = model
        self.spec = spec
        self.index = AtomIndex(model.signature, spec)
        _guard(self.index.n_atoms, max_atoms)
        self.chunk = chunk
        structure = model.with_weights([0.0] * len(model.clauses))
        self._gt = _table(structure, self.index)
        n_worlds = 1 << self.index.n_atoms
        n_clauses = len(model.clauses)
        bound = max(
            (e.const_count + sum(g.cols.shape[0] for g in e.groups) for e in self._gt.entries),
            default=0,
        )
        dtype = np.int8 if bound < 2**7 else np.int16 if bound < 2**15 else np.int32
        self._counts: np.ndarray | None = None
        if n_worlds * n_clauses * np.dtype(dtype).itemsize <= budget_bytes:
            counts = np.empty((n_worlds, n_clauses), dtype=dtype)
            for worlds in world_chunks(self.index.n_atoms, chunk):
                start = int(worlds[0])
                counts[start : start + worlds.shape[0]] = self._gt.counts_matrix(worlds)
            self._counts = counts

    def log_partition(self, weights: Sequence[float]) -> float:
        w = np.asarray(weights, dtype=np.float64)
        lse = RunningLogSumExp()
        if self._counts is not None:
            n_worlds = self._counts.shape[0]
            for start in range(0, n_worlds, self.chunk):
                block = self._counts[start : start + self.chunk]
                logw = np.zeros(block.shape[0])
                for ci in range(block.shape[1]):
                    if w[ci] != 0.0:
                        logw += w[ci] * block[:, ci]
                lse.update(logw)
        else:
            for worlds in world_chunks(self.index.n_atoms, self.chunk):
                lse.update(self._gt.log_weights(worlds, weights=w))
        return lse.value

    def log_likelihoods(self, weights: Sequence[float], worlds: Sequence[World]) -> list[float]:
        w = np.asarray(weights, dtype=np.float64)
        log_z = self.log_partition(w)
        out = []
        for world in worlds:
            if world.index != self.index:
                raise ValueError("world is not over this evaluator's domain spec")
            out.append(float(self._gt.counts_world(world) @ w) - log_z)
        return out


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def load_experiment_model(cfg: ExperimentConfig) -> MlnModel:
    if cfg.mln is None:
        text = FRIENDS_SMOKERS_MLN
    else:
        with open(cfg.mln, encoding="utf-8") as fh:
            text = fh.read()
    return normalize_distinct(parse_mln(text))


def _sample_type(model: MlnModel) -> str:
    types = model.signature.types
    if any(t == PERSON for t, _ in types):
        return PERSON
    return types[0][0]


def training_world(cfg: ExperimentConfig, model: MlnModel, run: int) -> World:
    tau = _sample_type(model)
    if cfg.train_dbs:
        from .datagen import parse_db

        with open(cfg.train_dbs[run], encoding="utf-8") as fh:
            db = parse_db(fh.read(), model.signature)
    else:
        db = generate_friends_smokers(cfg.train_population, seed_train_generation(cfg.seed, run))
        if cfg.train_size < cfg.train_population:
            db = subsample(
                db, SampleSpec(tau, cfg.train_size, seed_train_subsample(cfg.seed, run))
            )
    return db_to_world(db, domain_spec_for(db))


def target_worlds(cfg: ExperimentConfig, model: MlnModel) -> dict[int, list[World]]:
    out: dict[int, list[World]] = {}
    tau = _sample_type(model)
    for si, size in enumerate(cfg.target_sizes):
        spec = DomainSpec({t: size if t == tau else s for t, s in model.signature.types})
        index = AtomIndex(model.signature, spec)
        out[size] = [
            db_to_world(
                generate_friends_smokers(size, seed_target(cfg.seed, si, j)),
                spec,
                index,
            )
            for j in range(cfg.target_replicates)
        ]
    return out


def _effective_weights(model: MlnModel, weights: np.ndarray, da_sizes: dict | None) -> np.ndarray:
    if da_sizes is None:
        return weights
    factors = np.array(da_scale_factors(model, da_sizes).factors)
    return weights / factors


def _spread_at(model: MlnModel, weights: np.ndarray, n: int, m: int) -> float:
    try:
        return _bounds.log_spread(model.with_weights(weights), n, m)
    except ValueError:
        return math.nan


def run_experiment(
    cfg: ExperimentConfig,
) -> tuple[list[Row], dict[tuple[int, str], MlnModel]]:
    """Execute every (training set x method) run; returns rows plus learned models.

    The model map is keyed by (run, method) for raw learned models and by
    (run, f"da_eff{size}") for target-scaled variants.
    """
    n_runs = len(cfg.train_dbs) if cfg.train_dbs else cfg.train_sets
    run_ids = list(range(n_runs))
    if cfg.workers > 1:
        batches = [list(b) for b in np.array_split(run_ids, cfg.workers) if len(b)]
        rows: list[Row] = []
        models: dict[tuple[int, str], MlnModel] = {}
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for part_rows, part_models in pool.map(_run_batch, [(cfg, b) for b in batches]):
                rows.extend(part_rows)
                models.update(part_models)
        return rows, models
    return _run_batch((cfg, run_ids))


def _run_batch(args: tuple[ExperimentConfig, list[int]]) -> tuple[list[Row], dict]:
    cfg, run_ids = args
    model = load_experiment_model(cfg)
    tau = _sample_type(model)
    targets = target_worlds(cfg, model)
    evaluators = {
        size: SizeEvaluator(model, worlds[0].index.spec, max_atoms=cfg.max_atoms)
        for size, worlds in targets.items()
    }
    smallest = min(cfg.target_sizes)
    rows: list[Row] = []
    models: dict[tuple[int, str], MlnModel] = {}
    for run in run_ids:
        try:
            rows_r, models_r = _run_one(cfg, model, tau, run, targets, evaluators, smallest)
            rows.extend(rows_r)
            models.update(models_r)
        except Exception as exc:  # per-run isolation: one bad run must not sink the batch
            for method in cfg.methods:
                rows.append(
                    Row(
                        run=run,
                        regularizer=method,
                        lam=None,
                        train_size=cfg.train_size,
                        target_size=-1,
                        replicate=-1,
                        status=f"error:{type(exc).__name__}",
                        converged=False,
                        train_ll=math.nan,
                        target_ll=math.nan,
                        delta_ll=math.nan,
                        log_spread=math.nan,
                    )
                )
    return rows, models


def _run_one(cfg, model, tau, run, targets, evaluators, smallest):
    data = training_world(cfg, model, run)
    train_spec = data.index.spec
    train_n = train_spec.size(tau)
    base_cfg = LearnConfig(
        max_iter=cfg.max_iter, tol=cfg.tol, tie_split_weights=cfg.tie_split_weights
    )
    methods = [m for m in METHODS_ALL if m in cfg.methods]

    results = {}
    best_lams: dict[str, float | None] = {m: None for m in methods}
    for method in methods:
        if method == "none":
            results[method] = learn(model, train_spec, data, base_cfg)
        elif method == "da":
            results[method] = learn(
                model, train_spec, data, replace(base_cfg, da=not cfg.da_eval_only)
            )
        else:
            sweep = lambda_sweep(
                model,
                train_spec,
                [data],
                targets[smallest][0].index.spec,
                targets[smallest],
                method,
                grid=cfg.grid,
                config=base_cfg,
                max_atoms=cfg.max_atoms,
            )
            best_lams[method] = sweep.best_lam
            results[method] = learn(
                model, train_spec, data, replace(base_cfg, regularizer=method, lam=sweep.best_lam)
            )

    rows: list[Row] = []
    models: dict[tuple[int, str], MlnModel] = {}
    baseline: dict[tuple[int, int], float] = {}
    for method in methods:
        res = results[method]
        models[(run, method)] = res.model
        for size in cfg.target_sizes:
            da_sizes = None
            if method == "da":
                da_sizes = {t: size if t == tau else s for t, s in model.signature.types}
            eff = _effective_weights(res.model, np.array(res.weights), da_sizes)
            if method == "da":
                models[(run, f"da_eff{size}")] = res.model.with_weights(eff)
            lls = evaluators[size].log_likelihoods(eff, targets[size])
            spread = _spread_at(model, eff, train_n, size - train_n)
            for j, ll in enumerate(lls):
                if method == "none":
                    baseline[(size, j)] = ll
                rows.append(
                    Row(
                        run=run,
                        regularizer=method,
                        lam=best_lams.get(method),
                        train_size=train_n,
                        target_size=size,
                        replicate=j,
                        status="ok",
                        converged=res.converged,
                        train_ll=-res.trace[-1].neg_log_likelihood,
                        target_ll=ll,
                        delta_ll=ll - baseline[(size, j)],
                        log_spread=spread,
                    )
                )
    return rows, models


def write_outputs(
    cfg: ExperimentConfig, rows: Sequence[Row], models: dict[tuple[int, str], MlnModel]
) -> str:
    """Write the CSV and the serialized learned models; returns the CSV path."""
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, "results.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(rows))
    model_dir = os.path.join(cfg.out, "models")
    os.makedirs(model_dir, exist_ok=True)
    for (run, method), m in sorted(models.items()):
        path = os.path.join(model_dir, f"run{run:02d}_{method}.mln")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(serialize_mln(m))
    return csv_path
