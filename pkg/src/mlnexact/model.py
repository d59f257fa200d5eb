"""Exact Markov logic semantics on enumerable domains.

Clauses are compiled once per (formula, atom index) into grounding tables:
for every grounding, the positions of the ground atoms it touches plus a
truth table over their joint assignments. World enumeration is then integer
counting, and weights, partition functions, and restriction marginals are
evaluated with vectorized bit arithmetic in log space. Groundings are grouped
by the variable-identification pattern of the assignment, so raw clauses
(repeated constants allowed) and distinct-constant normalized clauses share
one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import product
from typing import Iterator, Mapping, Sequence

import numpy as np

from .logic import (
    Clause,
    Formula,
    MlnModel,
    arity_partition,
    distinct_atoms,
    eval_node,
    substitute,
)
from .worlds import (
    AtomIndex,
    DomainSpec,
    DomainTooLargeError,
    World,
    cross_tuples,
    ordered_tuples,
    restriction_positions,
    split_subsets,
)

DEFAULT_MAX_ATOMS = 28
DEFAULT_DENSE_MAX_ATOMS = 24
DEFAULT_CHUNK = 1 << 18


def _guard(n_atoms: int, max_atoms: int) -> None:
    if n_atoms > max_atoms:
        raise DomainTooLargeError(
            f"{n_atoms} ground atoms exceed the enumeration guard of {max_atoms}"
        )


def atom_index(model: MlnModel, spec: DomainSpec) -> AtomIndex:
    return AtomIndex(model.signature, spec)


def world_chunks(n_atoms: int, chunk: int = DEFAULT_CHUNK) -> Iterator[np.ndarray]:
    """World integers 0..2^G-1 in consecutive uint64 blocks."""
    total = 1 << n_atoms
    for start in range(0, total, chunk):
        yield np.arange(start, min(start + chunk, total), dtype=np.uint64)


def bit_codes(worlds: np.ndarray, positions: Sequence[int]) -> np.ndarray:
    """Pack the given bit positions of each world integer into dense codes."""
    code = np.zeros(worlds.shape[0], dtype=np.int64)
    one = np.uint64(1)
    for j, p in enumerate(positions):
        code |= ((worlds >> np.uint64(int(p))) & one).astype(np.int64) << j
    return code


class RunningLogSumExp:
    """Streaming log-sum-exp over chunks, with running-max rescaling."""

    __slots__ = ("_max", "_sum")

    def __init__(self):
        self._max = -math.inf
        self._sum = 0.0

    def update(self, log_values: np.ndarray) -> None:
        if log_values.size == 0:
            return
        m = float(log_values.max())
        if m > self._max:
            if self._max > -math.inf:
                self._sum *= math.exp(self._max - m)
            self._max = m
        if self._max == -math.inf:
            return
        self._sum += float(np.exp(log_values - self._max).sum())

    @property
    def value(self) -> float:
        if self._max == -math.inf:
            return -math.inf
        return self._max + math.log(self._sum)


# ---------------------------------------------------------------------------
# Grounding tables
# ---------------------------------------------------------------------------


@dataclass
class _Group:
    cols: np.ndarray  # (n_groundings, n_slots) int64, atom bit positions
    table: np.ndarray  # (2^n_slots,) uint8, clause truth per joint assignment


@dataclass
class _GroundedFormula:
    const_count: int  # groundings that are true under every world
    groups: list[_Group]
    total: int  # all groundings surviving the disequality constraints


@lru_cache(maxsize=4096)
def _grounded_formula(formula: Formula, index: AtomIndex) -> _GroundedFormula:
    spec = index.spec
    names = formula.var_names
    types = tuple(t for _, t in formula.vars)
    domains = [spec.constants(t) for t in types]
    same_type_pairs = [
        (names.index(a), names.index(b))
        for a, b in formula.distinct
        if formula.var_type(a) == formula.var_type(b)
    ]

    by_pattern: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
    total = 0
    for values in product(*domains):
        if any(values[i] == values[j] for i, j in same_type_pairs):
            continue
        total += 1
        pattern = []
        for i in range(len(values)):
            leader = i
            for j in range(i):
                if types[j] == types[i] and values[j] == values[i]:
                    leader = j
                    break
            pattern.append(leader)
        by_pattern.setdefault(tuple(pattern), []).append(values)

    const_count = 0
    groups: list[_Group] = []
    for pattern, assignments in by_pattern.items():
        rep = {names[i]: names[p] for i, p in enumerate(pattern)}
        merged = substitute(formula.ast, rep)
        slots = distinct_atoms(merged)
        table = np.empty(1 << len(slots), dtype=np.uint8)
        for code in range(table.shape[0]):
            values_map = {a: bool(code >> i & 1) for i, a in enumerate(slots)}
            table[code] = eval_node(merged, values_map)
        if not table.any():
            continue
        if table.all():
            const_count += len(assignments)
            continue
        cols = np.empty((len(assignments), len(slots)), dtype=np.int64)
        for r, values in enumerate(assignments):
            env = dict(zip(names, values))
            for s, atom in enumerate(slots):
                cols[r, s] = index.index_of(atom.pred, tuple(env[v] for v in atom.args))
        groups.append(_Group(cols, table))
    return _GroundedFormula(const_count, groups, total)


class GroundingTable:
    """Per-clause compiled groundings for one model over one atom index."""

    def __init__(self, model: MlnModel, index: AtomIndex):
        self.model = model
        self.index = index
        self.entries = [_grounded_formula(c.formula, index) for c in model.clauses]
        self._weights = np.array(model.weights(), dtype=np.float64)

    def counts_world(self, world: World) -> np.ndarray:
        """True-grounding count of every clause in a single world."""
        bits = world.bits
        out = np.zeros(len(self.entries), dtype=np.int64)
        for ci, entry in enumerate(self.entries):
            n = entry.const_count
            for g in entry.groups:
                for row in g.cols:
                    code = 0
                    for j, p in enumerate(row):
                        code |= (bits >> int(p) & 1) << j
                    n += int(g.table[code])
            out[ci] = n
        return out

    def _bit_columns(self, worlds: np.ndarray) -> dict[int, np.ndarray]:
        used = sorted({int(p) for e in self.entries for g in e.groups for p in g.cols.flat})
        one = np.uint64(1)
        return {p: ((worlds >> np.uint64(p)) & one).astype(np.int32) for p in used}

    def counts_matrix(self, worlds: np.ndarray) -> np.ndarray:
        """(n_worlds, n_clauses) true-grounding counts, vectorized over worlds."""
        bits = self._bit_columns(worlds)
        out = np.empty((worlds.shape[0], len(self.entries)), dtype=np.int32)
        for ci, entry in enumerate(self.entries):
            acc = np.full(worlds.shape[0], entry.const_count, dtype=np.int32)
            for g in entry.groups:
                for row in g.cols:
                    code = bits[int(row[0])].copy()
                    for j in range(1, row.shape[0]):
                        code += bits[int(row[j])] << j
                    acc += g.table[code]
            out[:, ci] = acc
        return out

    def log_weights(self, worlds: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """Per-world log weight: the weighted sum of true-grounding counts."""
        w = self._weights if weights is None else np.asarray(weights, dtype=np.float64)
        bits = self._bit_columns(worlds)
        out = np.zeros(worlds.shape[0], dtype=np.float64)
        for ci, entry in enumerate(self.entries):
            if w[ci] == 0.0:
                continue
            acc = np.full(worlds.shape[0], entry.const_count, dtype=np.int32)
            for g in entry.groups:
                for row in g.cols:
                    code = bits[int(row[0])].copy()
                    for j in range(1, row.shape[0]):
                        code += bits[int(row[j])] << j
                    acc += g.table[code]
            out += w[ci] * acc
        return out


@lru_cache(maxsize=256)
def _table(model: MlnModel, index: AtomIndex) -> GroundingTable:
    return GroundingTable(model, index)


# ---------------------------------------------------------------------------
# Weights and probabilities
# ---------------------------------------------------------------------------


def count_true_groundings(clause: Clause, world: World) -> int:
    """Satisfying variable assignments of one clause in one world.

    Assignments respect the clause's disequality constraints, so clauses in
    distinct-constants form are counted over injective assignments only.
    """
    entry = _grounded_formula(clause.formula, world.index)
    bits = world.bits
    n = entry.const_count
    for g in entry.groups:
        for row in g.cols:
            code = 0
            for j, p in enumerate(row):
                code |= (bits >> int(p) & 1) << j
            n += int(g.table[code])
    return n


def log_weight(model: MlnModel, world: World) -> float:
    """Weighted true-grounding count of all clauses (the log of the world weight)."""
    counts = _table(model, world.index).counts_world(world)
    return float(np.dot(np.array(model.weights()), counts))


def log_k_weight(model: MlnModel, partial: World, k: int) -> float:
    """Log weight restricted to the arity-k clause group, on a k-constant sub-world."""
    if not model.normalized:
        raise ValueError("log_k_weight requires a normalized model")
    spec = partial.index.spec
    if len(spec.sizes) != 1 or spec.sizes[0][1] != k:
        raise ValueError("partial world must cover exactly k constants of a single type")
    clauses = tuple(arity_partition(model).get(k, ()))
    if not clauses:
        return 0.0
    return log_weight(replace(model, clauses=clauses), partial)


def dense_log_weights(
    model: MlnModel,
    index: AtomIndex,
    *,
    max_atoms: int = DEFAULT_DENSE_MAX_ATOMS,
    chunk: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """Log weight of every world over the index, as one 2^G vector."""
    _guard(index.n_atoms, max_atoms)
    gt = _table(model, index)
    out = np.empty(1 << index.n_atoms, dtype=np.float64)
    for worlds in world_chunks(index.n_atoms, chunk):
        start = int(worlds[0])
        out[start : start + worlds.shape[0]] = gt.log_weights(worlds)
    return out


def log_partition(
    model: MlnModel,
    spec: DomainSpec | None = None,
    *,
    index: AtomIndex | None = None,
    max_atoms: int = DEFAULT_MAX_ATOMS,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """Log of the normalization constant, by streaming enumeration."""
    if index is None:
        if spec is None:
            raise ValueError("provide a domain spec or an atom index")
        index = AtomIndex(model.signature, spec)
    _guard(index.n_atoms, max_atoms)
    gt = _table(model, index)
    lse = RunningLogSumExp()
    for worlds in world_chunks(index.n_atoms, chunk):
        lse.update(gt.log_weights(worlds))
    return lse.value


def log_probability(
    model: MlnModel,
    world: World,
    *,
    max_atoms: int = DEFAULT_MAX_ATOMS,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    return log_weight(model, world) - log_partition(
        model, index=world.index, max_atoms=max_atoms, chunk=chunk
    )


def marginal_log_probs(
    model: MlnModel,
    spec: DomainSpec,
    *,
    max_atoms: int = DEFAULT_MAX_ATOMS,
    accumulator_max_atoms: int = DEFAULT_DENSE_MAX_ATOMS,
    chunk: int = DEFAULT_CHUNK,
) -> tuple[AtomIndex, np.ndarray]:
    """Log marginal probability of every front-half world under the split spec.

    One pass over the full enumeration accumulates log-sum-exp per restriction
    bucket; entry ``b`` of the result is the log probability that a full-domain
    world restricts to the front-half world with bit vector ``b``.
    """
    index = AtomIndex(model.signature, spec)
    _guard(index.n_atoms, max_atoms)
    front, _ = split_subsets(spec)
    sub_index, positions = restriction_positions(index, front)
    _guard(sub_index.n_atoms, accumulator_max_atoms)
    n_buckets = 1 << sub_index.n_atoms
    bmax = np.full(n_buckets, -np.inf)
    bsum = np.zeros(n_buckets)
    gt = _table(model, index)
    for worlds in world_chunks(index.n_atoms, chunk):
        lw = gt.log_weights(worlds)
        code = bit_codes(worlds, positions)
        cmax = np.full(n_buckets, -np.inf)
        np.maximum.at(cmax, code, lw)
        csum = np.zeros(n_buckets)
        np.add.at(csum, code, np.exp(lw - cmax[code]))
        newmax = np.maximum(bmax, cmax)
        with np.errstate(invalid="ignore"):
            scale_old = np.where(bmax == -np.inf, 0.0, np.exp(bmax - newmax))
            scale_new = np.where(cmax == -np.inf, 0.0, np.exp(cmax - newmax))
        bsum = bsum * scale_old + csum * scale_new
        bmax = newmax
    bucket_logs = bmax + np.log(bsum)
    shift = bucket_logs.max()
    log_z = shift + math.log(np.exp(bucket_logs - shift).sum())
    return sub_index, bucket_logs - log_z


def log_marginal(
    model: MlnModel,
    spec: DomainSpec,
    sub_world: World,
    **kwargs,
) -> float:
    """Log marginal probability of one front-half world (computes the full vector)."""
    sub_index, logs = marginal_log_probs(model, spec, **kwargs)
    if sub_world.index != sub_index:
        raise ValueError("sub-world is not over the front half of the split spec")
    return float(logs[sub_world.bits])


# ---------------------------------------------------------------------------
# Weight-factorization identities (exhaustively checkable)
# ---------------------------------------------------------------------------


def _single_type(model: MlnModel) -> str:
    if len(model.signature.types) != 1:
        raise ValueError(
            "weight decomposition over constant tuples requires a single-type signature"
        )
    return model.signature.types[0][0]


def max_tuple_factorization_error(
    model: MlnModel,
    n: int,
    *,
    max_atoms: int = DEFAULT_DENSE_MAX_ATOMS,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """Worst absolute gap between each world's log weight and the sum of the
    per-tuple arity-k log weights of its restrictions, over all worlds at size n."""
    tau = _single_type(model)
    if not model.normalized:
        raise ValueError("factorization identities require a normalized model")
    index = AtomIndex(model.signature, DomainSpec({tau: n}))
    _guard(index.n_atoms, max_atoms)
    full = dense_log_weights(model, index, max_atoms=max_atoms, chunk=chunk)
    total = np.zeros_like(full)
    for k, clauses in arity_partition(model).items():
        sub_model = replace(model, clauses=tuple(clauses))
        for c in ordered_tuples(n, k):
            sub_index, positions = restriction_positions(index, {tau: c})
            lw_k = dense_log_weights(sub_model, sub_index)
            for worlds in world_chunks(index.n_atoms, chunk):
                start = int(worlds[0])
                codes = bit_codes(worlds, positions)
                total[start : start + worlds.shape[0]] += lw_k[codes]
    return float(np.abs(full - total).max())


def max_split_factorization_error(
    model: MlnModel,
    n: int,
    m: int,
    *,
    max_atoms: int = DEFAULT_MAX_ATOMS,
    chunk: int = DEFAULT_CHUNK,
) -> float:
    """Worst absolute gap, over all worlds at size n+m, between the full log
    weight and front-half + back-half + straddling-tuple contributions."""
    tau = _single_type(model)
    if not model.normalized:
        raise ValueError("factorization identities require a normalized model")
    spec = DomainSpec({tau: n + m}, split_type=tau, split_at=n)
    index = AtomIndex(model.signature, spec)
    _guard(index.n_atoms, max_atoms)
    front, back = split_subsets(spec)
    sub_n, pos_n = restriction_positions(index, front)
    sub_m, pos_m = restriction_positions(index, back)
    lw_n = dense_log_weights(model, sub_n)
    lw_m = dense_log_weights(model, sub_m)
    cross: list[tuple[np.ndarray, np.ndarray]] = []
    for k, clauses in arity_partition(model).items():
        sub_model = replace(model, clauses=tuple(clauses))
        for c in cross_tuples(n, m, k):
            sub_c, pos_c = restriction_positions(index, {tau: c})
            cross.append((pos_c, dense_log_weights(sub_model, sub_c)))
    gt = _table(model, index)
    worst = 0.0
    for worlds in world_chunks(index.n_atoms, chunk):
        lw = gt.log_weights(worlds)
        acc = lw_n[bit_codes(worlds, pos_n)] + lw_m[bit_codes(worlds, pos_m)]
        for pos_c, lw_c in cross:
            acc += lw_c[bit_codes(worlds, pos_c)]
        worst = max(worst, float(np.abs(lw - acc).max()))
    return worst


# ---------------------------------------------------------------------------
# Domain-size-aware weight scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DaScaling:
    """Per-clause scale-down factors for a target domain size."""

    factors: tuple[float, ...]


def da_scale_factors(model: MlnModel, target_sizes: Mapping[str, int]) -> DaScaling:
    """Scale-down factor per clause: the largest, over the clause's atoms, of the
    product of target-domain sizes of the clause variables missing from that atom."""
    factors = []
    for clause in model.clauses:
        f = clause.formula
        s = 1.0
        for atom in distinct_atoms(f.ast):
            present = set(atom.args)
            prod = 1.0
            for v, t in f.vars:
                if v not in present:
                    try:
                        prod *= target_sizes[t]
                    except KeyError:
                        raise ValueError(f"no target size for type {t}") from None
            s = max(s, prod)
        factors.append(s)
    return DaScaling(tuple(factors))


def apply_da_scaling(model: MlnModel, scaling: DaScaling) -> MlnModel:
    """Divide each clause weight by its scale factor."""
    if len(scaling.factors) != len(model.clauses):
        raise ValueError("scaling was computed for a different clause list")
    return model.with_weights(
        [c.weight / s for c, s in zip(model.clauses, scaling.factors)]
    )
