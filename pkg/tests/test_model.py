import math
from itertools import permutations

import numpy as np
import pytest

from mlnexact.logic import MlnModel, normalize_distinct, parse_mln
from mlnexact.model import (
    DaScaling,
    apply_da_scaling,
    count_true_groundings,
    da_scale_factors,
    dense_log_weights,
    log_k_weight,
    log_marginal,
    log_partition,
    log_probability,
    log_weight,
    marginal_log_probs,
    max_split_factorization_error,
    max_tuple_factorization_error,
    _grounded_formula,
)
from mlnexact.worlds import (
    AtomIndex,
    DomainSpec,
    DomainTooLargeError,
    World,
    enumerate_worlds,
    ordered_tuples,
    permute,
    restrict,
)

from _oracles import count_groundings_direct, raw_log_probs, raw_log_weight
from conftest import random_raw_model


def model_from(text: str) -> MlnModel:
    return normalize_distinct(parse_mln(text))


def index_for(model: MlnModel, n: int, type_name: str | None = None) -> AtomIndex:
    tau = type_name or model.signature.types[0][0]
    return AtomIndex(model.signature, DomainSpec({tau: n}))


class TestCounting:
    def test_single_unary_atom(self):
        model = model_from("type p = 2\npredicate Smokes(p)\n1.0 Smokes(x)")
        index = index_for(model, 2)
        world = World.from_true_atoms(index, [("Smokes", (1,))])
        assert count_true_groundings(model.clauses[0], world) == 1

    def test_mutual_relation_counts_ordered_assignments(self):
        model = model_from("type p = 2\npredicate R(p,p)\n1.0 R(x,y) ^ R(y,x) ^ x != y")
        index = index_for(model, 2)
        world = World.from_true_atoms(index, [("R", (1, 2)), ("R", (2, 1))])
        assert count_true_groundings(model.clauses[0], world) == 2

    def test_triangle_all_true_counts_all_injections(self, triangle_model):
        norm = normalize_distinct(triangle_model)
        (tri,) = [c for c in norm.clauses if c.formula.arity == 3]
        index = index_for(norm, 3)
        world = World.all_true(index)
        assert count_true_groundings(tri, world) == 6
        assert count_groundings_direct(tri, world) == 6

    @pytest.mark.parametrize("seed", range(5))
    def test_counts_match_direct_evaluation(self, seed):
        rng = np.random.default_rng(seed)
        model = normalize_distinct(random_raw_model(rng))
        index = index_for(model, 3)
        for bits in rng.integers(0, 1 << index.n_atoms, size=8):
            world = World(index, int(bits))
            for clause in model.clauses:
                assert count_true_groundings(clause, world) == count_groundings_direct(
                    clause, world
                )

    @pytest.mark.parametrize("seed", range(3))
    def test_raw_counts_match_direct_evaluation(self, seed):
        # Un-normalized clauses count assignments with repetitions allowed.
        rng = np.random.default_rng(100 + seed)
        model = random_raw_model(rng)
        index = index_for(model, 3)
        for bits in rng.integers(0, 1 << index.n_atoms, size=8):
            world = World(index, int(bits))
            for clause in model.clauses:
                assert count_true_groundings(clause, world) == count_groundings_direct(
                    clause, world
                )

    def test_grounding_total_is_falling_factorial(self):
        model = model_from("type p = 5\npredicate R(p,p)\n1.0 R(x,y)")
        for clause in model.clauses:
            k = clause.formula.arity
            entry = _grounded_formula(clause.formula, index_for(model, 5))
            total = entry.total
            assert total == math.perm(5, k)


class TestLogWeight:
    def test_zero_weights(self):
        model = model_from("type p = 3\npredicate S(p)\n0 S(x)")
        index = index_for(model, 3)
        assert log_weight(model, World(index, 5)) == 0.0

    def test_single_clause_three_groundings(self):
        model = model_from(f"type p = 3\npredicate S(p)\n{math.log(2)} S(x)")
        index = index_for(model, 3)
        assert log_weight(model, World.all_true(index)) == pytest.approx(3 * math.log(2))

    def test_projective_example_hand_evaluated(self, example3_model):
        model = normalize_distinct(example3_model)
        index = index_for(model, 2)
        world = World.from_true_atoms(
            index, [("Covid", (1,)), ("Contact", (1, 2)), ("Contact", (2, 1))]
        )
        # one Covid plus one mutual-contact pair counted in both orders
        assert log_weight(model, world) == pytest.approx(0.6 * 1 + 0.9 * 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_raw_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        model = normalize_distinct(random_raw_model(rng))
        index = index_for(model, 3)
        for bits in rng.integers(0, 1 << index.n_atoms, size=5):
            world = World(index, int(bits))
            assert log_weight(model, world) == pytest.approx(
                raw_log_weight(model, world), abs=1e-12
            )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        model = normalize_distinct(random_raw_model(rng))
        index = index_for(model, 3)
        world = World(index, int(rng.integers(0, 1 << index.n_atoms)))
        reference = log_weight(model, world)
        for perm in permutations((1, 2, 3)):
            mapping = {i + 1: p for i, p in enumerate(perm)}
            assert log_weight(model, permute(world, mapping)) == pytest.approx(reference)


class TestKWeights:
    def test_no_clauses_of_that_arity(self, unary_model):
        model = normalize_distinct(unary_model)
        sub_index = index_for(model, 2, "item")
        assert log_k_weight(model, World(sub_index, 3), 2) == 0.0

    def test_mutual_pair_value(self):
        model = model_from("type p = 4\npredicate R(p,p)\n0.8 R(x,y) ^ R(y,x) ^ x != y")
        pair_index = index_for(model, 2)
        world = World.from_true_atoms(pair_index, [("R", (1, 2)), ("R", (2, 1))])
        assert log_k_weight(model, world, 2) == pytest.approx(2 * 0.8)

    def test_requires_matching_domain(self):
        model = model_from("type p = 4\npredicate R(p,p)\n0.8 R(x,y) ^ x != y")
        with pytest.raises(ValueError, match="exactly k constants"):
            log_k_weight(model, World(index_for(model, 3), 0), 2)

    def test_tuple_decomposition_single_world(self):
        rng = np.random.default_rng(11)
        model = normalize_distinct(random_raw_model(rng))
        n = 3
        index = index_for(model, n)
        world = World(index, int(rng.integers(0, 1 << index.n_atoms)))
        d = model.max_arity
        total = 0.0
        for k in range(1, d + 1):
            for c in ordered_tuples(n, k):
                total += log_k_weight(model, restrict(world, c), k)
        assert total == pytest.approx(log_weight(model, world), abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_tuple_factorization_all_worlds(self, seed):
        model = normalize_distinct(random_raw_model(np.random.default_rng(300 + seed)))
        assert max_tuple_factorization_error(model, 3) <= 1e-9

    @pytest.mark.parametrize("seed", range(3))
    def test_tuple_factorization_with_ternary_clause(self, seed):
        model = normalize_distinct(
            random_raw_model(
                np.random.default_rng(350 + seed),
                weight_range=(-2.0, 2.0),
                include_ternary_clause=True,
            )
        )
        assert model.max_arity == 3
        assert max_tuple_factorization_error(model, 3) <= 1e-9

    @pytest.mark.parametrize("seed", range(3))
    def test_split_factorization_all_worlds(self, seed):
        model = normalize_distinct(random_raw_model(np.random.default_rng(400 + seed)))
        assert max_split_factorization_error(model, 2, 2) <= 1e-9


class TestPartition:
    def test_zero_weights_binary(self):
        model = model_from("type p = 2\npredicate R(p,p)\n0 R(x,y)")
        assert log_partition(model, DomainSpec({"p": 2})) == pytest.approx(math.log(16))

    def test_unary_closed_form(self):
        a = 0.85
        model = model_from(f"type p = 3\npredicate S(p)\n{a} S(x)")
        expected = 3 * math.log1p(math.exp(a))
        assert log_partition(model, DomainSpec({"p": 3})) == pytest.approx(expected, abs=1e-12)

    def test_projective_example_closed_form(self, example3_model):
        """Independence across persons and pairs factorizes the sum exactly."""
        a1, a2 = 0.6, 0.9
        model = normalize_distinct(example3_model)
        expected = math.log((1 + math.exp(a1)) ** 2 * (3 + math.exp(2 * a2)) * 4)
        assert log_partition(model, DomainSpec({"person": 2})) == pytest.approx(
            expected, abs=1e-12
        )

    def test_guard(self):
        model = model_from("type p = 8\npredicate R(p,p)\n0.5 R(x,y)")
        with pytest.raises(DomainTooLargeError):
            log_partition(model, DomainSpec({"p": 8}), max_atoms=28)


class TestProbability:
    def test_uniform_at_zero_weights(self):
        model = model_from("type p = 2\npredicate R(p,p)\n0 R(x,y)")
        index = index_for(model, 2)
        for bits in (0, 7, 15):
            assert log_probability(model, World(index, bits)) == pytest.approx(
                -4 * math.log(2)
            )

    def test_probabilities_sum_to_one(self):
        model = normalize_distinct(random_raw_model(np.random.default_rng(5)))
        index = index_for(model, 2)
        logs = dense_log_weights(model, index)
        logs = logs - log_partition(model, index=index)
        assert np.exp(logs).sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_raw_oracle_distribution(self, seed):
        # Raw model evaluated directly vs the engine on the same raw model,
        # and vs the engine on the normalized model: all three agree.
        model = random_raw_model(np.random.default_rng(500 + seed))
        index = index_for(model, 3)
        oracle = raw_log_probs(model, index)
        engine_raw = dense_log_weights(model, index)
        engine_raw = engine_raw - log_partition(model, index=index)
        norm = normalize_distinct(model)
        engine_norm = dense_log_weights(norm, index)
        engine_norm = engine_norm - log_partition(norm, index=index)
        assert np.abs(engine_raw - np.array(oracle)).max() <= 1e-9
        assert np.abs(engine_norm - np.array(oracle)).max() <= 1e-9

    def test_exchangeability(self):
        model = normalize_distinct(random_raw_model(np.random.default_rng(17)))
        index = index_for(model, 3)
        log_z = log_partition(model, index=index)
        world = World(index, 0b10110)
        reference = log_weight(model, world) - log_z
        for perm in permutations((1, 2, 3)):
            mapping = {i + 1: p for i, p in enumerate(perm)}
            image = permute(world, mapping)
            assert log_weight(model, image) - log_z == pytest.approx(reference, abs=1e-12)


class TestMarginal:
    def test_uniform_marginal_at_zero_weights(self):
        model = model_from("type p = 3\npredicate R(p,p)\n0 R(x,y)")
        spec = DomainSpec({"p": 3}, split_type="p", split_at=2)
        sub_index, logs = marginal_log_probs(model, spec)
        assert sub_index.n_atoms == 4
        assert np.allclose(logs, -4 * math.log(2), atol=1e-12)

    def test_marginal_sums_to_one(self):
        model = normalize_distinct(random_raw_model(np.random.default_rng(23)))
        tau = model.signature.types[0][0]
        spec = DomainSpec({tau: 3}, split_type=tau, split_at=2)
        _, logs = marginal_log_probs(model, spec)
        assert np.exp(logs).sum() == pytest.approx(1.0, abs=1e-9)

    def test_marginal_matches_slow_restriction_sum(self):
        model = normalize_distinct(random_raw_model(np.random.default_rng(29)))
        tau = model.signature.types[0][0]
        spec = DomainSpec({tau: 3}, split_type=tau, split_at=2)
        full_index = AtomIndex(model.signature, spec)
        sub_index, logs = marginal_log_probs(model, spec)
        log_z = log_partition(model, index=full_index)
        sums = np.zeros(1 << sub_index.n_atoms)
        for world in enumerate_worlds(full_index):
            sums[restrict(world, {tau: (1, 2)}).bits] += math.exp(
                log_weight(model, world) - log_z
            )
        assert np.abs(np.exp(logs) - sums).max() <= 1e-12

    def test_projective_fragment_marginal_equals_direct(self, example3_model):
        model = normalize_distinct(example3_model)
        spec = DomainSpec({"person": 3}, split_type="person", split_at=2)
        sub_index, marg = marginal_log_probs(model, spec)
        direct = dense_log_weights(model, sub_index)
        direct = direct - log_partition(model, index=sub_index)
        assert np.abs(marg - direct).max() <= 1e-9

    def test_log_marginal_validates_world(self, example3_model):
        model = normalize_distinct(example3_model)
        spec = DomainSpec({"person": 3}, split_type="person", split_at=2)
        wrong_index = AtomIndex(model.signature, DomainSpec({"person": 3}))
        with pytest.raises(ValueError, match="front half"):
            log_marginal(model, spec, World(wrong_index, 0))
        sub_index, logs = marginal_log_probs(model, spec)
        assert log_marginal(model, spec, World(sub_index, 3)) == pytest.approx(logs[3])


class TestNormalizationPreservesSemantics:
    @pytest.mark.parametrize("seed", range(5))
    def test_distribution_unchanged_at_n3(self, seed):
        raw = random_raw_model(
            np.random.default_rng(600 + seed), include_ternary_clause=(seed % 2 == 0)
        )
        norm = normalize_distinct(raw)
        index = index_for(raw, 3)
        oracle = np.array(raw_log_probs(raw, index))
        engine = dense_log_weights(norm, index) - log_partition(norm, index=index)
        assert np.abs(engine - oracle).max() <= 1e-9


class TestDaScaling:
    def test_every_atom_full_vars_gives_one(self, example3_model):
        scaling = da_scale_factors(normalize_distinct(example3_model), {"person": 500})
        assert all(s == 1.0 for s in scaling.factors)

    def test_contagion_rule_scales_with_missing_variable(self, example2_model):
        factors = da_scale_factors(example2_model, {"person": 500}).factors
        # antecedent-only atoms miss one variable each: factor 500
        assert factors == (1.0, 500.0)

    def test_unary_clause(self):
        model = parse_mln("type p = 9\npredicate S(p)\n0.5 S(x)")
        assert da_scale_factors(model, {"p": 9}).factors == (1.0,)

    def test_identity_scaling_keeps_model(self, example3_model):
        model = normalize_distinct(example3_model)
        scaled = apply_da_scaling(model, da_scale_factors(model, {"person": 10}))
        assert scaled == model

    def test_weight_division(self):
        model = parse_mln("type p = 4\npredicate R(p,p)\npredicate S(p)\n2.0 R(x,y) ^ S(x)")
        scaled = apply_da_scaling(model, da_scale_factors(model, {"p": 4}))
        assert scaled.clauses[0].weight == pytest.approx(0.5)

    def test_mismatched_scaling_rejected(self, example2_model):
        with pytest.raises(ValueError, match="different clause list"):
            apply_da_scaling(example2_model, DaScaling((1.0,)))

    def test_missing_type_size(self, example2_model):
        with pytest.raises(ValueError, match="no target size"):
            da_scale_factors(example2_model, {})
