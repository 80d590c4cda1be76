import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import svc
from mlaas_compose.bandit import (
    CONTEXT_DIM,
    ArmState,
    ConfidenceEvaluator,
    ContextBounds,
    brute_force_best,
    brute_force_evaluations,
    context_features,
    epsilon_greedy,
    genetic_search,
    history_csv_rows,
    run_cmab,
    select_arms,
    ucb_score,
    update_arm,
)
from mlaas_compose.catalog import CatalogConfig, generate_catalog, make_composition
from mlaas_compose.errors import SizeLimitError
from mlaas_compose.pools import craft_candidate, rule_pool


@pytest.fixture(scope="module")
def base():
    cat = generate_catalog(CatalogConfig(n_services=12, modality_weights=(1, 0, 0)), 5)
    return make_composition(cat, 4, 5)


def crafted(base, vectors, seed=0):
    rng = np.random.default_rng(seed)
    return [craft_candidate(f"c{i:02d}", base, v, rng) for i, v in enumerate(vectors)]


class TestContext:
    def test_pool_of_one_is_all_half(self):
        s = svc("a")
        x = context_features(s, ContextBounds.from_pool([s]))
        np.testing.assert_array_equal(x, np.full(CONTEXT_DIM, 0.5))

    def test_volume_scaling(self):
        pool = [svc(f"v{v}", hist=(v // 2, v // 2)) for v in (100, 300, 500)]
        x = context_features(pool[1], ContextBounds.from_pool(pool))
        assert x[0] == pytest.approx(0.5)

    def test_pool_minimum(self):
        lo = svc("lo", hist=(50, 50), features=40, ef=0.5, q=0.5, lat=5, rel=0.5)
        hi = svc("hi", hist=(100, 100), features=60, ef=0.9, q=0.9, lat=50, rel=0.9)
        x = context_features(lo, ContextBounds.from_pool([lo, hi]))
        # modality is constant here; latency at the minimum is the best benefit
        np.testing.assert_array_equal(x, [0, 0, 0.5, 0, 0, 1, 0])

    def test_modality_uses_code_range(self):
        a, b = svc("a", modality="sensor"), svc("b", modality="vision")
        bounds = ContextBounds.from_pool([a, b])
        assert context_features(b, bounds)[2] == pytest.approx(0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 100_000), st.integers(1, 30))
    def test_contexts_in_unit_cube(self, seed, n):
        pool = generate_catalog(CatalogConfig(n_services=n), seed)
        bounds = ContextBounds.from_pool(pool)
        for s in pool:
            x = context_features(s, bounds)
            assert x.shape == (CONTEXT_DIM,)
            assert np.all((0 <= x) & (x <= 1))


class TestLinUcb:
    def test_fresh_arm_unit_context(self):
        x = np.zeros(CONTEXT_DIM)
        x[3] = 1.0
        assert ucb_score(ArmState.fresh(), x, 1.0) == pytest.approx(1.0)

    def test_after_one_update(self):
        e1 = np.eye(CONTEXT_DIM)[0]
        state = update_arm(ArmState.fresh(), e1, 1.0)
        np.testing.assert_allclose(state.A, np.diag([2.0] + [1.0] * (CONTEXT_DIM - 1)))
        np.testing.assert_allclose(state.theta, 0.5 * e1)
        assert ucb_score(state, e1, 0.0) == pytest.approx(0.5, abs=1e-12)
        assert ucb_score(state, e1, 1.0) == pytest.approx(0.5 + math.sqrt(0.5), abs=1e-9)

    def test_sigmoid_option(self):
        x = np.full(CONTEXT_DIM, 0.3)
        z = ucb_score(ArmState.fresh(), x, 1.0)
        assert ucb_score(ArmState.fresh(), x, 1.0, sigmoid=True) == pytest.approx(1 / (1 + math.exp(-z)))

    def test_zero_reward_and_zero_context(self):
        x = np.full(CONTEXT_DIM, 0.2)
        s = update_arm(ArmState.fresh(), x, 0.0)
        np.testing.assert_array_equal(s.b, np.zeros(CONTEXT_DIM))
        np.testing.assert_allclose(s.A, np.eye(CONTEXT_DIM) + np.outer(x, x))
        same = update_arm(s, np.zeros(CONTEXT_DIM), 0.7)
        np.testing.assert_array_equal(same.A, s.A)
        np.testing.assert_array_equal(same.b, s.b)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.lists(st.floats(0, 1), min_size=CONTEXT_DIM, max_size=CONTEXT_DIM),
                              st.floats(0, 1)), max_size=25), st.randoms(use_true_random=False))
    def test_A_is_identity_plus_outer_products(self, updates, rnd):
        xs = [np.array(x) for x, _ in updates]
        s = ArmState.fresh()
        for x, (_, r) in zip(xs, updates):
            s = update_arm(s, x, r)
        expected = np.eye(CONTEXT_DIM) + sum((np.outer(x, x) for x in xs), np.zeros((CONTEXT_DIM,) * 2))
        np.testing.assert_allclose(s.A, expected, atol=1e-9)
        np.testing.assert_allclose(s.A, s.A.T, atol=0)
        assert np.linalg.eigvalsh(s.A).min() >= 1 - 1e-9
        # order of updates does not matter for A
        order = list(range(len(xs)))
        rnd.shuffle(order)
        t = ArmState.fresh()
        for i in order:
            t = update_arm(t, xs[i], updates[i][1])
        np.testing.assert_allclose(t.A, s.A, atol=1e-9)
        np.testing.assert_allclose(t.b, s.b, atol=1e-9)

    @settings(max_examples=30)
    @given(st.lists(st.floats(-1, 1), min_size=CONTEXT_DIM, max_size=CONTEXT_DIM), st.floats(0.1, 3))
    def test_alpha_zero_linear_in_b(self, b, k):
        x = np.linspace(0.1, 0.7, CONTEXT_DIM)
        A = np.eye(CONTEXT_DIM) + np.outer(x, x)
        s1 = ArmState(A, np.array(b), np.linalg.inv(A))
        s2 = ArmState(A, k * np.array(b), np.linalg.inv(A))
        assert ucb_score(s2, x, 0.0) == pytest.approx(k * ucb_score(s1, x, 0.0), abs=1e-9)


def contexts_for(ids, seed=0):
    rng = np.random.default_rng(seed)
    return {a: rng.uniform(0, 1, CONTEXT_DIM) for a in ids}


class TestSelectArms:
    def test_k1_is_global_argmax(self):
        ctx = contexts_for([f"a{i}" for i in range(8)])
        states = {a: ArmState.fresh() for a in ctx}
        got = select_arms(states, ctx, 1, 1.0, np.random.default_rng(0))
        want = max(sorted(ctx), key=lambda a: ucb_score(states[a], ctx[a], 1.0))
        assert got == [want]

    def test_k_equals_n_is_permutation(self):
        ctx = contexts_for(["a", "b", "c", "d"])
        states = {a: ArmState.fresh() for a in ctx}
        got = select_arms(states, ctx, 4, 1.0, np.random.default_rng(3))
        assert sorted(got) == ["a", "b", "c", "d"]

    def test_seeded_reproducible(self):
        ctx = contexts_for(["a", "b", "c", "d"])
        states = {a: ArmState.fresh() for a in ctx}
        runs = [select_arms(states, ctx, 2, 1.0, np.random.default_rng(11)) for _ in range(2)]
        assert runs[0] == runs[1]

    def test_ties_go_to_lowest_id(self):
        x = np.full(CONTEXT_DIM, 0.4)
        ctx = {"b": x, "a": x, "c": x}
        states = {a: ArmState.fresh() for a in ctx}
        assert select_arms(states, ctx, 1, 1.0, np.random.default_rng(0)) == ["a"]

    def test_too_small_pool(self):
        ctx = contexts_for(["a"])
        with pytest.raises(SizeLimitError):
            select_arms({"a": ArmState.fresh()}, ctx, 2, 1.0, np.random.default_rng(0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000))
    def test_k_distinct(self, n, k, seed):
        if k > n:
            return
        ctx = contexts_for([f"a{i:02d}" for i in range(n)], seed)
        states = {a: ArmState.fresh() for a in ctx}
        got = select_arms(states, ctx, k, 1.0, np.random.default_rng(seed))
        assert len(got) == k == len(set(got))


class TestRunCmab:
    def test_identical_candidates(self, base):
        pool = crafted(base, [(1, 1, 0, 1, 0)] * 5)
        cs = ConfidenceEvaluator(base)(pool[0])
        run = run_cmab(pool, base, pool, T=40, K=2)
        assert run.cumulative_reward == pytest.approx(40 * 2 * cs)
        assert run.evaluations == 80

    def test_empty_history_when_t_is_zero(self, base):
        pool = crafted(base, [(1, 1, 1, 1, 1)] * 3)
        run = run_cmab(pool, base, pool, T=0, K=2)
        assert run.history == [] and run.evaluations == 0

    def test_too_few_candidates(self, base):
        pool = crafted(base, [(1, 1, 1, 1, 1)])
        with pytest.raises(SizeLimitError):
            run_cmab(pool, base, pool, T=5, K=2)

    def test_deterministic(self, base):
        pool = rule_pool(base, 12, seed=4)
        a = run_cmab(pool, base, pool, T=60, K=2, seed=9)
        b = run_cmab(pool, base, pool, T=60, K=2, seed=9)
        assert a.history == b.history and a.best_arms == b.best_arms

    def test_ids_resolve_against_catalog(self, base):
        pool = rule_pool(base, 6, seed=1)
        a = run_cmab(pool, base, [s.id for s in pool], T=20, K=2, seed=2)
        b = run_cmab(pool, base, pool, T=20, K=2, seed=2)
        assert a.history == b.history

    def test_single_perfect_candidate_dominates(self, base):
        share = []
        for seed in range(20):
            vecs = [(0, 0, 0, 0, 0)] * 9
            vecs.insert(seed % 10, (1, 1, 1, 1, 1))
            pool = crafted(base, vecs, seed)
            star = pool[seed % 10].id
            run = run_cmab(pool, base, pool, T=200, K=1, seed=seed)
            share.append(np.mean([r.chosen_arms == (star,) for r in run.history[-50:]]))
        assert np.mean(share) >= 0.95

    def test_records(self, base):
        pool = rule_pool(base, 8, seed=3)
        run = run_cmab(pool, base, pool, T=10, K=2, seed=1)
        for i, r in enumerate(run.history, 1):
            assert r.round == i and len(r.chosen_arms) == 2 == len(r.rewards)
            assert r.evaluations_so_far == 2 * i
            assert r.average_reward == pytest.approx(sum(r.rewards) / 2)
        assert run.history[-1].cumulative_reward == pytest.approx(sum(sum(r.rewards) for r in run.history))

    def test_history_csv(self, base):
        pool = rule_pool(base, 8, seed=3)
        rows = history_csv_rows(run_cmab(pool, base, pool, T=3, K=2, seed=1).history)
        assert rows[0] == ["round", "arm_ids", "rewards", "cumulative_reward", "evaluations_so_far"]
        assert len(rows[1][1].split(";")) == 2
        text = io.StringIO()
        csv.writer(text).writerows(rows)
        assert len(list(csv.reader(io.StringIO(text.getvalue())))) == 4


class TestEpsilonGreedy:
    def test_eps_one_always_explores(self, base):
        pool = rule_pool(base, 10, seed=0)
        run = epsilon_greedy(pool, base, T=50, K=2, epsilon=1.0, seed=0)
        assert all(r.explored for r in run.history)

    def test_eps_zero_is_greedy(self, base):
        pool = crafted(base, [(0, 0, 0, 0, 0), (1, 1, 0, 0, 0), (1, 1, 1, 1, 1)])
        run = epsilon_greedy(pool, base, T=10, K=1, epsilon=0.0)
        # optimistic prior sweeps the three arms, then sticks with the best
        assert [r.chosen_arms[0] for r in run.history[:3]] == ["c00", "c01", "c02"]
        assert all(r.chosen_arms == ("c02",) for r in run.history[3:])

    def test_exploration_rate(self, base):
        pool = rule_pool(base, 50, seed=2)
        counts = [sum(r.explored for r in epsilon_greedy(pool, base, 500, 2, 0.1, seed).history) for seed in range(20)]
        half_width = 3 * math.sqrt(500 * 0.1 * 0.9 / 20)
        assert abs(np.mean(counts) - 50) < half_width
        assert all(abs(c - 50) < 3 * math.sqrt(45) for c in counts)

    def test_accounting(self, base):
        pool = rule_pool(base, 7, seed=2)
        assert epsilon_greedy(pool, base, 30, 3, 0.1, 1).evaluations == 90


class TestBruteForce:
    def test_three_candidates_k1(self, base):
        pool = crafted(base, [(1, 0, 0, 0, 0), (1, 1, 1, 1, 1), (1, 1, 1, 0, 0)])
        res = brute_force_best(pool, base, K=1)
        assert res.combo == ("c01",)
        assert res.total_cs == pytest.approx(1.0)
        assert res.evaluations == 3

    def test_k_equals_pool(self, base):
        pool = rule_pool(base, 3, seed=0)
        res = brute_force_best(pool, base, K=3)
        assert sorted(res.combo) == sorted(s.id for s in pool)
        assert res.evaluations == 6

    @pytest.mark.parametrize("n,k,expected", [(10, 2, 90), (50, 3, 117_600), (15, 2, 210), (5, 1, 5)])
    def test_count_formula(self, n, k, expected):
        assert brute_force_evaluations(n, k) == expected

    def test_counts_match_formula(self, base):
        pool = rule_pool(base, 10, seed=1)
        assert brute_force_best(pool, base, K=2).evaluations == 90

    def test_slots_from_underperformers(self, base):
        pool = rule_pool(base, 5, seed=1)
        assert len(brute_force_best(pool, base, underperformers=["u1", "u2"]).combo) == 2

    def test_cap(self, base):
        pool = rule_pool(base, 10, seed=1)
        with pytest.raises(SizeLimitError):
            brute_force_best(pool, base, K=3, cap=100)

    def test_matches_independent_enumeration(self, base):
        pool = rule_pool(base, 9, seed=6, n_dominant=2)
        score = ConfidenceEvaluator(base)
        best = max(math.fsum(score(s) for s in (a, b)) for i, a in enumerate(pool) for b in pool[i + 1:])
        assert brute_force_best(pool, base, K=2).total_cs == pytest.approx(best, abs=1e-12)


class TestGenetic:
    def test_elitism_keeps_seeded_optimum(self, base):
        pool = rule_pool(base, 15, seed=8, n_dominant=2)
        opt = brute_force_best(pool, base, K=2)
        init = [list(opt.combo)] + [[pool[i].id, pool[i + 1].id] for i in range(0, 18, 2) if i + 1 < 15]
        res = genetic_search(pool, base, 2, population=len(init), generations=5, seed=0, initial_population=init)
        assert sorted(res.combo) == sorted(opt.combo)

    def test_fixed_point_without_mutation(self, base):
        pool = rule_pool(base, 10, seed=8)
        ind = [pool[0].id, pool[1].id]
        res = genetic_search(pool, base, 2, population=6, generations=10, mutation_rate=0.0,
                             seed=0, initial_population=[ind] * 6)
        assert sorted(res.combo) == sorted(ind)
        assert res.evaluations == 1

    def test_matches_brute_force_mostly(self, base):
        hits = 0
        for seed in range(20):
            pool = rule_pool(base, 15, seed=seed, n_dominant=2)
            opt = brute_force_best(pool, base, K=2)
            res = genetic_search(pool, base, 2, 20, 30, 0.1, seed)
            hits += sorted(res.combo) == sorted(opt.combo)
        assert hits >= 14

    def test_bad_population(self, base):
        with pytest.raises(ValueError):
            genetic_search(rule_pool(base, 5, seed=0), base, 2, population=1)
