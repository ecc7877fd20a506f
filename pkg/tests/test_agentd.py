import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import max_relative_error
from querysugg import pipeline
from querysugg.agentd import (
    AgentDConfig,
    AgentDParams,
    discounted_returns,
    div,
    first_k_select,
    greedy_select,
    initial_state,
    logprob_grads,
    oracle_select,
    pretrain_agent_d,
    reinforce_loss_and_grads,
    reinforce_update,
    run_episode,
    threshold_select,
    window_step,
)

CFG = AgentDConfig(n_candidates=8, window=3, dim=6, hidden1=16, hidden2=8, seed=2)


def random_embs(n, d=6, seed=0):
    return np.random.default_rng(seed).normal(size=(n, d))


def embs_with_sigmas(s12, s13, s23):
    """Three unit vectors whose pairwise (cos+1)/2 match the given values,
    built from the Cholesky factor of the target Gram matrix."""
    c12, c13, c23 = (2 * s - 1 for s in (s12, s13, s23))
    gram = np.array([[1.0, c12, c13], [c12, 1.0, c23], [c13, c23, 1.0]])
    vectors = np.linalg.cholesky(gram)
    cos = vectors @ vectors.T
    assert np.allclose(cos, gram, atol=1e-12)
    return vectors


class TestDiv:
    def test_identical_suggestions(self):
        embs = np.tile(np.array([1.0, 2.0, 3.0]), (4, 1))
        assert div(embs) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_pairs(self):
        assert div(np.eye(3)) == pytest.approx(0.5 - 3 * 0.5 / 6, abs=1e-12)
        # all pairwise sigma zero: antipodal only possible for k=2
        assert div(np.array([[1.0, 0.0], [-1.0, 0.0]])) == pytest.approx(0.5, abs=1e-12)

    def test_hand_value(self):
        # sigma = {0.2, 0.4, 0.6} -> 0.5 - 1.2/6 = 0.3
        embs = embs_with_sigmas(0.2, 0.4, 0.6)
        assert div(embs) == pytest.approx(0.3, abs=1e-9)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            div(np.array([[1.0, 0.0]]))

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant_and_in_range(self, seed):
        rng = np.random.default_rng(seed)
        embs = rng.normal(size=(5, 4))
        base = div(embs)
        perm = rng.permutation(5)
        assert div(embs[perm]) == pytest.approx(base, abs=1e-12)
        assert 0.0 <= base <= 0.5


class TestWindowStep:
    def test_reward_zero_when_no_improvement(self):
        embs = np.tile(np.array([1.0, 0.0]), (5, 1))  # all identical, div stays 0
        state = initial_state(embs, [f"c{i}" for i in range(5)], 3)
        nxt, r = window_step(state, 1)
        assert r == 0.0
        assert nxt.best_div == state.best_div

    def test_reward_equals_improvement(self):
        embs = np.array([[1.0, 0.0], [1.0, 0.01], [0.9, 0.1], [0.0, 1.0]])
        state = initial_state(embs, list("abcd"), 3)
        nxt, r = window_step(state, 1)
        assert r == pytest.approx(nxt.best_div - state.best_div + (0 if r else 0), abs=1e-15)
        assert r >= 0.0

    def test_action_out_of_range(self):
        state = initial_state(random_embs(5), [f"c{i}" for i in range(5)], 3)
        with pytest.raises(ValueError):
            window_step(state, 0)
        with pytest.raises(ValueError):
            window_step(state, 4)

    def test_terminal_state_rejected(self):
        state = initial_state(random_embs(3), list("abc"), 3)
        with pytest.raises(ValueError):
            window_step(state, 1)

    def test_padded_vector_length_and_zeros(self):
        embs = random_embs(5, d=4)
        state = initial_state(embs, [f"c{i}" for i in range(5)], 3)
        nxt, _ = window_step(state, 2)
        vec = nxt.vector()
        assert vec.shape == (20,)
        assert np.all(vec[16:] == 0.0)

    def test_full_episode_telescopes(self):
        rng = np.random.default_rng(7)
        embs = rng.normal(size=(9, 5))
        state = initial_state(embs, [f"c{i}" for i in range(9)], 3)
        total = 0.0
        while not state.terminal:
            state, r = window_step(state, int(rng.integers(1, 4)))
            total += r
        first = div(embs[:3])
        assert abs(total - (state.best_div - first)) <= 1e-12


class TestRunEpisode:
    def test_degenerate_returns_all(self):
        params = AgentDParams.init(CFG)
        embs = random_embs(3)
        trace = run_episode(params, embs, list("abc"), 3, mode="argmax")
        assert trace.steps == []
        assert trace.selected_ids == ("a", "b", "c")

    def test_single_step_picks_better_window(self):
        params = AgentDParams.init(CFG)
        embs = random_embs(4)
        trace = run_episode(params, embs, list("abcd"), 3, mode="argmax")
        assert len(trace.steps) == 1
        assert trace.best_div == pytest.approx(
            max(trace.initial_div, div(trace.selected_embeddings)), abs=1e-12
        )

    def test_step_count_and_selected_div(self):
        params = AgentDParams.init(CFG)
        embs = random_embs(8)
        rng = np.random.default_rng(3)
        trace = run_episode(params, embs, None, 3, mode="sample", rng=rng)
        assert len(trace.steps) == 8 - 3
        assert div(trace.selected_embeddings) == pytest.approx(trace.best_div, abs=1e-12)

    def test_matches_window_step_replay(self):
        params = AgentDParams.init(CFG)
        embs = random_embs(8)
        ids = tuple(f"c{i}" for i in range(8))
        trace = run_episode(params, embs, ids, 3, mode="sample", rng=np.random.default_rng(5))
        state = initial_state(embs, ids, 3)
        total = 0.0
        for step in trace.steps:
            state, r = window_step(state, step.action)
            total += r
        assert state.best_div == pytest.approx(trace.best_div, abs=1e-12)
        assert state.best_ids == trace.selected_ids
        assert total == pytest.approx(sum(trace.rewards), abs=1e-12)

    def test_telescoping_identity_random_episodes(self):
        params = AgentDParams.init(CFG)
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(4, 9))
            embs = rng.normal(size=(n, 6))
            trace = run_episode(params, embs, None, 3, mode="sample", rng=rng)
            assert abs(sum(trace.rewards) - (trace.best_div - trace.initial_div)) <= 1e-12

    def test_sample_mode_requires_rng(self):
        params = AgentDParams.init(CFG)
        with pytest.raises(ValueError):
            run_episode(params, random_embs(6), None, 3, mode="sample")

    def test_every_window_reachable_under_uniform_policy(self):
        # n = k + 1: k + 1 distinct windows, each visited with positive
        # probability; zeroed weights make the policy exactly uniform
        params = AgentDParams.init(CFG)
        for key in params.blocks:
            params.blocks[key][:] = 0.0
        embs = random_embs(4)
        rng = np.random.default_rng(0)
        seen = set()
        for _ in range(1000):
            trace = run_episode(params, embs, list("abcd"), 3, mode="sample", rng=rng)
            state = initial_state(embs, list("abcd"), 3)
            seen.add(state.ids[:3])
            for step in trace.steps:
                state, _ = window_step(state, step.action)
                seen.add(state.ids[:3])
        assert seen == {("a", "b", "c"), ("b", "c", "d"), ("a", "c", "d"), ("a", "b", "d")}


class TestReinforce:
    def make_traces(self, n=3, seed=4):
        params = AgentDParams.init(CFG)
        rng = np.random.default_rng(seed)
        return params, [
            run_episode(params, random_embs(8, seed=seed + i), None, 3, mode="sample", rng=rng)
            for i in range(n)
        ]

    def test_discounted_returns(self):
        rewards = [1.0, 0.0, 2.0]
        out = discounted_returns(rewards, 0.5)
        assert np.allclose(out, [1.0 + 0.25 * 2.0, 0.5 * 2.0, 2.0])

    def test_zero_return_episodes_give_zero_gradient(self):
        params = AgentDParams.init(CFG)
        embs = np.tile(np.array([1.0, 0, 0, 0, 0, 0]), (8, 1))  # div always 0
        rng = np.random.default_rng(1)
        traces = [run_episode(params, embs, None, 3, mode="sample", rng=rng) for _ in range(3)]
        loss, grads = reinforce_loss_and_grads(traces, params, 0.99)
        assert loss == 0.0
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_empty_traces_rejected(self):
        params = AgentDParams.init(CFG)
        with pytest.raises(ValueError):
            reinforce_update([], params)

    def test_update_changes_params_deterministically(self):
        params_a, traces = self.make_traces()
        before = params_a.fingerprint()
        reinforce_update(traces, params_a)
        after_a = params_a.fingerprint()
        assert after_a != before
        params_b, traces_b = self.make_traces()
        reinforce_update(traces_b, params_b)
        assert params_b.fingerprint() == after_a

    def test_logprob_gradient_matches_finite_differences(self):
        params = AgentDParams.init(CFG)
        rng = np.random.default_rng(9)
        trace = run_episode(params, random_embs(8, seed=1), None, 3, mode="sample", rng=rng)
        cache = trace.caches[2]
        action = trace.steps[2].action - 1
        masks = (cache["m1"], cache["m2"])
        x = cache["x"]

        def logp():
            b = params.blocks
            a1 = np.maximum(b["w1"] @ x + b["b1"], 0.0)
            h1 = a1 * masks[0] / 0.5
            a2 = np.maximum(b["w2"] @ h1 + b["b2"], 0.0)
            h2 = a2 * masks[1] / 0.5
            logits = b["w3"] @ h2 + b["b3"]
            m = logits.max()
            return float(logits[action] - m - np.log(np.sum(np.exp(logits - m))))

        grads = logprob_grads(params, cache, action)
        err = max_relative_error(logp, params.blocks, grads)
        assert err < 1e-4


class TestSelectors:
    def test_greedy_identical_candidates(self):
        embs = np.tile(np.array([1.0, 1.0]), (6, 1))
        out = greedy_select(embs, list("abcdef"), 3)
        assert out.div_value == pytest.approx(0.0, abs=1e-12)
        assert len(out.ids) == 3

    def test_greedy_finds_clusters(self):
        # three tight clusters of three; one member from each matches the oracle
        rng = np.random.default_rng(0)
        centers = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        embs = np.concatenate([centers[i] + 0.01 * rng.normal(size=(3, 3)) for i in range(3)])
        greedy = greedy_select(embs, None, 3)
        oracle = oracle_select(embs, None, 3)
        assert greedy.div_value == pytest.approx(oracle.div_value, abs=1e-9)

    def test_greedy_never_beats_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            embs = rng.normal(size=(8, 5))
            g = greedy_select(embs, None, 3).div_value
            o = oracle_select(embs, None, 3).div_value
            assert g <= o + 1e-12

    def test_threshold_keeps_first_k_when_delta_one(self):
        embs = random_embs(6)
        out = threshold_select(embs, list("abcdef"), 3, 1.0)
        assert out.ids == ("a", "b", "c")

    def test_threshold_delta_zero_keeps_only_first(self):
        embs = random_embs(6)
        out = threshold_select(embs, list("abcdef"), 3, 0.0)
        assert out.ids == ("a",)

    def test_threshold_hand_trace(self):
        # sigma(1,2) = 0.9, sigma(1,3) = 0.3; delta 0.5 keeps {s1, s3}
        a12 = math.acos(2 * 0.9 - 1)
        a13 = math.acos(2 * 0.3 - 1)
        embs = np.stack(
            [
                [1.0, 0.0],
                [math.cos(a12), math.sin(a12)],
                [math.cos(a13), -math.sin(a13)],
            ]
        )
        out = threshold_select(embs, ["s1", "s2", "s3"], 2, 0.5)
        assert out.ids == ("s1", "s3")

    def test_oracle_exhaustive_small(self):
        # for k = 2 the winner is simply the pair with the smallest sigma
        embs = random_embs(5)
        out = oracle_select(embs, None, 2)
        assert out.div_value == pytest.approx(
            max(div(embs[list(c)]) for c in combinations(range(5), 2)), abs=1e-12
        )

    def test_oracle_full_set_when_n_equals_k(self):
        embs = random_embs(4)
        out = oracle_select(embs, list("abcd"), 4)
        assert out.ids == ("a", "b", "c", "d")

    def test_oracle_beats_random_probes(self):
        rng = np.random.default_rng(3)
        embs = rng.normal(size=(10, 4))
        o = oracle_select(embs, None, 3).div_value
        for _ in range(1000):
            idx = rng.choice(10, size=3, replace=False)
            assert div(embs[idx]) <= o + 1e-12

    def test_oracle_bound_guard(self):
        embs = random_embs(40)
        with pytest.raises(ValueError):
            oracle_select(embs, None, 20)

    def test_first_k(self):
        embs = random_embs(6)
        out = first_k_select(embs, list("abcdef"), 3)
        assert out.ids == ("a", "b", "c")
        assert out.div_value == pytest.approx(div(embs[:3]), abs=1e-12)


class TestDominance:
    def test_oracle_ge_agent_and_greedy(self, small_world):
        params = AgentDParams.init(
            AgentDConfig(n_candidates=8, window=3, dim=small_world.config.dim, seed=0)
        )
        sets = pipeline.sample_candidate_sets(small_world, 30, 8, seed=1, split="train")
        rng = np.random.default_rng(0)
        for embs, ids in sets:
            o = oracle_select(embs, ids, 3).div_value
            g = greedy_select(embs, ids, 3).div_value
            a = run_episode(params, embs, ids, 3, mode="argmax").best_div
            s = run_episode(params, embs, ids, 3, mode="sample", rng=rng).best_div
            f = first_k_select(embs, ids, 3).div_value
            t = threshold_select(embs, ids, 3, 0.5)
            assert max(g, a, s, f) <= o + 1e-12
            if len(t.ids) == 3:  # smaller selections are not comparable
                assert t.div_value <= o + 1e-12
            for v in (o, g, a, s, f, t.div_value):
                assert 0.0 <= v <= 0.5


class TestPretraining:
    def test_short_pretrain_runs_and_is_deterministic(self, small_world):
        cfg = AgentDConfig(
            n_candidates=8, window=3, dim=8, hidden1=16, hidden2=8,
            pretrain_sets=3, episodes_per_set=10, update_batch=5, seed=1,
        )
        a, hist_a = pretrain_agent_d(small_world, cfg)
        b, hist_b = pretrain_agent_d(small_world, cfg)
        assert a.fingerprint() == b.fingerprint()
        assert hist_a == hist_b
        assert len(hist_a) == 3

    def test_full_scale_pretrain_approaches_greedy(self, default_world):
        # the reference pretraining protocol: 100 sets x 200 episodes
        cfg = AgentDConfig(seed=0, update_batch=25)
        params, _ = pretrain_agent_d(default_world, cfg)
        sets = pipeline.sample_candidate_sets(default_world, 40, 20, seed=900)
        agent = float(
            np.mean([run_episode(params, e, i, 3, mode="argmax").best_div for e, i in sets])
        )
        greedy = float(np.mean([greedy_select(e, i, 3).div_value for e, i in sets]))
        assert agent >= greedy - 0.01
