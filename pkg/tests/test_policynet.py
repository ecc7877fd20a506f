import numpy as np
import pytest

from conftest import max_relative_error
from querysugg import rewardnet
from querysugg.agentd import AgentDConfig, AgentDParams
from querysugg.data import ZeroVectorError
from querysugg.policynet import (
    BanditEpisode,
    PolicyParams,
    PpoConfig,
    SftConfig,
    agent_i_objective,
    build_state,
    exact_pool_kl,
    generate_candidates,
    load_policy,
    pool_logprob,
    ppo_train,
    save_policy,
    sft_train,
)
from querysugg.rewardnet import RewardConfig, RewardParams

FAST_SFT = SftConfig(tower_epochs=3, head_epochs=4, seed=1)


@pytest.fixture(scope="module")
def fresh_policy(small_world):
    towers = RewardParams.init(RewardConfig(dim=8, vocab=16, num_queries=3, seed=5))
    pool_ids = tuple(s.suggestion_id for s in small_world.suggestions)
    return PolicyParams.init(towers, pool_ids, seed=9, kl_beta=0.5, lang_gamma=0.7)


@pytest.fixture(scope="module")
def sft_small(small_world):
    params, history = sft_train(small_world, FAST_SFT)
    return params, history


def make_episode(world, policy, sft, reward=0.4, n=6, seed=11):
    rng = np.random.default_rng(seed)
    img = world.images[0]
    cand = generate_candidates(img, policy, n, rng)
    action = policy.pool_index[cand.suggestion_ids[0]]
    return BanditEpisode(
        image_id=img.image_id,
        action=action,
        logp_rl=pool_logprob(img, policy, action),
        logp_sft=pool_logprob(img, sft, action),
        reward=reward,
        selected_ids=cand.suggestion_ids[:3],
    )


class TestBuildState:
    def test_shape_and_purity(self, small_world, fresh_policy):
        z = build_state(small_world.images[0], fresh_policy)
        assert z.shape == (8,)
        assert np.array_equal(z, build_state(small_world.images[0], fresh_policy))

    def test_zero_input_raises(self, fresh_policy):
        with pytest.raises(ZeroVectorError):
            build_state(np.zeros(8), fresh_policy)


class TestGenerateCandidates:
    def test_full_pool_in_sampled_order(self, small_world, fresh_policy):
        rng = np.random.default_rng(0)
        n = len(fresh_policy.pool_ids)
        cand = generate_candidates(small_world.images[0], fresh_policy, n, rng)
        assert sorted(cand.suggestion_ids) == sorted(fresh_policy.pool_ids)

    def test_distinct_candidates(self, small_world, fresh_policy):
        rng = np.random.default_rng(1)
        cand = generate_candidates(small_world.images[0], fresh_policy, 20, rng)
        assert len(set(cand.suggestion_ids)) == 20

    def test_oversized_request_rejected(self, small_world, fresh_policy):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            generate_candidates(
                small_world.images[0], fresh_policy, len(fresh_policy.pool_ids) + 1, rng
            )

    def test_seeded_determinism(self, small_world, fresh_policy):
        a = generate_candidates(small_world.images[0], fresh_policy, 10, np.random.default_rng(3))
        b = generate_candidates(small_world.images[0], fresh_policy, 10, np.random.default_rng(3))
        assert a.suggestion_ids == b.suggestion_ids

    def test_sft_concentrates_on_intentional(self, small_world, sft_small, fresh_policy):
        sft, _ = sft_small
        rng = np.random.default_rng(4)
        base_rate = np.mean([s.intent_flag for s in small_world.suggestions])

        def intent_fraction(policy):
            hits = 0
            total = 0
            for img in small_world.split_images("train"):
                cand = generate_candidates(img, policy, 10, rng)
                for sid in cand.suggestion_ids:
                    hits += small_world.suggestion_index[sid].intent_flag
                    total += 1
            return hits / total

        assert intent_fraction(sft) > base_rate


class TestSftTrain:
    def test_head_loss_decreases(self, sft_small):
        _, history = sft_small
        heads = history["heads"]
        assert heads[0] > heads[-1]

    def test_determinism(self, small_world, sft_small):
        params, _ = sft_small
        again, _ = sft_train(small_world, FAST_SFT)
        assert again.fingerprint() == params.fingerprint()

    def test_empty_positives_rejected(self, small_world):
        import copy

        stripped = copy.deepcopy(small_world)
        for p in stripped.pairs:
            if p.split == "train":
                p.final_label = 0
        with pytest.raises(ValueError):
            sft_train(stripped, FAST_SFT)


class TestAgentIObjective:
    def test_term_isolation_beta_gamma_zero(self, small_world, fresh_policy):
        p = fresh_policy.copy()
        p.kl_beta = 0.0
        p.lang_gamma = 0.0
        ep = make_episode(small_world, p, p, reward=0.4)
        value, grads = agent_i_objective(ep, p, p, small_world)
        assert value == -0.4
        assert not grads

    def test_kl_term_zero_when_policies_equal(self, small_world, fresh_policy):
        p = fresh_policy.copy()
        p.kl_beta = 1.0
        p.lang_gamma = 0.0
        ep = make_episode(small_world, p, p, reward=0.25)
        value, _ = agent_i_objective(ep, p, p, small_world)
        assert abs(value - (-0.25)) < 1e-12

    def test_missing_sft_rejected(self, small_world, fresh_policy):
        ep = make_episode(small_world, fresh_policy, fresh_policy)
        with pytest.raises(ValueError):
            agent_i_objective(ep, fresh_policy, None, small_world)

    def test_gradients_match_finite_differences(self, small_world, fresh_policy):
        sft = fresh_policy.copy()
        ep = make_episode(small_world, fresh_policy, sft, reward=0.4)
        _, grads = agent_i_objective(ep, fresh_policy, sft, small_world)
        assert grads  # pool head and decoder blocks
        err = max_relative_error(
            lambda: agent_i_objective(ep, fresh_policy, sft, small_world)[0],
            fresh_policy.blocks,
            grads,
        )
        assert err < 1e-4

    def test_reward_out_of_range_rejected(self, small_world, fresh_policy):
        with pytest.raises(ValueError):
            make_episode(small_world, fresh_policy, fresh_policy, reward=1.0)


@pytest.fixture(scope="module")
def setup(small_world, sft_small):
    sft, _ = sft_small
    reward, _ = rewardnet.train_reward(
        small_world, RewardConfig(dim=8, vocab=16, num_queries=3, seed=5, epochs=3)
    )
    agentd_params = AgentDParams.init(
        AgentDConfig(n_candidates=8, window=3, dim=8, hidden1=16, hidden2=8, seed=0)
    )
    return sft, reward, agentd_params


class TestPpoTrain:
    def test_zero_iterations_is_identity(self, small_world, setup):
        sft, reward, ad = setup
        cfg = PpoConfig(iterations=0, n_candidates=8, seed=0)
        out, history = ppo_train(small_world, sft, reward, ad, cfg)
        assert out.fingerprint() == sft.fingerprint()
        assert history == []

    def test_invalid_clip_rejected(self, small_world, setup):
        sft, reward, ad = setup
        with pytest.raises(ValueError):
            ppo_train(small_world, sft, reward, ad, PpoConfig(clip_ratio=0.0, n_candidates=8))

    def test_never_mutates_reward_or_selector(self, small_world, setup):
        sft, reward, ad = setup
        r_before, a_before = reward.fingerprint(), ad.fingerprint()
        cfg = PpoConfig(iterations=3, batch_size=4, n_candidates=8, seed=0)
        ppo_train(small_world, sft, reward, ad, cfg)
        assert reward.fingerprint() == r_before
        assert ad.fingerprint() == a_before

    def test_sft_snapshot_untouched(self, small_world, setup):
        sft, reward, ad = setup
        before = sft.fingerprint()
        cfg = PpoConfig(iterations=3, batch_size=4, n_candidates=8, seed=0)
        ppo_train(small_world, sft, reward, ad, cfg)
        assert sft.fingerprint() == before

    def test_seeded_determinism(self, small_world, setup):
        sft, reward, ad = setup
        cfg = PpoConfig(iterations=4, batch_size=4, n_candidates=8, seed=7)
        a, ha = ppo_train(small_world, sft, reward, ad, cfg)
        b, hb = ppo_train(small_world, sft, reward, ad, cfg)
        assert a.fingerprint() == b.fingerprint()
        assert ha == hb

    def test_history_schema(self, small_world, setup):
        sft, reward, ad = setup
        cfg = PpoConfig(iterations=2, batch_size=4, n_candidates=8, seed=0)
        _, history = ppo_train(small_world, sft, reward, ad, cfg)
        assert len(history) == 2
        for rec in history:
            assert set(rec) == {"iter", "mean_reward", "mean_kl", "loss"}
            assert 0.0 < rec["mean_reward"] < 1.0
            assert rec["mean_kl"] >= 0.0

    def test_large_beta_keeps_policy_closer(self, small_world, setup):
        # final measured KL to the SFT snapshot, averaged over 5 seeds
        sft, reward, ad = setup
        final_kl = {0.1: [], 100.0: []}
        for seed in range(5):
            for beta in (0.1, 100.0):
                sft_b = sft.copy()
                sft_b.kl_beta = beta
                cfg = PpoConfig(iterations=10, batch_size=4, n_candidates=8, seed=seed)
                _, history = ppo_train(small_world, sft_b, reward, ad, cfg)
                final_kl[beta].append(history[-1]["mean_kl"])
        assert np.mean(final_kl[100.0]) < np.mean(final_kl[0.1])


class TestExactPoolKl:
    def test_zero_against_itself(self, small_world, fresh_policy):
        assert exact_pool_kl(small_world.images[0], fresh_policy, fresh_policy) == 0.0

    def test_positive_when_different(self, small_world, fresh_policy):
        other = fresh_policy.copy()
        other.blocks["pool_b"][0] += 2.0
        assert exact_pool_kl(small_world.images[0], fresh_policy, other) > 0.0


class TestPolicyIO:
    def test_round_trip(self, fresh_policy, tmp_path):
        save_policy(fresh_policy, tmp_path / "p.json")
        loaded = load_policy(tmp_path / "p.json")
        assert loaded.fingerprint() == fresh_policy.fingerprint()
        assert loaded.pool_ids == fresh_policy.pool_ids
        assert loaded.kl_beta == fresh_policy.kl_beta
