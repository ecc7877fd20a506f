import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from querysugg.data import (
    DatasetFormatError,
    WorldConfig,
    ZeroVectorError,
    cosine,
    generate_world,
    load_dataset,
    planted_positive_fraction,
    save_dataset,
    sigma,
    worlds_equal,
)


class TestCosine:
    def test_identity(self):
        assert cosine([1, 0], [1, 0]) == 1.0

    def test_antipodal(self):
        assert cosine([1, 0], [-1, 0]) == -1.0

    def test_orthogonal(self):
        assert cosine([1, 0], [0, 1]) == 0.0

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            cosine([0, 0], [1, 0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cosine([1, 0], [1, 0, 0])


class TestSigma:
    def test_identical(self):
        assert sigma([2, 3, 4], [2, 3, 4]) == 1.0

    def test_antipodal(self):
        assert sigma([1, 0], [-1, 0]) == 0.0
        assert sigma([1, 2], [-1, -2]) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        assert sigma([1, 0], [0, 5]) == 0.5

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_in_range(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=6)
        b = rng.normal(size=6)
        s_ab = sigma(a, b)
        assert s_ab == sigma(b, a)
        assert 0.0 <= s_ab <= 1.0

    def test_range_over_many_pairs(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            a, b = rng.normal(size=(2, 8))
            assert 0.0 <= sigma(a, b) <= 1.0


class TestGenerateWorld:
    def test_counts(self):
        w = generate_world(WorldConfig(dim=8, vocab=16, topics=2, images_per_topic=3))
        assert len(w.images) == 6
        assert len(w.pairs) == 30
        assert len(w.suggestions) == 30

    def test_determinism(self, tmp_path):
        cfg = WorldConfig(dim=8, vocab=16, topics=2, images_per_topic=3, seed=11)
        save_dataset(generate_world(cfg), tmp_path / "a")
        save_dataset(generate_world(cfg), tmp_path / "b")
        for name in ("config.json", "images.jsonl", "suggestions.jsonl", "pairs.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_every_image_has_positive_and_hard_negative(self, small_world):
        for img in small_world.images:
            suggs = [
                small_world.suggestion_index[p.suggestion_id]
                for p in small_world.pairs_for_image(img.image_id)
            ]
            assert any(s.topic_id == img.topic_id and s.intent_flag for s in suggs)
            assert any(s.topic_id == img.topic_id and not s.intent_flag for s in suggs)

    def test_planted_positive_fraction(self):
        cfg = WorldConfig(dim=8, vocab=16, topics=4, images_per_topic=500, seed=3)
        w = generate_world(cfg)
        assert len(w.pairs) == 10_000
        observed = sum(
            w.suggestion_index[p.suggestion_id].intent_flag for p in w.pairs
        ) / len(w.pairs)
        assert abs(observed - planted_positive_fraction(cfg)) < 0.05

    def test_embeddings_finite_and_fixed_dimension(self, small_world):
        d = small_world.config.dim
        for s in small_world.suggestions:
            assert s.embedding.shape == (d,)
            assert np.all(np.isfinite(s.embedding))
            assert len(s.tokens) >= 1
            assert all(0 <= t < small_world.config.vocab for t in s.tokens)

    def test_confidence_strictly_positive(self, small_world):
        assert all(0.0 < p.confidence <= 1.0 for p in small_world.pairs)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            generate_world(WorldConfig(topics=0))
        with pytest.raises(ValueError):
            generate_world(WorldConfig(suggestions_per_image=1))
        with pytest.raises(ValueError):
            generate_world(WorldConfig(noise_scale=-0.1))


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        w = generate_world(WorldConfig(dim=8, vocab=16, topics=2, images_per_topic=3, seed=4))
        save_dataset(w, tmp_path / "w")
        loaded = load_dataset(tmp_path / "w")
        assert worlds_equal(w, loaded)

    def test_pair_line_count(self, tmp_path):
        w = generate_world(WorldConfig(dim=8, vocab=16, topics=2, images_per_topic=3))
        save_dataset(w, tmp_path / "w")
        lines = (tmp_path / "w" / "pairs.jsonl").read_text().splitlines()
        assert len(lines) == 30

    def test_malformed_line_reports_number(self, tmp_path):
        w = generate_world(WorldConfig(dim=8, vocab=16, topics=2, images_per_topic=3))
        save_dataset(w, tmp_path / "w")
        path = tmp_path / "w" / "pairs.jsonl"
        content = path.read_text().splitlines()
        content[2] = "{not json"
        path.write_text("\n".join(content) + "\n")
        with pytest.raises(DatasetFormatError, match=":3:"):
            load_dataset(tmp_path / "w")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nowhere")

    def test_empty_pairs_file(self, tmp_path):
        w = generate_world(WorldConfig(dim=8, vocab=16, topics=2, images_per_topic=3))
        save_dataset(w, tmp_path / "w")
        (tmp_path / "w" / "pairs.jsonl").write_text("")
        assert load_dataset(tmp_path / "w").pairs == []
