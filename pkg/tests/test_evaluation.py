import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ccr.config import HyperParams
from ccr.errors import ConfigError, DataError
from ccr.evaluation import (CSV_COLUMNS, ablation_config, ablation_sweep, evaluate_dataset, final_similarity,
                            ranks_of, read_report, recall_metrics, score_matrix, sum_recall, write_report)
from ccr.model import RetrievalModel

seeds = st.integers(0, 2**32 - 1)


class TestFinalSimilarity:
    def test_blend(self):
        # S_g = 1 (identical vectors), S_l = 0.5 (slot at 60 degrees)
        h = np.array([1.0, 0.0])
        slot = np.array([[0.5, np.sqrt(3) / 2]])
        assert final_similarity(h, h, slot, 0.8) == pytest.approx(0.9, abs=1e-12)

    def test_endpoints(self, rng):
        h, v, m = rng.normal(size=4), rng.normal(size=4), rng.normal(size=(3, 4))
        assert final_similarity(h, v, m, 1.0) == pytest.approx(oracles.cosine(h, v), abs=1e-12)
        assert final_similarity(h, v, m, 0.0) == pytest.approx(oracles.slot_sim(h, m), abs=1e-12)

    def test_matrix_matches_pairwise(self, rng):
        h, v, m = rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), rng.normal(size=(5, 2, 4))
        s = score_matrix(h, v, m, 0.7)
        for i in range(3):
            for j in range(5):
                assert s[i, j] == pytest.approx(final_similarity(h[i], v[j], m[j], 0.7), abs=1e-12)

    def test_beta_range(self, rng):
        with pytest.raises(ConfigError):
            final_similarity(np.ones(2), np.ones(2), np.ones((1, 2)), 1.5)
        with pytest.raises(ConfigError):
            score_matrix(np.ones((2, 2)), np.ones((2, 2)), None, 0.5)


class TestRecall:
    def test_perfect(self):
        rep = recall_metrics(np.eye(3) + 0.01, ks=(1, 5))
        assert rep[1] == 1.0 and rep[5] == 1.0

    def test_exhaustive_sort_example(self):
        s = np.array([[0.1, 0.9, 0.0], [0.9, 0.1, 0.0], [0.0, 0.1, 0.9]])
        rep = recall_metrics(s, ks=(1, 2))
        assert rep[1] == pytest.approx(1 / 3) and rep[2] == 1.0
        assert rep[1] == oracles.recall(s, [0, 1, 2], 1)

    def test_ties_favour_lower_index(self):
        rep = recall_metrics(np.zeros((4, 4)), [0, 1, 2, 0], ks=(1,))
        assert rep[1] == 0.5

    def test_bad_ground_truth(self):
        with pytest.raises(DataError):
            recall_metrics(np.eye(3), [0, 1, 3])
        with pytest.raises(DataError):
            recall_metrics(np.eye(3), [0, 1])

    def test_sum_recall(self):
        t = recall_metrics(np.eye(3), direction="t2v")
        assert sum_recall(t, t) == 600.0

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.integers(1, 12), st.integers(1, 12))
    def test_ranks_match_oracle(self, seed, n_q, n_g):
        rng = np.random.default_rng(seed)
        s = rng.integers(0, 4, size=(n_q, n_g)).astype(float)  # many ties
        gt = rng.integers(0, n_g, size=n_q)
        assert ranks_of(s, gt).tolist() == oracles.ranks(s, gt.tolist())

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.integers(2, 15))
    def test_monotone_in_k(self, seed, n):
        s = np.random.default_rng(seed).normal(size=(n, n))
        rep = recall_metrics(s, ks=range(1, n + 1))
        vals = [rep[k] for k in range(1, n + 1)]
        assert all(a <= b for a, b in zip(vals, vals[1:])) and vals[-1] == 1.0

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.integers(2, 15))
    def test_rank_invariance_under_monotone_map(self, seed, n):
        s = np.random.default_rng(seed).normal(size=(n, n))
        base = recall_metrics(s)
        for f in (np.exp, lambda x: 3 * x + 1, np.arctan):
            assert recall_metrics(f(s)).recalls == base.recalls

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.integers(2, 10), st.floats(0.01, 100.0))
    def test_query_scale_invariance(self, seed, n, c):
        rng = np.random.default_rng(seed)
        h, v, m = rng.normal(size=(n, 6)), rng.normal(size=(n, 6)), rng.normal(size=(n, 3, 6))
        base = score_matrix(h, v, m)
        scaled = score_matrix(h * c, v, m)
        np.testing.assert_allclose(scaled, base, atol=1e-12)
        assert recall_metrics(scaled).recalls == recall_metrics(base).recalls

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.integers(1, 10))
    def test_sumr_identity(self, seed, n):
        s = np.random.default_rng(seed).normal(size=(n, n))
        t, v = recall_metrics(s), recall_metrics(s.T, direction="v2t")
        assert abs(sum_recall(t, v) - 100 * (sum(t.recalls.values()) + sum(v.recalls.values()))) < 1e-9


class TestEvaluateDataset:
    def test_untrained_is_near_chance(self, tiny_data, tiny_hp):
        dims = {m: tiny_data.shape(m)[1] for m in ("visual", "english", "non_english", "description")}
        ev = evaluate_dataset(RetrievalModel(tiny_hp, dims, seed=0), tiny_data)
        assert ev.scores.shape == (48, 48)
        assert ev.t2v[1] < 0.25
        assert ev.v2c_attention.shape == (48, 2, 2, 4)

    def test_beta_sweep_gives_distinct_reports(self, tmp_path, tiny_data, tiny_hp):
        dims = {m: tiny_data.shape(m)[1] for m in ("visual", "english", "non_english", "description")}
        model = RetrievalModel(tiny_hp, dims, seed=0)
        rows = [evaluate_dataset(model, tiny_data, beta=b).row("m", b) for b in (0.0, 0.8, 1.0)]
        write_report(tmp_path / "r.csv", rows)
        back = read_report(tmp_path / "r.csv")
        assert len(back) == 3 and list(back[0]) == list(CSV_COLUMNS)
        scores = [evaluate_dataset(model, tiny_data, beta=b).scores for b in (0.0, 0.8, 1.0)]
        assert not np.allclose(scores[0], scores[1]) and not np.allclose(scores[1], scores[2])


class TestAblation:
    def test_component_stages(self):
        base = HyperParams()
        stages = [ablation_config(base, "components", v) for v in ("baseline", "+mvss", "+mm", "+smeg")]
        assert not stages[0].use_slots
        assert stages[1].use_slots and stages[1].lambda1 == 0 and stages[1].lambda2 == 1
        assert stages[2].lambda1 == base.lambda1 and stages[2].lambda2 == 1
        assert stages[3] == base

    def test_guidance_sources(self):
        base = HyperParams()
        assert ablation_config(base, "guidance_source", "none").lambda2 == 1.0
        assert ablation_config(base, "guidance_source", "S_g").alpha == 1.0
        assert ablation_config(base, "guidance_source", "S_l").alpha == 0.0

    def test_other_axes(self):
        base = HyperParams()
        assert ablation_config(base, "n_views", "8").n_q == 8
        assert ablation_config(base, "interaction", "co_attention").interaction_mode == "co_attention"
        assert ablation_config(base, "interaction", "c2v").interaction_direction == "c2v"
        assert ablation_config(base, "description_pooling", "mean").description_pooling == "mean"

    @pytest.mark.parametrize("axis,value", [("n_views", "0"), ("n_views", "two"), ("components", "+xyz"),
                                            ("interaction", "triple"), ("colour", "red"), ("beta", "2")])
    def test_invalid_values(self, axis, value):
        with pytest.raises(ConfigError):
            ablation_config(HyperParams(), axis, value)

    def test_sweep_rows(self, tiny_data, tiny_hp):
        train, test = tiny_data.subset("train"), tiny_data.subset("test")
        rows = ablation_sweep(tiny_hp.replace(epochs=1), "n_views", ["1", "4"], train, test, seeds=(0,))
        assert [r["axis_value"] for r in rows] == ["1", "4"]
        assert all(0 <= r["sumr"] <= 600 for r in rows)
