import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsnlab import bench
from dsnlab.bench import (
    METRICS_COLUMNS,
    CostModel,
    compute_map,
    cost_of,
    eval_policy,
    resection_index,
    sweep_M,
)
from dsnlab.errors import ConfigError
from dsnlab.numeric import Prng
from dsnlab.synthgen import DatasetSpec, generate_dataset
from dsnlab.trainer import TrainConfig, init_models, selection_hit_rate


@pytest.fixture(scope="module")
def small():
    spec = DatasetSpec(num_classes=10, sections=2, clips_per_section=3, feature_dim=8,
                       train_count=80, test_count=60, seed=2)
    ds = generate_dataset(spec)
    cfg = TrainConfig(seed=1, response_epochs=1, classifier_hidden=16)
    obs, clf = init_models(spec, cfg)
    response = bench.train_max_response(ds, cfg)
    return ds, obs, clf, response


class TestMap:
    def test_perfect(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7]])
        assert compute_map(scores, np.array([0, 0, 1]))[0] == 1.0

    def test_positive_at_rank_two_of_two(self):
        scores = np.array([[0.9], [0.4]])
        value, excluded = compute_map(scores, np.array([1, 0]))
        assert value == 0.5 and excluded == []

    def test_tie_broken_by_video_id(self):
        scores = np.array([[0.5], [0.5]])
        assert compute_map(scores, np.array([1, 0]), np.array([0, 1]))[0] == 0.5
        assert compute_map(scores, np.array([1, 0]), np.array([1, 0]))[0] == 1.0

    def test_class_without_positives_excluded(self):
        scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]])
        value, excluded = compute_map(scores, np.array([0, 1]))
        assert excluded == [2] and value == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_invariance(self, seed):
        rng = Prng(seed)
        scores = rng.random((30, 4))
        labels = rng.integers(4, size=30)
        base = compute_map(scores, labels)[0]
        assert compute_map(np.exp(3 * scores) - 7, labels)[0] == base
        assert 0 <= base <= 1


class TestCost:
    cm = CostModel(encoder=160, head=36, classifier=1664, response=208)

    def test_default_net_shapes(self, small):
        spec = DatasetSpec()
        obs, clf = init_models(spec, TrainConfig())
        assert CostModel.from_nets(obs, clf) == CostModel(160, 36, 1664, 0)

    def test_dense(self):
        assert cost_of("dense", self.cm, 2, 3, 2) == 6 * 1664

    def test_default_ratio(self):
        dsn, dense = cost_of("dsn", self.cm, 2, 3, 2), cost_of("dense", self.cm, 2, 3, 2)
        assert (dsn, dense) == (4360, 9984)
        assert dsn / dense <= 0.45

    def test_single_clip_policies(self):
        assert cost_of("random", self.cm, 2, 3, 4) == cost_of("uniform", self.cm, 2, 3, 4) == 4 * 1664
        assert cost_of("max_response", self.cm, 2, 3, 2) == 6 * 208 + 2 * 1664

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 500), st.integers(1, 100), st.integers(1, 5000), st.integers(1, 6), st.integers(2, 6))
    def test_dsn_cheaper_when_selector_small(self, enc, head, clf, m, n):
        cm = CostModel(enc, head, clf)
        cheaper = cost_of("dsn", cm, m, n, m) < cost_of("dense", cm, m, n, m)
        assert cheaper == (n * enc + head < (n - 1) * clf)

    def test_integer_arithmetic(self):
        for policy in bench.POLICIES:
            assert isinstance(cost_of(policy, self.cm, 2, 3, 3), int)

    def test_unknown_policy(self):
        with pytest.raises(ConfigError):
            cost_of("best", self.cm, 2, 3, 2)


class TestResection:
    def test_identity(self):
        np.testing.assert_array_equal(resection_index(2, 3, 2), np.arange(6).reshape(2, 3))

    @given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 8))
    def test_in_range_and_ordered(self, m, n, mt):
        pos = resection_index(m, n, mt).ravel()
        assert pos.min() >= 0 and pos.max() < m * n
        assert np.all(np.diff(pos) >= 0)


class TestPolicies:
    def test_n_equals_one_degenerates(self):
        spec = DatasetSpec(num_classes=3, sections=3, clips_per_section=1, feature_dim=4,
                           train_count=10, test_count=25, seed=4)
        ds = generate_dataset(spec)
        obs, clf = init_models(spec, TrainConfig(seed=2, classifier_hidden=8))
        reports = {p: eval_policy(ds.test, p, clf, obs=obs, seed=0) for p in ("dsn", "random", "uniform", "dense")}
        ref = np.stack([v.fused for v in reports["dense"].videos])
        for r in reports.values():
            np.testing.assert_array_equal(np.stack([v.fused for v in r.videos]), ref)
            assert r.top1 == reports["dense"].top1

    def test_oracle_dominates_single_clip_policies(self, small):
        ds, obs, clf, response = small
        oracle = eval_policy(ds.test, "oracle", clf, obs=obs)
        assert oracle.map is None
        for p in ("random", "uniform", "dsn", "max_response"):
            r = eval_policy(ds.test, p, clf, obs=obs, response=response, M_test=2)
            assert oracle.top1 >= r.top1

    def test_oracle_section_mode(self, small):
        ds, obs, clf, _ = small
        r = eval_policy(ds.test, "oracle", clf, obs=obs, oracle_mode="section")
        assert 0 <= r.top1 <= 1 and r.clips_used == 6

    def test_top1_recomputable(self, small):
        ds, obs, clf, response = small
        for p in bench.POLICIES:
            r = eval_policy(ds.test, p, clf, obs=obs, response=response)
            assert r.top1 == np.mean([v.predicted == v.label for v in r.videos])

    def test_visit_order_irrelevant(self, small):
        ds, obs, clf, _ = small
        a = eval_policy(ds.test, "random", clf, obs=obs, rng=Prng(3))
        b = eval_policy(ds.test[::-1], "random", clf, obs=obs, rng=Prng(3))
        assert a.row() == b.row()

    def test_top5_only_with_ten_classes(self, small):
        ds, obs, clf, _ = small
        assert eval_policy(ds.test, "dense", clf, obs=obs).top5 is not None
        spec = DatasetSpec(num_classes=4, sections=2, clips_per_section=2, feature_dim=4,
                           train_count=5, test_count=10, seed=1)
        ds4 = generate_dataset(spec)
        obs4, clf4 = init_models(spec, TrainConfig(classifier_hidden=4))
        assert eval_policy(ds4.test, "dense", clf4, obs=obs4).top5 is None

    def test_missing_prerequisites(self, small):
        ds, _, clf, _ = small
        with pytest.raises(ConfigError, match="observation"):
            eval_policy(ds.test, "dsn", clf)
        with pytest.raises(ConfigError, match="response"):
            eval_policy(ds.test, "max_response", clf)

    def test_clips_used(self, small):
        ds, obs, clf, response = small
        for p, expect in [("dense", 6), ("oracle", 6), ("dsn", 3), ("random", 3)]:
            assert eval_policy(ds.test, p, clf, obs=obs, response=response, M_test=3).clips_used == expect

    def test_metrics_bounded(self, small):
        ds, obs, clf, response = small
        for p in bench.POLICIES:
            r = eval_policy(ds.test, p, clf, obs=obs, response=response)
            for value in (r.top1, r.top5, r.map):
                assert value is None or 0 <= value <= 1

    def test_max_response_deterministic_and_sized(self, small):
        ds, obs, _, response = small
        again = bench.train_max_response(ds, TrainConfig(seed=1, response_epochs=1, classifier_hidden=16))
        for a, b in zip(response.params(), again.params()):
            np.testing.assert_array_equal(a, b)
        # hidden layer matches the encoder's; only the output layer differs in width
        assert response.net.layers[0].weight.shape == obs.encoder.layers[0].weight.shape


class TestSweep:
    def test_rows_and_dense_constant(self, small):
        ds, obs, clf, response = small
        rows = sweep_M(ds.test, clf, obs, [1, 2, 3], ["dsn", "random", "dense"], response=response)
        assert len(rows) == 9
        dense = [r.top1 for r in rows if r.policy == "dense"]
        assert len(set(dense)) == 1

    def test_baseline_classifier_scores_other_policies(self, small):
        ds, obs, clf, _ = small
        other = init_models(ds.spec, TrainConfig(seed=8, classifier_hidden=16))[1]
        rows = sweep_M(ds.test, clf, obs, [2], ["dsn", "dense"], baseline_clf=other)
        assert rows[0].row() == eval_policy(ds.test, "dsn", clf, obs=obs, M_test=2).row()
        assert rows[1].row() == eval_policy(ds.test, "dense", other, obs=obs, M_test=2).row()

    def test_csv_schema(self, small):
        ds, obs, clf, _ = small
        rows = sweep_M(ds.test, clf, obs, [2], ["oracle", "dense"])
        parsed = list(csv.reader(io.StringIO(bench.metrics_csv(rows))))
        assert parsed[0] == METRICS_COLUMNS
        assert parsed[1][5] == ""  # oracle map not applicable
        assert float(parsed[2][3]) == rows[1].top1


class TestSelections:
    def test_dump_properties(self, small, tmp_path):
        ds, obs, _, _ = small
        path = tmp_path / "sel.csv"
        bench.dump_selections(ds.test, obs, path)
        rows = bench.read_selections(path)
        assert len(rows) == len(ds.test) * 2 * 3
        groups = {}
        for r in rows:
            groups.setdefault((r["video_id"], r["section"]), []).append(r)
        for g in groups.values():
            assert abs(sum(r["prob"] for r in g) - 1) <= 1e-9
            assert sum(r["chosen"] for r in g) == 1
        assert bench.hit_rate_from_rows(rows) == selection_hit_rate(ds.test, obs)

    def test_header(self, small, tmp_path):
        ds, obs, _, _ = small
        bench.dump_selections(ds.test[:2], obs, tmp_path / "s.csv")
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == "video_id,section,clip,prob,chosen,planted"
