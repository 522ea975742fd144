from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from neolus.metrics import (
    MetricError,
    MetricsReport,
    PredictionEntry,
    PredictionSet,
    accuracy,
    aggregate,
    compute_report,
    load_predictions_csv,
    mape,
    save_predictions_csv,
    spearman,
)
from oracles import brute_force_spearman, direct_mape


class TestSpearman:
    def test_monotone(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)

    def test_antitone(self):
        assert spearman([1, 2, 3], [30, 20, 10]) == pytest.approx(-1.0)

    def test_hand_computed(self):
        # ranks (1,2,3) vs (3,1,2): covariance -1, variances 2 -> -0.5
        assert spearman([1, 2, 3], [3, 1, 2]) == pytest.approx(-0.5)

    def test_constant_vector_errors(self):
        with pytest.raises(MetricError, match="constant"):
            spearman([1.0, 1.0, 1.0], [1, 2, 3])

    def test_length_checks(self):
        with pytest.raises(MetricError):
            spearman([1.0], [2.0])
        with pytest.raises(MetricError):
            spearman([1, 2, 3], [1, 2])

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 13))
            x = rng.integers(0, 4, n).astype(float)  # heavy ties
            y = rng.random(n)
            if len(set(x)) < 2:
                continue
            assert abs(spearman(x, y) - brute_force_spearman(list(x), list(y))) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=12, unique=True).flatmap(
        lambda xs: st.tuples(st.just(xs), st.permutations(xs))
    ))
    def test_symmetry_and_self(self, pair):
        x, y = pair
        assert spearman(x, x) == pytest.approx(1.0)
        assert spearman(x, y) == pytest.approx(spearman(y, x))

    def test_invariant_under_increasing_transforms(self):
        rng = np.random.default_rng(3)
        x = rng.random(10) * 4 - 2
        y = rng.random(10) * 4 - 2
        base = spearman(x, y)
        for fn in (np.exp, lambda v: 3.0 * v + 7.0, lambda v: v**3):
            assert spearman(fn(x), y) == pytest.approx(base, abs=1e-12)
            assert spearman(x, fn(y)) == pytest.approx(base, abs=1e-12)


class TestMape:
    def test_exact_prediction(self):
        assert mape([100.0, 200.0], [100.0, 200.0]) == 0.0

    def test_hand_computed(self):
        assert mape([100.0], [200.0]) == pytest.approx(0.5)
        assert mape([90.0, 110.0], [100.0, 100.0]) == pytest.approx(0.1)

    def test_nonpositive_target_rejected(self):
        with pytest.raises(MetricError):
            mape([1.0], [0.0])
        with pytest.raises(MetricError):
            mape([1.0, 2.0], [3.0, -1.0])

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.tuples(st.floats(0, 1e5), st.floats(1e-3, 1e5)), min_size=1, max_size=20
        ),
        st.floats(1e-3, 1e3),
    )
    def test_scale_invariance(self, pairs, lam):
        pred = [p for p, _ in pairs]
        target = [t for _, t in pairs]
        scaled = mape([lam * p for p in pred], [lam * t for t in target])
        assert scaled == pytest.approx(mape(pred, target), rel=1e-9)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(1, 20))
            pred = rng.random(n) * 450
            target = rng.random(n) * 440 + 10
            assert abs(mape(pred, target) - direct_mape(pred, target)) < 1e-12


class TestAccuracy:
    def test_perfect(self):
        assert accuracy([0.9, 0.1, 0.8], [1, 0, 1]) == 1.0

    def test_tie_convention_predicts_sick(self):
        labels = [0, 1, 1, 0]
        assert accuracy([0.5] * 4, labels) == pytest.approx(sum(labels) / len(labels))

    def test_counting(self):
        scores = [0.9] * 8 + [0.1] * 2
        labels = [1] * 8 + [1] * 2
        assert accuracy(scores, labels) == pytest.approx(0.8)

    def test_threshold_fixing_transform_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.random(20)
        labels = (rng.random(20) > 0.5).astype(int)
        base = accuracy(scores, labels)
        # strictly increasing transform that fixes 0.5
        warped = 0.5 + np.sign(scores - 0.5) * np.abs(scores - 0.5) ** 1.7
        assert accuracy(warped, labels) == base


def _entry(pid, sid, vid, fid, score, sf=300.0, cls=0):
    return PredictionEntry(pid, sid, vid, fid, score, sf, cls)


class TestAggregate:
    def test_video_mean(self):
        pset = PredictionSet(
            entries=tuple(
                _entry("p", "s", "v", f"v:{i}", score) for i, score in enumerate([0.2, 0.4, 0.6])
            )
        )
        out = aggregate(pset, "video")
        assert len(out.entries) == 1
        assert out.entries[0].score == pytest.approx(0.4)
        assert out.level == "video"

    def test_constant_scores_all_levels(self):
        pset = PredictionSet(
            entries=tuple(
                _entry("p", f"s{j}", f"s{j}-v{k}", f"s{j}-v{k}:{i}", 0.35)
                for j in range(2)
                for k in range(2)
                for i in range(3)
            )
        )
        for level in ("video", "session"):
            out = aggregate(pset, level)
            assert all(e.score == pytest.approx(0.35) for e in out.entries)

    def test_session_mean_is_frame_mean(self):
        # two videos with unequal frame counts; oracle: enumerate frames by hand
        scores_v1 = [0.1, 0.2, 0.3, 0.4]
        scores_v2 = [0.8, 1.0]
        entries = [
            _entry("p", "s", "v1", f"v1:{i}", sc) for i, sc in enumerate(scores_v1)
        ] + [_entry("p", "s", "v2", f"v2:{i}", sc) for i, sc in enumerate(scores_v2)]
        out = aggregate(PredictionSet(entries=tuple(entries)), "session")
        expected = sum(scores_v1 + scores_v2) / 6  # plain frame mean
        assert out.entries[0].score == pytest.approx(expected)
        # video-weighted alternative averages the two video means instead
        weighted = aggregate(PredictionSet(entries=tuple(entries)), "session", video_weighted=True)
        expected_weighted = (np.mean(scores_v1) + np.mean(scores_v2)) / 2
        assert weighted.entries[0].score == pytest.approx(expected_weighted)

    def test_idempotent_at_video_level(self):
        pset = PredictionSet(
            entries=tuple(_entry("p", "s", f"v{k}", f"v{k}:0", 0.1 * k) for k in range(1, 4))
        )
        video_level = aggregate(pset, "video")
        again = aggregate(video_level, "video")
        assert again == video_level

    def test_inconsistent_session_target_rejected(self):
        entries = (
            _entry("p", "s", "v", "v:0", 0.5, sf=300.0),
            _entry("p", "s", "v", "v:1", 0.5, sf=310.0),
        )
        with pytest.raises(MetricError, match="session property"):
            aggregate(PredictionSet(entries=entries), "video")


class TestComputeReport:
    def _pset(self, task):
        rng = np.random.default_rng(4)
        entries = []
        for j in range(12):
            sf = 100.0 + 30.0 * j
            label = int(sf < 250)
            score = (1.0 - sf / 500.0) if task == "classification" else sf / 450.0
            score += rng.normal(0, 0.01)
            score = float(np.clip(score, 0, 1))
            for k in range(2):
                for i in range(3):
                    entries.append(
                        PredictionEntry(
                            f"p{j}", f"s{j}", f"s{j}-v{k}", f"s{j}-v{k}:{i}",
                            score, sf, label if task == "classification" else None,
                        )
                    )
        return PredictionSet(entries=tuple(entries))

    def test_classification_report_columns(self):
        report = compute_report(self._pset("classification"), "classification")
        for level in ("frame", "video", "session"):
            assert set(report.values[level]) == {"spearman", "accuracy"}
        assert report.counts == {"frame": 72, "video": 24, "session": 12}

    def test_regression_report_columns(self):
        report = compute_report(self._pset("regression"), "regression")
        for level in ("frame", "video", "session"):
            assert set(report.values[level]) == {"spearman", "mape"}
        assert report.values["session"]["mape"] < 0.1

    def test_exact_predictions_zero_mape(self):
        entries = tuple(
            PredictionEntry(f"p{j}", f"s{j}", f"s{j}-v", f"s{j}-v:{i}", (100.0 + 25 * j) / 450.0, 100.0 + 25 * j, None)
            for j in range(8)
            for i in range(3)
        )
        report = compute_report(PredictionSet(entries=entries), "regression")
        for level in ("frame", "video", "session"):
            assert report.values[level]["mape"] == pytest.approx(0.0, abs=1e-12)

    def test_random_scores_near_zero_session_spearman(self):
        # permutation-null: with 100 sessions the 95% band is far inside +-0.25
        rng = np.random.default_rng(7)
        sfs = np.linspace(100, 450, 100)
        null = []
        for _ in range(300):
            null.append(abs(spearman(rng.permutation(100), sfs)))
        assert np.quantile(null, 0.95) < 0.25
        entries = tuple(
            PredictionEntry(f"p{j}", f"s{j}", f"s{j}-v", f"s{j}-v:{i}", float(rng.random()), float(sfs[j]), j % 2)
            for j in range(100)
            for i in range(2)
        )
        report = compute_report(PredictionSet(entries=entries), "classification")
        assert abs(report.values["session"]["spearman"]) < 0.25

    def test_clipped_targets_used(self):
        scores = [1.0, 1.0, 1.0, 0.9]
        sfs = [460.0, 480.0, 500.0, 200.0]
        entries = tuple(
            PredictionEntry(f"p{j}", f"s{j}", f"s{j}-v", f"s{j}-v:0", sc, sf, None)
            for j, (sc, sf) in enumerate(zip(scores, sfs))
        )
        report = compute_report(PredictionSet(entries=entries), "regression", levels=("frame",))
        # predictions de-normalize by 450; targets 460/480/500 clip to 450
        expected = (0.0 + 0.0 + 0.0 + abs(0.9 * 450 - 200) / 200) / 4
        assert report.values["frame"]["mape"] == pytest.approx(expected)


class TestPredictionsCsv:
    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(9)
        entries = tuple(
            PredictionEntry(
                f"p{j}", f"s{j}", f"s{j}-v{k}", f"s{j}-v{k}:{i}",
                float(rng.random()), float(rng.random() * 400 + 50),
                int(rng.integers(0, 2)) if j % 2 else None,
            )
            for j in range(5)
            for k in range(2)
            for i in range(3)
        )
        pset = PredictionSet(entries=entries)
        path = tmp_path / "preds.csv"
        save_predictions_csv(pset, path)
        assert load_predictions_csv(path) == pset

    def test_level_inference(self, tmp_path):
        pset = PredictionSet(
            entries=(PredictionEntry("p", "s", "", "", 0.5, 300.0, 1),), level="session"
        )
        path = tmp_path / "sessions.csv"
        save_predictions_csv(pset, path)
        assert load_predictions_csv(path).level == "session"


def test_metrics_report_json_round_trip():
    report = MetricsReport(
        task="classification",
        values={"frame": {"spearman": 0.61234567, "accuracy": 0.8125}},
        counts={"frame": 320},
    )
    again = MetricsReport.from_json(report.to_json())
    assert again == report
