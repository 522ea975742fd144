from __future__ import annotations

import math

import pytest
import torch
from hypothesis import given, settings
import hypothesis.strategies as st

from neolus.frames import RawStackDecoder
from neolus.manifest import SessionRecord
from neolus.models import BackboneSpec, HeadSpec
from neolus.preprocess import AugmentationConfig
from neolus.splitting import SplitScheme, make_split, partitions
from neolus.training import (
    TrainingConfig,
    TrainingConfigError,
    TrainingDivergedError,
    build_curriculum,
    classification_loss,
    clip_and_normalize_sf,
    regression_loss,
    train,
)


class TestClipNormalize:
    def test_clipping(self):
        assert clip_and_normalize_sf(480.0) == pytest.approx(1.0)
        assert clip_and_normalize_sf(450.0) == pytest.approx(1.0)
        assert clip_and_normalize_sf(300.0) == pytest.approx(300.0 / 450.0)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            clip_and_normalize_sf(0.0)
        with pytest.raises(ValueError):
            clip_and_normalize_sf(-10.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 1e4), st.floats(1e-3, 1e4))
    def test_idempotent_and_monotone(self, a, b):
        na = clip_and_normalize_sf(a)
        assert clip_and_normalize_sf(na * 450.0) == pytest.approx(na)
        lo, hi = sorted((a, b))
        assert clip_and_normalize_sf(lo) <= clip_and_normalize_sf(hi)


class TestLosses:
    def test_regression_zero_at_target(self):
        assert float(regression_loss(torch.tensor([0.3]), torch.tensor([0.3]))) == 0.0

    def test_regression_hand_computed(self):
        assert float(regression_loss(torch.tensor([0.5]), torch.tensor([1.0]))) == pytest.approx(0.25)
        batch = regression_loss(torch.tensor([0.1, 0.3]), torch.tensor([0.2, 0.6]))
        assert float(batch) == pytest.approx((0.01 + 0.09) / 2)

    def test_classification_max_entropy(self):
        for label in (0.0, 1.0):
            loss = classification_loss(torch.tensor([0.5]), torch.tensor([label]))
            assert float(loss) == pytest.approx(math.log(2), rel=1e-6)

    def test_classification_limits(self):
        near_perfect = classification_loss(torch.tensor([1.0 - 1e-9]), torch.tensor([1.0]))
        assert float(near_perfect) < 1e-6
        confident_wrong = classification_loss(torch.tensor([0.9]), torch.tensor([0.0]))
        assert float(confident_wrong) == pytest.approx(-math.log(0.1), rel=1e-6)

    def test_classification_clamps_extremes(self):
        loss = classification_loss(torch.tensor([1.0]), torch.tensor([0.0]))
        assert math.isfinite(float(loss))

    def test_sample_weights(self):
        probs = torch.tensor([0.5, 0.5])
        labels = torch.tensor([0.0, 1.0])
        weighted = classification_loss(probs, labels, torch.tensor([2.0, 0.0]))
        assert float(weighted) == pytest.approx(math.log(2), rel=1e-6)


def _sessions(sfs):
    return [SessionRecord(f"s{i}", "p", sf, 1) for i, sf in enumerate(sfs)]


class TestCurriculum:
    def test_default_partition(self):
        plan = build_curriculum(_sessions([150.0, 300.0, 450.0]))
        assert plan.easy_sessions == {"s0", "s2"}
        assert plan.hard_sessions == {"s1"}

    def test_degenerate_all_easy(self):
        plan = build_curriculum(_sessions([450.0, 450.0]))
        assert plan.hard_sessions == frozenset()
        assert plan.active_sessions(0) == plan.active_sessions(10)

    def test_empty_easy_errors(self):
        with pytest.raises(TrainingConfigError, match="easy set is empty"):
            build_curriculum(_sessions([250.0, 300.0, 350.0]))

    def test_phase_schedule(self):
        plan = build_curriculum(_sessions([150.0, 300.0, 450.0]), phase1_epochs=2)
        assert plan.active_sessions(0) == {"s0", "s2"}
        assert plan.active_sessions(1) == {"s0", "s2"}
        assert plan.active_sessions(2) == {"s0", "s1", "s2"}

    def test_partition_is_true_partition(self):
        sessions = _sessions([100, 200, 250, 380, 400, 440])
        plan = build_curriculum(sessions)
        ids = {s.session_id for s in sessions}
        assert plan.easy_sessions | plan.hard_sessions == ids
        assert plan.easy_sessions & plan.hard_sessions == frozenset()


class TestConfigValidation:
    def test_strategy_checked(self):
        with pytest.raises(TrainingConfigError):
            TrainingConfig(strategy="ordinal")

    def test_curriculum_needs_room(self):
        with pytest.raises(TrainingConfigError):
            TrainingConfig(curriculum=True, phase1_epochs=5, epochs=5)
        TrainingConfig(curriculum=True, phase1_epochs=2, epochs=5)

    def test_positive_clip(self):
        with pytest.raises(TrainingConfigError):
            TrainingConfig(sf_clip=0.0)


@pytest.fixture(scope="module")
def mini_setup(mini_phantom):
    dataset, root = mini_phantom
    plan = make_split(dataset.manifest, 2, SplitScheme.parse("holdout:0.5/0.25/0.25"))
    return dataset.manifest, partitions(plan), root


def _train(manifest, parts, root, **overrides):
    defaults = dict(strategy="classification", epochs=2, learning_rate=1e-3, seed=1)
    defaults.update(overrides)
    cfg = TrainingConfig(**defaults)
    return train(
        manifest,
        parts,
        cfg,
        BackboneSpec("tiny", pretrained=False),
        HeadSpec("global_average", cfg.strategy),
        AugmentationConfig(seed=1),
        RawStackDecoder(),
        video_root=root,
    )


class TestTrainLoop:
    def test_log_schema_and_determinism(self, mini_setup):
        manifest, parts, root = mini_setup
        a = _train(manifest, parts, root)
        b = _train(manifest, parts, root)
        assert a.log == b.log
        assert len(a.log) == 2
        for entry in a.log:
            assert set(entry) == {"epoch", "train_loss", "val_spearman_session", "val_mape_or_acc"}
        assert a.best_epoch in (0, 1)

    def test_divergence_aborts(self, mini_setup):
        # Adam's bounded steps plus batch norm keep the tiny net finite at
        # moderate rates; this one overflows float32 within a couple of steps
        manifest, parts, root = mini_setup
        with pytest.raises(TrainingDivergedError, match="not finite"):
            _train(manifest, parts, root, strategy="regression", learning_rate=1e19, epochs=3)

    def test_mismatched_head_rejected(self, mini_setup):
        manifest, parts, root = mini_setup
        with pytest.raises(TrainingConfigError, match="match"):
            train(
                manifest,
                parts,
                TrainingConfig(strategy="regression", epochs=1),
                BackboneSpec("tiny", pretrained=False),
                HeadSpec("global_average", "classification"),
                AugmentationConfig(),
                RawStackDecoder(),
                video_root=root,
            )

    def test_empty_partition_rejected(self, mini_setup):
        manifest, parts, root = mini_setup
        bad = dict(parts)
        bad["val"] = frozenset()
        with pytest.raises(TrainingConfigError, match="validation"):
            _train(manifest, bad, root)
        bad = dict(parts)
        bad["train"] = frozenset()
        with pytest.raises(TrainingConfigError, match="train partition"):
            _train(manifest, bad, root)

    def test_curriculum_phase1_restricts_batches(self, mini_setup):
        manifest, parts, root = mini_setup
        # easy_high=430 guarantees the mini phantom has both easy and hard
        # train sessions, so phase 1 really trains on a strict subset
        full = _train(manifest, parts, root, epochs=2, easy_high=430.0)
        staged = _train(
            manifest, parts, root, epochs=2, curriculum=True, phase1_epochs=1, easy_high=430.0
        )
        # phase 1 trains on fewer sessions, so the first epoch differs; the
        # phase1_epochs=0 identity is covered by the acceptance suite
        assert staged.log[0]["train_loss"] != full.log[0]["train_loss"]
