"""Training strategies: SF regression, binary classification, and curriculum.

Regression fits the clipped, unit-normalized SF directly; classification
fits healthy/sick labels and later uses the healthy confidence as the score
correlated with SF. Curriculum training runs a first phase on easy sessions
(clearly healthy or clearly sick SF) before adding the borderline ones.

The loop is deterministic given the config seeds: model init and optimizer
come from the torch seed, batch order from a per-epoch generator, and every
frame's augmentation from a generator split per (seed, epoch, frame_id), so
runs are reproducible and curriculum with an empty first phase is
batch-for-batch identical to plain training.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .frames import FrameDecoder, extract_frames
from .manifest import Manifest, SessionRecord, derive_class_label
from .metrics import MetricError, PredictionEntry, PredictionSet, compute_report
from .models import BackboneSpec, HeadSpec, ScoreModel, WeightProvider, build_model, predict_scores
from .preprocess import AugmentationConfig, augment, frame_rng, preprocess

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


class TrainingConfigError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite; carries epoch and batch."""


@dataclass
class TrainingConfig:
    strategy: str = "classification"
    sf_clip: float = 450.0
    sf_norm: float = 450.0
    curriculum: bool = False
    easy_low: float = 200.0  # easy: sf <= easy_low (clearly sick)
    easy_high: float = 400.0  # easy: sf >= easy_high (clearly healthy)
    phase1_epochs: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 50
    weight_decay: float = 1e-4
    seed: int = 0
    class_weighting: bool = True
    deterministic: bool = True

    def __post_init__(self) -> None:
        if self.strategy not in ("regression", "classification"):
            raise TrainingConfigError(f"unknown strategy {self.strategy!r}")
        if self.sf_clip <= 0 or self.sf_norm <= 0:
            raise TrainingConfigError("sf_clip and sf_norm must be > 0")
        if self.curriculum and not self.phase1_epochs < self.epochs:
            raise TrainingConfigError(
                f"phase1_epochs ({self.phase1_epochs}) must be < epochs ({self.epochs})"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingConfigError("epochs and batch_size must be >= 1")
        if not self.easy_low < self.easy_high:
            raise TrainingConfigError("easy_low must be < easy_high")


def clip_and_normalize_sf(sf: float, clip: float = 450.0, norm: float = 450.0) -> float:
    """min(sf, clip) / norm; idempotent past the clip and order-preserving."""
    if sf <= 0:
        raise ValueError(f"sf must be > 0, got {sf}")
    return min(sf, clip) / norm


def regression_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over the batch."""
    pred = torch.as_tensor(pred, dtype=torch.float32)
    target = torch.as_tensor(target, dtype=torch.float32)
    return ((pred - target) ** 2).mean()


def classification_loss(
    prob_sick: torch.Tensor,
    label: torch.Tensor,
    sample_weight: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Binary cross-entropy on the sick probability, clamped away from {0, 1}."""
    p = torch.as_tensor(prob_sick, dtype=torch.float32).clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = torch.as_tensor(label, dtype=torch.float32)
    bce = -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))
    if sample_weight is not None:
        bce = bce * torch.as_tensor(sample_weight, dtype=torch.float32)
    return bce.mean()


@dataclass(frozen=True)
class CurriculumPlan:
    easy_sessions: frozenset[str]
    hard_sessions: frozenset[str]
    phase1_epochs: int

    def active_sessions(self, epoch: int) -> frozenset[str]:
        if epoch < self.phase1_epochs:
            return self.easy_sessions
        return self.easy_sessions | self.hard_sessions


def build_curriculum(
    sessions: Sequence[SessionRecord],
    easy_low: float = 200.0,
    easy_high: float = 400.0,
    phase1_epochs: int = 0,
) -> CurriculumPlan:
    """Partition sessions into easy (sf outside (easy_low, easy_high)) and hard."""
    if not sessions:
        raise TrainingConfigError("cannot build a curriculum from no sessions")
    easy = frozenset(
        s.session_id for s in sessions if s.sf_value <= easy_low or s.sf_value >= easy_high
    )
    hard = frozenset(s.session_id for s in sessions) - easy
    if not easy:
        raise TrainingConfigError(
            f"curriculum easy set is empty with thresholds ({easy_low}, {easy_high}); "
            "widen the thresholds"
        )
    return CurriculumPlan(easy_sessions=easy, hard_sessions=hard, phase1_epochs=phase1_epochs)


@dataclass
class _TrainFrame:
    frame_id: str
    patient_id: str
    session_id: str
    video_id: str
    pixels: np.ndarray  # float16, input_height x 461
    sf_value: float
    label: int


@dataclass
class TrainResult:
    model: ScoreModel
    log: list[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None


def write_log_jsonl(log: Sequence[dict], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _collect_frames(
    manifest: Manifest,
    patient_ids: Sequence[str],
    mode: str,
    decoder: FrameDecoder,
    input_height: int,
    video_root: Optional[Union[str, Path]],
) -> list[_TrainFrame]:
    out: list[_TrainFrame] = []
    for pid in sorted(patient_ids):
        patient = manifest.patients[pid]
        for session in manifest.sessions_of(pid):
            label = int(derive_class_label(session, patient))
            for video in manifest.videos_of(session.session_id):
                for record in extract_frames(video, mode, decoder, root=video_root):
                    out.append(
                        _TrainFrame(
                            frame_id=record.frame_id,
                            patient_id=pid,
                            session_id=session.session_id,
                            video_id=video.video_id,
                            pixels=preprocess(record.pixels, input_height).astype(np.float16),
                            sf_value=session.sf_value,
                            label=label,
                        )
                    )
    out.sort(key=lambda f: f.frame_id)
    return out


def _class_weights(manifest: Manifest, patient_ids: Sequence[str]) -> Optional[tuple[float, float]]:
    """Inverse video-frequency weights (healthy, sick), or None if one class is absent."""
    counts = [0, 0]
    for pid in patient_ids:
        patient = manifest.patients[pid]
        for session in manifest.sessions_of(pid):
            label = int(derive_class_label(session, patient))
            counts[label] += len(manifest.videos_of(session.session_id))
    total = counts[0] + counts[1]
    if counts[0] == 0 or counts[1] == 0:
        return None
    return total / (2.0 * counts[0]), total / (2.0 * counts[1])


def _validation_metrics(
    model: ScoreModel,
    frames: Sequence[_TrainFrame],
    cfg: TrainingConfig,
    batch_size: int,
) -> tuple[Optional[float], Optional[float]]:
    pixels = [f.pixels.astype(np.float32) for f in frames]
    scores = predict_scores(model, pixels, batch_size=batch_size).numpy().astype(np.float64)
    if cfg.strategy == "regression":
        scores = np.clip(scores, 0.0, 1.0)
    entries = tuple(
        PredictionEntry(
            patient_id=f.patient_id,
            session_id=f.session_id,
            video_id=f.video_id,
            frame_id=f.frame_id,
            score=float(s),
            target_sf=f.sf_value,
            target_class=f.label,
        )
        for f, s in zip(frames, scores)
    )
    pset = PredictionSet(entries=entries, level="frame")
    try:
        report = compute_report(
            pset, cfg.strategy, levels=("session",), sf_clip=cfg.sf_clip, sf_norm=cfg.sf_norm
        )
    except MetricError:
        return None, None
    session = report.values["session"]
    second = session["mape"] if cfg.strategy == "regression" else session["accuracy"]
    return session["spearman"], second


def train(
    manifest: Manifest,
    parts: dict[str, frozenset[str]],
    cfg: TrainingConfig,
    backbone_spec: BackboneSpec,
    head_spec: HeadSpec,
    aug_cfg: AugmentationConfig,
    decoder: FrameDecoder,
    video_root: Optional[Union[str, Path]] = None,
    weight_provider: Optional[WeightProvider] = None,
) -> TrainResult:
    """Run one training strategy end to end and return the best-epoch model.

    The best checkpoint is chosen on the validation session-level Spearman;
    the log records one JSON-ready dict per epoch.
    """
    if head_spec.task != cfg.strategy:
        raise TrainingConfigError(
            f"head task {head_spec.task!r} does not match strategy {cfg.strategy!r}"
        )
    train_patients = sorted(parts.get("train") or ())
    val_patients = sorted(parts.get("val") or ())
    if not train_patients:
        raise TrainingConfigError("train partition is empty")
    if not val_patients:
        raise TrainingConfigError(
            "validation partition is empty; use a 3-way holdout or a k-fold plan"
        )

    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    model = build_model(backbone_spec, head_spec, weight_provider)

    input_height = model.input_height
    train_frames = _collect_frames(manifest, train_patients, "train", decoder, input_height, video_root)
    val_frames = _collect_frames(manifest, val_patients, "test", decoder, input_height, video_root)
    if not train_frames:
        raise TrainingConfigError("no training frames could be extracted")

    plan: Optional[CurriculumPlan] = None
    if cfg.curriculum:
        train_sessions = [
            s for pid in train_patients for s in manifest.sessions_of(pid)
        ]
        plan = build_curriculum(train_sessions, cfg.easy_low, cfg.easy_high, cfg.phase1_epochs)

    weights: Optional[tuple[float, float]] = None
    if cfg.strategy == "classification" and cfg.class_weighting:
        weights = _class_weights(manifest, train_patients)

    norm_targets = {
        f.frame_id: clip_and_normalize_sf(f.sf_value, cfg.sf_clip, cfg.sf_norm)
        for f in train_frames
    }

    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay
    )

    log: list[dict] = []
    best_spearman: Optional[float] = None
    best_epoch: Optional[int] = None
    best_state: Optional[dict] = None

    for epoch in range(cfg.epochs):
        if plan is not None:
            active = plan.active_sessions(epoch)
            epoch_frames = [f for f in train_frames if f.session_id in active]
        else:
            epoch_frames = train_frames

        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(epoch_frames))
        model.train()
        loss_sum = 0.0
        n_samples = 0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            batch_frames = [epoch_frames[i] for i in batch_idx]
            arrays = []
            for f in batch_frames:
                t = f.pixels.astype(np.float32)
                rng = frame_rng(aug_cfg.seed, epoch, f.frame_id)
                arrays.append(augment(t, aug_cfg, rng))
            x = torch.from_numpy(np.stack(arrays)).unsqueeze(1).repeat(1, 3, 1, 1)
            out = model(x).squeeze(1)
            if cfg.strategy == "regression":
                target = torch.tensor(
                    [norm_targets[f.frame_id] for f in batch_frames], dtype=torch.float32
                )
                loss = regression_loss(out, target)
            else:
                labels = torch.tensor([f.label for f in batch_frames], dtype=torch.float32)
                sample_weight = None
                if weights is not None:
                    sample_weight = torch.tensor(
                        [weights[f.label] for f in batch_frames], dtype=torch.float32
                    )
                loss = classification_loss(out, labels, sample_weight)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss is not finite at epoch {epoch}, batch {start // cfg.batch_size}; "
                    "lower the learning rate"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach()) * len(batch_frames)
            n_samples += len(batch_frames)

        train_loss = loss_sum / max(n_samples, 1)
        val_spearman, val_second = _validation_metrics(model, val_frames, cfg, cfg.batch_size * 2)
        log.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_spearman_session": val_spearman,
                "val_mape_or_acc": val_second,
            }
        )
        logger.info(
            "epoch %d: train_loss=%.5f val_spearman_session=%s val_mape_or_acc=%s",
            epoch,
            train_loss,
            f"{val_spearman:.4f}" if val_spearman is not None else "n/a",
            f"{val_second:.4f}" if val_second is not None else "n/a",
        )
        if val_spearman is not None and (best_spearman is None or val_spearman > best_spearman):
            best_spearman = val_spearman
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model=model, log=log, best_epoch=best_epoch)
