"""Rank correlation, MAPE, accuracy, and frame -> video -> session aggregation.

Per-frame scores are averaged to video level and to session level (mean over
all of the session's frames by default; a video-weighted mode averages the
video means instead). The SF target is a session property and passes through
aggregation unchanged. All metric functions are pure and reduce in a fixed
order, so repeated evaluation is bit-reproducible.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .frames import TEST_FRAMES_PER_VIDEO, FrameDecoder, extract_frames
from .manifest import Manifest, derive_class_label
from .preprocess import preprocess

LEVELS = ("frame", "video", "session")

PREDICTIONS_COLUMNS = (
    "patient_id",
    "session_id",
    "video_id",
    "frame_id",
    "score",
    "target_sf",
    "target_class",
)


class MetricError(ValueError):
    """Raised for undefined metrics (constant vectors, bad targets)."""


@dataclass(frozen=True)
class PredictionEntry:
    patient_id: str
    session_id: str
    video_id: str
    frame_id: str
    score: float
    target_sf: float
    target_class: Optional[int] = None


@dataclass(frozen=True)
class PredictionSet:
    entries: tuple[PredictionEntry, ...]
    level: str = "frame"

    def __post_init__(self) -> None:
        if self.level not in LEVELS:
            raise MetricError(f"unknown level {self.level!r}")

    def scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries], dtype=np.float64)

    def targets_sf(self) -> np.ndarray:
        return np.array([e.target_sf for e in self.entries], dtype=np.float64)

    def targets_class(self) -> np.ndarray:
        if any(e.target_class is None for e in self.entries):
            raise MetricError("prediction set has entries without a class target")
        return np.array([e.target_class for e in self.entries], dtype=np.int64)


def rank_average_ties(x: Sequence[float]) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"need equal-length 1-D vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise MetricError("need at least 2 samples")
    rx = rank_average_ties(x)
    ry = rank_average_ties(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise MetricError("correlation undefined for a constant vector")
    return float((dx * dy).sum() / (sx * sy))


def mape(pred: Sequence[float], target: Sequence[float]) -> float:
    """Mean absolute percentage error: (1/N) * sum |pred - target| / target."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise MetricError(f"need equal-length 1-D vectors, got {pred.shape} and {target.shape}")
    if len(pred) == 0:
        raise MetricError("need at least 1 sample")
    if np.any(target <= 0):
        raise MetricError("MAPE targets must be strictly positive")
    return float(np.mean(np.abs(pred - target) / target))


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    """Fraction where (score >= threshold) matches the label (score = sick probability)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"need equal-length 1-D vectors, got {scores.shape} and {labels.shape}")
    if len(scores) == 0:
        raise MetricError("need at least 1 sample")
    predicted = (scores >= threshold).astype(np.int64)
    return float(np.mean(predicted == labels))


def aggregate(pset: PredictionSet, level: str, video_weighted: bool = False) -> PredictionSet:
    """Average scores up the hierarchy; session targets pass through unchanged.

    Session aggregation defaults to the mean over all of the session's
    entries (the frame mean when starting from frames); video_weighted=True
    first averages per video and then averages the video means.
    """
    if level not in ("video", "session"):
        raise MetricError(f"can only aggregate to video or session, got {level!r}")
    if not pset.entries:
        raise MetricError("cannot aggregate an empty prediction set")
    if level == "session" and video_weighted and pset.level == "frame":
        pset = aggregate(pset, "video")

    def key(e: PredictionEntry) -> tuple:
        if level == "video":
            return (e.patient_id, e.session_id, e.video_id)
        return (e.patient_id, e.session_id)

    groups: dict[tuple, list[PredictionEntry]] = {}
    for entry in pset.entries:
        groups.setdefault(key(entry), []).append(entry)

    out = []
    for k in sorted(groups):
        members = groups[k]
        first = members[0]
        for m in members[1:]:
            if m.target_sf != first.target_sf or m.target_class != first.target_class:
                raise MetricError(
                    f"inconsistent targets within group {k}: the SF target is a "
                    "session property"
                )
        mean_score = float(np.mean([m.score for m in members]))
        out.append(
            replace(
                first,
                score=mean_score,
                frame_id="",
                video_id=first.video_id if level == "video" else "",
            )
        )
    return PredictionSet(entries=tuple(out), level=level)


@dataclass(frozen=True)
class MetricsReport:
    task: str  # "regression" or "classification"
    values: dict[str, dict[str, float]]  # level -> metric -> value
    counts: dict[str, int]  # level -> number of aggregated units

    @property
    def metric_names(self) -> tuple[str, ...]:
        return ("spearman", "mape") if self.task == "regression" else ("spearman", "accuracy")

    def to_json(self) -> str:
        payload = {"task": self.task, "values": self.values, "counts": self.counts}
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        payload = json.loads(text)
        return MetricsReport(
            task=payload["task"],
            values={lvl: dict(m) for lvl, m in payload["values"].items()},
            counts={lvl: int(n) for lvl, n in payload["counts"].items()},
        )


def compute_report(
    pset: PredictionSet,
    task: str,
    levels: Sequence[str] = LEVELS,
    sf_clip: float = 450.0,
    sf_norm: float = 450.0,
) -> MetricsReport:
    """Metrics at every requested level from a frame-level prediction set.

    Regression scores are normalized SF; they are de-normalized by sf_norm
    and compared against clipped SF targets for MAPE. Classification scores
    are sick probabilities; the healthy confidence (1 - score) is what gets
    rank-correlated with SF.
    """
    if pset.level != "frame":
        raise MetricError("compute_report expects a frame-level prediction set")
    if task not in ("regression", "classification"):
        raise MetricError(f"unknown task {task!r}")
    values: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for level in levels:
        if level not in LEVELS:
            raise MetricError(f"unknown level {level!r}")
        level_set = pset if level == "frame" else aggregate(pset, level)
        scores = level_set.scores()
        sf = np.minimum(level_set.targets_sf(), sf_clip)
        counts[level] = len(level_set.entries)
        if task == "regression":
            pred_sf = np.clip(scores, 0.0, 1.0) * sf_norm
            values[level] = {
                "spearman": spearman(scores, sf),
                "mape": mape(pred_sf, sf),
            }
        else:
            healthy_confidence = 1.0 - scores
            values[level] = {
                "spearman": spearman(healthy_confidence, sf),
                "accuracy": accuracy(scores, level_set.targets_class()),
            }
    return MetricsReport(task=task, values=values, counts=counts)


def save_predictions_csv(pset: PredictionSet, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTIONS_COLUMNS)
        for e in pset.entries:
            writer.writerow(
                [
                    e.patient_id,
                    e.session_id,
                    e.video_id,
                    e.frame_id,
                    repr(e.score),
                    repr(e.target_sf),
                    "" if e.target_class is None else int(e.target_class),
                ]
            )


def load_predictions_csv(path: Union[str, Path]) -> PredictionSet:
    path = Path(path)
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != PREDICTIONS_COLUMNS:
            raise MetricError(f"{path}: header mismatch, expected {','.join(PREDICTIONS_COLUMNS)}")
        for row in reader:
            target_class = row["target_class"].strip()
            entries.append(
                PredictionEntry(
                    patient_id=row["patient_id"],
                    session_id=row["session_id"],
                    video_id=row["video_id"],
                    frame_id=row["frame_id"],
                    score=float(row["score"]),
                    target_sf=float(row["target_sf"]),
                    target_class=None if not target_class else int(target_class),
                )
            )
    if not entries:
        raise MetricError(f"{path}: no prediction rows")
    if all(e.frame_id for e in entries):
        level = "frame"
    elif all(e.video_id for e in entries):
        level = "video"
    else:
        level = "session"
    return PredictionSet(entries=tuple(entries), level=level)


def predict_frames(
    model,
    manifest: Manifest,
    patient_ids: Iterable[str],
    decoder: FrameDecoder,
    video_root: Optional[Union[str, Path]] = None,
    batch_size: int = 64,
) -> PredictionSet:
    """Test-mode inference over all videos of the given patients.

    Uses the test frame policy (at most 6 frames per video, to neutralize
    video-length differences), preprocessing without augmentation, and the
    model's own input height. Regression scores are clamped to [0, 1].
    """
    from .models import predict_scores

    patient_ids = sorted(set(patient_ids))
    metas = []
    pixels = []
    for pid in patient_ids:
        for session in manifest.sessions_of(pid):
            label = int(derive_class_label(session, manifest.patients[pid]))
            for video in manifest.videos_of(session.session_id):
                records = extract_frames(video, "test", decoder, root=video_root)
                if len(records) > TEST_FRAMES_PER_VIDEO:
                    raise MetricError(
                        f"video '{video.video_id}' produced {len(records)} test frames"
                    )
                for record in records:
                    metas.append((pid, session.session_id, video.video_id, record.frame_id, session.sf_value, label))
                    pixels.append(preprocess(record.pixels, model.input_height))
    if not pixels:
        raise MetricError("no frames to evaluate (empty patient set?)")
    scores = predict_scores(model, pixels, batch_size=batch_size).numpy().astype(np.float64)
    if model.head_spec.task == "regression":
        scores = np.clip(scores, 0.0, 1.0)
    entries = tuple(
        PredictionEntry(
            patient_id=pid,
            session_id=sid,
            video_id=vid,
            frame_id=fid,
            score=float(score),
            target_sf=float(sf),
            target_class=label,
        )
        for (pid, sid, vid, fid, sf, label), score in zip(metas, scores)
    )
    return PredictionSet(entries=entries, level="frame")


def evaluate(
    model,
    manifest: Manifest,
    test_patients: Iterable[str],
    decoder: FrameDecoder,
    levels: Sequence[str] = LEVELS,
    sf_clip: float = 450.0,
    sf_norm: float = 450.0,
    video_root: Optional[Union[str, Path]] = None,
    batch_size: int = 64,
) -> tuple[MetricsReport, PredictionSet]:
    """Full test protocol: extraction, inference, and metrics at all levels."""
    test_patients = list(test_patients)
    if not test_patients:
        raise MetricError("test partition is empty")
    pset = predict_frames(model, manifest, test_patients, decoder, video_root, batch_size)
    report = compute_report(pset, model.head_spec.task, levels, sf_clip=sf_clip, sf_norm=sf_norm)
    return report, pset
