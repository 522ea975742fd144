"""Leakage-safe patient-level splitting, stratified by (center, disease).

Every split assigns whole patients: sessions, videos and frames follow their
patient, so no patient can contribute to more than one partition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .manifest import Manifest

HOLDOUT_NAMES_2 = ("train", "test")
HOLDOUT_NAMES_3 = ("train", "val", "test")


class SplitError(ValueError):
    """Raised for invalid split schemes or degenerate inputs."""


@dataclass(frozen=True)
class SplitScheme:
    kind: str  # "holdout" or "kfold"
    fractions: Optional[tuple[float, ...]] = None
    k: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind == "holdout":
            if self.fractions is None or len(self.fractions) not in (2, 3):
                raise SplitError("holdout needs 2 (train/test) or 3 (train/val/test) fractions")
            if any(f <= 0 for f in self.fractions):
                raise SplitError("holdout fractions must be positive")
            if abs(sum(self.fractions) - 1.0) > 1e-6:
                raise SplitError(f"holdout fractions must sum to 1, got {sum(self.fractions)}")
        elif self.kind == "kfold":
            if self.k is None or self.k < 2:
                raise SplitError("kfold needs k >= 2")
        else:
            raise SplitError(f"unknown scheme kind {self.kind!r}")

    @property
    def partition_names(self) -> tuple[str, ...]:
        if self.kind == "kfold":
            raise SplitError("kfold plans use fold indices, not partition names")
        return HOLDOUT_NAMES_2 if len(self.fractions or ()) == 2 else HOLDOUT_NAMES_3

    def __str__(self) -> str:
        if self.kind == "kfold":
            return f"kfold:{self.k}"
        return "holdout:" + "/".join(repr(f) for f in self.fractions)

    @staticmethod
    def parse(text: str) -> "SplitScheme":
        text = text.strip()
        if text.startswith("kfold:"):
            try:
                return SplitScheme(kind="kfold", k=int(text.split(":", 1)[1]))
            except ValueError:
                raise SplitError(f"bad kfold scheme: {text!r}") from None
        if text.startswith("holdout:"):
            try:
                fractions = tuple(float(p) for p in text.split(":", 1)[1].split("/"))
            except ValueError:
                raise SplitError(f"bad holdout scheme: {text!r}") from None
            return SplitScheme(kind="holdout", fractions=fractions)
        raise SplitError(f"unknown scheme {text!r} (expected kfold:K or holdout:F1/F2[/F3])")


@dataclass(frozen=True)
class SplitPlan:
    """Map patient_id -> partition name (holdout) or fold index (kfold)."""

    seed: int
    scheme: str
    assignments: dict[str, Union[str, int]]

    def patients_in(self, partition: Union[str, int]) -> frozenset[str]:
        return frozenset(p for p, a in self.assignments.items() if a == partition)


def _strata(manifest: Manifest) -> list[tuple[tuple[str, str], list[str]]]:
    groups: dict[tuple[str, str], list[str]] = {}
    for patient in manifest.patients.values():
        key = (patient.center.value, patient.disease.value)
        groups.setdefault(key, []).append(patient.patient_id)
    return sorted((key, sorted(pids)) for key, pids in groups.items())


def _largest_remainder_counts(n: int, fractions: tuple[float, ...]) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def make_split(manifest: Manifest, seed: int, scheme: SplitScheme) -> SplitPlan:
    """Deterministic stratified patient-level split.

    Strata smaller than the number of partitions are merged into one pool so
    they can still be distributed; kfold deals patients round-robin across
    folds with a global counter, keeping fold sizes balanced.
    """
    if not manifest.patients:
        raise SplitError("cannot split an empty manifest")
    rng = np.random.default_rng(seed)
    strata = _strata(manifest)
    assignments: dict[str, Union[str, int]] = {}

    if scheme.kind == "kfold":
        counter = 0
        for _, pids in strata:
            pids = list(pids)
            rng.shuffle(pids)
            for pid in pids:
                assignments[pid] = counter % scheme.k  # type: ignore[operator]
                counter += 1
    else:
        names = scheme.partition_names
        merged: list[str] = []
        kept: list[list[str]] = []
        for _, pids in strata:
            if len(pids) < len(names):
                merged.extend(pids)
            else:
                kept.append(list(pids))
        if merged:
            kept.append(sorted(merged))
        for pids in kept:
            rng.shuffle(pids)
            counts = _largest_remainder_counts(len(pids), scheme.fractions)  # type: ignore[arg-type]
            start = 0
            for name, count in zip(names, counts):
                for pid in pids[start : start + count]:
                    assignments[pid] = name
                start += count

    assignments = dict(sorted(assignments.items()))
    return SplitPlan(seed=seed, scheme=str(scheme), assignments=assignments)


def partitions(plan: SplitPlan, test_fold: Optional[int] = None) -> dict[str, frozenset[str]]:
    """Resolve a plan into train/val/test patient sets.

    For kfold plans, fold ``test_fold`` is the test set, fold
    ``(test_fold + 1) % k`` the validation set, and the rest train.
    """
    scheme = SplitScheme.parse(plan.scheme)
    if scheme.kind == "kfold":
        if test_fold is None:
            raise SplitError("kfold plans require test_fold")
        k = scheme.k or 0
        if not 0 <= test_fold < k:
            raise SplitError(f"test_fold {test_fold} outside [0, {k})")
        val_fold = (test_fold + 1) % k
        out = {
            "test": plan.patients_in(test_fold),
            "val": plan.patients_in(val_fold),
            "train": frozenset(
                p for p, a in plan.assignments.items() if a not in (test_fold, val_fold)
            ),
        }
        return out
    result = {name: plan.patients_in(name) for name in scheme.partition_names}
    return result


def save_split_plan(plan: SplitPlan, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"seed": plan.seed, "scheme": plan.scheme, "assignments": plan.assignments}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_split_plan(path: Union[str, Path]) -> SplitPlan:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return SplitPlan(
            seed=int(payload["seed"]),
            scheme=str(payload["scheme"]),
            assignments=dict(payload["assignments"]),
        )
    except (KeyError, TypeError) as exc:
        raise SplitError(f"{path}: malformed split plan ({exc})") from None
