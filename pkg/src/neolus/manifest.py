"""Dataset hierarchy: patients, sessions, videos, and the manifest CSV format.

A manifest is a flat CSV with one row per video; patient and session fields
repeat across the rows of their videos and must be mutually consistent.
Records are immutable after loading.
"""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Optional, Union

MANIFEST_COLUMNS = (
    "patient_id",
    "center",
    "disease",
    "gestational_age_weeks",
    "session_id",
    "session_index",
    "healed",
    "sf_value",
    "video_id",
    "video_path",
    "frame_count",
    "fps",
    "width",
    "height",
)

SCHEMA_VERSION = 1

SF_MAX = 500.0
GESTATIONAL_AGE_RANGE = (25, 40)


class Center(str, Enum):
    NAPLES = "Naples"
    MILAN = "Milan"
    FLORENCE = "Florence"
    SYNTHETIC = "Synthetic"


class Disease(str, Enum):
    NONE = "None"
    RDS = "RDS"
    TTN = "TTN"


class ClassLabel(IntEnum):
    HEALTHY = 0
    SICK = 1


class ManifestError(ValueError):
    """Raised when a manifest violates the schema or an invariant."""


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    center: Center
    disease: Disease
    gestational_age_weeks: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.patient_id:
            raise ManifestError("patient_id must be non-empty")
        if self.gestational_age_weeks is not None:
            lo, hi = GESTATIONAL_AGE_RANGE
            if not lo <= self.gestational_age_weeks <= hi:
                raise ManifestError(
                    f"patient {self.patient_id}: gestational_age_weeks "
                    f"{self.gestational_age_weeks} outside [{lo}, {hi}]"
                )


@dataclass(frozen=True)
class SessionRecord:
    session_id: str
    patient_id: str
    sf_value: float
    session_index: int
    healed: bool = False

    def __post_init__(self) -> None:
        if not self.session_id:
            raise ManifestError("session_id must be non-empty")
        if not 0.0 < self.sf_value <= SF_MAX:
            raise ManifestError(
                f"session {self.session_id}: sf_value {self.sf_value} "
                f"outside (0, {SF_MAX}]"
            )
        if self.session_index < 1:
            raise ManifestError(
                f"session {self.session_id}: session_index must be >= 1"
            )


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    session_id: str
    source_path: str
    frame_count: int
    fps: float
    native_width: int
    native_height: int

    def __post_init__(self) -> None:
        if not self.video_id:
            raise ManifestError("video_id must be non-empty")
        if self.frame_count < 1:
            raise ManifestError(f"video {self.video_id}: frame_count must be >= 1")
        if self.fps <= 0:
            raise ManifestError(f"video {self.video_id}: fps must be > 0")
        if self.native_width < 1 or self.native_height < 1:
            raise ManifestError(f"video {self.video_id}: dimensions must be >= 1")


@dataclass(frozen=True)
class Manifest:
    """Validated dataset hierarchy; immutable and safe to share across threads."""

    patients: "OrderedDict[str, PatientRecord]"
    sessions: "OrderedDict[str, SessionRecord]"
    videos: "OrderedDict[str, VideoRecord]"
    schema_version: int = SCHEMA_VERSION

    def sessions_of(self, patient_id: str) -> list[SessionRecord]:
        return sorted(
            (s for s in self.sessions.values() if s.patient_id == patient_id),
            key=lambda s: (s.session_index, s.session_id),
        )

    def videos_of(self, session_id: str) -> list[VideoRecord]:
        return sorted(
            (v for v in self.videos.values() if v.session_id == session_id),
            key=lambda v: v.video_id,
        )

    def patient_of_session(self, session_id: str) -> PatientRecord:
        return self.patients[self.sessions[session_id].patient_id]


@dataclass(frozen=True)
class SummaryRow:
    disease: Disease
    n_patients: int
    n_videos: int
    patients_per_center: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ManifestSummary:
    rows: tuple[SummaryRow, ...]
    total: SummaryRow


def _parse_row(row: dict[str, str], lineno: int) -> tuple[PatientRecord, SessionRecord, VideoRecord]:
    def fail(fieldname: str, message: str) -> ManifestError:
        return ManifestError(f"row {lineno}: field '{fieldname}': {message}")

    def req(fieldname: str) -> str:
        value = (row.get(fieldname) or "").strip()
        if not value:
            raise fail(fieldname, "must be non-empty")
        return value

    try:
        center = Center(req("center"))
    except ValueError:
        raise fail("center", f"unknown center {row.get('center')!r}") from None
    try:
        disease = Disease(req("disease"))
    except ValueError:
        raise fail("disease", f"unknown disease {row.get('disease')!r}") from None

    ga_raw = (row.get("gestational_age_weeks") or "").strip()
    ga: Optional[int] = None
    if ga_raw:
        try:
            ga = int(ga_raw)
        except ValueError:
            raise fail("gestational_age_weeks", f"not an integer: {ga_raw!r}") from None

    healed_raw = req("healed").lower()
    if healed_raw in ("true", "1", "yes"):
        healed = True
    elif healed_raw in ("false", "0", "no"):
        healed = False
    else:
        raise fail("healed", f"not a boolean: {healed_raw!r}")

    def num(fieldname: str, cast, positive: bool = True):
        raw = req(fieldname)
        try:
            value = cast(raw)
        except ValueError:
            raise fail(fieldname, f"not a number: {raw!r}") from None
        if positive and value <= 0:
            raise fail(fieldname, f"must be > 0, got {value}")
        return value

    sf_value = num("sf_value", float)
    if sf_value > SF_MAX:
        raise fail("sf_value", f"must be <= {SF_MAX}, got {sf_value}")

    try:
        patient = PatientRecord(req("patient_id"), center, disease, ga)
        session = SessionRecord(
            session_id=req("session_id"),
            patient_id=patient.patient_id,
            sf_value=sf_value,
            session_index=num("session_index", int),
            healed=healed,
        )
        video = VideoRecord(
            video_id=req("video_id"),
            session_id=session.session_id,
            source_path=req("video_path"),
            frame_count=num("frame_count", int),
            fps=num("fps", float),
            native_width=num("width", int),
            native_height=num("height", int),
        )
    except ManifestError as exc:
        raise ManifestError(f"row {lineno}: {exc}") from None
    return patient, session, video


def build_manifest(
    rows: Iterable[tuple[PatientRecord, SessionRecord, VideoRecord]],
) -> Manifest:
    """Assemble and validate a manifest from joined (patient, session, video) rows."""
    patients: OrderedDict[str, PatientRecord] = OrderedDict()
    sessions: OrderedDict[str, SessionRecord] = OrderedDict()
    videos: OrderedDict[str, VideoRecord] = OrderedDict()
    for i, (patient, session, video) in enumerate(rows, start=1):
        prev_p = patients.get(patient.patient_id)
        if prev_p is not None and prev_p != patient:
            raise ManifestError(
                f"row {i}: patient '{patient.patient_id}' conflicts with an earlier row"
            )
        patients[patient.patient_id] = patient

        prev_s = sessions.get(session.session_id)
        if prev_s is not None and prev_s != session:
            raise ManifestError(
                f"row {i}: session '{session.session_id}' conflicts with an earlier row"
            )
        sessions[session.session_id] = session

        if video.video_id in videos:
            raise ManifestError(f"row {i}: duplicate video_id '{video.video_id}'")
        videos[video.video_id] = video

    manifest = Manifest(patients=patients, sessions=sessions, videos=videos)
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: Manifest) -> None:
    """Check referential integrity and per-patient session-count invariants."""
    if not manifest.patients:
        raise ManifestError("manifest is empty")
    for session in manifest.sessions.values():
        if session.patient_id not in manifest.patients:
            raise ManifestError(
                f"session '{session.session_id}' references unknown patient "
                f"'{session.patient_id}'"
            )
    for video in manifest.videos.values():
        if video.session_id not in manifest.sessions:
            raise ManifestError(
                f"video '{video.video_id}' references unknown session "
                f"'{video.session_id}'"
            )
    for patient in manifest.patients.values():
        n = sum(1 for s in manifest.sessions.values() if s.patient_id == patient.patient_id)
        if patient.disease is Disease.NONE and n != 1:
            raise ManifestError(
                f"patient '{patient.patient_id}' has no disease but {n} sessions "
                f"(expected exactly 1)"
            )
        if patient.disease is not Disease.NONE and n not in (2, 3):
            raise ManifestError(
                f"patient '{patient.patient_id}' has disease {patient.disease.value} "
                f"but {n} sessions (expected 2 or 3)"
            )


def load_manifest(path: Union[str, Path]) -> Manifest:
    """Load and validate a manifest CSV. Raises ManifestError naming row and field."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{path}: empty file")
        if tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: header mismatch, expected {','.join(MANIFEST_COLUMNS)}"
            )
        rows = [_parse_row(row, lineno) for lineno, row in enumerate(reader, start=2)]
    if not rows:
        raise ManifestError(f"{path}: manifest has no data rows")
    return build_manifest(rows)


def _fmt_float(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def save_manifest(manifest: Manifest, path: Union[str, Path]) -> None:
    """Write the canonical CSV form: one row per video, sorted, exact floats."""
    validate_manifest(manifest)
    rows = []
    for video in manifest.videos.values():
        session = manifest.sessions[video.session_id]
        patient = manifest.patients[session.patient_id]
        rows.append((patient, session, video))
    rows.sort(key=lambda r: (r[0].patient_id, r[1].session_index, r[1].session_id, r[2].video_id))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for patient, session, video in rows:
            writer.writerow(
                [
                    patient.patient_id,
                    patient.center.value,
                    patient.disease.value,
                    "" if patient.gestational_age_weeks is None else patient.gestational_age_weeks,
                    session.session_id,
                    session.session_index,
                    "true" if session.healed else "false",
                    _fmt_float(session.sf_value),
                    video.video_id,
                    video.source_path,
                    video.frame_count,
                    _fmt_float(video.fps),
                    video.native_width,
                    video.native_height,
                ]
            )


def derive_class_label(session: SessionRecord, patient: PatientRecord) -> ClassLabel:
    """Binary label for classification training.

    Patients without disease are healthy; diseased patients are sick while
    active and healthy once the session is marked healed (follow-up scans).
    """
    if patient.disease is Disease.NONE:
        return ClassLabel.HEALTHY
    return ClassLabel.HEALTHY if session.healed else ClassLabel.SICK


def summarize(manifest: Manifest) -> ManifestSummary:
    """Per-disease patient/video counts with per-center patient totals."""
    centers = [c.value for c in Center]
    rows = []
    total_patients = 0
    total_videos = 0
    total_per_center = {c: 0 for c in centers}
    for disease in Disease:
        pids = [p.patient_id for p in manifest.patients.values() if p.disease is disease]
        sids = {
            s.session_id
            for s in manifest.sessions.values()
            if s.patient_id in set(pids)
        }
        n_videos = sum(1 for v in manifest.videos.values() if v.session_id in sids)
        per_center = {
            c: sum(
                1
                for p in manifest.patients.values()
                if p.disease is disease and p.center.value == c
            )
            for c in centers
        }
        rows.append(
            SummaryRow(
                disease=disease,
                n_patients=len(pids),
                n_videos=n_videos,
                patients_per_center=per_center,
            )
        )
        total_patients += len(pids)
        total_videos += n_videos
        for c in centers:
            total_per_center[c] += per_center[c]
    total = SummaryRow(
        disease=Disease.NONE,  # placeholder; the total row spans all diseases
        n_patients=total_patients,
        n_videos=total_videos,
        patients_per_center=total_per_center,
    )
    return ManifestSummary(rows=tuple(rows), total=total)
