"""Synthetic lung-ultrasound phantom with a known severity -> SF law.

Frames follow the visual grammar of real neonatal lung scans: a dark
speckled field, a bright curved pleural line near the top, faint horizontal
A-line echoes when healthy, and bright vertical B-line streaks whose count,
width and brightness grow with severity when sick. Full-height black rib
shadows appear on both classes, deliberately confounding "dark means
healthy" so positional pooling has something to exploit.

Ground truth: sf = 450 - 280 * severity + uniform(-10, 10), clamped to
[90, 460]. Severity 0 is healthy grammar; above 0.15 is sick grammar.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import cv2
import numpy as np

from .frames import write_raw_stack
from .manifest import (
    Center,
    Disease,
    Manifest,
    PatientRecord,
    SessionRecord,
    VideoRecord,
    build_manifest,
    save_manifest,
)

SF_INTERCEPT = 450.0
SF_SLOPE = 280.0
SF_NOISE = 10.0
SF_RANGE = (90.0, 460.0)
SICK_SEVERITY_THRESHOLD = 0.15

# Severities are assigned on even per-band grids (with jitter) rather than
# iid draws: the dataset then covers each band by construction, and the
# severity -> SF monotonicity survives the bounded SF noise.
_HEALTHY_SEVERITY = (0.0, 0.148)
_TTN_SEVERITY = (0.18, 0.50)
_RDS_SEVERITY = (0.50, 1.00)
_HEALED_SEVERITY = (0.004, 0.144)
_SEVERITY_JITTER = 0.003


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    n_patients: int = 40
    sessions_per_patient: tuple[int, int] = (1, 2)  # diseased patients get 2 or 3
    videos_per_session: int = 2
    frames_per_video: int = 12
    image_height: int = 512
    image_width: int = 461
    rib_shadow_range: tuple[int, int] = (0, 3)
    speckle_level: float = 0.04
    healthy_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_patients < 2:
            raise PhantomError("need at least 2 patients")
        if self.videos_per_session < 1 or self.frames_per_video < 1:
            raise PhantomError("videos_per_session and frames_per_video must be >= 1")
        if self.image_height < 64 or self.image_width < 64:
            raise PhantomError("image size too small for the phantom grammar")
        lo, hi = self.sessions_per_patient
        if not 1 <= lo <= hi:
            raise PhantomError(f"bad sessions_per_patient range {self.sessions_per_patient}")
        if not 0.0 < self.healthy_fraction < 1.0:
            raise PhantomError("healthy_fraction must be in (0, 1)")


def severity_to_sf(severity: float, rng: np.random.Generator) -> float:
    sf = SF_INTERCEPT - SF_SLOPE * severity + rng.uniform(-SF_NOISE, SF_NOISE)
    return float(np.clip(sf, SF_RANGE[0], SF_RANGE[1]))


def generate_frame(
    severity: float,
    rng: np.random.Generator,
    height: int = 512,
    width: int = 461,
    rib_shadow_range: tuple[int, int] = (0, 3),
    speckle_level: float = 0.04,
) -> np.ndarray:
    """Render one uint8 frame for the given severity; pure given the generator."""
    s = float(severity)
    if not 0.0 <= s <= 1.0:
        raise PhantomError(f"severity {s} outside [0, 1]")
    h, w = height, width
    # wetter lung -> brighter field: speckle level grows monotonically with s
    # (steep enough that fading A-lines cannot cancel it)
    img = rng.exponential(speckle_level * (1.0 + 2.5 * s), size=(h, w)).astype(np.float32)
    img = cv2.blur(img, (3, 3))

    x = np.arange(w, dtype=np.float32)
    y = np.arange(h, dtype=np.float32)[:, None]

    # pleural line: curved, brighter than everything, irregular when sick
    base_row = 60.0 + rng.uniform(-10.0, 10.0)
    curvature = rng.uniform(4.0, 14.0)
    profile = base_row + curvature * ((x - w / 2.0) / (w / 2.0)) ** 2
    # geometric irregularity scales with severity; the draws happen for every
    # severity so frames with the same generator state stay paired
    period = rng.uniform(40.0, 90.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    profile = profile + 6.0 * s * np.sin(2.0 * np.pi * x / period + phase)
    profile = profile + 2.0 * s * rng.standard_normal(w).astype(np.float32)
    pleural_sigma = rng.uniform(1.6, 2.4)
    pleural_gain = rng.uniform(0.75, 0.95)
    # brightness raggedness along the line grows with severity (photometric
    # jitter rescales the whole frame, so relative raggedness survives it)
    ragged_period = rng.uniform(30.0, 70.0)
    ragged_phase = rng.uniform(0.0, 2.0 * np.pi)
    ragged_depth = min(0.5, 2.5 * s)
    ragged = 1.0 - ragged_depth * (0.5 + 0.5 * np.sin(2.0 * np.pi * x / ragged_period + ragged_phase))
    img += (pleural_gain * ragged)[None, :] * np.exp(
        -((y - profile[None, :]) ** 2) / (2.0 * pleural_sigma**2)
    )

    if s <= SICK_SEVERITY_THRESHOLD:
        # healthy grammar: A-line reverberations below the pleura that fade as
        # the lung gets wetter, dark field otherwise
        n_a = int(rng.integers(2, 4))
        spacing = base_row + rng.uniform(20.0, 40.0)
        fade = max(0.0, 1.0 - s / 0.2)
        for k in range(n_a):
            depth = profile + spacing * (k + 1)
            gain = fade * 0.30 / (k + 1)
            img += gain * np.exp(
                -((y - depth[None, :]) ** 2) / (2.0 * (1.5 * pleural_sigma) ** 2)
            )
    else:
        # sick grammar: bright vertical B-lines descending from the pleura
        n_b = int(np.ceil(8.0 * s))
        sigma_x = (6.0 + 14.0 * s) / 2.355  # FWHM in pixels -> sigma
        gain = 0.35 + 0.5 * s
        below = (y >= profile[None, :]).astype(np.float32)
        for _ in range(n_b):
            xb = rng.uniform(0.0, float(w))
            column = gain * np.exp(-((x - xb) ** 2) / (2.0 * sigma_x**2))
            img += column[None, :] * below

    # rib shadows on every class: full-height, nearly black stripes
    n_r = int(rng.integers(rib_shadow_range[0], rib_shadow_range[1] + 1))
    for _ in range(n_r):
        xc = rng.uniform(0.0, float(w))
        half_width = rng.uniform(12.0, 25.0)
        img[:, np.abs(x - xc) <= half_width] *= 0.05

    img = np.clip(img, 0.0, 1.0)
    return np.round(img * 255.0).astype(np.uint8)


def _session_count(rng: np.random.Generator, spec_range: tuple[int, int]) -> int:
    lo = min(3, max(2, spec_range[0]))
    hi = min(3, max(lo, spec_range[1]))
    return int(rng.integers(lo, hi + 1))


def _gestational_age(rng: np.random.Generator, disease: Disease) -> int | None:
    if rng.random() < 0.1:
        return None
    ranges = {Disease.NONE: (30, 40), Disease.TTN: (33, 40), Disease.RDS: (25, 32)}
    lo, hi = ranges[disease]
    return int(rng.integers(lo, hi + 1))


@dataclass(frozen=True)
class PhantomDataset:
    manifest: Manifest
    severities: dict[str, float]  # session_id -> severity
    manifest_path: Path | None = None


def generate_manifest(spec: PhantomSpec) -> PhantomDataset:
    """Build the phantom manifest (no frame rendering); deterministic per seed."""
    rng = np.random.default_rng([spec.seed, 0])
    n_healthy = int(round(spec.n_patients * spec.healthy_fraction))
    n_healthy = min(max(n_healthy, 1), spec.n_patients - 1)
    n_ttn = (spec.n_patients - n_healthy) // 2
    diseases = (
        [Disease.NONE] * n_healthy
        + [Disease.TTN] * n_ttn
        + [Disease.RDS] * (spec.n_patients - n_healthy - n_ttn)
    )

    n_diseased = spec.n_patients - n_healthy
    healthy_grid = np.linspace(_HEALTHY_SEVERITY[0], _HEALTHY_SEVERITY[1], n_healthy)
    healed_grid = np.linspace(_HEALED_SEVERITY[0], _HEALED_SEVERITY[1], n_diseased)

    def low_band(grid_value: float) -> float:
        jitter = rng.uniform(-_SEVERITY_JITTER, _SEVERITY_JITTER)
        return float(np.clip(grid_value + jitter, 0.0, SICK_SEVERITY_THRESHOLD))

    rows = []
    severities: dict[str, float] = {}
    healthy_idx = 0
    diseased_idx = 0
    for p_idx, disease in enumerate(diseases):
        patient_id = f"P{p_idx:03d}"
        patient = PatientRecord(
            patient_id=patient_id,
            center=Center.SYNTHETIC,
            disease=disease,
            gestational_age_weeks=_gestational_age(rng, disease),
        )
        if disease is Disease.NONE:
            session_severities = [low_band(healthy_grid[healthy_idx])]
            healed_flags = [False]
            healthy_idx += 1
        else:
            n_sessions = _session_count(rng, spec.sessions_per_patient)
            band = _TTN_SEVERITY if disease is Disease.TTN else _RDS_SEVERITY
            base = float(rng.uniform(*band))
            session_severities = [
                float(np.clip(base + rng.uniform(-0.05, 0.05), band[0], band[1]))
                for _ in range(n_sessions - 1)
            ]
            session_severities.append(low_band(healed_grid[diseased_idx]))
            healed_flags = [False] * (n_sessions - 1) + [True]
            diseased_idx += 1

        for s_idx, (severity, healed) in enumerate(zip(session_severities, healed_flags), start=1):
            session_id = f"{patient_id}-s{s_idx}"
            session = SessionRecord(
                session_id=session_id,
                patient_id=patient_id,
                sf_value=severity_to_sf(severity, rng),
                session_index=s_idx,
                healed=healed,
            )
            severities[session_id] = severity
            for v_idx in range(1, spec.videos_per_session + 1):
                video_id = f"{session_id}-v{v_idx}"
                video = VideoRecord(
                    video_id=video_id,
                    session_id=session_id,
                    source_path=f"videos/{video_id}.lusraw",
                    frame_count=spec.frames_per_video,
                    fps=25.0,
                    native_width=spec.image_width,
                    native_height=spec.image_height,
                )
                rows.append((patient, session, video))

    manifest = build_manifest(rows)
    return PhantomDataset(manifest=manifest, severities=severities)


def generate_dataset(spec: PhantomSpec, out_dir: Union[str, Path]) -> PhantomDataset:
    """Render the phantom to .lusraw stacks plus a manifest CSV under out_dir.

    Rendering is seeded per video, so regenerating with the same spec yields
    byte-identical files.
    """
    out_dir = Path(out_dir)
    dataset = generate_manifest(spec)
    manifest = dataset.manifest
    for p_idx, patient_id in enumerate(sorted(manifest.patients)):
        for s_idx, session in enumerate(manifest.sessions_of(patient_id)):
            severity = dataset.severities[session.session_id]
            for v_idx, video in enumerate(manifest.videos_of(session.session_id)):
                rng = np.random.default_rng([spec.seed, 1, p_idx, s_idx, v_idx])
                frames = np.stack(
                    [
                        generate_frame(
                            severity,
                            rng,
                            height=spec.image_height,
                            width=spec.image_width,
                            rib_shadow_range=spec.rib_shadow_range,
                            speckle_level=spec.speckle_level,
                        )
                        for _ in range(spec.frames_per_video)
                    ]
                )
                write_raw_stack(out_dir / video.source_path, frames)
    manifest_path = out_dir / "manifest.csv"
    save_manifest(manifest, manifest_path)
    return PhantomDataset(
        manifest=manifest, severities=dataset.severities, manifest_path=manifest_path
    )
