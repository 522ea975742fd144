"""Video decoding and evenly spaced frame extraction.

Training uses up to 10 frames per video, testing up to 6, always including
the first and last frame so the selection spans the whole clip. Decoding sits
behind a small decoder interface: a cv2-based decoder for real container
formats and a raw-stack decoder for the deterministic ``.lusraw`` test format.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .manifest import VideoRecord

logger = logging.getLogger(__name__)

TRAIN_FRAMES_PER_VIDEO = 10
TEST_FRAMES_PER_VIDEO = 6

LUSRAW_MAGIC = b"LUSRAW1\x00"
_LUSRAW_HEADER = struct.Struct("<8sIHH")  # magic, frame_count u32, height u16, width u16


class IngestionError(RuntimeError):
    """Raised when a video cannot be decoded; carries the offending video_id."""

    def __init__(self, video_id: str, message: str):
        super().__init__(f"video '{video_id}': {message}")
        self.video_id = video_id


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    video_id: str
    frame_index: int
    pixels: np.ndarray  # 2-D grayscale, uint8


def select_frame_indices(frame_count: int, k: int) -> list[int]:
    """Evenly spaced source-frame indices, endpoints included.

    For k >= 2 and frame_count >= k the i-th index is
    round(i * (frame_count - 1) / (k - 1)) with half-up rounding; shorter
    videos return all their frames.
    """
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if frame_count <= k:
        return list(range(frame_count))
    if k == 1:
        return [0]
    step = (frame_count - 1) / (k - 1)
    indices = [int(np.floor(i * step + 0.5)) for i in range(k)]
    out: list[int] = []
    for idx in indices:
        if not out or idx > out[-1]:
            out.append(idx)
    return out


def write_raw_stack(path: Union[str, Path], frames: np.ndarray) -> None:
    """Write a (n, h, w) uint8 stack in the .lusraw format."""
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    if frames.ndim != 3:
        raise ValueError(f"expected (n, h, w) stack, got shape {frames.shape}")
    n, h, w = frames.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_LUSRAW_HEADER.pack(LUSRAW_MAGIC, n, h, w))
        fh.write(frames.tobytes())


def probe_raw_stack(path: Union[str, Path]) -> tuple[int, int, int]:
    """Return (frame_count, height, width) from the .lusraw header."""
    with Path(path).open("rb") as fh:
        header = fh.read(_LUSRAW_HEADER.size)
    if len(header) != _LUSRAW_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, n, h, w = _LUSRAW_HEADER.unpack(header)
    if magic != LUSRAW_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    return n, h, w


def read_raw_stack(path: Union[str, Path]) -> np.ndarray:
    """Read the whole (n, h, w) uint8 stack."""
    n, h, w = probe_raw_stack(path)
    with Path(path).open("rb") as fh:
        fh.seek(_LUSRAW_HEADER.size)
        data = fh.read(n * h * w)
    if len(data) != n * h * w:
        raise ValueError(f"{path}: truncated frame data")
    return np.frombuffer(data, dtype=np.uint8).reshape(n, h, w)


class FrameDecoder(Protocol):
    def probe(self, path: Union[str, Path]) -> tuple[int, int, int]:
        """Return (frame_count, height, width)."""

    def decode(self, path: Union[str, Path], indices: Sequence[int]) -> list[np.ndarray]:
        """Return grayscale uint8 frames at the given source indices."""


class RawStackDecoder:
    """Decoder for the deterministic .lusraw test format."""

    def probe(self, path: Union[str, Path]) -> tuple[int, int, int]:
        return probe_raw_stack(path)

    def decode(self, path: Union[str, Path], indices: Sequence[int]) -> list[np.ndarray]:
        n, h, w = probe_raw_stack(path)
        frame_bytes = h * w
        frames = []
        with Path(path).open("rb") as fh:
            for idx in indices:
                if not 0 <= idx < n:
                    raise ValueError(f"{path}: frame index {idx} outside [0, {n})")
                fh.seek(_LUSRAW_HEADER.size + idx * frame_bytes)
                data = fh.read(frame_bytes)
                if len(data) != frame_bytes:
                    raise ValueError(f"{path}: truncated frame {idx}")
                frames.append(np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy())
        return frames


class VideoFileDecoder:
    """cv2.VideoCapture-backed decoder for common container formats.

    Color input is reduced to grayscale luma; frames come back uint8 at the
    native resolution.
    """

    def _open(self, path: Union[str, Path]):
        import cv2

        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise ValueError(f"{path}: cannot open video")
        return cap, cv2

    def probe(self, path: Union[str, Path]) -> tuple[int, int, int]:
        cap, cv2 = self._open(path)
        try:
            n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
            h = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
            w = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
        finally:
            cap.release()
        if n < 1 or h < 1 or w < 1:
            raise ValueError(f"{path}: probe returned no frames")
        return n, h, w

    def decode(self, path: Union[str, Path], indices: Sequence[int]) -> list[np.ndarray]:
        cap, cv2 = self._open(path)
        wanted = set(int(i) for i in indices)
        got: dict[int, np.ndarray] = {}
        try:
            pos = 0
            while wanted - got.keys():
                ok, frame = cap.read()
                if not ok:
                    break
                if pos in wanted:
                    if frame.ndim == 3:
                        frame = cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
                    got[pos] = frame.astype(np.uint8)
                pos += 1
        finally:
            cap.release()
        missing = sorted(wanted - got.keys())
        if missing:
            raise ValueError(f"{path}: could not decode frames {missing}")
        return [got[int(i)] for i in indices]


def extract_frames(
    video: VideoRecord,
    mode: str,
    decoder: FrameDecoder,
    root: Optional[Union[str, Path]] = None,
) -> list[FrameRecord]:
    """Decode the per-mode evenly spaced frames of one video.

    mode="train" selects up to 10 frames, mode="test" up to 6. A frame-count
    mismatch between the manifest and the file triggers a warning and a
    re-probe; decode failures raise IngestionError carrying the video_id.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    k = TRAIN_FRAMES_PER_VIDEO if mode == "train" else TEST_FRAMES_PER_VIDEO
    path = Path(video.source_path)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    try:
        actual_count, _, _ = decoder.probe(path)
    except Exception as exc:
        raise IngestionError(video.video_id, f"probe failed: {exc}") from exc
    frame_count = video.frame_count
    if actual_count != frame_count:
        logger.warning(
            "video '%s': manifest frame_count %d != probed %d, using probed value",
            video.video_id,
            frame_count,
            actual_count,
        )
        frame_count = actual_count
    indices = select_frame_indices(frame_count, k)
    try:
        pixels = decoder.decode(path, indices)
    except Exception as exc:
        raise IngestionError(video.video_id, f"decode failed: {exc}") from exc
    return [
        FrameRecord(
            frame_id=f"{video.video_id}:{idx:05d}",
            video_id=video.video_id,
            frame_index=idx,
            pixels=px,
        )
        for idx, px in zip(indices, pixels)
    ]
