"""Frame preprocessing and the three stochastic training augmentations.

Every frame is normalized to [0, 1], resized so its width is exactly 461
(aspect preserved), and cropped to its first R rows, where R is the input
height of the network in use. The bottom of the scan carries no signal, so
cropping from the top keeps the pleural line and the lung below it while
giving the rectangular R x 461 input the networks expect.

Augmentations run in the fixed order hflip -> rotate -> photometric. Vertical
flips are deliberately unavailable: they would put the pleural line upside
down. All operations map [0, 1] tensors to [0, 1] tensors of the same shape
and are pure given an explicit numpy Generator.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
import cv2
import numpy as np

logger = logging.getLogger(__name__)

TARGET_WIDTH = 461
ROTATION_LIMIT_DEGREES = 10.0
PHOTOMETRIC_LIMIT = 0.25


def preprocess(pixels: np.ndarray, input_height: int) -> np.ndarray:
    """Native grayscale frame (uint8 or float in [0, 255]) -> float32 R x 461 in [0, 1].

    Width is scaled to 461 with bilinear resampling (height follows the same
    factor); rows [0, R) are kept and missing rows are zero-padded at the
    bottom.
    """
    if pixels.ndim != 2:
        raise ValueError(f"expected 2-D grayscale frame, got shape {pixels.shape}")
    if input_height < 1:
        raise ValueError(f"input_height must be >= 1, got {input_height}")
    native_h, native_w = pixels.shape
    t = pixels.astype(np.float32) / 255.0
    if native_w != TARGET_WIDTH:
        scale = TARGET_WIDTH / native_w
        new_h = max(1, int(np.floor(native_h * scale + 0.5)))
        t = cv2.resize(t, (TARGET_WIDTH, new_h), interpolation=cv2.INTER_LINEAR)
    if t.shape[0] >= input_height:
        t = t[:input_height]
    else:
        logger.warning(
            "frame shorter than crop height (%d < %d), zero-padding bottom rows",
            t.shape[0],
            input_height,
        )
        pad = np.zeros((input_height - t.shape[0], TARGET_WIDTH), dtype=np.float32)
        t = np.concatenate([t, pad], axis=0)
    return np.clip(t, 0.0, 1.0)


def hflip(t: np.ndarray) -> np.ndarray:
    """Reverse column order. The only flip provided; see module docstring."""
    return np.ascontiguousarray(t[:, ::-1])


def rotate(t: np.ndarray, theta: float) -> np.ndarray:
    """Rotate about the image center by theta degrees, |theta| <= 10.

    Bilinear resampling, out-of-bounds filled with 0 (matches the black
    background), output shape unchanged, values clamped to [0, 1].
    """
    if abs(theta) > ROTATION_LIMIT_DEGREES:
        raise ValueError(f"|theta| must be <= {ROTATION_LIMIT_DEGREES}, got {theta}")
    h, w = t.shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    matrix = cv2.getRotationMatrix2D(center, theta, 1.0)
    out = cv2.warpAffine(
        t.astype(np.float32),
        matrix,
        (w, h),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0.0,
    )
    return np.clip(out, 0.0, 1.0)


def photometric(t: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """Multiplicative brightness then contrast about the per-image mean.

    Both factors live in [0.75, 1.25] (the 25% relative range); the contrast
    pivot is the mean after the brightness step, so constant images stay
    constant. Clamped to [0, 1].
    """
    lo, hi = 1.0 - PHOTOMETRIC_LIMIT, 1.0 + PHOTOMETRIC_LIMIT
    if not lo <= brightness <= hi:
        raise ValueError(f"brightness factor {brightness} outside [{lo}, {hi}]")
    if not lo <= contrast <= hi:
        raise ValueError(f"contrast factor {contrast} outside [{lo}, {hi}]")
    out = t * brightness
    if contrast != 1.0:
        mean = out.mean()
        out = mean + contrast * (out - mean)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class AugmentationConfig:
    hflip: bool = True
    hflip_prob: float = 0.5
    rotation: bool = True
    rotation_degrees: float = ROTATION_LIMIT_DEGREES  # uniform in [-x, +x]
    photometric: bool = True
    photometric_range: float = PHOTOMETRIC_LIMIT  # factors uniform in [1-x, 1+x]
    # ablation only: the scan should be analyzed whole, so this is off by
    # default; when on, everything outside a random R-wide square is zeroed
    # (width stays 461 per the tensor contract)
    random_crop: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob {self.hflip_prob} outside [0, 1]")
        if not 0.0 <= self.rotation_degrees <= ROTATION_LIMIT_DEGREES:
            raise ValueError(
                f"rotation_degrees {self.rotation_degrees} outside [0, {ROTATION_LIMIT_DEGREES}]"
            )
        if not 0.0 <= self.photometric_range <= PHOTOMETRIC_LIMIT:
            raise ValueError(
                f"photometric_range {self.photometric_range} outside [0, {PHOTOMETRIC_LIMIT}]"
            )

    @staticmethod
    def disabled() -> "AugmentationConfig":
        return AugmentationConfig(hflip=False, rotation=False, photometric=False)


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    theta: float = 0.0
    brightness: float = 1.0
    contrast: float = 1.0
    crop_start: int = -1  # -1 = no crop


def square_crop_mask(t: np.ndarray, start: int) -> np.ndarray:
    """Zero everything outside the R-wide column window starting at ``start``."""
    r = t.shape[0]
    if not 0 <= start <= t.shape[1] - r:
        raise ValueError(f"crop start {start} outside [0, {t.shape[1] - r}]")
    out = np.zeros_like(t)
    out[:, start : start + r] = t[:, start : start + r]
    return out


def sample_augment_params(cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentParams:
    """Draw one set of augmentation parameters; disabled ops consume no draws."""
    flip = bool(rng.random() < cfg.hflip_prob) if cfg.hflip else False
    theta = float(rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)) if cfg.rotation else 0.0
    if cfg.photometric:
        brightness = float(rng.uniform(1.0 - cfg.photometric_range, 1.0 + cfg.photometric_range))
        contrast = float(rng.uniform(1.0 - cfg.photometric_range, 1.0 + cfg.photometric_range))
    else:
        brightness = contrast = 1.0
    crop_start = -1
    if cfg.random_crop:
        crop_start = int(rng.integers(0, TARGET_WIDTH))  # clamped per-tensor later
    return AugmentParams(
        flip=flip, theta=theta, brightness=brightness, contrast=contrast, crop_start=crop_start
    )


def apply_augment(t: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply sampled parameters in the fixed order hflip -> rotate -> photometric."""
    out = t
    if params.flip:
        out = hflip(out)
    if params.theta != 0.0:
        out = rotate(out, params.theta)
    if params.brightness != 1.0 or params.contrast != 1.0:
        out = photometric(out, params.brightness, params.contrast)
    if params.crop_start >= 0:
        out = square_crop_mask(out, min(params.crop_start, out.shape[1] - out.shape[0]))
    return out


def augment(t: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Sample and apply the enabled augmentations; deterministic given rng state."""
    return apply_augment(t, sample_augment_params(cfg, rng))


def frame_rng(seed: int, epoch: int, frame_id: str) -> np.random.Generator:
    """Per-frame generator split from a root seed; independent of iteration order."""
    digest = hashlib.blake2s(frame_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng([seed, epoch, int.from_bytes(digest, "little")])
