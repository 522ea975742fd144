"""Backbone-agnostic model assembly and self-describing checkpoints.

A model is a convolutional backbone cut at its last convolutional layer plus
a pooling head (global-average or position-preserving) and a single linear
output. The feature-map width at input width 461 depends on each backbone's
padding conventions, so it is probed with a dry-run forward pass and never
hard-coded.

Pretrained weights come through a provider callable so the package works
offline; the default provider fetches torchvision weights when a download is
possible.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

import torch
from torch import nn

from .pooling import GlobalAveragePool, PositionPreservingPool
from .preprocess import TARGET_WIDTH

# Input height per backbone; the paper-scale networks use their standard
# resolutions, "tiny" is a CPU-sized stand-in for desk-scale runs.
BACKBONE_INPUT_HEIGHTS: dict[str, int] = {
    "alexnet": 224,
    "resnet18": 224,
    "resnet34": 224,
    "resnet50": 224,
    "efficientnet_b0": 224,
    "efficientnet_b1": 240,
    "efficientnet_b2": 260,
    "tiny": 224,
}

POOLING_KINDS = ("global_average", "position_preserving")
TASKS = ("regression", "classification")

WeightProvider = Callable[[str], Optional[Mapping[str, torch.Tensor]]]


class ModelConfigError(ValueError):
    """Raised for unknown backbones, bad head specs, or unusable weights."""


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    input_height: Optional[int] = None  # defaults to the backbone's standard height
    input_width: int = TARGET_WIDTH
    pretrained: bool = True

    def __post_init__(self) -> None:
        if self.name not in BACKBONE_INPUT_HEIGHTS:
            raise ModelConfigError(
                f"unknown backbone {self.name!r}; known: {sorted(BACKBONE_INPUT_HEIGHTS)}"
            )
        expected = BACKBONE_INPUT_HEIGHTS[self.name]
        if self.input_height is None:
            object.__setattr__(self, "input_height", expected)
        elif self.input_height != expected:
            raise ModelConfigError(
                f"backbone {self.name!r} expects input height {expected}, "
                f"got {self.input_height}"
            )
        if self.input_width != TARGET_WIDTH:
            raise ModelConfigError(f"input width is fixed at {TARGET_WIDTH}")


@dataclass(frozen=True)
class HeadSpec:
    pooling: str = "global_average"
    task: str = "classification"

    def __post_init__(self) -> None:
        if self.pooling not in POOLING_KINDS:
            raise ModelConfigError(f"unknown pooling {self.pooling!r}; known: {POOLING_KINDS}")
        if self.task not in TASKS:
            raise ModelConfigError(f"unknown task {self.task!r}; known: {TASKS}")


class TinyBackbone(nn.Module):
    """Small three-stage CNN for CPU-scale experiments (feature channels: 32)."""

    def __init__(self) -> None:
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, kernel_size=7, stride=4, padding=3),
            nn.BatchNorm2d(16),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, kernel_size=3, stride=2, padding=1),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=True),
            nn.Conv2d(32, 32, kernel_size=3, stride=1, padding=1),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class _TorchvisionBackbone(nn.Module):
    """Wraps a torchvision model, forwarding only up to the last conv layer."""

    def __init__(self, name: str) -> None:
        super().__init__()
        import torchvision.models as tvm

        self.name = name
        self.net = getattr(tvm, name)(weights=None)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        net = self.net
        if self.name.startswith("resnet"):
            x = net.conv1(x)
            x = net.bn1(x)
            x = net.relu(x)
            x = net.maxpool(x)
            x = net.layer1(x)
            x = net.layer2(x)
            x = net.layer3(x)
            x = net.layer4(x)
            return x
        # alexnet and efficientnet both expose .features
        return net.features(x)

    def load_pretrained(self, state_dict: Mapping[str, torch.Tensor]) -> None:
        self.net.load_state_dict(state_dict)


def torchvision_weight_provider(name: str) -> Optional[Mapping[str, torch.Tensor]]:
    """Fetch torchvision's default weights; None for backbones without any.

    Requires network access on first use; raises ModelConfigError with a
    pointer to pretrained=False when the download fails.
    """
    if name == "tiny":
        return None
    import torchvision.models as tvm

    weights_enum = tvm.get_model_weights(name).DEFAULT
    try:
        return weights_enum.get_state_dict(progress=False)
    except Exception as exc:
        raise ModelConfigError(
            f"could not fetch pretrained weights for {name!r} ({exc}); "
            "pass pretrained=False or supply a weight_provider"
        ) from exc


def _build_backbone(spec: BackboneSpec, weight_provider: Optional[WeightProvider]) -> nn.Module:
    backbone: nn.Module
    if spec.name == "tiny":
        backbone = TinyBackbone()
        if spec.pretrained:
            raise ModelConfigError("the tiny backbone has no pretrained weights")
        return backbone
    backbone = _TorchvisionBackbone(spec.name)
    if spec.pretrained:
        provider = weight_provider or torchvision_weight_provider
        state_dict = provider(spec.name)
        if state_dict is None:
            raise ModelConfigError(
                f"pretrained=True but the weight provider has no weights for {spec.name!r}"
            )
        backbone.load_pretrained(state_dict)
    return backbone


class ScoreModel(nn.Module):
    """Backbone + pooling head + linear output producing one scalar per frame.

    Classification squashes through a sigmoid (sick-class probability in
    [0, 1]); regression emits the raw linear output, clamped only at metric
    time.
    """

    def __init__(
        self,
        backbone_spec: BackboneSpec,
        head_spec: HeadSpec,
        weight_provider: Optional[WeightProvider] = None,
    ) -> None:
        super().__init__()
        self.backbone_spec = backbone_spec
        self.head_spec = head_spec
        self.backbone = _build_backbone(backbone_spec, weight_provider)

        with torch.no_grad():
            probe = torch.zeros(1, 3, backbone_spec.input_height, backbone_spec.input_width)
            fmap = self.backbone(probe)
        _, c, _, w = fmap.shape
        self.feature_channels = int(c)
        self.feature_width = int(w)

        if head_spec.pooling == "position_preserving":
            self.pool: nn.Module = PositionPreservingPool()
            in_features = self.feature_channels * self.feature_width
        else:
            self.pool = GlobalAveragePool()
            in_features = self.feature_channels
        self.fc = nn.Linear(in_features, 1)

    @property
    def input_height(self) -> int:
        return int(self.backbone_spec.input_height)  # type: ignore[arg-type]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (N, 3, {self.input_height}, {TARGET_WIDTH}) input")
        if x.shape[2] != self.input_height or x.shape[3] != self.backbone_spec.input_width:
            raise ValueError(
                f"backbone {self.backbone_spec.name!r} takes "
                f"{self.input_height}x{self.backbone_spec.input_width} input, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        fmap = self.backbone(x)
        out = self.fc(self.pool(fmap))
        if self.head_spec.task == "classification":
            out = torch.sigmoid(out)
        return out


def build_model(
    backbone_spec: BackboneSpec,
    head_spec: HeadSpec,
    weight_provider: Optional[WeightProvider] = None,
) -> ScoreModel:
    return ScoreModel(backbone_spec, head_spec, weight_provider)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(model: ScoreModel, path: Union[str, Path]) -> None:
    """Single-file archive: weights plus the specs needed to rebuild the model."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "state_dict": model.state_dict(),
            "backbone_spec": asdict(model.backbone_spec),
            "head_spec": asdict(model.head_spec),
            "input_height": model.input_height,
        },
        path,
    )


def load_checkpoint(path: Union[str, Path]) -> ScoreModel:
    """Rebuild a model from its checkpoint; no pretrained download is needed."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    backbone_kwargs = dict(payload["backbone_spec"])
    backbone_kwargs["pretrained"] = False  # weights come from the checkpoint
    model = ScoreModel(BackboneSpec(**backbone_kwargs), HeadSpec(**payload["head_spec"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def predict_scores(
    model: ScoreModel,
    frames,
    batch_size: int = 64,
) -> "torch.Tensor":
    """Score a sequence of preprocessed R x 461 frames (grayscale, [0, 1]).

    Frames are replicated to 3 channels; returns a 1-D float tensor, one
    score per frame, in input order.
    """
    import numpy as np

    model.eval()
    scores = []
    with torch.no_grad():
        for start in range(0, len(frames), batch_size):
            chunk = frames[start : start + batch_size]
            batch = torch.from_numpy(np.stack(chunk).astype(np.float32)).unsqueeze(1)
            batch = batch.repeat(1, 3, 1, 1)
            scores.append(model(batch).squeeze(1))
    return torch.cat(scores) if scores else torch.empty(0)
