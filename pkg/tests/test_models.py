from __future__ import annotations

import pytest
import torch

from neolus.models import (
    BACKBONE_INPUT_HEIGHTS,
    BackboneSpec,
    HeadSpec,
    ModelConfigError,
    build_model,
    load_checkpoint,
    parameter_count,
    predict_scores,
    save_checkpoint,
)

import numpy as np


def tiny(pooling="global_average", task="classification"):
    return build_model(BackboneSpec("tiny", pretrained=False), HeadSpec(pooling, task))


def test_backbone_spec_validation():
    with pytest.raises(ModelConfigError, match="unknown backbone"):
        BackboneSpec("vgg16")
    with pytest.raises(ModelConfigError, match="input height"):
        BackboneSpec("efficientnet_b1", input_height=224)
    assert BackboneSpec("efficientnet_b2").input_height == 260
    assert BackboneSpec("resnet34").input_height == 224


def test_head_spec_validation():
    with pytest.raises(ModelConfigError):
        HeadSpec(pooling="max")
    with pytest.raises(ModelConfigError):
        HeadSpec(task="ranking")


def test_classification_output_shape_and_range():
    model = build_model(
        BackboneSpec("resnet34", pretrained=False),
        HeadSpec("global_average", "classification"),
    )
    x = torch.rand(2, 3, 224, 461)
    with torch.no_grad():
        out = model(x)
    assert out.shape == (2, 1)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_position_preserving_head_dimension_probed():
    model = build_model(
        BackboneSpec("resnet34", pretrained=False),
        HeadSpec("position_preserving", "classification"),
    )
    assert model.fc.in_features == model.feature_channels * model.feature_width
    assert model.feature_width > 1
    gap = build_model(
        BackboneSpec("resnet34", pretrained=False),
        HeadSpec("global_average", "classification"),
    )
    assert parameter_count(model) > parameter_count(gap)


def test_parameter_monotonicity_every_backbone():
    for name in BACKBONE_INPUT_HEIGHTS:
        pos = build_model(BackboneSpec(name, pretrained=False), HeadSpec("position_preserving", "regression"))
        gap = build_model(BackboneSpec(name, pretrained=False), HeadSpec("global_average", "regression"))
        assert parameter_count(pos) > parameter_count(gap), name


def test_input_height_enforced():
    model = build_model(
        BackboneSpec("efficientnet_b1", pretrained=False),
        HeadSpec("global_average", "classification"),
    )
    with pytest.raises(ValueError, match="240"):
        model(torch.rand(1, 3, 224, 461))
    out = model(torch.rand(1, 3, 240, 461))
    assert out.shape == (1, 1)


def test_regression_output_unsquashed():
    torch.manual_seed(0)
    model = tiny(task="regression")
    out = model(torch.rand(4, 3, 224, 461))
    assert out.shape == (4, 1)  # raw linear output, clamping happens at metric time


def test_pretrained_tiny_rejected():
    with pytest.raises(ModelConfigError, match="tiny"):
        build_model(BackboneSpec("tiny", pretrained=True), HeadSpec())


def test_pretrained_provider_none_rejected():
    with pytest.raises(ModelConfigError, match="weight provider"):
        build_model(
            BackboneSpec("resnet18", pretrained=True),
            HeadSpec(),
            weight_provider=lambda name: None,
        )


def test_pretrained_via_custom_provider():
    import torchvision.models as tvm

    reference = tvm.resnet18(weights=None)
    provider = lambda name: reference.state_dict()
    model = build_model(BackboneSpec("resnet18", pretrained=True), HeadSpec(), weight_provider=provider)
    got = model.backbone.net.conv1.weight
    assert torch.equal(got, reference.conv1.weight)


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(1)
    model = tiny(pooling="position_preserving")
    path = tmp_path / "ckpt.pt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.backbone_spec.name == "tiny"
    assert loaded.head_spec.pooling == "position_preserving"
    assert loaded.input_height == 224
    x = torch.rand(2, 3, 224, 461)
    model.eval()
    assert torch.allclose(model(x), loaded(x))


def test_predict_scores_order_and_shape():
    torch.manual_seed(2)
    model = tiny()
    frames = [np.random.default_rng(i).random((224, 461)).astype(np.float32) for i in range(5)]
    scores = predict_scores(model, frames, batch_size=2)
    assert scores.shape == (5,)
    again = predict_scores(model, frames, batch_size=3)
    assert torch.allclose(scores, again, atol=1e-6)
