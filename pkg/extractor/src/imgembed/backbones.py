"""Pretrained CNN backbones producing pooled feature vectors.

Each entry maps a name to (torchvision constructor, pretrained weights enum,
native input size). The classification head is dropped; the pooled features
keep whatever dimensionality the backbone produces (2048 for resnet50, 512
for resnet18, 576 for mobilenet_v3_small).

`weights="auto"` loads the pretrained ImageNet weights (downloads into the
torch cache on first use, so it needs network access once). `weights="none"`
builds a deterministically seeded untrained backbone, which keeps the file
contract and determinism testable offline; the embeddings are then only
useful for plumbing tests. A filesystem path loads a state dict.
"""

from __future__ import annotations

import torch
import torchvision


def _resnet(ctor, weights_enum):
    def build(weights):
        model = ctor(weights=weights)
        model.fc = torch.nn.Identity()
        return model

    return build, weights_enum


def _mobilenet_v3_small(weights):
    model = torchvision.models.mobilenet_v3_small(weights=weights)
    # keep the pooled 576-dim features, drop the classifier stack
    model.classifier = torch.nn.Identity()
    return model


BACKBONES = {
    "resnet50": (*_resnet(torchvision.models.resnet50, torchvision.models.ResNet50_Weights.IMAGENET1K_V2), 224),
    "resnet18": (*_resnet(torchvision.models.resnet18, torchvision.models.ResNet18_Weights.IMAGENET1K_V1), 224),
    "mobilenet_v3_small": (
        _mobilenet_v3_small,
        torchvision.models.MobileNet_V3_Small_Weights.IMAGENET1K_V1,
        224,
    ),
}

_UNTRAINED_SEED = 0


def load_backbone(name: str, weights: str = "auto"):
    """Build the named backbone in eval mode. Returns (model, input_size)."""
    if name not in BACKBONES:
        known = ", ".join(sorted(BACKBONES))
        raise ValueError(f"unknown backbone {name!r} (known: {known})")
    build, weights_enum, input_size = BACKBONES[name]
    if weights == "auto":
        try:
            model = build(weights_enum)
        except Exception as exc:
            raise RuntimeError(
                f"could not load pretrained weights for {name} ({exc}); pass "
                "--weights PATH for a local state dict or --weights none for "
                "a seeded untrained backbone"
            ) from exc
    elif weights == "none":
        torch.manual_seed(_UNTRAINED_SEED)
        model = build(None)
    else:
        model = build(None)
        state = torch.load(weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state, strict=False)
    model.eval()
    return model, input_size
