"""Weight-sharing siamese feature extraction.

One backbone module serves both images of a pair: the left and right
paths literally share a single parameter collection, so the pair costs
no more parameters than a single network and one optimizer update
moves both paths together.
"""

import torch
import torch.nn as nn
from torchvision import models

from .errors import ConfigError, RegistryError, ShapeError, WeightLoadError


class Backbone(nn.Module):
    """Feature extractor with the stock classification head removed.

    Attributes:
        name: registry identifier of the architecture.
        out_channels: channel count of the final feature map.
        reduction: spatial downsampling factor from input to feature map.
    """

    def __init__(self, name, body, out_channels, reduction):
        super().__init__()
        self.name = name
        self.body = body
        self.out_channels = out_channels
        self.reduction = reduction

    def spatial_dims(self, input_resolution):
        """Output (H, W) for a square input of the given side length."""
        side = input_resolution // self.reduction
        return (side, side)

    def forward(self, x):
        return self.body(x)


class _ViTBody(nn.Module):
    """Adapts a vision transformer to emit a spatial feature map.

    The class token is dropped and the patch tokens are reshaped back
    to their (H/16, W/16) grid with the embedding dim as channels, so
    downstream blocks that expect convolutional maps keep working.
    """

    def __init__(self, vit):
        super().__init__()
        self.vit = vit

    def forward(self, x):
        v = self.vit
        x = v.conv_proj(x)
        h, w = x.shape[2], x.shape[3]
        x = x.flatten(2).transpose(1, 2)
        cls = v.class_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls, x], dim=1)
        x = v.encoder(x)
        x = x[:, 1:]
        return x.transpose(1, 2).reshape(x.shape[0], -1, h, w)


def _resnet_family(ctor):
    def build(pretrained, input_resolution):
        weights = "DEFAULT" if pretrained else None
        net = ctor(weights=weights)
        body = nn.Sequential(*list(net.children())[:-2])
        return body, 2048, 32

    return build


def _build_vit(pretrained, input_resolution):
    if input_resolution % 16 != 0:
        raise ConfigError(
            f"input_resolution {input_resolution} is not divisible by the ViT patch size 16"
        )
    weights = "DEFAULT" if pretrained else None
    net = models.vit_b_16(weights=weights, image_size=input_resolution)
    return _ViTBody(net), 768, 16


# ResNeXt entry is the 50-layer 32x4d variant (see README).
BACKBONES = {
    "resnet50": _resnet_family(models.resnet50),
    "resnet101": _resnet_family(models.resnet101),
    "resnet152": _resnet_family(models.resnet152),
    "resnext": _resnet_family(models.resnext50_32x4d),
    "vit": _build_vit,
}


def build_backbone(name, pretrained=False, input_resolution=224, weights_path=None):
    """Construct a headless feature extractor from the registry.

    Args:
        name: one of the keys in ``BACKBONES``.
        pretrained: load stock pretrained weights (a runtime download)
            unless ``weights_path`` points at a local state dict.
        input_resolution: square input side length; only the ViT entry
            needs it at build time.
        weights_path: optional local weight file to load instead of the
            stock download.

    Raises:
        RegistryError: unknown ``name``.
        WeightLoadError: ``weights_path`` is missing or unreadable.
    """
    if name not in BACKBONES:
        known = ", ".join(sorted(BACKBONES))
        raise RegistryError(f"unknown backbone '{name}' (available: {known})")
    body, out_channels, reduction = BACKBONES[name](pretrained and weights_path is None,
                                                    input_resolution)
    backbone = Backbone(name, body, out_channels, reduction)
    if weights_path is not None:
        try:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            backbone.load_state_dict(state)
        except (OSError, RuntimeError, KeyError) as exc:
            raise WeightLoadError(f"cannot load backbone weights from {weights_path}: {exc}") from exc
    return backbone


def extract_pair(backbone, left, right):
    """Run both images of a pair through the shared extractor.

    Both outputs come from the same parameter collection, so swapping
    the inputs swaps the outputs exactly.
    """
    if left.shape != right.shape:
        raise ShapeError(
            f"paired inputs must share shape, got {tuple(left.shape)} vs {tuple(right.shape)}"
        )
    return backbone(left), backbone(right)
