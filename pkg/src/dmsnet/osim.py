"""OmniPool Spatial Integrator: multi-scale pooled feature enhancement.

The block concatenates the input map with four pooled views of itself
(per-channel global max and global mean broadcast back over the map,
plus adaptive 2x2 and 4x4 averages bilinearly restored to the input
resolution), compresses the five-scale stack to half the input channel
count with a 1x1 convolution, batch norm and ReLU, and finally gates
the result with a sigmoid single-channel spatial attention map.

Conventions fixed here because the numeric oracles depend on them:
"global" pooling means pooling down to a single value per channel (not
kernel-size-1 pooling, which would be the identity), and bilinear
upsampling uses the non-corner-aligned convention
(``align_corners=False``).
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

ATTENTION_KERNEL = 7  # single-channel spatial attention conv, padding keeps H x W


def spp_branch(x, scale):
    """Adaptive-average-pool to (scale, scale), then restore H x W.

    Output shape equals input shape; a spatially constant input is a
    fixed point because both pooling and interpolation preserve
    constants.
    """
    if x.shape[-2] < scale or x.shape[-1] < scale:
        raise ShapeError(
            f"spatial dims {tuple(x.shape[-2:])} are smaller than pooling scale {scale}"
        )
    pooled = F.adaptive_avg_pool2d(x, scale)
    return F.interpolate(pooled, size=x.shape[-2:], mode="bilinear", align_corners=False)


def global_branch(x, kind):
    """Broadcast each channel's global max or mean over the whole map."""
    if kind == "max":
        value = torch.amax(x, dim=(2, 3), keepdim=True)
    elif kind == "avg":
        value = torch.mean(x, dim=(2, 3), keepdim=True)
    else:
        raise ValueError(f"kind must be 'max' or 'avg', got {kind!r}")
    return value.expand_as(x)


class OSIM(nn.Module):
    """Multi-scale pooling integrator with spatial attention gating.

    Args:
        in_channels: channels C of the incoming feature map; the output
            has ``C // 2`` channels at the same spatial size.
    """

    def __init__(self, in_channels):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = in_channels // 2
        self.compress = nn.Conv2d(5 * in_channels, self.out_channels, kernel_size=1)
        self.norm = nn.BatchNorm2d(self.out_channels)
        self.attention = nn.Conv2d(self.out_channels, 1, kernel_size=ATTENTION_KERNEL,
                                   padding=ATTENTION_KERNEL // 2)

    def compressed(self, x):
        """Pre-gate features: five-scale concat, 1x1 conv, BN, ReLU.

        Non-negative everywhere by construction; spatially constant
        whenever the input is, since every branch is then constant.
        """
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected {self.in_channels} input channels, got {x.shape[1]}"
            )
        stack = torch.cat(
            [
                x,
                global_branch(x, "max"),
                global_branch(x, "avg"),
                spp_branch(x, 2),
                spp_branch(x, 4),
            ],
            dim=1,
        )
        return F.relu(self.norm(self.compress(stack)))

    def forward(self, x):
        feats = self.compressed(x)
        gate = torch.sigmoid(self.attention(feats))
        return feats * gate


# Extension hook: alternative multi-scale blocks can be registered here
# and selected by name. Only the default block ships with the package.
FEATURE_BLOCKS = {"osim": OSIM}


def register_feature_block(name, factory):
    """Register an alternative multi-scale block constructor.

    The factory must accept ``in_channels`` and return a module mapping
    (B, C, H, W) to (B, C // 2, H, W).
    """
    FEATURE_BLOCKS[name] = factory
