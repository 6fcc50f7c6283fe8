"""Dual-synergy cross-modal fusion: contrastive and integrative paths.

Two parallel alignment modules consume the recalibrated per-eye maps.
CCAM emphasizes left/right asymmetry through a signed difference
branch; CIAM aggregates symmetric pathology through a cosine-gated mean
branch with a residual connection. Both are guided by their own CAFM, a
bidirectional cross-attention primitive, and refine the combined signal
with a densely connected convolutional path.

The concrete dataflow below (signed difference branch, cosine-gated
mean branch, two dense blocks of two layers each, 1x1 transition) is
this implementation's design; the cosine gate uses an epsilon-guarded
denominator so all-zero feature columns yield similarity 0 rather than
NaN.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .casfm import flatten_tokens, multi_head_cross_attention, unflatten_tokens
from .errors import ConfigError, ShapeError

COSINE_EPS = 1e-8


class CAFM(nn.Module):
    """Cross-Attention Fusion Module.

    Tokenizes two equally shaped maps row-major, attends each over the
    other with shared projections, output-projects both attended
    streams, and averages them back into one spatial map. Shared
    projections make the result invariant to swapping the two inputs.
    """

    def __init__(self, channels, heads=4):
        super().__init__()
        if channels % heads != 0:
            raise ConfigError(f"channels {channels} is not divisible by heads {heads}")
        self.heads = heads
        self.q_proj = nn.Linear(channels, channels)
        # bias-free keys: a key bias cancels inside the row softmax
        self.k_proj = nn.Linear(channels, channels, bias=False)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)

    def attend_streams(self, feat_a, feat_b):
        """Both output-projected attended streams as spatial maps."""
        hw = feat_a.shape[-2:]
        tokens_a = flatten_tokens(feat_a)
        tokens_b = flatten_tokens(feat_b)
        z_b, _ = multi_head_cross_attention(
            tokens_a, tokens_b, self.q_proj, self.k_proj, self.v_proj, self.heads)
        z_a, _ = multi_head_cross_attention(
            tokens_b, tokens_a, self.q_proj, self.k_proj, self.v_proj, self.heads)
        stream_a = unflatten_tokens(self.out_proj(z_a), hw)
        stream_b = unflatten_tokens(self.out_proj(z_b), hw)
        return stream_a, stream_b

    def forward(self, feat_a, feat_b):
        if feat_a.shape != feat_b.shape:
            raise ShapeError(
                f"paired maps must share shape, got {tuple(feat_a.shape)} "
                f"vs {tuple(feat_b.shape)}"
            )
        stream_a, stream_b = self.attend_streams(feat_a, feat_b)
        return (stream_a + stream_b) / 2


class ConcatFuse(nn.Module):
    """Concat + 1x1 conv; the stand-in used when CAFM (or a whole
    alignment module) is ablated."""

    def __init__(self, channels):
        super().__init__()
        self.fuse = nn.Conv2d(2 * channels, channels, kernel_size=1)

    def forward(self, feat_a, feat_b):
        if feat_a.shape != feat_b.shape:
            raise ShapeError(
                f"paired maps must share shape, got {tuple(feat_a.shape)} "
                f"vs {tuple(feat_b.shape)}"
            )
        return self.fuse(torch.cat([feat_a, feat_b], dim=1))


class DenseBlock(nn.Module):
    """Dense connectivity: layer i consumes the block input concatenated
    with all previous layer outputs, so its input width is
    ``in_channels + i * growth``."""

    def __init__(self, in_channels, growth=32, layers=2):
        super().__init__()
        self.layers = nn.ModuleList()
        for i in range(layers):
            self.layers.append(nn.Sequential(
                nn.Conv2d(in_channels + i * growth, growth, kernel_size=3, padding=1),
                nn.BatchNorm2d(growth),
                nn.ReLU(inplace=True),
            ))
        self.out_channels = in_channels + layers * growth

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(layer(torch.cat(feats, dim=1)))
        return torch.cat(feats, dim=1)


class _AlignmentBase(nn.Module):
    """Shared guidance + dense-path plumbing of the two alignment modules."""

    def __init__(self, channels, heads=4, growth=32, use_cafm=True):
        super().__init__()
        self.channels = channels
        self.guide = CAFM(channels, heads) if use_cafm else ConcatFuse(channels)
        self.dense1 = DenseBlock(2 * channels, growth)
        self.dense2 = DenseBlock(self.dense1.out_channels, growth)
        self.transition = nn.Conv2d(self.dense2.out_channels, channels, kernel_size=1)

    def _check(self, left, right):
        if left.shape != right.shape:
            raise ShapeError(
                f"paired maps must share shape, got {tuple(left.shape)} "
                f"vs {tuple(right.shape)}"
            )

    def _refine(self, primary, guidance):
        return self.transition(self.dense2(self.dense1(
            torch.cat([primary, guidance], dim=1))))


class CCAM(_AlignmentBase):
    """Contrastive alignment: emphasizes cross-eye feature discrepancy.

    The primary branch is the signed difference left - right (so
    swapping the inputs negates it exactly); no residual is added.
    """

    def contrast_map(self, left, right):
        return left - right

    def forward(self, left, right):
        self._check(left, right)
        difference = self.contrast_map(left, right)
        guidance = self.guide(left, right)
        return self._refine(difference, guidance)


class CIAM(_AlignmentBase):
    """Integrative alignment: aggregates symmetric, correlated signal.

    The primary branch gates the mean map by the per-site cosine
    similarity of the two feature columns, and the mean map is added
    back as a residual so the original information is preserved. The
    whole computation is symmetric under swapping the inputs.
    """

    def similarity_gate(self, left, right):
        """Per-site channel cosine similarity in [-1, 1]; 0 where either
        column is the zero vector."""
        return F.cosine_similarity(left, right, dim=1, eps=COSINE_EPS).unsqueeze(1)

    def forward(self, left, right):
        self._check(left, right)
        mean_map = (left + right) / 2
        gated = self.similarity_gate(left, right) * mean_map
        guidance = self.guide(left, right)
        return self._refine(gated, guidance) + mean_map
