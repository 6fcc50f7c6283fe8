"""Calibrated Analogous Semantic Fusion: cross-eye token attention.

Per pair of feature maps the stages are, in order:

1. dual pooled mixing — each side is compressed spatially by parallel
   max and average pooling paths (each behind its own 1x1 conv) and the
   two paths are blended by a learnable per-side weight in [0, 1];
2. tokenization — a shared 1x1 conv projects to the embedding width, a
   spatially constant positional compensation term is added, and the
   map is flattened row-major into tokens;
3. bidirectional multi-head cross-attention — left queries attend over
   right keys/values and vice versa;
4. adaptive residual — each side blends its attended tokens (after the
   output projection) with its own pre-attention tokens through
   learnable per-side weights in [0, 1];
5. fusion — both recalibrated token maps are reshaped back to spatial
   form and concatenated through a final 1x1 conv.

The pooled paths use the literal form ``(1/k^2) * pool_k(conv(F))`` for
both the average and the max path, i.e. the average path is divided by
k^2 twice. Pass ``literal_pool_scale=False`` for conventionally scaled
pooling. Blending weights are stored unconstrained and squashed through
a sigmoid so their effective values stay in [0, 1]; they start at 0.5.
Pooling uses floor division, so odd spatial sizes shrink as H // k.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ShapeError


def flatten_tokens(feature_map):
    """(B, E, h, w) -> (B, h*w, E), spatial positions row-major."""
    return feature_map.flatten(2).transpose(1, 2)


def unflatten_tokens(tokens, hw):
    """Inverse of :func:`flatten_tokens` for a known (h, w)."""
    h, w = hw
    batch, length, dim = tokens.shape
    if length != h * w:
        raise ShapeError(f"cannot reshape {length} tokens to a {h}x{w} grid")
    return tokens.transpose(1, 2).reshape(batch, dim, h, w)


def multi_head_cross_attention(queries_from, context, q_proj, k_proj, v_proj, heads):
    """Scaled dot-product attention of one token set over another.

    Returns the concatenated per-head attended values (no output
    projection) together with the attention weights of shape
    (B, heads, L_query, L_context); every weight row sums to 1.
    """
    if queries_from.shape[0] != context.shape[0]:
        raise ShapeError(
            f"batch mismatch: {queries_from.shape[0]} vs {context.shape[0]}"
        )
    if queries_from.shape[-1] != context.shape[-1]:
        raise ShapeError(
            f"embedding mismatch: {queries_from.shape[-1]} vs {context.shape[-1]}"
        )
    batch, len_q, dim = queries_from.shape
    len_c = context.shape[1]
    head_dim = dim // heads

    def split(tokens, length):
        return tokens.view(batch, length, heads, head_dim).transpose(1, 2)

    q = split(q_proj(queries_from), len_q)
    k = split(k_proj(context), len_c)
    v = split(v_proj(context), len_c)
    scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
    weights = torch.softmax(scores, dim=-1)
    attended = (weights @ v).transpose(1, 2).reshape(batch, len_q, dim)
    return attended, weights


class CASFM(nn.Module):
    """Cross-eye recalibration and fusion block.

    Args:
        in_channels: channels of each incoming per-eye map.
        embed_dim: token embedding width E (must divide by ``heads``).
        heads: attention head count.
        pool_k: pooling kernel/stride of the compression stage.
        literal_pool_scale: keep the extra 1/k^2 prefactor on both
            pooling paths (see module docstring).
    """

    def __init__(self, in_channels, embed_dim=256, heads=4, pool_k=2,
                 literal_pool_scale=True):
        super().__init__()
        if embed_dim % heads != 0:
            raise ConfigError(f"embed_dim {embed_dim} is not divisible by heads {heads}")
        self.in_channels = in_channels
        self.embed_dim = embed_dim
        self.heads = heads
        self.pool_k = pool_k
        self.literal_pool_scale = literal_pool_scale

        self.pre_avg = nn.ModuleDict({
            side: nn.Conv2d(in_channels, in_channels, kernel_size=1)
            for side in ("left", "right")
        })
        self.pre_max = nn.ModuleDict({
            side: nn.Conv2d(in_channels, in_channels, kernel_size=1)
            for side in ("left", "right")
        })
        # raw scalars; sigmoid gives the effective values, 0 -> 0.5
        self.mix_raw = nn.ParameterDict({
            side: nn.Parameter(torch.zeros(())) for side in ("left", "right")
        })
        self.alpha_raw = nn.ParameterDict({
            side: nn.Parameter(torch.zeros(())) for side in ("left", "right")
        })
        self.beta_raw = nn.ParameterDict({
            side: nn.Parameter(torch.zeros(())) for side in ("left", "right")
        })

        self.token_conv = nn.Conv2d(in_channels, embed_dim, kernel_size=1)
        self.pos_embed = nn.Parameter(torch.randn(embed_dim, 1, 1) * 0.02)
        self.pos_scale = nn.Parameter(torch.ones(embed_dim))

        self.q_proj = nn.Linear(embed_dim, embed_dim)
        # a key bias shifts every score in a softmax row equally and
        # therefore cancels; keep the projection bias-free
        self.k_proj = nn.Linear(embed_dim, embed_dim, bias=False)
        self.v_proj = nn.Linear(embed_dim, embed_dim)
        self.out_proj = nn.Linear(embed_dim, embed_dim)

        self.fuse = nn.Conv2d(2 * embed_dim, embed_dim, kernel_size=1)

    def mix_weight(self, side):
        return torch.sigmoid(self.mix_raw[side])

    def residual_weights(self, side):
        return torch.sigmoid(self.alpha_raw[side]), torch.sigmoid(self.beta_raw[side])

    def dual_pool_mix(self, feature_map, side):
        """Blend the max and average pooling paths for one side."""
        k = self.pool_k
        if feature_map.shape[-2] < k or feature_map.shape[-1] < k:
            raise ShapeError(
                f"spatial dims {tuple(feature_map.shape[-2:])} are smaller than pool size {k}"
            )
        avg_path = F.avg_pool2d(self.pre_avg[side](feature_map), k)
        max_path = F.max_pool2d(self.pre_max[side](feature_map), k)
        if self.literal_pool_scale:
            avg_path = avg_path / (k * k)
            max_path = max_path / (k * k)
        lam = self.mix_weight(side)
        return lam * max_path + (1.0 - lam) * avg_path

    def tokenize_with_pos(self, feature_map):
        """Project to the embedding width, add the positional term, flatten.

        The positional embedding has 1x1 spatial extent, so its bilinear
        expansion is spatially constant: every token receives the same
        per-channel offset ``pos_embed * pos_scale``.
        """
        emb = self.token_conv(feature_map)
        pos = F.interpolate(self.pos_embed.unsqueeze(0), size=emb.shape[-2:],
                            mode="bilinear", align_corners=False)
        emb = emb + pos * self.pos_scale.view(1, -1, 1, 1)
        return flatten_tokens(emb)

    def cross_attend(self, tokens_left, tokens_right, return_weights=False):
        """Bidirectional attention: each side attends over the other.

        The right output is driven by left queries over right
        keys/values, and symmetrically for the left output.
        """
        z_right, w_right = multi_head_cross_attention(
            tokens_left, tokens_right, self.q_proj, self.k_proj, self.v_proj, self.heads)
        z_left, w_left = multi_head_cross_attention(
            tokens_right, tokens_left, self.q_proj, self.k_proj, self.v_proj, self.heads)
        if return_weights:
            return (z_left, z_right), (w_left, w_right)
        return z_left, z_right

    def adaptive_residual(self, attended, tokens, side):
        """alpha * out_proj(attended) + beta * tokens for the given side."""
        alpha, beta = self.residual_weights(side)
        return alpha * self.out_proj(attended) + beta * tokens

    def forward(self, feat_left, feat_right):
        """Returns (fused map, recalibrated left map, recalibrated right map)."""
        if feat_left.shape != feat_right.shape:
            raise ShapeError(
                f"paired maps must share shape, got {tuple(feat_left.shape)} "
                f"vs {tuple(feat_right.shape)}"
            )
        pooled_left = self.dual_pool_mix(feat_left, "left")
        pooled_right = self.dual_pool_mix(feat_right, "right")
        hw = pooled_left.shape[-2:]

        tokens_left = self.tokenize_with_pos(pooled_left)
        tokens_right = self.tokenize_with_pos(pooled_right)
        z_left, z_right = self.cross_attend(tokens_left, tokens_right)
        recal_left = self.adaptive_residual(z_left, tokens_left, "left")
        recal_right = self.adaptive_residual(z_right, tokens_right, "right")

        map_left = unflatten_tokens(recal_left, hw)
        map_right = unflatten_tokens(recal_right, hw)
        fused = self.fuse(torch.cat([map_left, map_right], dim=1))
        return fused, map_left, map_right
