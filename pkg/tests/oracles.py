"""Independent straight-line reference implementations.

Everything here is written with plain numpy loops against the
documented formulas, deliberately avoiding the torch code paths it
checks. Conventions mirrored from the package docs: adaptive pooling
partitions with floor/ceil bounds, bilinear resizing is
non-corner-aligned with the source index clamped at zero, fixed-kernel
pooling floors away remainders.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# pooling and interpolation


def adaptive_avg_pool_oracle(plane, out_h, out_w):
    """Mean over the floor/ceil partition cells of a 2D plane."""
    in_h, in_w = plane.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        y0 = (i * in_h) // out_h
        y1 = -(-((i + 1) * in_h) // out_h)  # ceil division
        for j in range(out_w):
            x0 = (j * in_w) // out_w
            x1 = -(-((j + 1) * in_w) // out_w)
            out[i, j] = plane[y0:y1, x0:x1].mean()
    return out


def bilinear_resize_oracle(plane, out_h, out_w):
    """Non-corner-aligned bilinear resize of a 2D plane.

    Source coordinate (i + 0.5) * in/out - 0.5, clamped below at 0;
    the upper neighbour index is clamped to the last row/column.
    """
    in_h, in_w = plane.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        sy = max((i + 0.5) * in_h / out_h - 0.5, 0.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, in_h - 1)
        wy = sy - y0
        for j in range(out_w):
            sx = max((j + 0.5) * in_w / out_w - 0.5, 0.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, in_w - 1)
            wx = sx - x0
            out[i, j] = ((1 - wy) * (1 - wx) * plane[y0, x0]
                         + (1 - wy) * wx * plane[y0, x1]
                         + wy * (1 - wx) * plane[y1, x0]
                         + wy * wx * plane[y1, x1])
    return out


def spp_oracle(x, scale):
    """Adaptive average pool to (scale, scale), bilinear restore, per map."""
    batch, channels, height, width = x.shape
    out = np.empty_like(x, dtype=np.float64)
    for b in range(batch):
        for c in range(channels):
            pooled = adaptive_avg_pool_oracle(x[b, c], scale, scale)
            out[b, c] = bilinear_resize_oracle(pooled, height, width)
    return out


def fixed_pool_oracle(x, k, kind):
    """Kernel-k stride-k pooling with floor division (remainder dropped)."""
    batch, channels, height, width = x.shape
    out_h, out_w = height // k, width // k
    out = np.empty((batch, channels, out_h, out_w), dtype=np.float64)
    for b in range(batch):
        for c in range(channels):
            for i in range(out_h):
                for j in range(out_w):
                    window = x[b, c, i * k:(i + 1) * k, j * k:(j + 1) * k]
                    out[b, c, i, j] = window.max() if kind == "max" else window.mean()
    return out


# ---------------------------------------------------------------------------
# small layer primitives


def conv2d_oracle(x, weight, bias, padding=0):
    """Naive zero-padded cross-correlation, NCHW x (out, in, kh, kw)."""
    batch, in_c, height, width = x.shape
    out_c, _, kh, kw = weight.shape
    padded = np.zeros((batch, in_c, height + 2 * padding, width + 2 * padding))
    padded[:, :, padding:padding + height, padding:padding + width] = x
    out = np.empty((batch, out_c, height, width), dtype=np.float64)
    for b in range(batch):
        for o in range(out_c):
            for i in range(height):
                for j in range(width):
                    patch = padded[b, :, i:i + kh, j:j + kw]
                    out[b, o, i, j] = (patch * weight[o]).sum() + bias[o]
    return out


def batchnorm_eval_oracle(x, running_mean, running_var, gamma, beta, eps=1e-5):
    """Per-channel affine normalization with frozen statistics."""
    out = np.empty_like(x, dtype=np.float64)
    for c in range(x.shape[1]):
        scale = gamma[c] / math.sqrt(running_var[c] + eps)
        out[:, c] = (x[:, c] - running_mean[c]) * scale + beta[c]
    return out


def sigmoid_oracle(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def linear_oracle(tokens, weight, bias):
    """(B, L, E) x (out, in) + bias, one token at a time."""
    batch, length, _ = tokens.shape
    out = np.empty((batch, length, weight.shape[0]), dtype=np.float64)
    for b in range(batch):
        for t in range(length):
            out[b, t] = weight @ tokens[b, t] + bias
    return out


# ---------------------------------------------------------------------------
# multi-scale pooled attention block


def osim_forward_oracle(x, params):
    """Straight-line recomputation of the multi-scale block.

    params: dict with conv_w, conv_b (1x1 compression), bn running
    mean/var and gamma/beta, attn_w, attn_b (7x7 single output channel).
    """
    gmp = np.repeat(np.repeat(x.max(axis=(2, 3), keepdims=True), x.shape[2], 2),
                    x.shape[3], 3)
    gap = np.repeat(np.repeat(x.mean(axis=(2, 3), keepdims=True), x.shape[2], 2),
                    x.shape[3], 3)
    stack = np.concatenate([x, gmp, gap, spp_oracle(x, 2), spp_oracle(x, 4)], axis=1)
    compressed = conv2d_oracle(stack, params["conv_w"], params["conv_b"])
    normed = batchnorm_eval_oracle(compressed, params["bn_mean"], params["bn_var"],
                                   params["bn_gamma"], params["bn_beta"])
    pre_gate = np.maximum(normed, 0.0)
    gate = sigmoid_oracle(conv2d_oracle(pre_gate, params["attn_w"], params["attn_b"],
                                        padding=params["attn_w"].shape[-1] // 2))
    return pre_gate * gate


# ---------------------------------------------------------------------------
# attention


def softmax_oracle(row):
    shifted = np.exp(row - row.max())
    return shifted / shifted.sum()


def cross_attention_oracle(query_tokens, context_tokens, params, heads):
    """Multi-head attention of one token set over another.

    params: dict with q_w/q_b/k_w/k_b/v_w/v_b. Returns the concatenated
    per-head attended values, no output projection.
    """
    q = linear_oracle(query_tokens, params["q_w"], params["q_b"])
    k = linear_oracle(context_tokens, params["k_w"], params["k_b"])
    v = linear_oracle(context_tokens, params["v_w"], params["v_b"])
    batch, len_q, dim = q.shape
    len_c = k.shape[1]
    head_dim = dim // heads
    out = np.empty((batch, len_q, dim), dtype=np.float64)
    for b in range(batch):
        for h in range(heads):
            sl = slice(h * head_dim, (h + 1) * head_dim)
            for i in range(len_q):
                scores = np.array([
                    q[b, i, sl] @ k[b, j, sl] / math.sqrt(head_dim)
                    for j in range(len_c)
                ])
                weights = softmax_oracle(scores)
                out[b, i, sl] = sum(weights[j] * v[b, j, sl] for j in range(len_c))
    return out


def flatten_oracle(feature_map):
    """(B, E, h, w) -> (B, h*w, E), row-major spatial order."""
    batch, dim, height, width = feature_map.shape
    out = np.empty((batch, height * width, dim), dtype=np.float64)
    for b in range(batch):
        for i in range(height):
            for j in range(width):
                out[b, i * width + j] = feature_map[b, :, i, j]
    return out


def unflatten_oracle(tokens, height, width):
    batch, _, dim = tokens.shape
    out = np.empty((batch, dim, height, width), dtype=np.float64)
    for b in range(batch):
        for i in range(height):
            for j in range(width):
                out[b, :, i, j] = tokens[b, i * width + j]
    return out


def casfm_forward_oracle(feat_left, feat_right, params, heads, k=2,
                         literal_pool_scale=True):
    """End-to-end recomputation of the cross-eye fusion block.

    params: per-side pre_avg_w/b + pre_max_w/b + lam/alpha/beta
    (effective values), shared token_w/b, pos (E,), pos_scale (E,),
    attention projections, out_w/b, fuse_w/b.
    """
    def pooled_mix(feat, side):
        avg_in = conv2d_oracle(feat, params[f"pre_avg_w_{side}"],
                               params[f"pre_avg_b_{side}"])
        max_in = conv2d_oracle(feat, params[f"pre_max_w_{side}"],
                               params[f"pre_max_b_{side}"])
        avg_path = fixed_pool_oracle(avg_in, k, "avg")
        max_path = fixed_pool_oracle(max_in, k, "max")
        if literal_pool_scale:
            avg_path = avg_path / (k * k)
            max_path = max_path / (k * k)
        lam = params[f"lam_{side}"]
        return lam * max_path + (1 - lam) * avg_path

    def tokenize(feat):
        emb = conv2d_oracle(feat, params["token_w"], params["token_b"])
        emb = emb + (params["pos"] * params["pos_scale"])[None, :, None, None]
        return flatten_oracle(emb)

    pooled_left = pooled_mix(feat_left, "left")
    pooled_right = pooled_mix(feat_right, "right")
    height, width = pooled_left.shape[2:]
    tokens_left = tokenize(pooled_left)
    tokens_right = tokenize(pooled_right)

    z_right = cross_attention_oracle(tokens_left, tokens_right, params, heads)
    z_left = cross_attention_oracle(tokens_right, tokens_left, params, heads)

    def residual(z, tokens, side):
        projected = linear_oracle(z, params["out_w"], params["out_b"])
        return params[f"alpha_{side}"] * projected + params[f"beta_{side}"] * tokens

    map_left = unflatten_oracle(residual(z_left, tokens_left, "left"), height, width)
    map_right = unflatten_oracle(residual(z_right, tokens_right, "right"), height, width)
    fused = conv2d_oracle(np.concatenate([map_left, map_right], axis=1),
                          params["fuse_w"], params["fuse_b"])
    return fused, map_left, map_right


def cafm_oracle(feat_a, feat_b, params, heads):
    """Bidirectional cross-attention, output-projected, averaged."""
    height, width = feat_a.shape[2:]
    tokens_a = flatten_oracle(feat_a)
    tokens_b = flatten_oracle(feat_b)
    z_b = cross_attention_oracle(tokens_a, tokens_b, params, heads)
    z_a = cross_attention_oracle(tokens_b, tokens_a, params, heads)
    stream_a = unflatten_oracle(linear_oracle(z_a, params["out_w"], params["out_b"]),
                                height, width)
    stream_b = unflatten_oracle(linear_oracle(z_b, params["out_w"], params["out_b"]),
                                height, width)
    return (stream_a + stream_b) / 2


# ---------------------------------------------------------------------------
# metrics


def kappa_counting_oracle(preds, truths):
    """Chance-corrected agreement straight from the label sequences."""
    preds = list(preds)
    truths = list(truths)
    n = len(preds)
    p_observed = sum(p == t for p, t in zip(preds, truths)) / n
    classes = set(preds) | set(truths)
    p_expected = sum(
        (truths.count(c) / n) * (preds.count(c) / n) for c in classes
    )
    if p_expected == 1.0:
        return 1.0 if p_observed == 1.0 else 0.0
    return (p_observed - p_expected) / (1.0 - p_expected)


def auc_pairwise_oracle(scores, positives):
    """Exhaustive positive/negative pair comparison, ties worth 0.5."""
    pos = [s for s, y in zip(scores, positives) if y]
    neg = [s for s, y in zip(scores, positives) if not y]
    if not pos or not neg:
        return None
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def auc_trapezoid_oracle(scores, positives):
    """Trapezoidal area under the ROC curve over unique thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = positives.sum()
    n_neg = (~positives).sum()
    if n_pos == 0 or n_neg == 0:
        return None
    points = [(0.0, 0.0)]
    tp = fp = 0
    order = np.argsort(-scores, kind="stable")
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and scores[order[j]] == scores[order[i]]:
            tp += bool(positives[order[j]])
            fp += not positives[order[j]]
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    xs, ys = zip(*points)
    return float(np.trapezoid(ys, xs))
