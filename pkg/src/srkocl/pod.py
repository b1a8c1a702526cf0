"""Pooled-output distillation: stage feature maps are collapsed into
width/height marginal means and the live model is penalized for L2 drift of
those statistics from a frozen earlier snapshot.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor, ShapeError, add, concat, mean_axis, mul, no_grad, scale, sub, sum_all


def pod_embed(z: Tensor) -> Tensor:
    """Stack width-pooled and height-pooled slices of a feature map.

    For z of shape (H, W, C) the result is (H+W, C): the first H rows are
    means over the width axis, the last W rows are means over the height
    axis. A leading batch axis is carried through: (N, H, W, C) -> (N, H+W, C).
    """
    if z.data.ndim == 3:
        w_axis, h_axis, row_axis = 1, 0, 0
    elif z.data.ndim == 4:
        w_axis, h_axis, row_axis = 2, 1, 1
    else:
        raise ShapeError(f"pod_embed input must be 3-d or 4-d, got {z.data.shape}")
    width_pooled = mean_axis(z, w_axis)   # (..., H, C)
    height_pooled = mean_axis(z, h_axis)  # (..., W, C)
    return concat(width_pooled, height_pooled, axis=row_axis)


def pod_loss(current: Sequence[Tensor], previous: Sequence[Tensor]) -> Tensor:
    """Mean over stages of the squared L2 embedding drift.

    `previous` is treated as frozen: its embeddings are computed without
    graph recording, so no gradient can reach the old model. Batched stage
    maps contribute their per-example drift averaged over the batch.
    """
    if len(current) == 0 or len(current) != len(previous):
        raise ShapeError(
            f"stage count mismatch: {len(current)} current vs {len(previous)} previous")
    total: Tensor | None = None
    for cur, prev in zip(current, previous):
        if cur.data.shape != prev.data.shape:
            raise ShapeError(
                f"stage shape mismatch: {cur.data.shape} vs {prev.data.shape}")
        emb_cur = pod_embed(cur)
        with no_grad():
            emb_prev = pod_embed(Tensor(prev.data))
        diff = sub(emb_cur, emb_prev)
        sq = sum_all(mul(diff, diff))
        if cur.data.ndim == 4:
            sq = scale(sq, 1.0 / cur.data.shape[0])
        total = sq if total is None else add(total, sq)
    return scale(total, 1.0 / len(current))
