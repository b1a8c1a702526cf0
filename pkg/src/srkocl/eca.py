"""Efficient channel attention: gate each channel by a sigmoid of a shared
k-tap 1-D convolution over the per-channel descriptor vector.

The block holds exactly k learnable scalars regardless of the channel count;
k is derived from the channel count so that wider layers get longer-range
cross-channel interaction. There is no bottleneck and no dimensionality
reduction anywhere in the block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError, conv1d, global_avg_pool, scale_channels, sigmoid, tensor


def kernel_size_rule(channels: int, lam: float = 2.0, b: float = 1.0) -> int:
    """Map a channel count to the attention kernel size.

    k is the nearest odd integer to |log2(C)/lam + b/lam|, ties broken
    downward, floored at 1 and capped at the channel count for tiny C.
    """
    if channels < 1:
        raise ValueError(f"channels must be positive, got {channels}")
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    x = abs(math.log2(channels) / lam + b / lam)
    below = 2 * math.floor((x - 1.0) / 2.0) + 1
    k = below if (x - below) <= (below + 2 - x) else below + 2
    k = max(1, k)
    cap = channels if channels % 2 == 1 else channels - 1
    return min(k, max(1, cap))


@dataclass
class EcaBlock:
    """Channel attention parameters for one convolution's output."""

    channels: int
    kernel_size: int
    weights: Tensor
    lam: float = 2.0
    b: float = 1.0


def make_eca_block(channels: int, rng: np.random.Generator, lam: float = 2.0,
                   b: float = 1.0, dtype=np.float64, init_scale: float = 0.1) -> EcaBlock:
    """Build a block with k from the size rule and small near-zero weights,
    so gates start out close to the neutral value 0.5."""
    k = kernel_size_rule(channels, lam, b)
    weights = tensor(rng.uniform(-init_scale, init_scale, size=k), dtype=dtype,
                     requires_grad=True)
    return EcaBlock(channels=channels, kernel_size=k, weights=weights, lam=lam, b=b)


def channel_descriptor(z: Tensor) -> Tensor:
    """Per-channel spatial mean of a (H, W, C) or (N, H, W, C) feature map."""
    return global_avg_pool(z)


def eca_gate(d: Tensor, block: EcaBlock) -> Tensor:
    """Gate vector in (0,1): sigmoid of the shared 1-D conv over the descriptor."""
    if d.data.shape[-1] != block.channels:
        raise ShapeError(
            f"descriptor length {d.data.shape[-1]} != block channels {block.channels}")
    return sigmoid(conv1d(d, block.weights))


def eca_apply(z: Tensor, s: Tensor) -> Tensor:
    """Rescale every spatial position of channel i by the gate s_i."""
    return scale_channels(z, s)


def eca_forward(z: Tensor, block: EcaBlock) -> Tensor:
    """descriptor -> gate -> rescale, fully differentiable."""
    return eca_apply(z, eca_gate(channel_descriptor(z), block))
