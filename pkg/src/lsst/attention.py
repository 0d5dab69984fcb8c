"""Separate spectral self-attention.

Channels are split into G contiguous groups and attention runs over the
spectral axis inside each group: with tokens x_g (HW, C_g) and square
projections W_q/W_k/W_v, the attention matrix is

    A = softmax_rows((Q^T K) / sqrt(C_g))            (C_g x C_g)

so row i of A is the weight distribution of output channel i over input
channels, and output channel i is sum_j A[i, j] * V[:, j].  Cost is
linear in HW and in C (2 * HW * C_g * C multiply-adds per phase for the
two attention matmuls), instead of quadratic in either.

Two phases are run back to back: a local phase on the raw channel order,
then, after the spectrum-shuffle permutation interleaves the groups, a
second phase whose groups span the whole spectrum (non-local).  The
inverse permutation restores the original channel order afterwards.
"""

import math
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import Tensor, ops


def _check_groups(C, G):
    if G < 1 or C % G != 0:
        raise ConfigError(f"channel count {C} not divisible by groups {G}")
    return C // G


def shuffle_permutation(C, G):
    """Channel permutation of the spectrum shuffle.

    Output position j*G + h takes input channel h*C_g + j (reshape the
    channel axis to (G, C_g), transpose, flatten).
    """
    Cg = _check_groups(C, G)
    return np.arange(C).reshape(G, Cg).T.reshape(-1)


def spectrum_group(tape, x, G):
    """Split channels into G contiguous groups of width C/G.

    Concatenating the groups back in order reproduces the input exactly.
    """
    Cg = _check_groups(x.shape[-1], G)
    return [ops.slice_channels(tape, x, g * Cg, (g + 1) * Cg)
            for g in range(G)]


def spectrum_shuffle(tape, x, G):
    """Interleave the channel groups (pure permutation, values untouched)."""
    return ops.permute_channels(tape, x, shuffle_permutation(x.shape[-1], G))


def spectrum_reverse(tape, x, G):
    """Exact inverse of :func:`spectrum_shuffle` with the same G."""
    perm = shuffle_permutation(x.shape[-1], G)
    return ops.permute_channels(tape, x, np.argsort(perm))


@dataclass
class AttentionWeights:
    """Square q/k/v projections of one attention phase, shared across groups."""

    wq: Tensor
    wk: Tensor
    wv: Tensor

    @classmethod
    def create(cls, Cg, rng):
        bound = math.sqrt(6.0 / (Cg + Cg))
        def w():
            return Tensor(rng.uniform(-bound, bound, size=(Cg, Cg)))
        return cls(w(), w(), w())

    def named(self, prefix):
        return {f"{prefix}.wq": self.wq,
                f"{prefix}.wk": self.wk,
                f"{prefix}.wv": self.wv}


def _tag(tape, name):
    if tape is not None and tape.counter is not None:
        return tape.counter.tagged(name)
    return nullcontext()


def grouped_spectral_attention(tape, x_g, weights):
    """Spectral self-attention inside one channel group.

    x_g: (HW, C_g).  Rows of the attention matrix index output channels
    and sum to 1.
    """
    Cg = x_g.shape[-1]
    if weights.wq.shape != (Cg, Cg):
        raise ConfigError(f"projection shape {weights.wq.shape} does not "
                          f"match group width {Cg}")
    with _tag(tape, "attention_proj"):
        q = ops.matmul(tape, x_g, weights.wq)
        k = ops.matmul(tape, x_g, weights.wk)
        v = ops.matmul(tape, x_g, weights.wv)
    with _tag(tape, "attention_core"):
        logits = ops.matmul(tape, ops.transpose(tape, q), k)
        logits = ops.scale(tape, logits, 1.0 / math.sqrt(Cg))
        a = ops.softmax_rows(tape, logits)
        out = ops.matmul(tape, v, ops.transpose(tape, a))
    return out


def local_spectral_attention(tape, x, G, weights):
    """Grouped attention applied per group and re-concatenated.

    Output channel c depends only on input channels in c's group, so the
    channel dependency structure is exactly block-diagonal.
    """
    parts = [grouped_spectral_attention(tape, xg, weights)
             for xg in spectrum_group(tape, x, G)]
    return ops.concat_channels(tape, parts)


def _flatten_tokens(tape, x):
    if x.ndim == 2:
        return x, None
    if x.ndim == 3:
        H, W, C = x.shape
        return ops.reshape(tape, x, (H * W, C)), (H, W, C)
    raise ConfigError(f"feature map must be (HW, C) or (H, W, C), "
                      f"got {x.shape}")


def ss_msa(tape, x, G, local_weights, nonlocal_weights):
    """Two-phase separate spectral attention.

    local phase -> spectrum shuffle -> non-local phase -> spectrum reverse.
    Accepts (HW, C) or (H, W, C) and preserves the input shape.
    """
    flat, spatial = _flatten_tokens(tape, x)
    h = local_spectral_attention(tape, flat, G, local_weights)
    h = spectrum_shuffle(tape, h, G)
    h = local_spectral_attention(tape, h, G, nonlocal_weights)
    h = spectrum_reverse(tape, h, G)
    if spatial is not None:
        h = ops.reshape(tape, h, spatial)
    return h


class SSTB:
    """Pre-normalized spectral transformer block: x + ss_msa(layer_norm(x))."""

    def __init__(self, C, G, rng):
        Cg = _check_groups(C, G)
        self.groups = G
        self.gamma = Tensor(np.ones(C))
        self.beta = Tensor(np.zeros(C))
        self.local = AttentionWeights.create(Cg, rng)
        self.nonlocal_ = AttentionWeights.create(Cg, rng)

    def named(self, prefix):
        out = {f"{prefix}.norm.gamma": self.gamma,
               f"{prefix}.norm.beta": self.beta}
        out.update(self.local.named(f"{prefix}.local"))
        out.update(self.nonlocal_.named(f"{prefix}.nonlocal"))
        return out

    def __call__(self, tape, x):
        h = ops.layer_norm(tape, x, self.gamma, self.beta)
        h = ss_msa(tape, h, self.groups, self.local, self.nonlocal_)
        return ops.add(tape, x, h)
