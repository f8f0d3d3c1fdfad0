"""Two-way attention between context tokens and the image tokens of each encoder level.

Each level projects g to its channel width, then runs T blocks.  A block
updates the context tokens (self-attention, attention to the image, MLP) and
finally lets every image token attend to the context.  All sublayers are
pre-norm residual, so with zero output projections the image stream is passed
through untouched.
"""

from __future__ import annotations

import numpy as np

from .diffcore import LayerNorm, Linear, Module, ops
from .diffcore.tensor import Tensor

DEFAULT_TOKEN_CAP = 64 * 64 * 32


class CapacityError(ValueError):
    pass


def sinusoidal_3d(shape, channels: int) -> np.ndarray:
    """Fixed (H*W*S, C) encoding: a third of the channels per axis, sin/cos pairs, zero padded."""
    per_axis = 2 * (channels // 6)
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    out = np.zeros((int(np.prod(shape)), channels))
    if per_axis == 0:
        return out
    n_freq = per_axis // 2
    freqs = 1.0 / (100.0 ** (np.arange(n_freq) / max(n_freq, 1)))
    col = 0
    for g in grids:
        pos = g.reshape(-1, 1) * freqs
        out[:, col:col + n_freq] = np.sin(pos)
        out[:, col + n_freq:col + per_axis] = np.cos(pos)
        col += per_axis
    return out


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng):
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self._weights = None

    def _split(self, x):
        b, t, c = x.shape
        return ops.transpose(ops.reshape(x, (b, t, self.heads, c // self.heads)), (0, 2, 1, 3))

    def __call__(self, q, k, v):
        b, tq, c = q.shape
        a = ops.attention(self._split(self.q(q)), self._split(self.k(k)), self._split(self.v(v)))
        self._weights = getattr(a, "attn_weights", None)
        a = ops.reshape(ops.transpose(a, (0, 2, 1, 3)), (b, tq, c))
        return self.out(a)

    @property
    def last_weights(self):
        """Attention probabilities (B, heads, Tq, Tk) of the most recent call."""
        return self._weights

    def zero_output(self) -> None:
        self.out.weight.data[...] = 0
        self.out.bias.data[...] = 0


class TwoWayBlock(Module):
    def __init__(self, dim: int, heads: int, rng, mlp_ratio: int = 4):
        self.ctx_norm1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.ctx_norm2 = LayerNorm(dim)
        self.img_norm1 = LayerNorm(dim)
        self.ctx_to_img = MultiHeadAttention(dim, heads, rng)
        self.ctx_norm3 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, rng)
        self.fc2 = Linear(mlp_ratio * dim, dim, rng)
        self.img_norm2 = LayerNorm(dim)
        self.ctx_norm4 = LayerNorm(dim)
        self.img_to_ctx = MultiHeadAttention(dim, heads, rng)

    def attentions(self):
        return [self.self_attn, self.ctx_to_img, self.img_to_ctx]

    def __call__(self, ctx, img, pe):
        c = self.ctx_norm1(ctx)
        ctx = ops.add(ctx, self.self_attn(c, c, c))
        i = self.img_norm1(img)
        ctx = ops.add(ctx, self.ctx_to_img(self.ctx_norm2(ctx), ops.add(i, pe), i))
        ctx = ops.add(ctx, self.fc2(ops.relu(self.fc1(self.ctx_norm3(ctx)))))
        c = self.ctx_norm4(ctx)
        img = ops.add(img, self.img_to_ctx(ops.add(self.img_norm2(img), pe), c, c))
        return ctx, img


class AlignmentModule(Module):
    """Projection D -> C plus T two-way blocks for one encoder level."""

    def __init__(self, channels: int, context_dim: int, rng, depth: int = 2, heads: int = 4,
                 token_cap: int = DEFAULT_TOKEN_CAP):
        self.channels = channels
        self.token_cap = token_cap
        self.project = Linear(context_dim, channels, rng)
        self.blocks = [TwoWayBlock(channels, heads, rng) for _ in range(depth)]
        self._pe_cache = {}

    def project_context(self, g) -> Tensor:
        return self.project(g)

    def _pe(self, spatial):
        if spatial not in self._pe_cache:
            self._pe_cache[spatial] = sinusoidal_3d(spatial, self.channels)
        return self._pe_cache[spatial]

    def interact(self, f, ctx) -> Tensor:
        """f: (B, C, H, W, S) level feature, ctx: (B, N, C) projected context -> f* of f's shape."""
        b, c, h, w, s = f.shape
        n_tok = h * w * s
        if n_tok > self.token_cap:
            raise CapacityError(
                f"{n_tok} image tokens at this level exceed the cap of {self.token_cap}; "
                "use a smaller patch or align only the deeper levels")
        img = ops.reshape(ops.transpose(f, (0, 2, 3, 4, 1)), (b, n_tok, c))
        pe = self._pe((h, w, s)).astype(img.dtype)
        for block in self.blocks:
            ctx, img = block(ctx, img, pe)
        return ops.transpose(ops.reshape(img, (b, h, w, s, c)), (0, 4, 1, 2, 3))

    def __call__(self, f, g) -> Tensor:
        return self.interact(f, self.project_context(g))

    def attentions(self):
        return [a for blk in self.blocks for a in blk.attentions()]

    def zero_outputs(self) -> None:
        """Residual-neutral setting: every attention and MLP branch adds zero."""
        for blk in self.blocks:
            for a in blk.attentions():
                a.zero_output()
            blk.fc2.weight.data[...] = 0
            blk.fc2.bias.data[...] = 0


class Aligner(Module):
    """One AlignmentModule per aligned level; ``deepest`` restricts alignment to the last K levels."""

    def __init__(self, channels, context_dim: int, rng, depth: int = 2, heads: int = 4,
                 deepest: int | None = None, token_cap: int = DEFAULT_TOKEN_CAP):
        self.channels = tuple(channels)
        k = len(self.channels) if deepest is None else deepest
        if not 1 <= k <= len(self.channels):
            raise ValueError(f"deepest={deepest} outside 1..{len(self.channels)}")
        self.first = len(self.channels) - k
        self.modules = [AlignmentModule(c, context_dim, rng, depth, heads, token_cap)
                        for c in self.channels[self.first:]]

    def align_all(self, features, g):
        """Aligned features for every level; levels below ``first`` pass through."""
        if len(features) != len(self.channels):
            raise ValueError(f"expected {len(self.channels)} levels, got {len(features)}")
        out = list(features[: self.first])
        for f, mod in zip(features[self.first:], self.modules):
            out.append(mod(f, g))
        return out

    def zero_outputs(self) -> None:
        for m in self.modules:
            m.zero_outputs()
