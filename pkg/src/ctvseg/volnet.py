"""3D residual U-Net: an encoder exposing every skip feature and a decoder consuming aligned ones."""

from __future__ import annotations

import numpy as np

from .diffcore import Conv3d, ConvTranspose3d, InstanceNorm3d, Module, ops
from .diffcore.tensor import ContractError, Tensor

LEAK = 0.01


class ResBlock(Module):
    """conv-norm-act-conv-norm plus a (projected) identity path, then act."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, stride: int = 1):
        self.conv1 = Conv3d(c_in, c_out, 3, rng, stride=stride, bias=False)
        self.norm1 = InstanceNorm3d(c_out)
        self.conv2 = Conv3d(c_out, c_out, 3, rng, bias=False)
        self.norm2 = InstanceNorm3d(c_out)
        if c_in != c_out or stride != 1:
            self.skip = Conv3d(c_in, c_out, 1, rng, stride=stride, padding=0, bias=False)
        else:
            self.skip = None

    def __call__(self, x):
        h = ops.leaky_relu(self.norm1(self.conv1(x)), LEAK)
        h = self.norm2(self.conv2(h))
        s = x if self.skip is None else self.skip(x)
        return ops.leaky_relu(ops.add(h, s), LEAK)


class VolNet(Module):
    """Encoder levels halve resolution and double channels; the decoder mirrors them.

    ``channels`` lists C_l per level, e.g. (16, 32, 64, 128); level 1 runs at
    full resolution, each later level starts with a stride-2 residual block.
    """

    def __init__(self, channels=(16, 32, 64, 128), rng: np.random.Generator | None = None,
                 in_channels: int = 1, upsample: str = "transposed"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = tuple(channels)
        self.upsample = upsample
        levels = len(self.channels)
        self.encoder = [ResBlock(in_channels, self.channels[0], rng)]
        for l in range(1, levels):
            self.encoder.append(ResBlock(self.channels[l - 1], self.channels[l], rng, stride=2))
        self.up = []
        self.decoder = []
        for l in range(levels - 2, -1, -1):
            c_hi, c = self.channels[l + 1], self.channels[l]
            if upsample == "transposed":
                self.up.append(ConvTranspose3d(c_hi, c, rng))
            elif upsample == "trilinear":
                self.up.append(Conv3d(c_hi, c, 1, rng, padding=0))
            else:
                raise ValueError(f"unknown upsample mode {upsample!r}")
            self.decoder.append(ResBlock(2 * c, c, rng))
        self.head = Conv3d(self.channels[0], 1, 1, rng, padding=0)

    @property
    def levels(self) -> int:
        return len(self.channels)

    def check_shape(self, spatial) -> None:
        f = 2 ** (self.levels - 1)
        bad = [i for i, n in enumerate(spatial) if n % f]
        if bad:
            raise ContractError(f"spatial dims {tuple(spatial)} not divisible by {f} on axes {bad}")

    def feature_shapes(self, spatial):
        """Per-sample (C_l, H_l, W_l, S_l) of every encoder level."""
        self.check_shape(spatial)
        return [(c,) + tuple(n // 2 ** l for n in spatial) for l, c in enumerate(self.channels)]

    def encode(self, x) -> list[Tensor]:
        if x.ndim != 5:
            raise ContractError(f"expected (B, C, H, W, S) input, got {x.shape}")
        self.check_shape(x.shape[2:])
        feats = []
        h = x
        for block in self.encoder:
            h = block(h)
            feats.append(h)
        return feats

    def decode(self, aligned) -> Tensor:
        if len(aligned) != self.levels:
            raise ContractError(f"decoder needs {self.levels} aligned features, got {len(aligned)}")
        h = aligned[-1]
        for i, (up, block) in enumerate(zip(self.up, self.decoder)):
            skip = aligned[self.levels - 2 - i]
            if self.upsample == "transposed":
                h = up(h)
            else:
                h = up(ops.upsample_trilinear(h, 2))
            h = block(ops.concat([h, skip], axis=1))
        return self.head(h)

    def __call__(self, x) -> Tensor:
        """Vision-only forward: skips pass straight through."""
        return self.decode(self.encode(x))
