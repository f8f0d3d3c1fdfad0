"""Full segmentation model: text (or code) conditioning, encoder, alignment, decoder."""

from __future__ import annotations

import numpy as np

from .. import phantom
from ..align import Aligner
from ..diffcore import Module, Parameter, ops
from ..diffcore.tensor import Tensor, precision
from ..textenc import FrozenLM, PromptBank, TextEncoder, Vocabulary, pretrained_lm
from ..volnet import VolNet
from .config import ExperimentConfig

CODE_SYMBOLS = "01234?"


class NumericEmbedding(Module):
    """Learned table (4 digit positions x 6 symbols x D); the code's rows form g."""

    def __init__(self, dim: int, rng):
        self.table = Parameter(rng.normal(0.0, 0.02, (4, len(CODE_SYMBOLS), dim)))

    def __call__(self, codes) -> Tensor:
        sym = np.array([[CODE_SYMBOLS.index(c) for c in code] for code in codes])
        pos = np.broadcast_to(np.arange(4), sym.shape)
        return ops.index(self.table, (pos, sym))


class SegModel(Module):
    def __init__(self, cfg: ExperimentConfig, vocab: Vocabulary | None = None, lm: FrozenLM | None = None):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 7])
        with precision(np.float32):
            self.volnet = VolNet(cfg.channels, rng, upsample=cfg.upsample)
            self.text = None
            self.code = None
            self.aligner = None
            if cfg.variant == "vision-only":
                return
            if cfg.variant == "numeric-category":
                self.code = NumericEmbedding(cfg.lm_dim, rng)
            else:
                if lm is None:
                    vocab, lm = pretrained_lm(vocab, steps=cfg.lm_steps, dim=cfg.lm_dim, layers=cfg.lm_layers,
                                              heads=cfg.lm_heads, capacity=cfg.lm_capacity)
                prompts = None
                if cfg.variant != "no-tuning":
                    prompts = PromptBank(cfg.n_prompts, cfg.prompt_len, cfg.lm_dim, rng)
                self.text = TextEncoder(vocab, lm, prompts)
            self.aligner = Aligner(cfg.channels, cfg.lm_dim, rng, depth=cfg.align_depth, heads=cfg.align_heads,
                                   deepest=cfg.align_deepest or None, token_cap=cfg.token_cap)

    @property
    def variant(self) -> str:
        return self.cfg.variant

    def frozen_parameters(self):
        return [] if self.text is None else self.text.frozen_parameters()

    def condition(self, record: phantom.ClinicalRecord, omit=()) -> str | None:
        """The model input derived from a record: sentence, 4-character code, or None."""
        if self.variant == "vision-only":
            return None
        if self.variant == "numeric-category":
            return phantom.render_numeric(record, omit)
        return phantom.render_text(record, omit)

    def context(self, conds) -> Tensor | None:
        """g for a batch of conditions: (B, N, D), or None for vision-only."""
        if self.variant == "vision-only":
            return None
        if self.code is not None:
            return self.code(conds)
        return self.text.encode_batch(conds)

    def forward(self, x, g) -> Tensor:
        """Logits (B, 1, H, W, S) for volume batch x and precomputed context g."""
        feats = self.volnet.encode(x)
        if g is not None:
            feats = self.aligner.align_all(feats, g)
        return self.volnet.decode(feats)

    def __call__(self, x, conds=None) -> Tensor:
        return self.forward(x, self.context(conds) if conds is not None else None)
