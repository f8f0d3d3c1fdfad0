"""Word tokenizer, a small causal LM that stays frozen, and learnable prompts.

The context embedding ``g`` has one row per prompt: each prompt's M vectors are
prepended to the embedded record text, a [SEG] token is appended, and the LM's
final hidden state at [SEG] becomes that row.
"""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

import numpy as np

from . import phantom
from .diffcore import LayerNorm, Linear, Module, Parameter, ops
from .diffcore.tensor import Tensor, as_tensor, backward, precision

PAD, UNK, SEG = "[PAD]", "[UNK]", "[SEG]"
RESERVED = (PAD, UNK, SEG)
LM_MAGIC = b"CLM1"
CORPUS_VERSION = 4  # bump when the pretraining corpus changes; keys the cache


class TokenizeError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class Vocabulary:
    """Bijective token <-> id map; ids 0..2 are [PAD], [UNK], [SEG]."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            tokens = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_corpus(cls, sentences) -> "Vocabulary":
        seen = set()
        for s in sentences:
            seen.update(phantom.words(s))
        return cls(sorted(seen))

    @classmethod
    def default(cls) -> "Vocabulary":
        return cls.from_corpus(phantom.template_corpus())

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def seg_id(self) -> int:
        return 2

    def id(self, token: str) -> int:
        return self.ids.get(token, self.unk_id)

    def tokenize(self, text: str) -> list[int]:
        ws = phantom.words(text)
        if not ws:
            raise TokenizeError("empty clinical text")
        # the word regex cannot yield "[seg]", so [SEG] never comes from text
        return [self.id(w) for w in ws]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


# ---------------------------------------------------------------- language model

def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


class Block(Module):
    """Pre-norm causal self-attention and ReLU MLP."""

    def __init__(self, dim: int, heads: int, rng):
        self.heads = heads
        self.ln1 = LayerNorm(dim)
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, 4 * dim, rng)
        self.fc2 = Linear(4 * dim, dim, rng)

    def __call__(self, x):
        b, t, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = self.qkv(self.ln1(x))
        qkv = ops.transpose(ops.reshape(qkv, (b, t, 3, h, dh)), (2, 0, 3, 1, 4))
        q, k, v = (ops.index(qkv, i) for i in range(3))
        a = ops.attention(q, k, v, mask=causal_mask(t))
        a = ops.reshape(ops.transpose(a, (0, 2, 1, 3)), (b, t, d))
        x = ops.add(x, self.proj(a))
        return ops.add(x, self.fc2(ops.relu(self.fc1(self.ln2(x)))))


class FrozenLM(Module):
    def __init__(self, vocab_size: int, dim: int = 64, layers: int = 2, heads: int = 4,
                 capacity: int = 64, rng=None):
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab_size, self.dim, self.n_layers, self.heads, self.capacity = (
            vocab_size, dim, layers, heads, capacity)
        self.tok_emb = Parameter(rng.normal(0.0, 0.02, (vocab_size, dim)))
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, (capacity, dim)))
        self.blocks = [Block(dim, heads, rng) for _ in range(layers)]
        self.ln_f = LayerNorm(dim)
        self.head = Linear(dim, vocab_size, rng, bias=False)

    def embed(self, ids) -> Tensor:
        return ops.embedding(self.tok_emb, np.asarray(ids, dtype=np.int64))

    def hidden(self, x) -> Tensor:
        """Final-norm hidden states for input embeddings x of shape (B, T, D)."""
        t = x.shape[1]
        if t > self.capacity:
            raise CapacityError(f"sequence length {t} exceeds positional capacity {self.capacity}")
        x = ops.add(x, ops.index(self.pos_emb, slice(0, t)))
        for block in self.blocks:
            x = block(x)
        return self.ln_f(x)

    def logits(self, h) -> Tensor:
        return self.head(h)

    def seg_embedding(self, ids) -> Tensor:
        """Plain forward over text ids followed by [SEG]; returns the [SEG] state (D,)."""
        seq = list(ids) + [2]
        h = self.hidden(ops.reshape(self.embed(seq), (1, len(seq), self.dim)))
        return ops.index(h, (0, len(seq) - 1))


def save_lm(path, lm: FrozenLM) -> None:
    with open(path, "wb") as fh:
        fh.write(LM_MAGIC)
        fh.write(struct.pack("<4I", lm.n_layers, lm.dim, lm.heads, lm.vocab_size))
        for _, p in lm.named_parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_lm(path) -> FrozenLM:
    raw = Path(path).read_bytes()
    if raw[:4] != LM_MAGIC:
        raise ValueError(f"{path}: bad LM checkpoint magic {raw[:4]!r}")
    n_layers, dim, heads, vocab = struct.unpack_from("<4I", raw, 4)
    # capacity is not in the header; recover it from the byte count
    probe = FrozenLM(vocab, dim, n_layers, heads, capacity=1)
    fixed = probe.num_parameters() - dim
    body = (len(raw) - 20) // 4
    capacity = (body - fixed) // dim
    if capacity < 1 or fixed + capacity * dim != body or (len(raw) - 20) % 4:
        raise ValueError(f"{path}: payload size does not match header")
    with precision(np.float32):
        lm = FrozenLM(vocab, dim, n_layers, heads, capacity=capacity)
    offset = 20
    for _, p in lm.named_parameters():
        n = p.size
        p.data = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).reshape(p.shape).copy()
        offset += 4 * n
    return lm


# ---------------------------------------------------------------- pretraining

_KEY_TERM = {
    "laterality": lambda r: r.laterality,
    "t_stage": lambda r: r.t_stage.lower(),
    "n_stage": lambda r: r.n_stage.lower(),
    "surgery": lambda r: "mastectomy" if r.surgery == "mastectomy" else "conserving",
}


def pretraining_corpus(n: int = 10_000, seed: int = 0) -> list[tuple[str, str]]:
    """(sentence, key term) pairs from random records with random fields left out.

    The key term is the value of one present clinical field, chosen at random;
    it is the token that follows [SEG], so the [SEG] state has to summarise the
    clinical fields.  Age is never a key, so it stays a minor part of that state.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        r = phantom.sample_record([seed, i])
        omit = [f for f in phantom.FIELDS if rng.random() < 0.15]
        present = [f for f in phantom.CLINICAL_FIELDS if f not in omit]
        if not present:
            keep = phantom.CLINICAL_FIELDS[rng.integers(len(phantom.CLINICAL_FIELDS))]
            omit.remove(keep)
            present = [keep]
        key = _KEY_TERM[present[rng.integers(len(present))]](r)
        out.append((phantom.render_text(r, omit), key))
    return out


def lm_loss(lm: FrozenLM, seqs: list[list[int]]) -> Tensor:
    """Mean next-token cross-entropy over complete id sequences (right padded)."""
    t = max(len(s) for s in seqs) - 1
    b = len(seqs)
    inp = np.zeros((b, t), dtype=np.int64)
    tgt = np.zeros((b, t), dtype=np.int64)
    valid = np.zeros((b, t), dtype=bool)
    for i, s in enumerate(seqs):
        inp[i, : len(s) - 1] = s[:-1]
        tgt[i, : len(s) - 1] = s[1:]
        valid[i, : len(s) - 1] = True
    h = lm.hidden(lm.embed(inp))
    logp = ops.log_softmax(lm.logits(h), axis=-1)
    bi, ti = np.nonzero(valid)
    picked = ops.index(logp, (bi, ti, tgt[bi, ti]))
    return ops.neg(ops.mean(picked))


def pretrain_lm(vocab: Vocabulary, steps: int = 2000, n_sentences: int = 10_000, batch: int = 32,
                seed: int = 0, lr: float = 3e-3, dim: int = 64, layers: int = 2, heads: int = 4,
                capacity: int = 64, log=None) -> FrozenLM:
    """Deterministic next-token pretraining on ``sentence [SEG] key-term`` lines; returns a frozen model."""
    from .objective import AdamW

    rng = np.random.default_rng(seed)
    corpus = [vocab.tokenize(s) + [vocab.seg_id, vocab.id(k)] for s, k in pretraining_corpus(n_sentences, seed)]
    with precision(np.float32):
        lm = FrozenLM(len(vocab), dim, layers, heads, capacity, rng)
        opt = AdamW(lm.parameters(), lr=lr, weight_decay=0.0)
        for step in range(steps):
            idx = rng.integers(0, len(corpus), size=batch)
            loss = lm_loss(lm, [corpus[i] for i in idx])
            opt.zero_grad()
            backward(loss)
            opt.step()
            if log is not None and (step % 200 == 0 or step == steps - 1):
                log(step, loss.item())
    lm.set_frozen(True)
    return lm


def cache_dir() -> Path:
    return Path(os.environ.get("CTVSEG_CACHE", Path.home() / ".cache" / "ctvseg"))


def pretrained_lm(vocab: Vocabulary | None = None, steps: int = 2000, seed: int = 0, dim: int = 64,
                  layers: int = 2, heads: int = 4, capacity: int = 64) -> tuple[Vocabulary, FrozenLM]:
    """Pretrain once per settings and reuse the cached CLM1 file afterwards."""
    vocab = vocab if vocab is not None else Vocabulary.default()
    key = hashlib.sha1(repr((CORPUS_VERSION, vocab.tokens, steps, seed, dim, layers, heads, capacity)).encode()).hexdigest()[:12]
    path = cache_dir() / f"lm-{key}.clm"
    if path.exists():
        lm = load_lm(path)
    else:
        lm = pretrain_lm(vocab, steps=steps, seed=seed, dim=dim, layers=layers, heads=heads,
                         capacity=capacity)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        save_lm(tmp, lm)
        os.replace(tmp, path)
        lm = load_lm(path)  # round through f32 so fresh and cached runs agree
    lm.set_frozen(True)
    return vocab, lm


# ---------------------------------------------------------------- prompts

class PromptBank(Module):
    """N learnable prompts of M vectors each, used directly as input embeddings."""

    def __init__(self, n: int, m: int, dim: int, rng):
        self.prompts = Parameter(rng.normal(0.0, 0.02, (n, m, dim)))

    @property
    def n(self) -> int:
        return self.prompts.shape[0]

    @property
    def m(self) -> int:
        return self.prompts.shape[1]


class TextEncoder(Module):
    """Frozen LM plus an optional prompt bank; ``encode`` returns g of shape (N, D)."""

    def __init__(self, vocab: Vocabulary, lm: FrozenLM, prompts: PromptBank | None):
        self.vocab = vocab
        self.lm = lm
        self.prompt_bank = prompts
        lm.set_frozen(True)

    @property
    def n_prompts(self) -> int:
        return 1 if self.prompt_bank is None else self.prompt_bank.n

    @property
    def prompt_len(self) -> int:
        return 0 if self.prompt_bank is None else self.prompt_bank.m

    def frozen_parameters(self):
        return self.lm.parameters()

    def build_prompted_input(self, n: int, ids) -> Tensor:
        """(M + len(ids) + 1, D) sequence: prompt n (0-based), embedded text, embedded [SEG]."""
        if not 0 <= n < self.n_prompts:
            raise IndexError(f"prompt index {n} outside 0..{self.n_prompts - 1}")
        text = self.lm.embed(list(ids) + [self.vocab.seg_id])
        if self.prompt_len == 0:
            return text
        return ops.concat([ops.index(self.prompt_bank.prompts, n), text], axis=0)

    def encode(self, text: str) -> Tensor:
        return ops.reshape(self.encode_batch([text]), (self.n_prompts, self.lm.dim))

    def encode_batch(self, texts) -> Tensor:
        """(B, N, D) context embeddings for a list of texts."""
        ids = [self.vocab.tokenize(t) for t in texts]
        b, n, m, d = len(ids), self.n_prompts, self.prompt_len, self.lm.dim
        t = max(len(s) for s in ids) + 1
        if m + t > self.lm.capacity:
            raise CapacityError(f"prompted length {m + t} exceeds positional capacity {self.lm.capacity}")
        tok = np.full((b, t), self.vocab.pad_id, dtype=np.int64)
        for i, s in enumerate(ids):
            tok[i, : len(s)] = s
            tok[i, len(s)] = self.vocab.seg_id
        text = ops.reshape(self.lm.embed(tok), (b, 1, t, d))
        text = ops.add(text, np.zeros((1, n, 1, 1)))
        if m:
            p = ops.reshape(self.prompt_bank.prompts, (1, n, m, d))
            p = ops.add(p, np.zeros((b, 1, 1, 1)))
            seq = ops.concat([p, text], axis=2)
        else:
            seq = text
        # right padding is harmless: causal attention keeps [SEG] blind to later pads
        h = self.lm.hidden(ops.reshape(seq, (b * n, m + t, d)))
        rows = np.arange(b * n)
        seg = np.repeat([m + len(s) for s in ids], n)
        return ops.reshape(ops.index(h, (rows, seg)), (b, n, d))


def snapshot(module: Module) -> dict[str, bytes]:
    return {name: p.data.tobytes() for name, p in module.named_parameters()}


def assert_frozen(before: dict[str, bytes], after: dict[str, bytes]) -> bool:
    """True iff every snapshotted scalar is bitwise unchanged."""
    return before.keys() == after.keys() and all(before[k] == after[k] for k in before)
