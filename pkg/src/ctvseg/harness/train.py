"""Training loop, checkpoints and sliding-window inference."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffcore.tensor import ContractError, Tensor, backward, no_grad, precision
from ..phantom import CLINICAL_FIELDS
from ..objective import AdamW, partition_params, total_loss
from ..textenc import FrozenLM, Vocabulary
from .config import ExperimentConfig, format_config, parse_config
from .data import Case, DataError
from .model import SegModel


@dataclass
class TrainState:
    model: SegModel
    optimizer: AdamW
    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    losses: list[float] = field(default_factory=list)  # per-epoch means


def crop(vol: np.ndarray, mask: np.ndarray, patch, rng):
    starts = [int(rng.integers(0, n - p + 1)) for n, p in zip(vol.shape, patch)]
    sl = tuple(slice(s, s + p) for s, p in zip(starts, patch))
    return vol[sl], mask[sl]


def new_state(cfg: ExperimentConfig, vocab=None, lm=None) -> TrainState:
    model = SegModel(cfg, vocab, lm)
    trainable, _ = partition_params(model)
    opt = AdamW(trainable.values(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    return TrainState(model, opt, rng=np.random.default_rng([cfg.seed, 11]))


def train_step(state: TrainState, batch: list[Case], conds) -> float:
    cfg = state.model.cfg
    vols, masks = [], []
    for c in batch:
        v, m = crop(c.volume, c.mask, cfg.patch, state.rng)
        vols.append(v)
        masks.append(m)
    x = Tensor(np.stack(vols)[:, None])
    y = Tensor(np.stack(masks)[:, None].astype(np.float32))
    state.optimizer.zero_grad()
    loss = total_loss(state.model(x, conds), y, cfg.weights)
    backward(loss)
    state.optimizer.step()
    state.step += 1
    return loss.item()


def augment_omission(cfg: ExperimentConfig, rng) -> tuple:
    """With probability cfg.omit_rate, one clinical field to hide from this sample's text."""
    if cfg.omit_rate <= 0.0 or rng.random() >= cfg.omit_rate:
        return ()
    return (CLINICAL_FIELDS[rng.integers(len(CLINICAL_FIELDS))],)


def select_training(cases: list[Case], cfg: ExperimentConfig) -> list[Case]:
    """The first round(fraction * n) cases; smaller fractions are prefixes of larger ones."""
    n = max(1, int(round(cfg.train_fraction * len(cases))))
    return cases[:n]


def train(cfg: ExperimentConfig, cases: list[Case], vocab=None, lm=None, log=None,
          max_steps: int | None = None) -> TrainState:
    """Train for cfg.epochs passes over the selected cases (or stop after ``max_steps``)."""
    cfg.validate()
    with precision(np.float32):
        state = new_state(cfg, vocab, lm)
        used = select_training(cases, cfg)
        model = state.model
        for epoch in range(cfg.epochs):
            order = state.rng.permutation(len(used))
            epoch_losses = []
            for i in range(0, len(order), cfg.batch_size):
                batch = [used[j] for j in order[i:i + cfg.batch_size]]
                conds = None
                if model.variant != "vision-only":
                    conds = [model.condition(c.record, cfg.omit + augment_omission(cfg, state.rng))
                             for c in batch]
                epoch_losses.append(train_step(state, batch, conds))
                if max_steps is not None and state.step >= max_steps:
                    break
            state.losses.append(float(np.mean(epoch_losses)))
            if log is not None:
                log(epoch, state.losses[-1])
            if max_steps is not None and state.step >= max_steps:
                break
    return state


# ---------------------------------------------------------------- inference

def window_starts(n: int, p: int, overlap: float) -> list[int]:
    if n < p:
        raise ValueError(f"extent {n} smaller than patch {p}")
    stride = max(1, int(p * (1.0 - overlap)))
    starts = list(range(0, n - p + 1, stride))
    if starts[-1] != n - p:
        starts.append(n - p)
    return starts


def predict_logits(model: SegModel, volume: np.ndarray, cond, patch, overlap: float = 0.5) -> np.ndarray:
    """Sliding-window logits averaged uniformly over window coverage; g is computed once."""
    volume = np.asarray(volume, dtype=np.float32)
    if any(n < p for n, p in zip(volume.shape, patch)):
        raise ContractError(f"volume {volume.shape} smaller than patch {tuple(patch)}; pad the volume first")
    with precision(np.float32), no_grad():
        g = model.context([cond]) if cond is not None else None
        acc = np.zeros(volume.shape, dtype=np.float64)
        cnt = np.zeros(volume.shape, dtype=np.float64)
        grids = [window_starts(n, p, overlap) for n, p in zip(volume.shape, patch)]
        single = all(len(s) == 1 for s in grids)
        for a in grids[0]:
            for b in grids[1]:
                for c in grids[2]:
                    sl = (slice(a, a + patch[0]), slice(b, b + patch[1]), slice(c, c + patch[2]))
                    x = Tensor(volume[sl][None, None])
                    z = model.forward(x, g).data[0, 0]
                    if single:
                        return z.copy()
                    acc[sl] += z
                    cnt[sl] += 1.0
    return (acc / cnt).astype(np.float32)


def sliding_window_infer(model: SegModel, volume: np.ndarray, cond, patch=None, overlap=None,
                         threshold=None) -> np.ndarray:
    cfg = model.cfg
    patch = cfg.patch if patch is None else patch
    overlap = cfg.overlap if overlap is None else overlap
    threshold = cfg.threshold if threshold is None else threshold
    z = predict_logits(model, volume, cond, patch, overlap)
    # sigmoid(z) > t  <=>  z > logit(t)
    return (z > np.log(threshold / (1.0 - threshold))).astype(np.uint8)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, state: TrainState) -> None:
    model = state.model
    frozen = {id(p) for p in model.frozen_parameters()}
    arrays = {}
    tags = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.data
        tags[name] = "frozen" if id(p) in frozen else "trainable"
    for k, v in state.optimizer.state().items():
        arrays[f"opt/{k}"] = v
    meta = {
        "config": format_config(model.cfg),
        "tags": tags,
        "step": state.step,
        "losses": state.losses,
        "rng": state.rng.bit_generator.state,
        "vocab": model.text.vocab.tokens if model.text is not None else None,
        "lm": None if model.text is None else [model.text.lm.vocab_size, model.text.lm.dim,
                                               model.text.lm.n_layers, model.text.lm.heads,
                                               model.text.lm.capacity],
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())


def load_checkpoint(path) -> TrainState:
    try:
        data = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    with data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        cfg = parse_config(meta["config"])
        vocab = lm = None
        if meta["lm"] is not None:
            v, d, n_layers, heads, cap = meta["lm"]
            vocab = Vocabulary(meta["vocab"])
            with precision(np.float32):
                lm = FrozenLM(v, d, n_layers, heads, cap, rng=np.random.default_rng(0))
        state = new_state(cfg, vocab, lm)
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
        state.model.load_state_dict(params)
        if state.model.text is not None:
            state.model.text.lm.set_frozen(True)
        state.optimizer.load_state({k[len("opt/"):]: data[k] for k in data.files if k.startswith("opt/")})
        state.step = int(meta["step"])
        state.losses = list(meta["losses"])
        state.rng.bit_generator.state = meta["rng"]
    return state

