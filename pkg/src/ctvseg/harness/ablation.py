"""The four comparative protocols: field omission, record modification, data fraction, tuning method."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import phantom
from ..objective import ConfigError
from .config import ExperimentConfig, variant_defaults
from .data import Case, load_cases, train_test_manifests
from .evaluate import centroid_side, evaluate, inclusion, model_predictor, side_labels
from .train import load_checkpoint, save_checkpoint, sliding_window_infer, train

KINDS = ("omission", "modification", "data-fraction", "tuning")
FRACTIONS = (1.0, 0.4, 0.2)
TUNING_VARIANTS = ("multimodal", "single-prompt", "no-tuning")


def arm_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.variant}-f{cfg.train_fraction:g}-s{cfg.seed}"


def trained_model(cfg: ExperimentConfig, train_cases: list[Case], out_dir, log=None):
    """Checkpoint for ``cfg`` under ``out_dir``, training it first if absent."""
    path = Path(out_dir) / f"{arm_name(cfg)}.ckpt"
    if path.exists():
        return load_checkpoint(path).model
    state = train(cfg, train_cases, log=log)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(path, state)
    return state.model


def omission(model, test: list[Case], trials: int = 1000) -> dict:
    """Dice per omitted field for a model trained on full text, plus drops from the full-text run."""
    predict = model_predictor(model)
    full = evaluate(predict, test, trials=trials).mean("dice")
    out = {"none": full}
    for f in phantom.CLINICAL_FIELDS:
        out[f] = evaluate(predict, test, omit=(f,), trials=trials).mean("dice")
    out["drop"] = {f: full - out[f] for f in phantom.CLINICAL_FIELDS}
    return out


def modification(model, test: list[Case]) -> dict:
    """Mask deltas when one record field is changed on otherwise fixed inputs.

    Needs label grids (manifests written by the generator carry them).
    """
    crossed, correct_side = [], []
    node_n0, node_n1 = [], []
    skin_mast, skin_bcs = [], []
    for c in sorted(test, key=lambda c: c.case_id):
        if c.labels is None:
            raise ConfigError(f"{c.case_id}: the modification study needs label grids")
        r = c.record
        flipped = r.replace(laterality="right" if r.laterality == "left" else "left")

        def pred(rec):
            return sliding_window_infer(model, c.volume, model.condition(rec))

        a, b = centroid_side(pred(r)), centroid_side(pred(flipped))
        crossed.append(bool(np.isfinite(a) and np.isfinite(b) and np.sign(a) == -np.sign(b) != 0))
        want = 1.0 if flipped.laterality == "left" else -1.0
        correct_side.append(bool(np.isfinite(b) and np.sign(b) == want))

        nodes = side_labels(c.labels, r.laterality, "nodes")
        node_n0.append(inclusion(pred(r.replace(n_stage="N0")), nodes))
        node_n1.append(inclusion(pred(r.replace(n_stage="N1")), nodes))

        skin = side_labels(c.labels, r.laterality, "skin")
        skin_mast.append(inclusion(pred(r.replace(surgery="mastectomy")), skin))
        skin_bcs.append(inclusion(pred(r.replace(surgery="breast-conserving")), skin))
    return {
        "laterality_crossed": float(np.mean(crossed)),
        "laterality_correct_side": float(np.mean(correct_side)),
        "node_inclusion_n0": float(np.nanmean(node_n0)),
        "node_inclusion_n1": float(np.nanmean(node_n1)),
        "skin_inclusion_mastectomy": float(np.nanmean(skin_mast)),
        "skin_inclusion_bcs": float(np.nanmean(skin_bcs)),
    }


def data_fraction(base: ExperimentConfig, train_cases, test, out_dir, fractions=FRACTIONS,
                  variants=("multimodal", "vision-only"), trials: int = 1000, log=None) -> dict:
    out = {}
    for v in variants:
        out[v] = {}
        for f in fractions:
            cfg = variant_defaults(v, base).replace(train_fraction=f)
            model = trained_model(cfg, train_cases, out_dir, log)
            out[v][f"{f:g}"] = evaluate(model_predictor(model), test, trials=trials).mean("dice")
    return out


def tuning(base: ExperimentConfig, train_cases, test, out_dir, trials: int = 1000, log=None) -> dict:
    out = {}
    for v in TUNING_VARIANTS:
        model = trained_model(variant_defaults(v, base), train_cases, out_dir, log)
        out[v] = evaluate(model_predictor(model), test, trials=trials).mean("dice")
    return out


def run_ablation(kind: str, base: ExperimentConfig, out_dir, log=None) -> dict:
    """Run one protocol end to end and write ``<kind>.json`` into ``out_dir``."""
    if kind not in KINDS:
        raise ConfigError(f"unknown ablation kind {kind!r}; expected one of {KINDS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_manifest, test_manifest = train_test_manifests(base, out_dir)
    train_cases = load_cases(train_manifest)
    test = load_cases(test_manifest)
    if kind == "omission":
        model = trained_model(variant_defaults("multimodal", base), train_cases, out_dir, log)
        result = omission(model, test)
    elif kind == "modification":
        model = trained_model(variant_defaults("multimodal", base), train_cases, out_dir, log)
        result = modification(model, test)
    elif kind == "data-fraction":
        result = data_fraction(base, train_cases, test, out_dir, log=log)
    else:
        result = tuning(base, train_cases, test, out_dir, log=log)
    (out_dir / f"{kind}.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    return result
