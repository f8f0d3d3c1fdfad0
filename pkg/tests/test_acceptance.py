"""Acceptance criteria at desk scale.  Each test records one PASS/FAIL line (printed in the summary).

Trained arms are checkpointed under the cache directory, keyed by a hash of the desk config and
every package source file, so any code change retrains from scratch.  A checkpoint carries its
recorded training time, which the timing criterion uses.  CTVSEG_ACCEPTANCE_DIR overrides the
location.
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
import ctvseg
from ctvseg import phantom
from ctvseg.diffcore import PROBES, Tensor, backward, gradcheck, ops, precision
from ctvseg.harness.ablation import arm_name, modification
from ctvseg.harness.config import ExperimentConfig, format_config, variant_defaults
from ctvseg.harness.data import load_cases, train_test_manifests
from ctvseg.harness.evaluate import evaluate, model_predictor
from ctvseg.harness.model import SegModel
from ctvseg.harness.train import (
    load_checkpoint, predict_logits, save_checkpoint, sliding_window_infer, train,
)
from ctvseg.metrics import bootstrap_ci, dice, hd95, iou, paired_t_test
from ctvseg.objective import AdamW
from ctvseg.textenc import FrozenLM, assert_frozen, cache_dir, pretrained_lm, snapshot
from oracles import brute_hd95, overlap_counts, ruleset_mask

SEEDS = (0, 1, 2)
DESK = ExperimentConfig(
    grid=(32, 32, 16), patch=(32, 32, 16), channels=(8, 16, 32, 64), lr=1e-3, epochs=10,
    train_cases=256, test_cases=64, omit_rate=0.2,
)
TRIALS = 1000


def code_key() -> str:
    h = hashlib.sha1(format_config(DESK).encode())
    for path in sorted(Path(ctvseg.__file__).parent.rglob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


@pytest.fixture(scope="session")
def workdir():
    path = Path(os.environ.get("CTVSEG_ACCEPTANCE_DIR") or cache_dir() / f"acceptance-{code_key()}")
    path.mkdir(parents=True, exist_ok=True)
    return path


@pytest.fixture(scope="session")
def lm():
    return pretrained_lm(steps=DESK.lm_steps, dim=DESK.lm_dim, layers=DESK.lm_layers, heads=DESK.lm_heads,
                         capacity=DESK.lm_capacity)


@pytest.fixture(scope="session")
def data(workdir):
    train_m, test_m = train_test_manifests(DESK, workdir)
    return load_cases(train_m), load_cases(test_m)


class Arms:
    """Trains each (variant, fraction, seed) arm once and remembers its wall-clock training time."""

    def __init__(self, workdir, data, lm):
        self.dir, self.data, self.lm = workdir, data, lm
        self.models = {}

    def get(self, variant, fraction=1.0, seed=0):
        cfg = variant_defaults(variant, DESK).replace(train_fraction=fraction, seed=seed)
        name = arm_name(cfg)
        if name not in self.models:
            ckpt, side = self.dir / f"{name}.ckpt", self.dir / f"{name}.json"
            if ckpt.exists() and side.exists():
                model, seconds = load_checkpoint(ckpt).model, json.loads(side.read_text())["train_seconds"]
            else:
                t0 = time.perf_counter()
                vocab, lm = self.lm if variant != "vision-only" else (None, None)
                state = train(cfg, self.data[0], vocab, lm)
                seconds = time.perf_counter() - t0
                save_checkpoint(ckpt, state)
                side.write_text(json.dumps({"train_seconds": seconds}))
                model = state.model
            self.models[name] = (model, seconds)
        return self.models[name]

    def dice(self, variant, fraction=1.0, seed=0):
        model, _ = self.get(variant, fraction, seed)
        key = ("dice", variant, fraction, seed)
        if key not in self.models:
            self.models[key] = evaluate(model_predictor(model), self.data[1], trials=TRIALS)
        return self.models[key]


@pytest.fixture(scope="session")
def arms(workdir, data, lm):
    return Arms(workdir, data, lm)


def test_criterion_1_gradcheck():
    t0 = time.perf_counter()
    worst = {k: max(gradcheck(k, seed=s) for s in range(5)) for k in sorted(PROBES)}
    elapsed = time.perf_counter() - t0
    kind = max(worst, key=worst.get)
    ok = worst[kind] < 1e-5 and elapsed < 300
    record_criterion(1, ok, f"gradcheck {len(worst)} op kinds x 5 seeds, worst {worst[kind]:.2e} ({kind}), "
                            f"{elapsed:.1f}s")
    assert ok


def test_criterion_2_metric_oracles():
    rng = np.random.default_rng(2024)
    worst_overlap = worst_hd = 0.0
    for _ in range(200):
        a = rng.random((8, 8, 4)) < rng.uniform(0.05, 0.6)
        b = rng.random((8, 8, 4)) < rng.uniform(0.05, 0.6)
        inter, sa, sb = overlap_counts(a, b)
        d_ref = 2 * inter / (sa + sb) if sa + sb else 1.0
        j_ref = inter / (sa + sb - inter) if sa + sb - inter else 1.0
        worst_overlap = max(worst_overlap, abs(dice(a, b) - d_ref), abs(iou(a, b) - j_ref))
        if sa and sb:
            sp = (1.0, 1.0, 3.0)
            worst_hd = max(worst_hd, abs(hd95(a, b, sp) - brute_hd95(a, b, sp)))
    ok = worst_overlap < 1e-12 and worst_hd < 1e-9
    record_criterion(2, ok, f"200 mask pairs: max |dice/iou - oracle| {worst_overlap:.1e}, "
                            f"max |hd95 - oracle| {worst_hd:.1e} cm")
    assert ok


def test_criterion_3_frozen_lm(lm, data):
    vocab, frozen_lm = lm
    before = snapshot(frozen_lm)
    state = train(DESK.replace(epochs=1), data[0], vocab, frozen_lm, max_steps=50)
    frozen_ok = state.step == 50 and assert_frozen(before, snapshot(frozen_lm))
    prompts_moved = not np.array_equal(
        state.model.text.prompt_bank.prompts.data, SegModel(DESK, vocab, frozen_lm).text.prompt_bank.prompts.data)

    # negative control: same model with the freeze lifted and the LM handed to the optimizer
    with precision(np.float32):
        copy = FrozenLM(len(vocab), DESK.lm_dim, DESK.lm_layers, DESK.lm_heads, DESK.lm_capacity)
        copy.load_state_dict({n: p.data for n, p in frozen_lm.named_parameters()})
        model = SegModel(DESK, vocab, copy)
        model.text.lm.set_frozen(False)
        control_before = snapshot(model.text.lm)
        opt = AdamW(model.parameters(), lr=DESK.lr)
        case = data[0][0]
        backward(ops.mean(model(Tensor(case.volume[None, None]), [model.condition(case.record)])))
        opt.step()
    control_detects = not assert_frozen(control_before, snapshot(model.text.lm))
    ok = frozen_ok and prompts_moved and control_detects
    record_criterion(3, ok, f"LM bitwise unchanged after 50 steps: {frozen_ok}, prompts updated: {prompts_moved}, "
                            f"unfrozen control detected: {control_detects}")
    assert ok


def test_criterion_4_multimodal_vs_vision_only(arms):
    t0 = time.perf_counter()
    mm_model, mm_train = arms.get("multimodal")
    vo_model, vo_train = arms.get("vision-only")
    mm = arms.dice("multimodal").mean("dice")
    vo = arms.dice("vision-only").mean("dice")
    fresh = time.perf_counter() - t0
    total = max(fresh, mm_train + vo_train)  # cached arms: count their recorded training time
    ok = mm >= 0.80 and vo <= 0.70 and total <= 1800
    record_criterion(4, ok, f"dice multimodal {mm:.3f} (>=0.80), vision-only {vo:.3f} (<=0.70), "
                            f"train+eval {total / 60:.1f} min (<=30)")
    assert ok


def test_criterion_5_record_modification(arms):
    model, _ = arms.get("multimodal")
    m = modification(model, arms.data[1])
    ok = (m["laterality_crossed"] >= 0.90 and m["node_inclusion_n1"] > m["node_inclusion_n0"]
          and m["skin_inclusion_bcs"] < m["skin_inclusion_mastectomy"])
    record_criterion(5, ok, f"laterality flip crosses midline {m['laterality_crossed']:.0%}, node inclusion "
                            f"N0 {m['node_inclusion_n0']:.3f} -> N1 {m['node_inclusion_n1']:.3f}, skin inclusion "
                            f"mastectomy {m['skin_inclusion_mastectomy']:.3f} -> BCS {m['skin_inclusion_bcs']:.3f}")
    assert ok


def test_criterion_6_omission_ordering(arms):
    test = arms.data[1]
    per_case = {f: [] for f in phantom.CLINICAL_FIELDS}  # drop per (seed, case)
    for seed in SEEDS:
        model, _ = arms.get("multimodal", seed=seed)
        predict = model_predictor(model)
        full = np.array([r.dice for r in arms.dice("multimodal", seed=seed).cases])
        for f in phantom.CLINICAL_FIELDS:
            omitted = np.array([r.dice for r in evaluate(predict, test, omit=(f,), trials=10).cases])
            per_case[f].extend(full - omitted)
    drops = {f: float(np.mean(v)) for f, v in per_case.items()}
    others = [f for f in phantom.CLINICAL_FIELDS if f not in ("laterality", "t_stage")]
    lat_ok = all(drops["laterality"] > drops[f] for f in phantom.CLINICAL_FIELDS if f != "laterality")
    # t_stage smallest up to noise: within two standard errors of the paired per-case difference
    nearest = min(others, key=lambda f: drops[f])
    diff = np.array(per_case["t_stage"]) - np.array(per_case[nearest])
    noise = 2.0 * diff.std(ddof=1) / np.sqrt(len(diff))
    t_ok = drops["t_stage"] <= drops[nearest] + noise
    ok = lat_ok and t_ok
    shown = ", ".join(f"{f} {drops[f]:+.4f}" for f in sorted(drops, key=drops.get, reverse=True))
    record_criterion(6, ok, f"mean dice drop over {len(SEEDS)} seeds: {shown}; t_stage vs {nearest} "
                            f"within noise {noise:.4f}: {t_ok}")
    assert ok


def test_criterion_7_data_efficiency(arms):
    res = {(v, f): [arms.dice(v, f, s).mean("dice") for s in SEEDS]
           for v in ("multimodal", "vision-only") for f in (1.0, 0.4)}
    mean = {k: float(np.mean(v)) for k, v in res.items()}
    mm_drop = mean["multimodal", 1.0] - mean["multimodal", 0.4]
    vo_drop = mean["vision-only", 1.0] - mean["vision-only", 0.4]
    ok = abs(mm_drop) <= 0.05 and vo_drop > mm_drop
    record_criterion(7, ok, f"multimodal 100% {mean['multimodal', 1.0]:.3f} vs 40% {mean['multimodal', 0.4]:.3f} "
                            f"(drop {mm_drop:+.3f}); vision-only 100% {mean['vision-only', 1.0]:.3f} vs 40% "
                            f"{mean['vision-only', 0.4]:.3f} (drop {vo_drop:+.3f})")
    assert ok


def test_criterion_8_sliding_window_and_checkpoint(arms, workdir, lm):
    model, _ = arms.get("multimodal")
    case = arms.data[1][0]
    cond = model.condition(case.record)
    with_window = predict_logits(model, case.volume, cond, DESK.patch)
    with precision(np.float32):
        single = model.forward(Tensor(case.volume[None, None]), model.context([cond])).data[0, 0]
    window_ok = with_window.tobytes() == single.tobytes()

    vocab, frozen_lm = lm
    state = train(DESK, arms.data[0], vocab, frozen_lm, max_steps=3)
    save_checkpoint(workdir / "roundtrip.ckpt", state)
    back = load_checkpoint(workdir / "roundtrip.ckpt")
    params_ok = snapshot(back.model) == snapshot(state.model)
    masks_ok = all(
        sliding_window_infer(back.model, c.volume, cond).tobytes()
        == sliding_window_infer(state.model, c.volume, cond).tobytes()
        for c in arms.data[1][:4])
    ok = window_ok and params_ok and masks_ok
    record_criterion(8, ok, f"volume==patch window bitwise equal to forward: {window_ok}; checkpoint round trip "
                            f"parameters {params_ok}, predictions {masks_ok}")
    assert ok


def _bootstrap_checks():
    m, lo, hi = bootstrap_ci([0.8] * 64, trials=TRIALS, seed=0)
    point = lo == m == hi
    bm, blo, bhi = bootstrap_ci([0, 1] * 50, trials=TRIALS, seed=0)
    width = bhi - blo
    return point, blo < 0.5 < bhi and abs(width - 0.20) <= 0.06, width


def test_criterion_9a_bootstrap():
    point, balanced, width = _bootstrap_checks()
    assert point and balanced, f"constant collapses {point}, balanced width {width:.3f}"


@pytest.mark.xfail(strict=True, reason="spec example t=4.714 is inconsistent with d=[1..5]; the textbook value "
                                       "is 3*sqrt(2)=4.243 (see decisions ledger)")
def test_criterion_9_statistics():
    point, balanced, width = _bootstrap_checks()
    t, p = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    t_ok, p_ok = abs(t - 4.714) <= 1e-3, abs(p - 0.00917) <= 5e-4
    ok = point and balanced and t_ok and p_ok
    record_criterion(9, ok, f"bootstrap constant collapses {point}, balanced n=100 width {width:.3f} "
                            f"(0.20+-0.06) {balanced}; paired t on d=[1..5]: t={t:.4f} (want 4.714) "
                            f"p={p:.5f} (want 0.00917)")
    assert ok


def test_criterion_10_phantom_oracle():
    mismatched = []
    for i in range(1000):
        r = phantom.sample_record([77, i])
        _, labels, mask = phantom.synthesize(r, [77, i, 1])
        if not np.array_equal(mask, ruleset_mask(r.laterality, r.t_stage, r.n_stage, r.surgery, labels)):
            mismatched.append(i)
    ok = not mismatched
    record_criterion(10, ok, f"1000 cases at {phantom.DEFAULT_GRID}: {len(mismatched)} masks differ from the "
                             f"ruleset oracle")
    assert ok
