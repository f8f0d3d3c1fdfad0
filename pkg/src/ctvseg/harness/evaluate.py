"""Per-case inference plus metrics, and the mask statistics used by the modification study."""

from __future__ import annotations

import numpy as np

from .. import phantom
from ..metrics import MetricReport, case_metrics, summarize
from .data import Case
from .model import SegModel
from .train import sliding_window_infer


def model_predictor(model: SegModel):
    """predict(case, record) -> binary mask, using the record as given (omissions included)."""

    def predict(case: Case, record: phantom.ClinicalRecord) -> np.ndarray:
        return sliding_window_infer(model, case.volume, model.condition(record))

    return predict


def evaluate(predict, cases: list[Case], omit=(), trials: int = 1000, seed: int = 0) -> MetricReport:
    rows = []
    for c in sorted(cases, key=lambda c: c.case_id):
        pred = predict(c, c.record.without(*omit))
        rows.append(case_metrics(c.case_id, pred, c.mask, c.spacing))
    return summarize(rows, trials=trials, seed=seed)


def centroid_side(mask: np.ndarray) -> float:
    """Signed lateral centroid offset from the midline in voxels (>0: patient left); NaN if empty."""
    if not mask.any():
        return float("nan")
    w = np.nonzero(mask)[1]
    return float(w.mean() + 0.5 - mask.shape[1] / 2.0)


def inclusion(mask: np.ndarray, region: np.ndarray) -> float:
    """Fraction of ``region`` voxels covered by ``mask``."""
    n = int(region.sum())
    return float((mask.astype(bool) & region).sum() / n) if n else float("nan")


def side_labels(labels: np.ndarray, laterality: str, structure: str) -> np.ndarray:
    """Region of one structure on one side of the patient."""
    if structure == "nodes":
        return labels == (phantom.LEFT_NODES if laterality == "left" else phantom.RIGHT_NODES)
    if structure == "breast":
        return labels == (phantom.LEFT_BREAST if laterality == "left" else phantom.RIGHT_BREAST)
    w = labels.shape[1]
    half = np.zeros(labels.shape, dtype=bool)
    if laterality == "left":
        half[:, w // 2:] = True
    else:
        half[:, : w // 2] = True
    code = {"skin": phantom.SKIN, "chest-wall": phantom.CHEST_WALL}[structure]
    return (labels == code) & half
