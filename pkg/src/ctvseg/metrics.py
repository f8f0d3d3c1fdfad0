"""Overlap and surface-distance metrics, bootstrap intervals and the paired t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class MetricError(ValueError):
    pass


class DegenerateInputError(MetricError):
    pass


def _pair(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise MetricError(f"grid mismatch: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    a, b = _pair(a, b)
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def iou(a, b) -> float:
    a, b = _pair(a, b)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


def boundary(mask) -> np.ndarray:
    """Mask voxels with at least one of the 6 face neighbours outside the mask (grid edge counts as outside)."""
    m = np.asarray(mask).astype(bool)
    p = np.pad(m, 1, constant_values=False)
    inner = m.copy()
    for ax in range(m.ndim):
        sl_lo = [slice(1, -1)] * m.ndim
        sl_hi = [slice(1, -1)] * m.ndim
        sl_lo[ax] = slice(0, -2)
        sl_hi[ax] = slice(2, None)
        inner &= p[tuple(sl_lo)] & p[tuple(sl_hi)]
    return m & ~inner


def directed_distances(a, b, spacing) -> np.ndarray:
    """Distance (mm) from each boundary voxel of ``a`` to the nearest boundary voxel of ``b``."""
    sp = np.asarray(spacing, dtype=np.float64)
    pa = np.argwhere(boundary(a)) * sp
    pb = np.argwhere(boundary(b)) * sp
    d, _ = cKDTree(pb).query(pa, k=1)
    return np.asarray(d, dtype=np.float64)


def hd95(a, b, spacing=(1.0, 1.0, 1.0), mode: str = "combined") -> float:
    """95th-percentile Hausdorff distance in centimetres; NaN when either mask is empty.

    ``mode="combined"`` takes the percentile of both directed distance sets
    pooled together; ``"max-directed"`` the larger of the two directed percentiles.
    """
    a, b = _pair(a, b)
    if not a.any() or not b.any():
        return math.nan
    dab = directed_distances(a, b, spacing)
    dba = directed_distances(b, a, spacing)
    if mode == "combined":
        mm = float(np.percentile(np.concatenate([dab, dba]), 95))
    elif mode == "max-directed":
        mm = max(float(np.percentile(dab, 95)), float(np.percentile(dba, 95)))
    else:
        raise ValueError(f"unknown hd95 mode {mode!r}")
    return mm / 10.0


def bootstrap_ci(values, trials: int = 1000, level: float = 0.95, seed: int = 0):
    """(sample mean, low, high): percentile interval of resampled means."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise MetricError("bootstrap_ci needs at least one value")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, v.size, size=(trials, v.size))
    means = v[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    m = float(v.mean())
    # guard against rounding in the all-equal case
    return m, float(min(lo, m)), float(max(hi, m))


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularised incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: int) -> float:
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(x, y):
    """Two-sided paired Student t-test; returns (t, p)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise MetricError("paired_t_test needs two equal-length 1-D samples of size >= 2")
    d = x - y
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateInputError("differences have zero variance")
    n = d.size
    t = float(d.mean() / (sd / math.sqrt(n)))
    return t, t_sf_two_sided(t, n - 1)


# ---------------------------------------------------------------- reports

@dataclass
class CaseMetrics:
    case_id: str
    dice: float
    iou: float
    hd95_cm: float
    empty_mask: bool = False


@dataclass
class MetricReport:
    cases: list[CaseMetrics] = field(default_factory=list)
    aggregate: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    @property
    def empty_cases(self) -> list[str]:
        return [c.case_id for c in self.cases if c.empty_mask]

    def mean(self, metric: str) -> float:
        return self.aggregate[metric][0]


def case_metrics(case_id: str, pred, truth, spacing) -> CaseMetrics:
    d, j = dice(pred, truth), iou(pred, truth)
    h = hd95(pred, truth, spacing)
    return CaseMetrics(case_id, d, j, h, empty_mask=math.isnan(h))


def summarize(cases, trials: int = 1000, seed: int = 0) -> MetricReport:
    report = MetricReport(cases=list(cases))
    for metric in ("dice", "iou", "hd95_cm"):
        vals = [getattr(c, metric) for c in cases if not (metric == "hd95_cm" and c.empty_mask)]
        if vals:
            report.aggregate[metric] = bootstrap_ci(vals, trials=trials, seed=seed)
        else:
            report.aggregate[metric] = (math.nan, math.nan, math.nan)
    return report


def write_report(path, report: MetricReport) -> None:
    lines = []
    for c in report.cases:
        row = f"{c.case_id} {c.dice:.6f} {c.iou:.6f} {c.hd95_cm:.6f}"
        if c.empty_mask:
            row += " empty_mask"
        lines.append(row)
    for metric, (m, lo, hi) in report.aggregate.items():
        lines.append(f"AGG {metric} {m:.6f} {lo:.6f} {hi:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> MetricReport:
    report = MetricReport()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        cols = line.split()
        if not cols:
            continue
        if cols[0] == "AGG":
            report.aggregate[cols[1]] = tuple(float(v) for v in cols[2:5])
        else:
            report.cases.append(CaseMetrics(cols[0], float(cols[1]), float(cols[2]), float(cols[3]),
                                            empty_mask=len(cols) > 4 and cols[4] == "empty_mask"))
    return report
