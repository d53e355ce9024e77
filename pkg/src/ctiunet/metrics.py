"""Overlap metrics and per-condition evaluation reports.

DSC and IoU are computed per sample from confusion counts and averaged
within each condition; the All column is the mean over every sample, so
conditions contribute in proportion to their sample counts. A sample whose
prediction and target are both empty scores 1.0 under both metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

TABLE_CONDITIONS = ("5/6Nx", "DN", "NEP25", "Normal")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def _check_binary(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise ConfigurationError(f"confusion: {name} must be binary (0/1)")
    return arr.astype(bool)


def confusion(pred: np.ndarray, target: np.ndarray) -> ConfusionCounts:
    pred = _check_binary("pred", pred)
    target = _check_binary("target", target)
    if pred.shape != target.shape:
        raise ConfigurationError(f"confusion: shapes {pred.shape} vs {target.shape} differ")
    tp = int(np.count_nonzero(pred & target))
    fp = int(np.count_nonzero(pred & ~target))
    fn = int(np.count_nonzero(~pred & target))
    tn = pred.size - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def dsc(counts: ConfusionCounts) -> float:
    den = 2 * counts.tp + counts.fp + counts.fn
    return 1.0 if den == 0 else 2.0 * counts.tp / den


def iou(counts: ConfusionCounts) -> float:
    den = counts.tp + counts.fp + counts.fn
    return 1.0 if den == 0 else counts.tp / den


@dataclass(frozen=True)
class SampleScore:
    identifier: str
    condition: str
    dsc: float
    iou: float


@dataclass(frozen=True)
class MetricsReport:
    scores: tuple[SampleScore, ...]
    metadata: dict = field(default_factory=dict)

    def conditions(self) -> list[str]:
        return sorted({s.condition for s in self.scores})

    def _subset(self, condition: str | None) -> list[SampleScore]:
        if condition is None:
            return list(self.scores)
        # case-insensitive so the fixed table headers (e.g. "Normal") pick
        # up the dataset spelling of the condition (e.g. "normal")
        return [s for s in self.scores if s.condition.casefold() == condition.casefold()]

    def mean_dsc(self, condition: str | None = None) -> float:
        sub = self._subset(condition)
        return float(np.mean([s.dsc for s in sub])) if sub else float("nan")

    def mean_iou(self, condition: str | None = None) -> float:
        sub = self._subset(condition)
        return float(np.mean([s.iou for s in sub])) if sub else float("nan")

    def count(self, condition: str | None = None) -> int:
        return len(self._subset(condition))


def score_samples(entries, metadata: dict | None = None) -> MetricsReport:
    """entries: iterable of (identifier, condition, pred, target) with binary
    (1,H,W) or (H,W) arrays. Order in the report follows identifier order."""
    scores = []
    for identifier, condition, pred, target in entries:
        c = confusion(pred, target)
        scores.append(SampleScore(identifier=str(identifier), condition=str(condition),
                                  dsc=dsc(c), iou=iou(c)))
    return MetricsReport(scores=tuple(sorted(scores, key=lambda s: s.identifier)),
                         metadata=dict(metadata or {}))


# -- rendering ---------------------------------------------------------------


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def render_table(report: MetricsReport) -> str:
    """Fixed-layout summary: one column per named condition plus All.
    Conditions with no samples render as '-'."""
    cols = list(TABLE_CONDITIONS) + ["All"]
    rows = [("Metric", *cols)]
    for label, fn in (("DSC (%)", report.mean_dsc), ("IoU (%)", report.mean_iou)):
        cells = [label]
        for cond in TABLE_CONDITIONS:
            cells.append(_pct(fn(cond)) if report.count(cond) else "-")
        cells.append(_pct(fn(None)) if report.count(None) else "-")
        rows.append(tuple(cells))
    widths = [max(len(r[i]) for r in rows) for i in range(len(cols) + 1)]
    lines = []
    for j, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) if i else cell.ljust(w)
                               for i, (cell, w) in enumerate(zip(row, widths))))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def to_tsv(report: MetricsReport) -> str:
    """Machine-readable per-condition rows (every condition present in the
    data, plus All), stable across reruns of the same inputs."""
    lines = ["condition\tn\tdsc_mean\tiou_mean"]
    for cond in report.conditions():
        lines.append(f"{cond}\t{report.count(cond)}\t"
                     f"{report.mean_dsc(cond):.6f}\t{report.mean_iou(cond):.6f}")
    lines.append(f"All\t{report.count(None)}\t"
                 f"{report.mean_dsc(None):.6f}\t{report.mean_iou(None):.6f}")
    return "\n".join(lines) + "\n"
