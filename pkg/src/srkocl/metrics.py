"""Continual-learning metrics over the T x T accuracy matrix R, where
R[i][j] is accuracy on task j's test set after finishing training task i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


def _check_matrix(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 1:
        raise ValueError(f"accuracy matrix must be square and non-empty, got {r.shape}")
    if r.min() < 0.0 or r.max() > 1.0:
        raise ValueError("accuracy matrix entries must lie in [0, 1]")
    return r


def acc(r) -> float:
    """Average accuracy over all tasks after the final task: mean of the last row."""
    r = _check_matrix(r)
    return float(r[-1].mean())


def fm(r) -> float:
    """Forgetting measure: for each non-final task, the drop from its best
    accuracy while training continued to its final accuracy, averaged.
    Undefined for a single task."""
    r = _check_matrix(r)
    t = r.shape[0]
    if t < 2:
        raise ValueError("forgetting measure requires at least 2 tasks")
    drops = [float(r[j:t - 1, j].max() - r[t - 1, j]) for j in range(t - 1)]
    return float(np.mean(drops))


def la(r) -> float:
    """Learning accuracy: mean of the diagonal (accuracy right after learning)."""
    r = _check_matrix(r)
    return float(np.mean(np.diag(r)))


@dataclass(frozen=True)
class MetricSummary:
    values: tuple[float, ...]
    mean: float
    std: float


@dataclass(frozen=True)
class RunSummary:
    acc: MetricSummary
    fm: MetricSummary | None
    la: MetricSummary


def _summarize_values(values: Sequence[float]) -> MetricSummary:
    vals = tuple(float(v) for v in values)
    mean = float(np.mean(vals))
    std = 0.0 if len(vals) == 1 else float(np.std(vals, ddof=1))
    return MetricSummary(values=vals, mean=mean, std=std)


def summarize(runs: Sequence[tuple]) -> RunSummary:
    """Per-metric mean and sample (n-1) standard deviation over seeds.

    Each run is an (acc, fm, la) triple; fm may be None (single-task runs),
    in which case it must be None for every run and the summary omits it.
    """
    if not runs:
        raise ValueError("summarize requires at least one run")
    accs = [r[0] for r in runs]
    fms = [r[1] for r in runs]
    las = [r[2] for r in runs]
    if any(v is None for v in fms):
        if not all(v is None for v in fms):
            raise ValueError("fm must be defined for all runs or none")
        fm_summary = None
    else:
        fm_summary = _summarize_values(fms)
    return RunSummary(acc=_summarize_values(accs), fm=fm_summary,
                      la=_summarize_values(las))
