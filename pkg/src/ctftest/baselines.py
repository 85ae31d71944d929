"""Bonferroni and Holm step-down baselines."""

from __future__ import annotations

from typing import Hashable, Mapping

import numpy as np

from .distributions import chi2_sf
from .linear_model import Dataset
from .parametric import parametric_scores


def bonferroni_reject(pvalues: Mapping[Hashable, float], alpha: float) -> set:
    """Indices with p-value at most alpha / m."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    cutoff = alpha / len(pvalues)
    return {v for v, p in pvalues.items() if p <= cutoff}


def holm_reject(pvalues: Mapping[Hashable, float], alpha: float) -> set:
    """Step-down rejection: sort p-values ascending and reject while
    ``p_(i) <= alpha / (m - i + 1)``, stopping at the first failure."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    items = sorted(pvalues.items(), key=lambda kv: kv[1])
    m = len(items)
    rejected: set = set()
    for i, (v, p) in enumerate(items):
        if p <= alpha / (m - i):
            rejected.add(v)
        else:
            break
    return rejected


def parametric_pvalues(data: Dataset) -> dict[int, float]:
    """Per-variable p-values under the linear-model null: the chi-square(1)
    upper tail of each variable score."""
    _, var_scores, _ = parametric_scores(data)
    return {
        v: chi2_sf(float(s), 1)
        for v, s in enumerate(var_scores)
        if not np.isnan(s)
    }
