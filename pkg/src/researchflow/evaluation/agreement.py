"""Inter-rater agreement: Fleiss' kappa (categorical) and Kendall's W (ordinal).

Both take a subjects x raters matrix of raw ratings, one row per rated item.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from researchflow.errors import UndefinedStatisticError, ValidationError


def _as_matrix(ratings) -> np.ndarray:
    arr = np.asarray(ratings, dtype=object)
    if arr.ndim != 2:
        raise ValidationError("ratings must be a 2-D subjects x raters matrix")
    n_subjects, n_raters = arr.shape
    if n_subjects < 2 or n_raters < 2:
        raise ValidationError("need at least 2 subjects and 2 raters")
    if any(v is None or (isinstance(v, float) and np.isnan(v)) for v in arr.flat):
        raise ValidationError("every cell of the ratings matrix must be filled")
    return arr


def category_counts(ratings) -> tuple[np.ndarray, list]:
    """Subjects x categories table of how many raters chose each category."""
    arr = _as_matrix(ratings)
    categories = sorted(set(arr.flat), key=lambda c: (str(type(c)), c))
    index = {c: j for j, c in enumerate(categories)}
    counts = np.zeros((arr.shape[0], len(categories)), dtype=float)
    for i, row in enumerate(arr):
        for v in row:
            counts[i, index[v]] += 1
    return counts, categories


def fleiss_kappa(ratings) -> float:
    counts, _ = category_counts(ratings)
    n_subjects = counts.shape[0]
    n_raters = counts[0].sum()
    p_cat = counts.sum(axis=0) / (n_subjects * n_raters)
    p_subject = ((counts**2).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_observed = p_subject.mean()
    p_expected = float((p_cat**2).sum())
    if np.isclose(p_expected, 1.0, rtol=0.0, atol=1e-15):
        raise UndefinedStatisticError("Fleiss' kappa undefined: expected agreement is 1")
    return float((p_observed - p_expected) / (1.0 - p_expected))


def kendalls_w(ratings) -> float:
    """Kendall's coefficient of concordance with the correction for ties."""
    arr = _as_matrix(ratings).astype(float)
    n, m = arr.shape  # n subjects ranked by m raters
    ranks = np.column_stack([rankdata(arr[:, j]) for j in range(m)])
    rank_sums = ranks.sum(axis=1)
    s = float(((rank_sums - m * (n + 1) / 2.0) ** 2).sum())
    ties = 0.0
    for j in range(m):
        _, sizes = np.unique(arr[:, j], return_counts=True)
        ties += float((sizes**3 - sizes).sum())
    denom = m**2 * (n**3 - n) - m * ties
    if denom <= 0:
        raise UndefinedStatisticError("Kendall's W undefined: every rater tied all subjects")
    return 12.0 * s / denom


def load_matrix(path: str | Path) -> list[list]:
    """Read a subjects x raters matrix from CSV (no header) or a JSON list of rows."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        rows = json.loads(text)
    else:
        rows = [row for row in csv.reader(text.splitlines()) if row]
        rows = [[_coerce(cell) for cell in row] for row in rows]
    return rows


def _coerce(cell: str):
    cell = cell.strip()
    for cast in (int, float):
        try:
            return cast(cell)
        except ValueError:
            pass
    return cell
