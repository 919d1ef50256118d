"""Reference computations written independently of the package.

Exact rational arithmetic (``fractions``) or arbitrary precision (``mpmath``)
with plain loops, so agreement with the package is evidence, not tautology.
"""

from __future__ import annotations

import re
from fractions import Fraction

import mpmath

mpmath.mp.dps = 50

REFERENCE = mpmath.mpf("4.42")


def brevity_oracle(l_steps) -> float:
    length = mpmath.mpf(l_steps)
    if length > REFERENCE:
        return 1.0
    if length == 0:
        return 0.5
    return float(max(mpmath.e ** (1 - REFERENCE / length), mpmath.mpf("0.5")))


def completeness_oracle(n_ts, n_as) -> float:
    return float(Fraction(n_ts, n_ts + n_as))


def correctness_oracle(n_cs, n_ts, l_steps) -> float:
    return float(mpmath.mpf(brevity_oracle(l_steps)) * n_cs / n_ts)


def logic_oracle(n_rs, n_ts) -> float:
    return float(Fraction(n_rs, n_ts))


def fleiss_oracle(matrix) -> float:
    """Textbook Fleiss' kappa over raw labels, in exact fractions."""
    n = len(matrix)
    k = len(matrix[0])
    labels = []
    for row in matrix:
        for v in row:
            if v not in labels:
                labels.append(v)
    table = [[sum(1 for v in row if v == lab) for lab in labels] for row in matrix]
    p_j = [Fraction(sum(table[i][j] for i in range(n)), n * k) for j in range(len(labels))]
    p_i = [Fraction(sum(c * (c - 1) for c in table[i]), k * (k - 1)) for i in range(n)]
    p_bar = sum(p_i, Fraction(0)) / n
    p_e = sum((p * p for p in p_j), Fraction(0))
    return float((p_bar - p_e) / (1 - p_e))


def _average_ranks(values):
    ranks = [Fraction(0)] * len(values)
    for i, v in enumerate(values):
        below = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        ranks[i] = Fraction(2 * below + equal + 1, 2)  # mean of positions below+1 .. below+equal
    return ranks


def kendall_oracle(matrix) -> float:
    """Kendall's W with tie correction; rows are subjects, columns raters."""
    n = len(matrix)
    m = len(matrix[0])
    columns = [[matrix[i][j] for i in range(n)] for j in range(m)]
    rank_cols = [_average_ranks(col) for col in columns]
    totals = [sum(rank_cols[j][i] for j in range(m)) for i in range(n)]
    mean = Fraction(m * (n + 1), 2)
    s = sum((t - mean) ** 2 for t in totals)
    tie_sum = 0
    for col in columns:
        for v in set(col):
            t = col.count(v)
            tie_sum += t**3 - t
    return float(Fraction(12) * s / (m * m * (n**3 - n) - m * tie_sum))


def accession_oracle(text: str) -> list[str]:
    """Accessions via tokenizing on non-alphanumerics, then an anchored check."""
    out = []
    for token in re.split(r"[^A-Za-z0-9]+", text):
        if re.fullmatch(r"(GSE|GDS|GSM|GPL)\d+", token) and token not in out:
            out.append(token)
    return out
