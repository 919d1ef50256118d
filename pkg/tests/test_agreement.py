import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fleiss_oracle, kendall_oracle
from researchflow.errors import UndefinedStatisticError, ValidationError
from researchflow.evaluation.agreement import category_counts, fleiss_kappa, kendalls_w, load_matrix


def test_fleiss_textbook_table():
    # Fleiss (1971) worked example: 10 subjects, 14 raters, 5 categories, kappa ~ 0.210
    table = [
        [0, 0, 0, 0, 14],
        [0, 2, 6, 4, 2],
        [0, 0, 3, 5, 6],
        [0, 3, 9, 2, 0],
        [2, 2, 8, 1, 1],
        [7, 7, 0, 0, 0],
        [3, 2, 6, 3, 0],
        [2, 5, 3, 2, 2],
        [6, 5, 2, 1, 0],
        [0, 2, 2, 3, 7],
    ]
    matrix = [[c for c, k in enumerate(row) for _ in range(k)] for row in table]
    assert fleiss_kappa(matrix) == pytest.approx(0.2099, abs=5e-4)


def test_fleiss_perfect_agreement_over_two_categories():
    assert fleiss_kappa([["a", "a"], ["b", "b"], ["a", "a"]]) == pytest.approx(1.0)


def test_fleiss_undefined_when_one_category():
    with pytest.raises(UndefinedStatisticError):
        fleiss_kappa([[1, 1, 1], [1, 1, 1]])


def test_kendall_perfect_concordance():
    assert kendalls_w([[1, 1, 1], [2, 2, 2], [3, 3, 3], [4, 4, 4]]) == pytest.approx(1.0)


def test_kendall_reversed_raters():
    assert kendalls_w([[1, 3], [2, 2], [3, 1]]) == pytest.approx(0.0, abs=1e-12)


def test_kendall_undefined_when_all_tied():
    with pytest.raises(UndefinedStatisticError):
        kendalls_w([[2, 5], [2, 5], [2, 5]])


@pytest.mark.parametrize(
    "bad", [[[1, 2, 3]], [[1], [2]], [1, 2, 3], [[1, None], [2, 2]], [[1.0, float("nan")], [2.0, 1.0]]]
)
def test_shape_and_fill_checks(bad):
    with pytest.raises(ValidationError):
        fleiss_kappa(bad)


def test_category_counts_rows_sum_to_raters():
    counts, cats = category_counts([["x", "y", "y"], ["z", "z", "z"]])
    assert cats == ["x", "y", "z"]
    assert counts.sum(axis=1).tolist() == [3, 3]


def _random_matrices(seed: int, count: int, levels: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, 12))
        m = int(rng.integers(2, 7))
        yield rng.integers(1, levels + 1, size=(n, m)).tolist()


def test_fleiss_against_oracle_on_random_matrices():
    checked = 0
    for matrix in _random_matrices(7, 100, 4):
        try:
            expected = fleiss_oracle(matrix)
        except ZeroDivisionError:
            with pytest.raises(UndefinedStatisticError):
                fleiss_kappa(matrix)
            continue
        assert fleiss_kappa(matrix) == pytest.approx(expected, abs=1e-9)
        checked += 1
    assert checked >= 90


def test_kendall_against_oracle_on_random_matrices():
    checked = 0
    for matrix in _random_matrices(11, 100, 5):
        try:
            expected = kendall_oracle(matrix)
        except ZeroDivisionError:
            with pytest.raises(UndefinedStatisticError):
                kendalls_w(matrix)
            continue
        assert kendalls_w(matrix) == pytest.approx(expected, abs=1e-9)
        checked += 1
    assert checked >= 90


matrices = st.integers(2, 8).flatmap(
    lambda n: st.integers(2, 5).flatmap(
        lambda m: st.lists(st.lists(st.integers(1, 4), min_size=m, max_size=m), min_size=n, max_size=n)
    )
)


@settings(max_examples=150)
@given(matrices)
def test_kendall_range_and_rater_order_invariance(matrix):
    try:
        w = kendalls_w(matrix)
    except UndefinedStatisticError:
        return
    assert -1e-12 <= w <= 1.0 + 1e-12
    flipped = [list(reversed(row)) for row in matrix]
    assert kendalls_w(flipped) == pytest.approx(w, abs=1e-12)


@settings(max_examples=150)
@given(matrices, st.randoms(use_true_random=False))
def test_fleiss_invariant_under_subject_and_rater_permutation(matrix, rnd):
    try:
        k = fleiss_kappa(matrix)
    except UndefinedStatisticError:
        return
    assert k <= 1.0 + 1e-12
    rows = [row[:] for row in matrix]
    rnd.shuffle(rows)
    for row in rows:
        rnd.shuffle(row)
    assert fleiss_kappa(rows) == pytest.approx(k, abs=1e-12)


@settings(max_examples=100)
@given(matrices)
def test_fleiss_label_renaming(matrix):
    try:
        k = fleiss_kappa(matrix)
    except UndefinedStatisticError:
        return
    renamed = [[f"c{v}" for v in row] for row in matrix]
    assert fleiss_kappa(renamed) == pytest.approx(k, abs=1e-12)


def test_load_matrix_csv_and_json(tmp_path):
    (tmp_path / "m.csv").write_text("1,2\n3, 4.5\nyes,no\n")
    assert load_matrix(tmp_path / "m.csv") == [[1, 2], [3, 4.5], ["yes", "no"]]
    (tmp_path / "m.json").write_text(json.dumps([[1, 2], [2, 2]]))
    assert load_matrix(tmp_path / "m.json") == [[1, 2], [2, 2]]
