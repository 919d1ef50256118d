import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from oracles import brevity_oracle, completeness_oracle, correctness_oracle, logic_oracle
from researchflow.errors import UndefinedMetricError, ValidationError
from researchflow.evaluation.metrics import (
    REFERENCE_STEP_LENGTH,
    MetricScores,
    ProtocolStats,
    brevity_penalty,
    completeness,
    correctness,
    count_step_length,
    execution_success_rate,
    logical_soundness,
)


def stats(n_ts=10, n_as=0, n_cs=10, n_rs=10, l_steps=5.0, sections=1):
    return ProtocolStats(sections=sections, n_ts=n_ts, n_as=n_as, n_cs=n_cs, n_rs=n_rs, l_steps=l_steps)


class TestStepLength:
    def test_short_sentences_do_not_count(self):
        assert count_step_length("Run DESeq2. Normalize counts.") == 0

    def test_seven_words_is_the_first_that_counts(self):
        assert count_step_length("one two three four five six seven") == 1
        assert count_step_length("one two three four five six") == 0

    def test_fixture_paragraph(self):
        text = (
            "Quality control. "
            "Trim adapters from every read with cutadapt using default settings! "
            "Align reads. "
            "Then count reads per gene with featureCounts against the GENCODE annotation? "
            "Finally normalize the resulting count matrix with the median of ratios method"
        )
        assert count_step_length(text) == 3

    def test_empty_text(self):
        assert count_step_length("") == 0


class TestBrevityPenalty:
    def test_long_steps_are_not_penalized(self):
        assert brevity_penalty(7.327) == 1.0

    def test_reference_length_boundary(self):
        assert brevity_penalty(REFERENCE_STEP_LENGTH) == 1.0

    def test_clamp(self):
        assert math.exp(1 - 4.42) < 0.5
        assert brevity_penalty(1.0) == 0.5

    def test_zero_is_floor(self):
        assert brevity_penalty(0.0) == 0.5

    def test_negative_rejected(self):
        with pytest.raises(ValidationError):
            brevity_penalty(-0.1)

    def test_unclamped_middle_branch(self):
        assert brevity_penalty(4.0) == pytest.approx(brevity_oracle(4.0), abs=1e-12)
        assert 0.5 < brevity_penalty(4.0) < 1.0

    @given(st.floats(min_value=0.0, max_value=50.0, allow_nan=False))
    def test_range(self, length):
        assert 0.5 <= brevity_penalty(length) <= 1.0

    @given(st.floats(0.0, 30.0), st.floats(0.0, 30.0))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert brevity_penalty(lo) <= brevity_penalty(hi)


class TestRatios:
    def test_completeness(self):
        assert completeness(stats(n_ts=10, n_as=0)) == 1.0
        assert completeness(stats(n_ts=5, n_as=5, n_cs=5, n_rs=5)) == 0.5

    def test_completeness_undefined(self):
        with pytest.raises(UndefinedMetricError):
            completeness(stats(n_ts=0, n_as=0, n_cs=0, n_rs=0))

    def test_correctness(self):
        assert correctness(stats(n_cs=9, l_steps=6.0)) == pytest.approx(0.9, abs=1e-12)
        assert correctness(stats(n_cs=10, l_steps=1.0)) == 0.5
        assert correctness(stats(n_cs=0)) == 0.0

    def test_correctness_undefined(self):
        with pytest.raises(UndefinedMetricError):
            correctness(stats(n_ts=0, n_as=1, n_cs=0, n_rs=0))

    def test_logical_soundness(self):
        assert logical_soundness(stats(n_rs=10)) == 1.0
        assert logical_soundness(stats(n_rs=0)) == 0.0
        assert logical_soundness(stats(n_ts=4, n_cs=4, n_rs=3)) == 0.75

    def test_logical_soundness_undefined(self):
        with pytest.raises(UndefinedMetricError):
            logical_soundness(stats(n_ts=0, n_as=2, n_cs=0, n_rs=0))

    @pytest.mark.parametrize(
        "kw",
        [dict(sections=0), dict(n_cs=11), dict(n_rs=-1), dict(n_as=-1), dict(l_steps=-1.0)],
    )
    def test_stats_invariants(self, kw):
        with pytest.raises(ValidationError):
            stats(**kw)


@st.composite
def protocol_stats(draw):
    n_ts = draw(st.integers(1, 200))
    return ProtocolStats(
        sections=draw(st.integers(1, 20)),
        n_ts=n_ts,
        n_as=draw(st.integers(0, 200)),
        n_cs=draw(st.integers(0, n_ts)),
        n_rs=draw(st.integers(0, n_ts)),
        l_steps=draw(st.floats(0.0, 20.0)),
    )


@given(protocol_stats())
def test_metric_ranges(s):
    for value in (completeness(s), correctness(s), logical_soundness(s)):
        assert 0.0 <= value <= 1.0


@given(protocol_stats())
def test_formulas_match_oracle(s):
    assert completeness(s) == pytest.approx(completeness_oracle(s.n_ts, s.n_as), abs=1e-12)
    assert correctness(s) == pytest.approx(correctness_oracle(s.n_cs, s.n_ts, s.l_steps), abs=1e-12)
    assert logical_soundness(s) == pytest.approx(logic_oracle(s.n_rs, s.n_ts), abs=1e-12)


@given(protocol_stats(), st.integers(0, 200))
def test_correctness_monotone_in_correct_steps(s, k):
    assume(k <= s.n_ts)
    lo, hi = sorted((k, s.n_cs))
    a = ProtocolStats(s.sections, s.n_ts, s.n_as, lo, s.n_rs, s.l_steps)
    b = ProtocolStats(s.sections, s.n_ts, s.n_as, hi, s.n_rs, s.l_steps)
    assert correctness(a) <= correctness(b)


@given(protocol_stats(), st.integers(0, 200))
def test_completeness_antitone_in_added_steps(s, extra):
    more = ProtocolStats(s.sections, s.n_ts, s.n_as + extra, s.n_cs, s.n_rs, s.l_steps)
    assert completeness(more) <= completeness(s)


class TestScores:
    def test_overall_is_sum(self):
        sc = MetricScores(1.0, 0.5, 0.25, 0.75, 1.0)
        assert sc.overall == pytest.approx(3.5)
        assert sc.to_dict()["overall"] == pytest.approx(3.5)

    def test_dimension_range_enforced(self):
        with pytest.raises(ValidationError):
            MetricScores(1.2, 0, 0, 0, 0)

    @given(st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5))
    def test_overall_range(self, dims):
        assert 0.0 <= MetricScores(*dims).overall <= 5.0


class _Outcome:
    def __init__(self, status):
        self.status = status


def test_execution_success_rate():
    outcomes = [_Outcome("success")] * 5 + [_Outcome("failed")] * 3
    assert execution_success_rate(outcomes) == 62.5
    assert execution_success_rate([_Outcome("success")] * 4) == 100.0
    with pytest.raises(UndefinedMetricError):
        execution_success_rate([])
