import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_gateway
from oracles import accession_oracle
from researchflow.config import default_profile
from researchflow.errors import ReferenceLookupError, ReportGenerationError, StageError, ValidationError
from researchflow.literature import (
    NOVEL,
    Block,
    CorpusEntry,
    ExperimentalReport,
    OutlineEntry,
    ReferenceCorpus,
    ReportAnalysis,
    ReportSection,
    SectionAnalysis,
    Step,
    StructuredDocument,
    build_reference_corpus,
    extract_dataset_ids,
)
from researchflow.literature.generate import ReportWriter
from researchflow.literature.stage import run_literature
from researchflow.review import Reviewer
from researchflow.search.records import FROM_REPORT, DatasetRecord


@pytest.mark.parametrize(
    "text,expected",
    [
        ("Data from GSE14520 and GSE76427.", ["GSE14520", "GSE76427"]),
        ("(GSE1),GSE1;GPL570", ["GSE1", "GPL570"]),
        ("XGSE12 GSE12a GSE GSEx12", []),
        ("platform_GPL96 GDS3/GSM42", ["GPL96", "GDS3", "GSM42"]),
        ("gse123 is lower case", []),
    ],
)
def test_extract_dataset_ids_cases(text, expected):
    assert extract_dataset_ids(text) == expected


pieces = st.lists(
    st.sampled_from(["GSE", "GDS", "GSM", "GPL", "GSX", "12", "7", "a", "Z", " ", ",", "_", "(", ")", ".", "-", "\n"]),
    max_size=30,
)


@given(pieces)
def test_extract_dataset_ids_matches_oracle(parts):
    text = "".join(parts)
    assert extract_dataset_ids(text) == accession_oracle(text)


def small_report(pid="P1", headings=("A", "B")):
    return ExperimentalReport(
        pid,
        [ReportSection(h, [OutlineEntry("e", [Step("1.1", f"{h} step uses GSE5")])]) for h in headings],
    )


def test_report_round_trip_and_validation():
    rep = small_report()
    rep.validate()
    assert ExperimentalReport.from_dict(rep.to_dict()).to_dict() == rep.to_dict()
    bad = ExperimentalReport("P", [ReportSection("A", [OutlineEntry("e", [])])])
    with pytest.raises(ValidationError):
        bad.validate()
    ExperimentalReport("P", [ReportSection("A", [OutlineEntry("e", [], non_experimental=True)])]).validate()
    with pytest.raises(ValidationError):
        small_report(headings=("A", "A")).validate()


def test_corpus_keeps_only_high_sections():
    rep = small_report()
    analysis = ReportAnalysis("P1", [SectionAnalysis("A", "high", "reuse"), SectionAnalysis("B", "medium", "maybe")])
    corpus = build_reference_corpus([rep], [analysis])
    assert corpus.keys() == ["P1/A"]
    entry = corpus.lookup("P1/A")
    assert entry.analysis == "reuse" and entry.content.startswith("# A")
    with pytest.raises(ReferenceLookupError):
        corpus.lookup("P1/B")


def test_corpus_requires_matching_analysis():
    with pytest.raises(ValidationError):
        build_reference_corpus([small_report()], [])
    with pytest.raises(ValidationError):
        build_reference_corpus([small_report()], [ReportAnalysis("P1", [SectionAnalysis("A", "high", "")])])
    with pytest.raises(ValidationError):
        SectionAnalysis("A", "great", "")


def test_corpus_retrieve_and_novel():
    c = ReferenceCorpus([CorpusEntry("P", "A", "x", "y"), CorpusEntry("P", "B", "x", "y")])
    assert [e.key for e in c.retrieve(["P/B", NOVEL, "P/A", "P/B"])] == ["P/B", "P/A"]
    assert c.resolves(NOVEL) and c.resolves("P/A") and not c.resolves("P/C")
    with pytest.raises(ValidationError):
        c.add(CorpusEntry("P", "A", "x", "y"))
    with pytest.raises(ValidationError):
        c.add(CorpusEntry("P", "C", "x", "y", grade="low"))


@given(
    st.lists(
        st.tuples(st.sampled_from("PQR"), st.sampled_from("ABC"), st.sampled_from(["high", "medium", "low"])),
        unique_by=lambda r: r[:2],
    )
)
def test_corpus_is_exactly_the_high_sections(rows):
    reports, analyses = {}, {}
    for pid, heading, grade in rows:
        reports.setdefault(pid, []).append(ReportSection(heading, [OutlineEntry("e", [Step("1.1", "s")])]))
        analyses.setdefault(pid, []).append(SectionAnalysis(heading, grade, ""))
    corpus = build_reference_corpus(
        [ExperimentalReport(p, s) for p, s in reports.items()], [ReportAnalysis(p, a) for p, a in analyses.items()]
    )
    expected = [f"{p}/{h}" for p, h, g in rows if g == "high"]
    assert sorted(corpus.keys()) == sorted(expected)


def test_document_invariants():
    with pytest.raises(ValidationError):
        StructuredDocument("P", [])
    with pytest.raises(ValidationError):
        StructuredDocument("P", [Block(" ", "x")])


def _writer(gw, rounds=6):
    return ReportWriter(
        gw, default_profile("report-generator"), default_profile("analyst"),
        Reviewer(gw, default_profile("reviewer")), max_rounds=rounds,
    )


def _doc(client, pid):
    from researchflow.search.records import PaperRecord

    return client.fetch_fulltext(PaperRecord("pmc", pid, "t", "a", fulltext_available=True, pmcid=pid))


def test_report_writer_layers(script, client, request_obj):
    gw = make_gateway(script)
    gen = _writer(gw).generate_report(_doc(client, "PMC9001"))
    rep = gen.report
    assert [s.heading for s in rep.sections] == ["Data acquisition and preprocessing", "Differential expression analysis"]
    step = rep.sections[0].outline[0].steps[0]
    assert step.id == "1.1" and "GSE14520" in step.text and "GPL570" in step.details
    assert step.results == "Result for step 1.1."
    assert not gen.unapproved
    assert set(gen.transcripts) >= {"literature.PMC9001.headings", "literature.PMC9001.h2.results"}
    analysis = _writer(gw).analyze_report(rep, request_obj)
    assert [e.grade for e in analysis.entries] == ["high", "high"]
    assert len(gw.backend.calls_for("literature.PMC9001.analysis", role="analyst")) == 2


def test_report_writer_unknown_step_mapping_is_repaired(script, client):
    key = "report-generator:literature.PMC9001.h1.steps"
    good = script[key]["always"]
    script[key] = [{"steps": [{"entry": "Nope", "text": "x"}], "non_experimental": []}, good]
    gen = _writer(make_gateway(script)).generate_report(_doc(client, "PMC9001"))
    assert len(gen.report.sections[0].steps()) == len(good["steps"])


def test_report_writer_fails_after_repeated_malformed(script, client):
    script["report-generator:literature.PMC9001.headings"] = {"always": "no json"}
    with pytest.raises(ReportGenerationError):
        _writer(make_gateway(script)).generate_report(_doc(client, "PMC9001"))


def test_reviewer_cap_flags_unapproved(script, client):
    script["reviewer:literature"] = {"always": "REVISE: tighter"}
    gen = _writer(make_gateway(script), rounds=2).generate_report(_doc(client, "PMC9003"))
    assert gen.unapproved and all(gen.transcripts[k]["rounds"] == 2 for k in gen.unapproved)


def test_run_literature(script, client, request_obj, config):
    docs = [_doc(client, p) for p in ("PMC9001", "PMC9002", "PMC9003")]
    found = [DatasetRecord("GSE14520", "t", "d", usable=True), DatasetRecord("GSE10001", "t", "d", usable=False)]
    out = run_literature(make_gateway(script), client, request_obj, config, docs, found)
    assert [r.paper_id for r in out.reports] == ["PMC9001", "PMC9002", "PMC9003"]
    assert out.corpus.keys() == [
        "PMC9001/Data acquisition and preprocessing",
        "PMC9001/Differential expression analysis",
        "PMC9002/Co-expression network construction",
        "PMC9003/Survival modeling",
    ]
    by_acc = {d.accession: d for d in out.datasets}
    assert by_acc["GSE76427"].provenance == FROM_REPORT and by_acc["GSE76427"].usable
    assert [d.accession for d in out.useful_datasets] == ["GSE14520", "GSE76427"]
    assert any("GPL570" in w for w in out.warnings)


def test_run_literature_without_high_sections(script, client, request_obj, config):
    for key, value in script.items():
        if ".analysis." in key:
            value["always"]["grade"] = "medium"
    docs = [_doc(client, "PMC9001")]
    with pytest.raises(StageError) as exc:
        run_literature(make_gateway(script), client, request_obj, config, docs, [])
    assert exc.value.stage == "literature"
