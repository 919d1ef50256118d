from __future__ import annotations

import copy
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from researchflow.config import validate_config
from researchflow.llm.backends import ScriptedBackend
from researchflow.llm.gateway import Gateway
from researchflow.request import ResearchRequest
from researchflow.search.eutils import EUtilsClient, RateLimiter
from researchflow.search.stub import EUtilsStub

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def load_fixture(name: str):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


def make_gateway(script: dict, **kw) -> Gateway:
    return Gateway(ScriptedBackend(script), backoff_base=0.0, sleep=lambda s: None, **kw)


def sandbox_works() -> bool:
    if shutil.which("unshare") is None:
        return False
    probe = subprocess.run(
        ["unshare", "--mount", "--pid", "--fork", "--mount-proc", "true"], capture_output=True
    )
    return probe.returncode == 0


SANDBOX_OK = sandbox_works()
needs_sandbox = pytest.mark.skipif(not SANDBOX_OK, reason="mount namespaces unavailable on this host")


@pytest.fixture
def corpus() -> dict:
    return load_fixture("corpus.json")


@pytest.fixture
def script() -> dict:
    """A fresh copy of the full mock script; tests may edit it."""
    return copy.deepcopy(load_fixture("mock_script.json"))


@pytest.fixture
def request_obj() -> ResearchRequest:
    return ResearchRequest.from_dict(load_fixture("request.json"))


@pytest.fixture
def stub(corpus):
    with EUtilsStub(corpus) as s:
        yield s


@pytest.fixture
def client(stub):
    # the stub does not need NCBI's politeness limit; tests of the limiter build their own
    c = EUtilsClient(stub.base_url, api_key="", limiter=RateLimiter(1000), sleep=lambda s: None, backoff_base=0.0)
    yield c
    c.close()


@pytest.fixture
def config():
    return validate_config({"sandbox": {"timeout_s": 30, "memory_mb": 2048}})


CORPUS_KEYS = (
    ("PMC9001", "Data acquisition and preprocessing"),
    ("PMC9001", "Differential expression analysis"),
    ("PMC9002", "Co-expression network construction"),
    ("PMC9003", "Survival modeling"),
)


@pytest.fixture
def ref_corpus():
    from researchflow.literature import CorpusEntry, ReferenceCorpus

    return ReferenceCorpus([CorpusEntry(p, h, f"# {h}\n- [1.1] step from {p}", f"Reuse {h.lower()}.") for p, h in CORPUS_KEYS])


@pytest.fixture
def useful_datasets():
    from researchflow.search.records import FROM_REPORT, DatasetRecord

    return [
        DatasetRecord("GSE14520", "HCC patients", "tumour and non-tumour", usable=True),
        DatasetRecord("GSE76427", "Singapore cohort", "clinical outcomes", usable=True, provenance=FROM_REPORT),
    ]


@pytest.fixture
def protocol(script, request_obj, config, ref_corpus, useful_datasets):
    from researchflow.design import run_design

    return run_design(make_gateway(script), request_obj, config, ref_corpus, useful_datasets).protocol


# one "PASS/FAIL criterion N: ..." line per acceptance check, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
