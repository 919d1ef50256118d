import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_gateway
from researchflow.config import default_profile
from researchflow.errors import (
    BackendUnavailableError,
    CredentialError,
    MalformedOutputError,
    ScriptUnderflowError,
    TransientBackendError,
    ValidationError,
)
from researchflow.llm.backends import OpenAIBackend, RawCompletion, ScriptedBackend
from researchflow.llm.gateway import MAX_PARSE_ATTEMPTS, Gateway, extract_json

USER = [{"role": "user", "content": "hello"}]
SCHEMA = {"type": "object", "required": ["n"], "properties": {"n": {"type": "integer"}}}


class Flaky:
    name = "flaky"

    def __init__(self, failures, exc=TransientBackendError("HTTP 503", 503)):
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def send(self, profile, messages, step_key):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc
        return RawCompletion("ok", 3, 1)


def test_retries_transient_failures_with_exponential_backoff():
    delays = []
    backend = Flaky(3)
    gw = Gateway(backend, max_attempts=5, backoff_base=0.5, sleep=delays.append)
    out = gw.complete(default_profile("designer"), USER, step_key="design.x")
    assert out.text == "ok" and out.attempt == 4
    assert delays == [0.5, 1.0, 2.0]


def test_gives_up_after_max_attempts():
    backend = Flaky(10)
    gw = Gateway(backend, max_attempts=3, backoff_base=0, sleep=lambda s: None)
    with pytest.raises(BackendUnavailableError):
        gw.complete(default_profile("designer"), USER, step_key="design.x")
    assert backend.calls == 3


def test_credential_error_is_not_retried():
    backend = Flaky(1, CredentialError("HTTP 401"))
    gw = Gateway(backend, sleep=lambda s: None)
    with pytest.raises(CredentialError):
        gw.complete(default_profile("designer"), USER, step_key="design.x")
    assert backend.calls == 1


def test_system_prompt_prepended_and_telemetry_per_stage():
    gw = make_gateway({"designer:design.a": ["one two"], "judge:evaluation.b": [{"n": 1}]})
    gw.complete(default_profile("designer"), USER, step_key="design.a")
    gw.complete(default_profile("judge"), USER, step_key="evaluation.b")
    sent = gw.backend.transcript[0]["messages"]
    assert sent[0]["role"] == "system" and sent[0]["content"]
    totals = gw.telemetry.stage_totals()
    assert totals["design"]["calls"] == 1 and totals["design"]["completion_tokens"] == 2
    assert totals["evaluation"]["calls"] == 1


def test_empty_messages_rejected():
    with pytest.raises(ValidationError):
        make_gateway({}).complete(default_profile("judge"), [], step_key="x")


def test_structured_repairs_then_succeeds():
    gw = make_gateway({"judge:e.k": ["not json at all", '{"n": "str"}', 'Sure: {"n": 3} done']})
    out = gw.complete_structured(default_profile("judge"), USER, SCHEMA, step_key="e.k")
    assert out.value == {"n": 3} and out.attempts == 3
    last = gw.backend.transcript[-1]["messages"]
    assert "schema violation" in last[-1]["content"]
    assert last[-2] == {"role": "assistant", "content": '{"n": "str"}'}


def test_structured_gives_up_after_three_attempts():
    gw = make_gateway({"judge:e.k": {"always": "nope"}})
    with pytest.raises(MalformedOutputError) as exc:
        gw.complete_structured(default_profile("judge"), USER, SCHEMA, step_key="e.k")
    assert exc.value.attempts == MAX_PARSE_ATTEMPTS == 3
    assert exc.value.raw_text == "nope"
    assert len(gw.backend.transcript) == 3


def test_structured_check_hook_rejects():
    def odd(v):
        if v["n"] % 2 == 0:
            raise ValueError("n must be odd")

    gw = make_gateway({"judge:e.k": [{"n": 2}, {"n": 5}]})
    out = gw.complete_structured(default_profile("judge"), USER, SCHEMA, step_key="e.k", check=odd)
    assert out.value == {"n": 5}


def test_extract_json_variants():
    assert extract_json('```json\n{"a": 1}\n```') == {"a": 1}
    assert extract_json('prefix [1, 2] suffix') == [1, 2]
    assert extract_json('{"a": {"b": [1]}}') == {"a": {"b": [1]}}
    with pytest.raises(ValueError):
        extract_json("no braces here")


@given(st.recursive(st.none() | st.booleans() | st.integers() | st.text(), lambda c: st.lists(c) | st.dictionaries(st.text(), c), max_leaves=10).filter(lambda v: isinstance(v, (dict, list))))
def test_extract_json_round_trip(value):
    assert extract_json(json.dumps(value)) == value
    assert extract_json("```\n" + json.dumps(value) + "\n```") == value


class TestScriptedBackend:
    def test_prefix_fallback_and_role_preference(self):
        be = ScriptedBackend({"design": {"always": "generic"}, "reviewer:design.details": ["specific"]})
        rev, des = default_profile("reviewer"), default_profile("designer")
        assert be.send(rev, USER, "design.details.s1.round1").text == "specific"
        assert be.send(rev, USER, "design.details.s1.round2").text == "generic"
        assert be.send(des, USER, "design.details.s1.round1").text == "generic"

    def test_underflow(self):
        be = ScriptedBackend({"judge:a": ["x"]})
        be.send(default_profile("judge"), USER, "a")
        with pytest.raises(ScriptUnderflowError):
            be.send(default_profile("judge"), USER, "a")

    def test_bad_scripts(self):
        with pytest.raises(ValidationError):
            ScriptedBackend({"wizard:a": ["x"]})
        with pytest.raises(ValidationError):
            ScriptedBackend({"a": "not a list"})
        with pytest.raises(ValidationError):
            ScriptedBackend({"judge:a": ["x"], ("judge", "a"): ["y"]})

    def test_non_strings_sent_as_json(self):
        be = ScriptedBackend({"a": [{"k": [1]}]})
        assert json.loads(be.send(default_profile("judge"), USER, "a").text) == {"k": [1]}

    def test_calls_for(self):
        be = ScriptedBackend({"a": {"always": "x"}})
        for key in ("a.b", "a.bc", "a.b.c"):
            be.send(default_profile("judge"), USER, key)
        assert [c["step_key"] for c in be.calls_for("a.b")] == ["a.b", "a.b.c"]

    def test_from_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"judge:x": ["y"]}))
        assert ScriptedBackend.from_file(p).send(default_profile("judge"), USER, "x").text == "y"
        p.write_text("[]")
        with pytest.raises(ValidationError):
            ScriptedBackend.from_file(p)


def _openai(handler, key="sk-test"):
    return OpenAIBackend("http://llm.test/v1", "m1", api_key=key, transport=httpx.MockTransport(handler))


def test_openai_backend_request_and_usage():
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        seen["url"] = str(request.url)
        seen["body"] = json.loads(request.content)
        return httpx.Response(
            200,
            json={"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 7, "completion_tokens": 2}},
        )

    out = _openai(handler).send(default_profile("reviewer"), USER, "k")
    assert out == RawCompletion("hi", 7, 2)
    assert seen["auth"] == "Bearer sk-test"
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["body"]["model"] == "m1" and seen["body"]["temperature"] == 0.1


@pytest.mark.parametrize(
    "status,exc",
    [(401, CredentialError), (403, CredentialError), (429, TransientBackendError), (503, TransientBackendError), (400, ValidationError)],
)
def test_openai_backend_status_mapping(status, exc):
    be = _openai(lambda r: httpx.Response(status, text="err"))
    with pytest.raises(exc):
        be.send(default_profile("judge"), USER, "k")


def test_openai_backend_transport_error_is_transient():
    def handler(request):
        raise httpx.ConnectError("refused")

    with pytest.raises(TransientBackendError):
        _openai(handler).send(default_profile("judge"), USER, "k")


def test_gateway_over_http_recovers_from_429():
    replies = iter([httpx.Response(429), httpx.Response(200, json={"choices": [{"message": {"content": "fine"}}]})])
    gw = Gateway(_openai(lambda r: next(replies)), backoff_base=0, sleep=lambda s: None)
    assert gw.complete(default_profile("judge"), USER, step_key="k").text == "fine"
