import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_gateway
from researchflow.config import default_profile
from researchflow.errors import StageError, TaskExtractionError, ValidationError
from researchflow.programming.tasks import DryLabTask, extract_tasks, tasks_from_json, tasks_to_json
from researchflow.programming.loop import (
    CODEGEN_FAILURE_LEVEL,
    TaskContext,
    GIVE_UP,
    RETRY,
    SUCCESS,
    TaskOutcome,
    Termination,
    generate_code,
    refine_or_terminate,
    run_programming,
    run_task_loop,
)
from researchflow.programming.sandbox import CodeArtifact, ExecutionResult, output_manifest, prepare_rev_dir, write_streams

CODER = default_profile("code-generator")
JUDGE = default_profile("judge")
TASK = DryLabTask(1, "Make a table.", (("csv", "input"),), (("csv", "table.csv"),))


class FakeSandbox:
    """Runs nothing; exit statuses come from a per-revision plan."""

    def __init__(self, plan=None, default=0):
        self.plan = plan or {}
        self.default = default
        self.calls = []

    def describe(self):
        return {"backend": "fake"}

    def execute(self, code, rev_dir, tasks_root):
        self.calls.append(code)
        outputs = prepare_rev_dir(code, rev_dir)
        status = self.plan.get((code.task_id, code.revision), self.default)
        if status == 0:
            (outputs / "table.csv").write_text(f"rev{code.revision}\n")
        result = ExecutionResult(
            code.task_id, code.revision, status, "out", "" if status == 0 else "Error: boom",
            output_manifest(outputs),
        )
        write_streams(rev_dir, result)
        return result


def code(rev, **kw):
    return dict({"action": "code", "language": "python", "code": f"print({rev})"}, **kw)


def test_task_records():
    data = tasks_to_json([TASK, DryLabTask(2, "Plot.", (), (("png", "plot"),))])
    assert [t.id for t in tasks_from_json(data)] == [1, 2]
    with pytest.raises(ValueError):
        tasks_from_json({"tasks": [dict(TASK.to_dict(), id=2)]})
    with pytest.raises(ValidationError):
        DryLabTask(1, "x", (), ())
    with pytest.raises(ValidationError):
        DryLabTask(0, "x", (), (("a", "b"),))


def test_extract_tasks_fixture(script, protocol):
    tasks = extract_tasks(make_gateway(script), default_profile("extractor"), protocol)
    assert [t.id for t in tasks] == [1, 2]
    assert tasks[1].inputs == (("csv", "counts.csv from task 1"),)


def test_extract_tasks_bad_numbering(protocol):
    bad = {"tasks": [dict(TASK.to_dict(), id=3)]}
    with pytest.raises(TaskExtractionError):
        extract_tasks(make_gateway({"programming.tasks": {"always": bad}}), default_profile("extractor"), protocol)


def test_first_generation_defaults_to_r_and_cannot_terminate():
    gw = make_gateway({"programming.task1.rev1": [{"action": "terminate", "reason": "no"}, {"code": "x <- 1"}]})
    art = generate_code(gw, CODER, TASK, TaskContext(["GSE1"]))
    assert art == CodeArtifact(1, "R", "x <- 1", 1)
    prompt = gw.backend.transcript[0]["messages"][-1]["content"]
    assert "Write a R script" in prompt and "GSE1" in prompt


def test_refinement_prompt_carries_previous_run():
    gw = make_gateway({"programming.task1.rev2": [{"action": "terminate", "reason": "data missing"}]})
    prev = (CodeArtifact(1, "python", "open('x')", 1), ExecutionResult(1, 1, 1, "so", "FileNotFoundError: x"))
    out = generate_code(gw, CODER, TASK, TaskContext(), prev)
    assert out == Termination(1, "data missing")
    prompt = gw.backend.transcript[0]["messages"][-1]["content"]
    assert "open('x')" in prompt and "exited with status 1" in prompt and "FileNotFoundError: x" in prompt


def test_unsupported_language_is_repaired():
    gw = make_gateway({"programming.task1.rev1": [code(1, language="julia"), code(1)]})
    assert generate_code(gw, CODER, TASK, TaskContext()).language == "python"


def _history(statuses):
    return [
        (CodeArtifact(1, "python", "x", i), ExecutionResult(1, i, s, "", ""))
        for i, s in enumerate(statuses, start=1)
    ]


def test_refine_decisions():
    assert refine_or_terminate(_history([1, 0]), 10) == SUCCESS
    assert refine_or_terminate(_history([1]), 10) == RETRY
    assert refine_or_terminate(_history([1] * 10), 10) == GIVE_UP
    assert refine_or_terminate(_history([1]), 10, terminated=True) == GIVE_UP
    with pytest.raises(ValueError):
        refine_or_terminate([], 3)


@given(st.lists(st.integers(0, 2), min_size=1, max_size=15), st.integers(1, 12))
def test_refine_decision_table(statuses, cap):
    decision = refine_or_terminate(_history(statuses), cap)
    if statuses[-1] == 0:
        assert decision == SUCCESS
    elif len(statuses) >= cap:
        assert decision == GIVE_UP
    else:
        assert decision == RETRY


def test_loop_converges_and_records_results(tmp_path):
    gw = make_gateway({"programming.task1.rev1": [code(1)], "programming.task1.rev2": [code(2)]})
    sb = FakeSandbox({(1, 1): 1})
    out = run_task_loop(TASK, TaskContext(), gateway=gw, coder=CODER, judge=JUDGE, sandbox=sb, tasks_root=tmp_path)
    assert out.status == "success" and out.iterations == 2 and out.final_revision == 2
    assert out.error_level is None
    stored = json.loads((tmp_path / "1" / "rev1" / "result.json").read_text())
    assert stored["exit_status"] == 1 and "duration_s" not in stored
    assert (tmp_path / "1" / "rev2" / "outputs" / "table.csv").read_text() == "rev2\n"


def test_loop_stops_at_cap_and_grades(tmp_path):
    gw = make_gateway(
        {
            "code-generator:programming.task1": {"always": code(0)},
            "judge:programming.task1.grade": [{"level": 2, "rationale": "runtime error"}],
        }
    )
    sb = FakeSandbox(default=1)
    out = run_task_loop(TASK, TaskContext(), gateway=gw, coder=CODER, judge=JUDGE, sandbox=sb, tasks_root=tmp_path,
                        cap=3)
    assert out.status == "failed" and out.iterations == 3 and len(sb.calls) == 3
    assert out.error_level == 2 and not out.terminated
    grade_prompt = gw.backend.calls_for("programming.task1.grade")[0]["messages"][-1]["content"]
    assert "Error: boom" in grade_prompt


def test_loop_honors_terminate(tmp_path):
    gw = make_gateway(
        {
            "programming.task1.rev1": [code(1)],
            "programming.task1.rev2": [{"action": "terminate", "reason": "impossible"}],
            "judge:programming.task1.grade": [{"level": 3, "rationale": "missing data"}],
        }
    )
    out = run_task_loop(TASK, TaskContext(), gateway=gw, coder=CODER, judge=JUDGE, sandbox=FakeSandbox(default=1),
                        tasks_root=tmp_path)
    assert out.terminated and out.iterations == 1 and out.error_level == 3


def test_codegen_failure_is_structural(tmp_path):
    gw = make_gateway({"programming.task1.rev1": {"always": "not json"}})
    sb = FakeSandbox()
    out = run_task_loop(TASK, TaskContext(), gateway=gw, coder=CODER, judge=JUDGE, sandbox=sb, tasks_root=tmp_path)
    assert out.status == "failed" and out.error_level == CODEGEN_FAILURE_LEVEL and out.iterations == 0
    assert not sb.calls and not gw.backend.calls_for("programming.task1.grade")


def test_outcome_invariant():
    with pytest.raises(ValueError):
        TaskOutcome(1, "success", 1, None, error_level=2)
    with pytest.raises(ValueError):
        TaskOutcome(1, "failed", 1, None)


def test_run_programming_passes_outputs_forward(script, protocol, config, tmp_path):
    gw = make_gateway(script)
    out = run_programming(gw, protocol, config, tmp_path, FakeSandbox({(1, 1): 1}))
    assert [o.status for o in out.outcomes] == ["success", "success"]
    assert out.success_rate == 100.0
    prompt = gw.backend.calls_for("programming.task2.rev1")[0]["messages"][-1]["content"]
    assert "1/rev2/outputs/table.csv" in prompt
    assert "1/rev1/outputs" not in prompt


def test_failed_tasks_are_not_context(script, protocol, config, tmp_path):
    script["code-generator:programming.task1.rev2"] = [{"action": "terminate", "reason": "x"}]
    script["judge:programming.task1.grade"] = [{"level": 1, "rationale": "env"}]
    gw = make_gateway(script)
    out = run_programming(gw, protocol, config, tmp_path, FakeSandbox({(1, 1): 1}))
    assert [o.status for o in out.outcomes] == ["failed", "success"]
    assert out.success_rate == 50.0
    prompt = gw.backend.calls_for("programming.task2.rev1")[0]["messages"][-1]["content"]
    assert "Outputs of earlier tasks" not in prompt


def test_grading_failure_is_a_stage_error(script, protocol, config, tmp_path):
    script["code-generator:programming.task1.rev2"] = [{"action": "terminate", "reason": "x"}]
    script["judge:programming.task1.grade"] = {"always": "level two"}
    with pytest.raises(StageError):
        run_programming(make_gateway(script), protocol, config, tmp_path, FakeSandbox({(1, 1): 1}))
