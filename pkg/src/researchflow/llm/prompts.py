"""Prompt assets, addressed by identifier.

System prompts are keyed by the agent profile's ``system_prompt_id``. Rubrics
are kept as plain text so they can be inspected and versioned alongside runs.
"""

from __future__ import annotations

import json

JSON_ONLY = "Reply with a single JSON object and nothing else."

HELPFULNESS_RUBRIC = """\
1: off topic. Nothing in the title or abstract bears on the objective, its conditions or its requirements.
2: marginal. A passing overlap with the request; little that could be reused.
3: partial. Relevant to part of the request; some methods or data might carry over after further reading.
4: strong. Closely matches the request; much of its approach or data looks reusable.
5: central. Directly addresses the objective under matching conditions; likely to shape the design."""

REPORT_QUALITY_RUBRIC = """\
logical_soundness:
  5 every conclusion follows from the steps before it
  4 sound overall with an occasional jump
  3 the thread can be followed but has visible holes
  2 frequent non sequiturs
  1 no coherent line of reasoning
detail_level:
  5 an expert could rerun every step from the report alone
  4 enough to rerun most steps; a few are thin
  3 key parameters or tools are often absent
  2 mostly vague descriptions
  1 essentially no actionable detail
consistency:
  5 matches the source article throughout
  4 small slips against the source
  3 some claims the source does not support
  2 repeated departures from the source
  1 largely contradicts or misreads the source
readability:
  5 well ordered and easy to scan
  4 readable with a few awkward sections
  3 uneven ordering slows the reader down
  2 hard to follow
  1 effectively unreadable"""

ERROR_LEVEL_RUBRIC = """\
1 Environment: a path, package or network resource was unavailable; the logic itself may be fine
2 Surface: the code does not parse, names are misspelled, or values have the wrong type
3 Interface: calls receive the wrong arguments, indexing goes out of range, or memory runs out
4 Design: the method is wrong, the program is badly structured, or essential parts are missing"""

SYSTEM_PROMPTS = {
    "query-generator": (
        "You turn a biomedical research request into Boolean search queries for NCBI "
        "databases. Extract the key concepts, expand them with synonyms and common "
        "abbreviations joined by OR, and combine concepts with AND. Quote multi-word "
        "phrases. Field tags such as [tiab] or [title] are allowed. Do not use NOT. "
        + JSON_ONLY
    ),
    "filter": (
        "You judge whether retrieved papers and datasets help a research objective, "
        "using only the title and abstract (papers) or the description (datasets). "
        + JSON_ONLY
    ),
    "report-generator": (
        "You convert a research paper into a standardized experimental report, one "
        "layer at a time: headings, outline, steps, step details, step results. Stay "
        "faithful to the paper; never invent procedures. " + JSON_ONLY
    ),
    "analyst": (
        "You grade sections of an experimental report for how useful they are as a "
        "reference when designing a new experiment for the given request, and suggest "
        "what to reuse and what to modify. " + JSON_ONLY
    ),
    "designer": (
        "You design dry-lab experimental protocols grounded in reference material. "
        "Cite reference sources by their tag, or use the tag 'novel' for parts you "
        "design without a reference. " + JSON_ONLY
    ),
    "extractor": (
        "You break an experimental protocol into sequential computational tasks with "
        "typed inputs and outputs. " + JSON_ONLY
    ),
    "code-generator": (
        "You write self-contained analysis scripts for one task at a time. Files the "
        "script writes go to the current working directory. Outputs of earlier tasks "
        "are readable under the directory named by the TASKS_ROOT environment "
        "variable. When shown an execution error, either fix the code or give up "
        'with {"action": "terminate", "reason": ...}. ' + JSON_ONLY
    ),
    "reviewer": (
        "You review intermediate outputs of a research pipeline. Reply with "
        '{"decision": "approve"} when the output is acceptable, otherwise '
        '{"decision": "revise", "feedback": "<what to change>"}.'
    ),
    "judge": (
        "You are a strict evaluator of experimental protocols, reports and code "
        "failures. Follow the given rubric exactly. " + JSON_ONLY
    ),
}


def system_prompt(prompt_id: str) -> str:
    try:
        return SYSTEM_PROMPTS[prompt_id]
    except KeyError:
        raise KeyError(f"no prompt asset named {prompt_id!r}") from None


def dump(value) -> str:
    """Stable JSON rendering used inside prompts."""
    return json.dumps(value, indent=2, ensure_ascii=False, sort_keys=False)


def request_block(request) -> str:
    lines = [f"Research objective: {request.objective}"]
    if request.conditions:
        lines.append(f"Conditions: {request.conditions}")
    if request.requirements:
        lines.append(f"Requirements: {request.requirements}")
    return "\n".join(lines)
