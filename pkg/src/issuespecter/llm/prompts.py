"""Prompt templates and rendering.

Templates use ``<<NAME>>`` slots so that code snippets full of braces and
quotes can be substituted without any escaping.  Substitution is a single
pass, so a payload that happens to contain ``<<NAME>>`` is left alone.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from ..coverage import UncoveredSegment, split_lines
from ..errors import BudgetExceeded, EmptySegment, TooManyIssues

BUG_IDENTIFICATION = "bug-identification"
ISSUE_RANKING = "issue-ranking"
TEMPLATE_IDS = (BUG_IDENTIFICATION, ISSUE_RANKING)

DEFAULT_MODEL_ID = "gpt-5-mini"
DEFAULT_MAX_OUTPUT_BYTES = 256 * 1024
MAX_RANKED_ISSUES = 10
NOT_VERIFIABLE = "not verifiable"

_SLOT_RE = re.compile(r"<<([A-Z_]+)>>")

BUG_TEMPLATE = """\
Role: You are an expert Python developer and test engineer. You will be provided with a Python code snippet extracted from <<PROJECT_NAME>>.

Task:
Analyze the code, identify up to three distinct defects, and generate corresponding bug reports. In the absence of bugs, include a boolean indicator explicitly stating that no bug was found.

For each bug you identify, generate an issue report and provide an associated pull request suggestion. After completing the issue report, organize all found issues according to the precise JSON schema output. For every proposed fix, ensure the code maintains original functionality and style.

For each bug, assess its severity (very low, low, medium, high, or critical) and specify affected operating system(s). Indicate whether documentation inconsistencies are involved and propose a Python code fix when appropriate, preserving original functionality and coding style.

Input:
Python code snippet to be analyzed: <<CODE_SNIPPET>>

JSON Output:
A JSON array of three objects, each with a boolean indicating whether a bug is present. If a bug exists, the object includes title, summary, bug severity, OS, generated issue, a boolean for inconsistent documentation, and fixed code, ensuring consistent, parseable output.

Use exactly these keys for every object: "bug_found" (boolean), "title", "summary", "bug_severity" (one of "critical", "high", "medium", "low", "very low"), "os" (a list of operating system names, or the string "all"), "generated_issue" (the full issue body including step-by-step reproduction instructions), "inconsistent_documentation" (boolean) and "fixed_code". "fixed_code" must be the complete replacement for the uncovered lines only, or null when no fix is proposed. Objects with "bug_found": false carry no other keys.
"""

RANKING_TEMPLATE = """\
Role:
You are a software engineering expert tasked with ranking up to 10 issue reports from a specified project according to urgency, scope and bug impact.

Task:
Each issue includes associated attributes: bug severity, affected os, number of unit tests failing from the project test suite when the proposed Python fix is applied, and word count.

Evaluate each issue based on logical validity, alignment with best practices and documentation, and support from external technical resources, when available, and assess the issue's fit with the project's architecture and design patterns. Additionally, evaluate the impact of failed tests, noting if a proposed fix passes all tests. Rank issues in descending order of impact and urgency, with "1" as the highest. If required data is missing or unverifiable, clearly indicate this in the output.

JSON Output:
For each ranked issue, generate a structured Markdown report under the validity report field. The final output should be a valid JSON object with the ranking of each issue, with each object containing issue id, reasoning, validity classification (a boolean to indicate if the issue is valid or not), confidence rating, and the validity report.

Return an object of the form {"rankings": [{"issue_id": ..., "rank": ..., "reasoning": ..., "validity_classification": ..., "confidence_rating": ..., "validity_report": ...}]} with one object per input issue and ranks forming a permutation of 1..N.

Input JSON: The JSON object input to process:
<<ISSUES_ATTRIBUTES>>
"""

JSON_REMINDER = (
    "\n\nYour previous answer could not be parsed. Emit only valid JSON that "
    "follows the schema above, with no commentary."
)

TEMPLATES = {BUG_IDENTIFICATION: BUG_TEMPLATE, ISSUE_RANKING: RANKING_TEMPLATE}


@dataclass(frozen=True)
class PromptRequest:
    template_id: str
    rendered_text: str
    model_id: str = DEFAULT_MODEL_ID
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES
    attempt: int = 1

    def __post_init__(self) -> None:
        if self.template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template id {self.template_id!r}")
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")


@dataclass(frozen=True)
class RankingInput:
    issue_id: str
    title: str
    generated_issue: str
    bug_severity: str
    os: Union[str, Sequence[str]]
    failing_test_count: Union[int, str]
    word_count: int

    def to_dict(self) -> dict:
        os_value = self.os if isinstance(self.os, str) else list(self.os)
        return {
            "issue_id": self.issue_id,
            "title": self.title,
            "generated_issue": self.generated_issue,
            "bug_severity": self.bug_severity,
            "os": os_value,
            "failing_test_count": self.failing_test_count,
            "word_count": self.word_count,
        }


def fill(template: str, values: Mapping[str, str]) -> str:
    """Fill every ``<<SLOT>>`` of ``template`` in one pass.

    Raises ``KeyError`` when the template has a slot with no value.
    """
    return _SLOT_RE.sub(lambda m: values[m.group(1)], template)


def template_slots(template: str) -> set[str]:
    return set(_SLOT_RE.findall(template))


def _fence(text: str) -> str:
    longest = max((len(m) for m in re.findall(r"`{3,}", text)), default=0)
    return "`" * max(3, longest + 1)


def code_snippet(segment: UncoveredSegment) -> str:
    text = segment.context_before + segment.body + segment.context_after
    first_line = segment.start_line - len(split_lines(segment.context_before))
    fence = _fence(text)
    closing = "" if text.endswith("\n") else "\n"
    return (
        f"\nFile: {segment.path} (snippet starts at line {first_line}; "
        f"uncovered lines {segment.start_line}-{segment.end_line})\n"
        f"{fence}python\n{text}{closing}{fence}"
    )


def render_bug_prompt(
    project_name: str,
    segment: UncoveredSegment,
    *,
    model_id: str = DEFAULT_MODEL_ID,
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES,
    max_prompt_bytes: int | None = None,
) -> PromptRequest:
    if not segment.body.strip():
        raise EmptySegment(f"segment {segment.segment_id} has an empty body")
    text = fill(BUG_TEMPLATE, {"PROJECT_NAME": project_name, "CODE_SNIPPET": code_snippet(segment)})
    _check_budget(text, max_prompt_bytes)
    return PromptRequest(BUG_IDENTIFICATION, text, model_id, max_output_bytes)


def render_ranking_prompt(
    issues: Sequence[RankingInput],
    *,
    project_name: str | None = None,
    model_id: str = DEFAULT_MODEL_ID,
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES,
    max_prompt_bytes: int | None = None,
) -> PromptRequest:
    if not issues:
        raise ValueError("at least one issue is required")
    if len(issues) > MAX_RANKED_ISSUES:
        raise TooManyIssues(f"{len(issues)} issues given, at most {MAX_RANKED_ISSUES} can be ranked")
    payload: dict = {"issues": [i.to_dict() for i in issues]}
    if project_name is not None:
        payload = {"project": project_name, **payload}
    text = fill(RANKING_TEMPLATE, {"ISSUES_ATTRIBUTES": json.dumps(payload, indent=2, ensure_ascii=False)})
    _check_budget(text, max_prompt_bytes)
    return PromptRequest(ISSUE_RANKING, text, model_id, max_output_bytes)


def with_json_reminder(request: PromptRequest) -> PromptRequest:
    return PromptRequest(
        request.template_id,
        request.rendered_text + JSON_REMINDER,
        request.model_id,
        request.max_output_bytes,
        request.attempt + 1,
    )


def _check_budget(text: str, max_prompt_bytes: int | None) -> None:
    if max_prompt_bytes is not None:
        size = len(text.encode("utf-8"))
        if size > max_prompt_bytes:
            raise BudgetExceeded(f"prompt is {size} bytes, budget is {max_prompt_bytes}")
