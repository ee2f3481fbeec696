"""LLM access: prompt templates, backends, response parsing."""

from .backends import API_KEY_ENV, LiveBackend, LlmBackend, MockBackend, load_fixtures, request_hash
from .gateway import AuditLog, Gateway, RetryPolicy, complete
from .prompts import (
    BUG_IDENTIFICATION,
    ISSUE_RANKING,
    NOT_VERIFIABLE,
    PromptRequest,
    RankingInput,
    render_bug_prompt,
    render_ranking_prompt,
)
from .schema import (
    BugEntry,
    RankingItem,
    RawBugResponse,
    RawRankingResponse,
    parse_bug_response,
    parse_ranking_response,
)

__all__ = [
    "API_KEY_ENV", "AuditLog", "BUG_IDENTIFICATION", "BugEntry", "Gateway", "ISSUE_RANKING",
    "LiveBackend", "LlmBackend", "MockBackend", "NOT_VERIFIABLE", "PromptRequest", "RankingInput",
    "RankingItem", "RawBugResponse", "complete", "RawRankingResponse", "RetryPolicy", "load_fixtures",
    "parse_bug_response", "parse_ranking_response", "render_bug_prompt", "render_ranking_prompt",
    "request_hash",
]
