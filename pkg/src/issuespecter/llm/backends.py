"""LLM backends: a live chat-completion client and a deterministic mock."""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
from pathlib import Path
from typing import Any, Mapping, Optional, Protocol

from ..errors import MissingCredential, RateLimited, TransportError
from .prompts import BUG_IDENTIFICATION, ISSUE_RANKING, PromptRequest

API_KEY_ENV = "ISSUESPECTER_API_KEY"
DEFAULT_ENDPOINT = "https://api.openai.com/v1"


class LlmBackend(Protocol):
    name: str

    def send(self, request: PromptRequest) -> str: ...


def request_hash(request: PromptRequest) -> str:
    """Content address of a request; the attempt counter is not part of it."""
    key = "\0".join((request.template_id, request.model_id, request.rendered_text))
    return hashlib.sha256(key.encode("utf-8")).hexdigest()


class LiveBackend:
    """OpenAI-compatible ``/chat/completions`` client."""

    name = "live"

    def __init__(
        self,
        endpoint: str = DEFAULT_ENDPOINT,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        sampling: Optional[Mapping[str, Any]] = None,
        client=None,
    ):
        api_key = api_key or os.environ.get(API_KEY_ENV)
        if not api_key:
            raise MissingCredential(f"set {API_KEY_ENV} to use the live backend")
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.sampling = dict(sampling or {})
        self._client = client

    def _http(self):
        if self._client is None:
            import httpx

            self._client = httpx.Client(timeout=self.timeout)
        return self._client

    def send(self, request: PromptRequest) -> str:
        import httpx

        payload = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.rendered_text}],
            **self.sampling,
        }
        try:
            resp = self._http().post(
                f"{self.endpoint}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            try:
                delay = float(retry_after) if retry_after else None
            except ValueError:
                delay = None
            raise RateLimited("backend returned 429", retry_after=delay)
        if resp.status_code >= 400:
            raise TransportError(f"backend returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response body: {resp.text[:200]}") from exc


# -- mock --------------------------------------------------------------------

_OS_CHOICES = (
    "all", "all", "all", ["Linux"], ["Windows"], ["windows", "macOS"],
    ["osx", "linux"], ["Linux", "macOS", "Windows"],
)
_SEVERITIES = ("critical", "high", "high", "medium", "medium", "low", "very low")
_VOCAB = (
    "the function returns an unexpected value when input is empty and callers "
    "assume a valid result which leads to an exception later during processing "
    "of user data boundary check missing state not reset error silently ignored "
    "path encoding timeout resource handle leaked configuration option ignored"
).split()
_SNIPPET_RE = re.compile(
    r"File: (?P<path>.+?) \(snippet starts at line (?P<first>\d+); "
    r"uncovered lines (?P<start>\d+)-(?P<end>\d+)\)\n(?P<fence>`{3,})python\n"
)


def _uncovered_body(prompt: str) -> tuple[str, str] | None:
    m = _SNIPPET_RE.search(prompt)
    if m is None:
        return None
    rest = prompt[m.end():]
    close = rest.rfind("\n" + m.group("fence"))
    if close < 0:
        return None
    lines = rest[: close + 1].splitlines(keepends=True)
    lo = int(m.group("start")) - int(m.group("first"))
    hi = int(m.group("end")) - int(m.group("first")) + 1
    return m.group("path"), "".join(lines[lo:hi])


def _words(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(_VOCAB) for _ in range(n))


def _synthetic_bug_answer(rng: random.Random, prompt: str) -> str:
    found = _uncovered_body(prompt)
    where = f"{found[0]}" if found else "snippet"
    entries: list[dict] = []
    for i in range(rng.choice((0, 1, 1, 2, 2, 3, 3))):
        body = (
            f"{_words(rng, rng.randint(20, 120))}\n\nSteps to reproduce:\n"
            f"1. {_words(rng, rng.randint(5, 15))}\n2. {_words(rng, rng.randint(5, 15))}\n\n"
            f"Expected behaviour: {_words(rng, rng.randint(5, 30))}"
        )
        fixed = found[1] if found and rng.random() < 0.6 else None
        entries.append({
            "bug_found": True,
            "title": f"{where}: {_words(rng, rng.randint(3, 7))} ({i + 1})",
            "summary": _words(rng, rng.randint(8, 20)),
            "bug_severity": rng.choice(_SEVERITIES),
            "os": rng.choice(_OS_CHOICES),
            "generated_issue": body,
            "inconsistent_documentation": rng.random() < 0.2,
            "fixed_code": fixed,
        })
    while len(entries) < 3:
        entries.append({"bug_found": False})
    return "```json\n" + json.dumps(entries, indent=2) + "\n```"


def _ranking_input_ids(prompt: str) -> list[str]:
    marker = prompt.rfind("Input JSON:")
    start = prompt.find("{", marker)
    try:
        payload, _ = json.JSONDecoder().raw_decode(prompt, start)
        return [str(i["issue_id"]) for i in payload["issues"]]
    except (ValueError, KeyError, TypeError):
        return []


def _synthetic_ranking_answer(rng: random.Random, prompt: str, strategy: str) -> str:
    ids = _ranking_input_ids(prompt)
    order = list(ids)
    if strategy == "shuffle":
        rng.shuffle(order)
    rankings = []
    for issue_id in ids:
        valid = rng.random() < 0.8
        rankings.append({
            "issue_id": issue_id,
            "rank": order.index(issue_id) + 1,
            "reasoning": _words(rng, rng.randint(8, 20)),
            "validity_classification": valid,
            "confidence_rating": rng.choice(("high", "medium", "low")),
            "validity_report": f"## Validity\n\n{'Valid' if valid else 'Invalid'}: {_words(rng, 12)}\n",
        })
    return json.dumps({"rankings": rankings}, indent=2)


class MockBackend:
    """Deterministic offline backend.

    Requests whose hash appears in ``fixtures`` get the recorded answer;
    everything else gets a synthetic answer drawn from an RNG seeded with
    ``(seed, request hash)``.  With ``strict=True`` unmatched requests fail.
    ``ranking`` selects how synthetic rankings order issues: ``"shuffle"``
    or ``"echo"`` (input order, i.e. the rule ranking).
    """

    name = "mock"

    def __init__(
        self,
        seed: int = 0,
        fixtures: Optional[Mapping[str, str]] = None,
        *,
        strict: bool = False,
        ranking: str = "shuffle",
    ):
        if ranking not in ("shuffle", "echo"):
            raise ValueError(f"unknown mock ranking strategy {ranking!r}")
        self.seed = seed
        self.fixtures = dict(fixtures or {})
        self.strict = strict
        self.ranking = ranking
        self.calls: list[PromptRequest] = []

    @classmethod
    def from_audit_log(cls, path: str | Path, seed: int = 0, **kwargs) -> "MockBackend":
        return cls(seed, load_fixtures(path), **kwargs)

    def send(self, request: PromptRequest) -> str:
        self.calls.append(request)
        key = request_hash(request)
        if key in self.fixtures:
            return self.fixtures[key]
        if self.strict:
            raise TransportError(f"no recorded response for request {key[:12]}")
        rng = random.Random(f"{self.seed}:{key}")
        if request.template_id == BUG_IDENTIFICATION:
            return _synthetic_bug_answer(rng, request.rendered_text)
        if request.template_id == ISSUE_RANKING:
            return _synthetic_ranking_answer(rng, request.rendered_text, self.ranking)
        raise TransportError(f"mock cannot answer template {request.template_id!r}")


def load_fixtures(path: str | Path) -> dict[str, str]:
    """Read an audit log into a ``request_hash -> response_text`` table.

    Later records win, so a re-run that appended fresh answers replays them.
    """
    table: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                table[record["request_hash"]] = record["response_text"]
    return table
