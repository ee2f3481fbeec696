"""Request execution: retries, byte budget, concurrency limit, audit log."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, TypeVar

from .._io import dumps
from ..errors import BudgetExceeded, RateLimited, SchemaViolation, TransportError
from .backends import LlmBackend, request_hash
from .prompts import PromptRequest, with_json_reminder

log = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    base_delay: float = 1.0
    max_delay: float = 30.0

    def delay(self, attempt: int, hint: Optional[float] = None) -> float:
        if hint is not None:
            return min(self.max_delay, hint)
        return min(self.max_delay, self.base_delay * 2 ** (attempt - 1))


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class AuditLog:
    """Append-only JSONL record of every answered request."""

    def __init__(self, path: str | Path, clock: Callable[[], datetime] = utc_now):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self._lock = threading.Lock()

    def record(self, request: PromptRequest, response_text: str) -> None:
        entry = {
            "request_hash": request_hash(request),
            "template_id": request.template_id,
            "model_id": request.model_id,
            "rendered_text": request.rendered_text,
            "response_text": response_text,
            "timestamp": self.clock().isoformat(),
            "attempt": request.attempt,
        }
        line = dumps(entry) + "\n"
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)


class Gateway:
    """Shared entry point to a backend.

    Safe to use from several threads; at most ``max_in_flight`` requests are
    outstanding at once.  ``byte_budget`` caps the total prompt plus
    response bytes over the gateway's lifetime.
    """

    def __init__(
        self,
        backend: LlmBackend,
        *,
        audit_log: Optional[AuditLog] = None,
        retry: RetryPolicy = RetryPolicy(),
        max_in_flight: int = 4,
        byte_budget: Optional[int] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.audit_log = audit_log
        self.retry = retry
        self.byte_budget = byte_budget
        self.bytes_used = 0
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._budget_lock = threading.Lock()

    def _charge(self, n: int) -> None:
        with self._budget_lock:
            if self.byte_budget is not None and self.bytes_used + n > self.byte_budget:
                raise BudgetExceeded(
                    f"byte budget {self.byte_budget} exhausted ({self.bytes_used} used, {n} requested)"
                )
            self.bytes_used += n

    def complete(self, request: PromptRequest) -> str:
        """Send ``request``, retrying transport failures with backoff."""
        self._charge(len(request.rendered_text.encode("utf-8")))
        last_error: Optional[TransportError] = None
        for attempt in range(1, self.retry.max_attempts + 1):
            sent = replace(request, attempt=request.attempt + attempt - 1)
            try:
                with self._slots:
                    text = self.backend.send(sent)
            except TransportError as exc:
                last_error = exc
                if attempt == self.retry.max_attempts:
                    break
                hint = exc.retry_after if isinstance(exc, RateLimited) else None
                delay = self.retry.delay(attempt, hint)
                log.warning("attempt %d failed (%s); retrying in %.1fs", attempt, exc, delay)
                self._sleep(delay)
                continue
            size = len(text.encode("utf-8"))
            if size > request.max_output_bytes:
                raise BudgetExceeded(f"response is {size} bytes, limit is {request.max_output_bytes}")
            self._charge(size)
            if self.audit_log is not None:
                self.audit_log.record(sent, text)
            return text
        assert last_error is not None
        raise last_error

    def complete_parsed(self, request: PromptRequest, parse: Callable[[str], T]) -> T:
        """Complete and parse; on a schema violation ask once more with a
        reminder to emit valid JSON, then give up."""
        raw = self.complete(request)
        try:
            return parse(raw)
        except SchemaViolation as exc:
            log.info("schema violation (%s); re-prompting once", exc)
        return parse(self.complete(with_json_reminder(request)))


def complete(request: PromptRequest, backend: LlmBackend, **gateway_options) -> str:
    """One-off completion through a throwaway :class:`Gateway`."""
    return Gateway(backend, **gateway_options).complete(request)
