"""Exception types shared across the pipeline."""

from __future__ import annotations


class IssueSpecterError(Exception):
    """Base class for all pipeline errors."""


class InputError(IssueSpecterError):
    """Bad user input: malformed files, inconsistent references, bad config."""


class EnvironmentFailure(IssueSpecterError):
    """Backend or host environment could not serve the request."""


# coverage
class ParseError(InputError):
    pass


class UnsupportedFormat(InputError):
    pass


class MissingSourceFile(InputError):
    def __init__(self, path: str):
        super().__init__(f"source file not found: {path}")
        self.path = path


class LineOutOfRange(InputError):
    def __init__(self, path: str, line: int, length: int):
        super().__init__(f"{path}: line {line} is beyond end of file ({length} lines)")
        self.path = path
        self.line = line
        self.length = length


# llm gateway
class EmptySegment(InputError):
    pass


class TooManyIssues(InputError):
    pass


class BudgetExceeded(EnvironmentFailure):
    pass


class TransportError(EnvironmentFailure):
    pass


class RateLimited(TransportError):
    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class MissingCredential(EnvironmentFailure):
    pass


class SchemaViolation(IssueSpecterError):
    """LLM output does not follow the expected schema.

    ``index`` identifies the offending entry when the problem is local to one.
    """

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"entry {index}: {message}"
        super().__init__(message)
        self.index = index


class RankNotPermutation(SchemaViolation):
    pass


class UnknownIssueId(SchemaViolation):
    pass


class RankingRejected(IssueSpecterError):
    pass


# issue store
class StorageError(IssueSpecterError):
    pass


class CorruptRecord(StorageError):
    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: corrupt record ({reason})")
        self.path = path
        self.line = line


# patch harness
class HarnessError(IssueSpecterError):
    pass


class TestTimeout(HarnessError):
    __test__ = False  # keep pytest from collecting this

    def __init__(self, timeout: float, stdout: str = "", stderr: str = ""):
        super().__init__(f"test command timed out after {timeout:g}s")
        self.timeout = timeout
        self.stdout = stdout
        self.stderr = stderr


class ResultParseError(HarnessError):
    pass


class CommandNotFound(HarnessError):
    pass


# metrics
class UnknownId(InputError):
    pass


class GoldenMismatch(InputError):
    pass
