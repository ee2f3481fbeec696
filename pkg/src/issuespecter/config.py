"""Pipeline configuration.

Settings come from, in increasing precedence: built-in defaults, a TOML
file, ``ISSUESPECTER_<FIELD>`` environment variables, command-line flags.
Relative paths in the TOML file are resolved against the file's directory.

Example file::

    project_name = "myproject"
    source_root = "src"                 # subject project checkout
    coverage_file = "coverage.json"
    coverage_format = "canonical-json"  # or "lcov", "slipcover-json"
    context_lines = 10
    backend = "mock"                    # or "live" (needs ISSUESPECTER_API_KEY)
    model_id = "gpt-5-mini"
    top_k = 10
    enable_harness = true
    test_command = "python -m pytest -q --junitxml={results_file} {project_dir}"

    [sampling]                          # passed through to the live backend
    temperature = 1.0
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InputError

ENV_PREFIX = "ISSUESPECTER_"
_PATH_FIELDS = ("source_root", "coverage_file", "output_dir", "golden_file", "mock_fixtures", "project_root")


@dataclass
class PipelineConfig:
    project_name: str = ""
    source_root: Optional[Path] = None
    # checkout the tests run against; defaults to source_root
    project_root: Optional[Path] = None
    coverage_file: Optional[Path] = None
    coverage_format: str = "canonical-json"
    context_lines: int = 10
    backend: str = "mock"
    model_id: str = "gpt-5-mini"
    endpoint: str = "https://api.openai.com/v1"
    sampling: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    mock_ranking: str = "shuffle"
    # audit log whose answers the mock replays before synthesizing
    mock_fixtures: Optional[Path] = None
    llm_timeout: float = 120.0
    max_attempts: int = 4
    byte_budget: Optional[int] = None
    top_k: int = 10
    # informational: the prompt always asks for three entries
    max_bugs_per_segment: int = 3
    test_command: str = ""
    test_timeout: float = 600.0
    keep_artifacts: bool = False
    generation_concurrency: int = 1
    max_in_flight: int = 4
    harness_concurrency: int = 1
    output_dir: Path = Path("issuespecter-out")
    golden_file: Optional[Path] = None
    enable_harness: bool = False
    enable_regression_penalty: bool = False
    relevance_mode: str = "binary"

    def validate(self, *, need: tuple[str, ...] = ()) -> None:
        if self.top_k < 1:
            raise InputError("top_k must be >= 1")
        if self.context_lines < 0:
            raise InputError("context_lines must be >= 0")
        if self.backend not in ("live", "mock"):
            raise InputError(f"backend must be 'live' or 'mock', not {self.backend!r}")
        if self.relevance_mode not in ("binary", "graded"):
            raise InputError(f"relevance_mode must be 'binary' or 'graded', not {self.relevance_mode!r}")
        for name in need:
            value = getattr(self, name)
            if value in (None, ""):
                raise InputError(f"configuration is missing {name}")
            if name in _PATH_FIELDS and not Path(value).exists():
                raise InputError(f"{name} does not exist: {value}")

    @property
    def test_root(self) -> Optional[Path]:
        return self.project_root or self.source_root

    def fingerprint(self) -> str:
        data = {k: (str(v) if isinstance(v, Path) else v) for k, v in dataclasses.asdict(self).items()}
        return hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()


def _coerce(name: str, raw: Any) -> Any:
    ftype = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}[name]
    if raw is None:
        return None
    if name in _PATH_FIELDS:
        return Path(raw)
    if not isinstance(raw, str):
        return raw
    if "bool" in ftype:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise InputError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if "int" in ftype:
            return int(raw)
        if "float" in ftype:
            return float(raw)
    except ValueError as exc:
        raise InputError(f"{name}: {exc}") from exc
    if "dict" in ftype:
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"{name}: expected a JSON object: {exc}") from exc
    return raw


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> PipelineConfig:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    values: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"invalid config {path}: {exc}") from exc
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        for name, raw in data.items():
            value = _coerce(name, raw)
            if name in _PATH_FIELDS and value is not None and not value.is_absolute():
                value = path.parent / value
            values[name] = value
    env = os.environ if environ is None else environ
    for name in known:
        key = ENV_PREFIX + name.upper()
        if key in env:
            values[name] = _coerce(name, env[key])
    for name, raw in (overrides or {}).items():
        if name not in known:
            raise InputError(f"unknown setting {name!r}")
        if raw is not None:
            values[name] = _coerce(name, raw)
    return PipelineConfig(**values)
