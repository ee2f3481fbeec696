"""Coverage-guided issue discovery and triage.

Uncovered code segments are handed to an LLM that reports up to three
defects each; the resulting issues are ranked by a deterministic
hierarchical ranker and an LLM re-ranker, and rankings can be scored
against golden annotations.
"""

__version__ = "0.1.0"
