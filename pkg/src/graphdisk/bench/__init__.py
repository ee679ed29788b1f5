"""Benchmark harness: artifact plumbing, sweeps and reports."""

from .report import analyze, make_row, read_jsonl, summary, write_jsonl
from .runner import (Artifacts, BuildConfig, StageError, build_artifacts, load_artifacts,
                     open_index, run_queries, summarize)

__all__ = [
    "analyze", "make_row", "read_jsonl", "summary", "write_jsonl", "Artifacts", "BuildConfig",
    "StageError", "build_artifacts", "load_artifacts", "open_index", "run_queries", "summarize",
]
