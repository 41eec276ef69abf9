"""Shared tool-gateway types and the observation text formats."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

from foldsearch.history import ImagePayload

FAILED_PAGE = "Failed to parse the web page."
TRUNCATION_MARKER = "\n[... tool output truncated ...]"


@dataclass(frozen=True)
class SearchResult:
    title: str
    snippet: str
    url: str
    image_url: str | None = None

    def __post_init__(self):
        if not self.url:
            raise ValueError("search result url must be non-empty")


@dataclass(frozen=True)
class ToolBackendConfig:
    search_provider: str = "mock"
    api_key: str | None = field(default=None, repr=False)
    google_cse_id: str | None = None
    summarizer_url: str | None = None
    summarizer_model: str | None = None
    summarizer_api_key: str | None = field(default=None, repr=False)
    fetch_timeout: float = 20.0
    max_results_web: int = 10
    max_results_image: int = 5
    max_output_bytes: int = 32 * 1024
    max_page_chars: int = 60_000
    retries: int = 2
    backoff_s: float = 1.0
    min_interval_s: float = 0.0
    image_search_thumbnails: bool = False

    def __post_init__(self):
        if self.search_provider not in ("serper", "google", "mock"):
            raise ValueError(f"unknown search provider {self.search_provider!r}")
        if self.max_results_web < 1 or self.max_results_image < 1:
            raise ValueError("max_results must be >= 1")


class SearchBackend(Protocol):
    def search(self, query: str, n: int) -> list[SearchResult]: ...

    def reverse_image_search(self, image: ImagePayload, n: int) -> list[SearchResult]: ...

    def image_lookup(self, query: str, n: int) -> list[SearchResult]: ...


class PageFetcher(Protocol):
    def fetch(self, url: str) -> bytes: ...


class Summarizer(Protocol):
    def summarize(self, content: str, goal: str) -> str: ...


def format_search_section(query: str, results: Sequence[SearchResult]) -> str:
    lines = [f"A Google search for '{query}' found {len(results)} results:", "", "## Web Results"]
    for i, r in enumerate(results, 1):
        lines.append(f"{i}. [{r.title}]({r.url})")
        if r.snippet:
            lines.append(r.snippet)
        lines.append("")
    return "\n".join(lines).rstrip("\n")


def format_search_failure(query: str, reason: str) -> str:
    return f"A Google search for '{query}' failed: {reason}"


def format_page_block(i: int, title: str, url: str, summary: str) -> str:
    return f"[Title_{i}: {title}]({url})\nSummary_{i}: {summary}"


def cap_output(text: str, limit_bytes: int) -> str:
    """Truncate ``text`` to ``limit_bytes`` UTF-8 bytes, marker included."""
    data = text.encode("utf-8")
    if len(data) <= limit_bytes:
        return text
    room = max(0, limit_bytes - len(TRUNCATION_MARKER.encode("utf-8")))
    head = data[:room].decode("utf-8", errors="ignore")
    return head + TRUNCATION_MARKER
