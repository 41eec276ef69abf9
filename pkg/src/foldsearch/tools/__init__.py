"""Search, visit and reverse-image-search tools."""

from foldsearch.tools.base import (
    FAILED_PAGE,
    SearchResult,
    ToolBackendConfig,
    cap_output,
    format_page_block,
    format_search_section,
)
from foldsearch.tools.extract import extract_page_content, parse_html
from foldsearch.tools.gateway import ToolGateway
from foldsearch.tools.mocks import (
    EchoSummarizer,
    FixtureGateway,
    FixtureStore,
    RecordingGateway,
    StaticPageFetcher,
    StaticSearchBackend,
    SyntheticPageFetcher,
    SyntheticSearchBackend,
    fixture_key,
)

__all__ = [
    "FAILED_PAGE",
    "EchoSummarizer",
    "FixtureGateway",
    "FixtureStore",
    "RecordingGateway",
    "SearchResult",
    "StaticPageFetcher",
    "StaticSearchBackend",
    "SyntheticPageFetcher",
    "SyntheticSearchBackend",
    "ToolBackendConfig",
    "ToolGateway",
    "cap_output",
    "extract_page_content",
    "fixture_key",
    "format_page_block",
    "format_search_section",
    "parse_html",
]
