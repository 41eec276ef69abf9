"""Executes validated tool calls and turns backend results into observations."""

from __future__ import annotations

import logging
import os
import threading
import time
from typing import Callable, Sequence, TypeVar

from foldsearch.errors import (
    BackendUnavailable,
    EmptyQueries,
    FetchError,
    FixtureMissing,
    ImageIndexOutOfRange,
    SummarizerUnavailable,
    ToolError,
    Unparseable,
    UnknownTool,
)
from foldsearch.history import ImagePayload, Observation, Query
from foldsearch.protocol.grammar import ToolCall
from foldsearch.tools.base import (
    FAILED_PAGE,
    PageFetcher,
    SearchBackend,
    SearchResult,
    Summarizer,
    ToolBackendConfig,
    cap_output,
    format_page_block,
    format_search_failure,
    format_search_section,
)
from foldsearch.tools.extract import parse_html

log = logging.getLogger(__name__)

T = TypeVar("T")


class ToolGateway:
    """Runs ``web_search``, ``visit`` and ``image_search``.

    Safe to share between concurrently running episodes: backends are only
    called through :meth:`_call`, which serializes the rate limiter. Tools
    never touch the interaction history; the caller appends the returned
    observation.
    """

    def __init__(
        self,
        config: ToolBackendConfig,
        search: SearchBackend,
        fetcher: PageFetcher,
        summarizer: Summarizer,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.search = search
        self.fetcher = fetcher
        self.summarizer = summarizer
        self._sleep = sleep
        self._rate_lock = threading.Lock()
        self._last_call = 0.0

    @classmethod
    def from_config(cls, config: ToolBackendConfig, sleep: Callable[[float], None] = time.sleep) -> "ToolGateway":
        from foldsearch.tools import backends, mocks

        if config.search_provider == "mock":
            return cls(config, mocks.SyntheticSearchBackend(), mocks.SyntheticPageFetcher(), mocks.EchoSummarizer(), sleep)
        api_key = config.api_key
        if config.search_provider == "serper":
            search = backends.SerperBackend(api_key or "", timeout=config.fetch_timeout)
        else:
            search = backends.GoogleCSEBackend(api_key or "", config.google_cse_id or "", timeout=config.fetch_timeout)
        if not config.summarizer_url or not config.summarizer_model:
            raise ValueError("live tools need summarizer_url and summarizer_model")
        summarizer = backends.ChatSummarizer.from_endpoint(
            config.summarizer_url, config.summarizer_model, api_key=config.summarizer_api_key or os.environ.get("SUMMARIZER_API_KEY")
        )
        return cls(config, search, backends.HttpPageFetcher(timeout=config.fetch_timeout), summarizer, sleep)

    # plumbing

    def _throttle(self) -> None:
        if self.config.min_interval_s <= 0:
            return
        with self._rate_lock:
            wait = self._last_call + self.config.min_interval_s - time.monotonic()
            if wait > 0:
                self._sleep(wait)
            self._last_call = time.monotonic()

    def _call(self, fn: Callable[[], T]) -> T:
        """Call a backend with up to ``retries`` retries on BackendUnavailable."""
        attempt = 0
        while True:
            self._throttle()
            try:
                return fn()
            except BackendUnavailable:
                if attempt >= self.config.retries:
                    raise
                delay = self.config.backoff_s * (2**attempt)
                attempt += 1
                log.info("backend unavailable, retry %d/%d in %.1fs", attempt, self.config.retries, delay)
                self._sleep(delay)

    def _summarize(self, content: str, goal: str) -> str:
        try:
            return self.summarizer.summarize(content, goal)
        except SummarizerUnavailable:
            log.info("summarizer unavailable, retrying once")
        try:
            return self.summarizer.summarize(content, goal)
        except SummarizerUnavailable as exc:
            raise SummarizerUnavailable(str(exc), attempts=2) from None

    def _page_block(self, i: int, result_title: str, url: str, goal: str) -> str:
        try:
            html = self._call(lambda: self.fetcher.fetch(url))
            title, content = parse_html(html)
        except (FetchError, Unparseable, BackendUnavailable) as exc:
            log.info("visit %s failed: %s", url, exc)
            return format_page_block(i, result_title or url, url, FAILED_PAGE)
        summary = self._summarize(content[: self.config.max_page_chars], goal)
        return format_page_block(i, title or result_title or url, url, summary)

    # tools

    def web_search(self, queries: Sequence[str]) -> Observation:
        if not queries or any(not isinstance(q, str) or not q.strip() for q in queries):
            raise EmptyQueries("web_search needs at least one non-blank query")
        sections, failures = [], 0
        for q in queries:
            try:
                results = self._call(lambda q=q: self.search.search(q, self.config.max_results_web))
            except (BackendUnavailable, FixtureMissing) as exc:
                failures += 1
                sections.append(format_search_failure(q, str(exc)))
                continue
            sections.append(format_search_section(q, results[: self.config.max_results_web]))
        if failures == len(queries):
            raise BackendUnavailable(f"all {failures} search queries failed")
        return self._observation("\n=======\n".join(sections), "web_search")

    def visit(self, urls: Sequence[str], goal: str) -> Observation:
        if not urls or any(not isinstance(u, str) or not u.strip() for u in urls):
            raise ToolError("visit needs at least one url")
        if not goal or not goal.strip():
            raise ToolError("visit needs a non-empty goal")
        blocks = [self._page_block(i, "", url, goal) for i, url in enumerate(urls, 1)]
        return self._observation("\n\n".join(blocks), "visit")

    def image_search(self, image_index: int, goal: str, query_images: Sequence[ImagePayload]) -> Observation:
        if not 0 <= image_index < len(query_images):
            raise ImageIndexOutOfRange(f"image_index {image_index} with {len(query_images)} image(s)")
        image = query_images[image_index]
        n = self.config.max_results_image
        results: list[SearchResult] = self._call(lambda: self.search.reverse_image_search(image, n))[:n]
        blocks = [self._page_block(i, r.title, r.url, goal) for i, r in enumerate(results, 1)]
        thumbs: list[ImagePayload] = []
        if self.config.image_search_thumbnails:
            for r in results:
                if not r.image_url:
                    continue
                try:
                    data = self._call(lambda r=r: self.fetcher.fetch(r.image_url))
                except (FetchError, BackendUnavailable):
                    continue
                thumbs.append(ImagePayload(data, media_type="image/png", source=r.image_url))
        text = "\n\n".join(blocks) if blocks else "Reverse image search returned no results."
        return self._observation(text, "image_search", thumbs)

    def _observation(self, text: str, tool: str, images: Sequence[ImagePayload] = ()) -> Observation:
        return Observation(text=cap_output(text, self.config.max_output_bytes), tool_name=tool, images=tuple(images))

    def execute(self, call: ToolCall, query: Query) -> Observation:
        """Dispatch an already validated call."""
        args = call.arguments
        if call.name == "web_search":
            return self.web_search(args["queries"])
        if call.name == "visit":
            return self.visit(args["url"], args["goal"])
        if call.name == "image_search":
            return self.image_search(args["image_index"], args["goal"], query.images)
        raise UnknownTool(call.name)
