"""HTTP backends: search providers, page fetching, and the summarizer."""

from __future__ import annotations

import httpx

from foldsearch.errors import BackendUnavailable, EndpointError, FetchError, SummarizerUnavailable
from foldsearch.history import ImagePayload
from foldsearch.runtime.client import ChatCompletionsClient, ModelClient, ModelRequest
from foldsearch.tools.base import SearchResult

SUMMARY_PROMPT = """Below is the main content of a web page, followed by an information goal.
Write a concise summary of the page content that is relevant to the goal. Quote
names, numbers and dates exactly as they appear. If the page contains nothing
relevant to the goal, say so in one sentence.

## Page content
{content}

## Goal
{goal}"""


def _post_json(http: httpx.Client, url: str, **kwargs) -> dict:
    try:
        resp = http.post(url, **kwargs)
    except httpx.TransportError as exc:
        raise BackendUnavailable(f"{url}: {exc}") from None
    return _json_or_raise(resp)


def _get_json(http: httpx.Client, url: str, **kwargs) -> dict:
    try:
        resp = http.get(url, **kwargs)
    except httpx.TransportError as exc:
        raise BackendUnavailable(f"{url}: {exc}") from None
    return _json_or_raise(resp)


def _json_or_raise(resp: httpx.Response) -> dict:
    if resp.status_code >= 400:
        raise BackendUnavailable(f"{resp.request.url} returned {resp.status_code}: {resp.text[:300]}")
    try:
        return resp.json()
    except ValueError:
        raise BackendUnavailable(f"{resp.request.url} returned non-JSON body") from None


class SerperBackend:
    """google.serper.dev: web search, image lookup and Lens reverse search.

    Reverse search needs a publicly reachable image URL, taken from the
    payload's ``source``.
    """

    base_url = "https://google.serper.dev"

    def __init__(self, api_key: str, timeout: float = 20.0, transport: httpx.BaseTransport | None = None):
        if not api_key:
            raise ValueError("Serper backend needs an API key")
        self._http = httpx.Client(
            timeout=timeout, headers={"X-API-KEY": api_key, "Content-Type": "application/json"}, transport=transport
        )

    def search(self, query: str, n: int) -> list[SearchResult]:
        data = _post_json(self._http, f"{self.base_url}/search", json={"q": query, "num": n})
        return [
            SearchResult(r.get("title", ""), r.get("snippet", ""), r["link"])
            for r in data.get("organic", [])
            if r.get("link")
        ][:n]

    def image_lookup(self, query: str, n: int) -> list[SearchResult]:
        data = _post_json(self._http, f"{self.base_url}/images", json={"q": query, "num": n})
        return [
            SearchResult(r.get("title", ""), "", r.get("link") or r["imageUrl"], image_url=r.get("imageUrl"))
            for r in data.get("images", [])
            if r.get("imageUrl")
        ][:n]

    def reverse_image_search(self, image: ImagePayload, n: int) -> list[SearchResult]:
        if not image.source or not image.source.startswith(("http://", "https://")):
            raise BackendUnavailable("reverse image search needs an image with a public http(s) source URL")
        data = _post_json(self._http, f"{self.base_url}/lens", json={"url": image.source})
        return [
            SearchResult(r.get("title", ""), r.get("snippet", ""), r["link"], image_url=r.get("thumbnailUrl"))
            for r in data.get("organic", [])
            if r.get("link")
        ][:n]


class GoogleCSEBackend:
    """Google Custom Search JSON API. No reverse image search."""

    url = "https://www.googleapis.com/customsearch/v1"

    def __init__(self, api_key: str, cse_id: str, timeout: float = 20.0, transport: httpx.BaseTransport | None = None):
        if not api_key or not cse_id:
            raise ValueError("Google CSE backend needs an API key and an engine id")
        self.api_key = api_key
        self.cse_id = cse_id
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def _query(self, q: str, n: int, **extra) -> list[dict]:
        params = {"key": self.api_key, "cx": self.cse_id, "q": q, "num": min(n, 10), **extra}
        return _get_json(self._http, self.url, params=params).get("items", [])

    def search(self, query: str, n: int) -> list[SearchResult]:
        return [
            SearchResult(r.get("title", ""), r.get("snippet", ""), r["link"]) for r in self._query(query, n) if r.get("link")
        ][:n]

    def image_lookup(self, query: str, n: int) -> list[SearchResult]:
        out = []
        for r in self._query(query, n, searchType="image"):
            page = r.get("image", {}).get("contextLink") or r["link"]
            out.append(SearchResult(r.get("title", ""), "", page, image_url=r["link"]))
        return out[:n]

    def reverse_image_search(self, image: ImagePayload, n: int) -> list[SearchResult]:
        raise BackendUnavailable("Google Custom Search has no reverse image search")


class HttpPageFetcher:
    def __init__(self, timeout: float = 20.0, transport: httpx.BaseTransport | None = None, max_bytes: int = 5_000_000):
        self.max_bytes = max_bytes
        self._http = httpx.Client(
            timeout=timeout,
            follow_redirects=True,
            transport=transport,
            headers={"User-Agent": "Mozilla/5.0 (compatible; foldsearch/0.1)"},
        )

    def fetch(self, url: str) -> bytes:
        try:
            resp = self._http.get(url)
        except httpx.TransportError as exc:
            raise BackendUnavailable(f"{url}: {exc}") from None
        except httpx.InvalidURL as exc:
            raise FetchError(f"{url}: {exc}") from None
        if resp.status_code >= 500:
            raise BackendUnavailable(f"{url} returned {resp.status_code}")
        if resp.status_code >= 400:
            raise FetchError(f"{url} returned {resp.status_code}")
        return resp.content[: self.max_bytes]


class ChatSummarizer:
    """Goal-focused page summaries from any chat-completions model."""

    def __init__(self, client: ModelClient, max_content_chars: int = 60_000):
        self.client = client
        self.max_content_chars = max_content_chars

    @classmethod
    def from_endpoint(cls, url: str, model: str, api_key: str | None = None, timeout: float = 120.0) -> "ChatSummarizer":
        return cls(ChatCompletionsClient(url, model, api_key=api_key, timeout=timeout))

    def summarize(self, content: str, goal: str) -> str:
        prompt = SUMMARY_PROMPT.format(content=content[: self.max_content_chars], goal=goal)
        try:
            return self.client.complete(ModelRequest.from_text(prompt)).strip()
        except EndpointError as exc:
            raise SummarizerUnavailable(str(exc)) from None
