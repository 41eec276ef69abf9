"""Deterministic offline backends and a fixture store for whole tool calls."""

from __future__ import annotations

import base64
import hashlib
import io
import json
import re
from pathlib import Path
from typing import Any, Mapping, Sequence

from foldsearch.errors import FetchError, FixtureMissing
from foldsearch.history import ImagePayload, Observation, Query
from foldsearch.protocol.grammar import ToolCall
from foldsearch.tools.base import SearchResult


def _digest(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()


class StaticSearchBackend:
    """Canned results. Unknown queries raise FixtureMissing, never return [].

    ``reverse`` is keyed by image sha256, with ``"*"`` matching any image.
    """

    def __init__(
        self,
        web: Mapping[str, Sequence[SearchResult]] | None = None,
        reverse: Mapping[str, Sequence[SearchResult]] | None = None,
        images: Mapping[str, Sequence[SearchResult]] | None = None,
    ):
        self.web = dict(web or {})
        self.reverse = dict(reverse or {})
        self.images = dict(images or {})
        self.calls: list[tuple[str, str]] = []

    def search(self, query: str, n: int) -> list[SearchResult]:
        self.calls.append(("search", query))
        if query not in self.web:
            raise FixtureMissing(f"no canned web results for {query!r}")
        return list(self.web[query])[:n]

    def reverse_image_search(self, image: ImagePayload, n: int) -> list[SearchResult]:
        self.calls.append(("reverse", image.sha256))
        hits = self.reverse.get(image.sha256, self.reverse.get("*"))
        if hits is None:
            raise FixtureMissing(f"no canned reverse-search results for image {image.sha256[:12]}")
        return list(hits)[:n]

    def image_lookup(self, query: str, n: int) -> list[SearchResult]:
        self.calls.append(("images", query))
        if query not in self.images:
            raise FixtureMissing(f"no canned image results for {query!r}")
        return list(self.images[query])[:n]


class StaticPageFetcher:
    def __init__(self, pages: Mapping[str, bytes | str] | None = None):
        self.pages = {k: v.encode("utf-8") if isinstance(v, str) else v for k, v in (pages or {}).items()}
        self.calls: list[str] = []

    def fetch(self, url: str) -> bytes:
        self.calls.append(url)
        if url not in self.pages:
            raise FetchError(f"unreachable: {url}")
        return self.pages[url]


class EchoSummarizer:
    """Returns the goal and the head of the content. Deterministic."""

    def __init__(self, max_chars: int = 300):
        self.max_chars = max_chars

    def summarize(self, content: str, goal: str) -> str:
        head = re.sub(r"\s+", " ", content).strip()[: self.max_chars]
        return f"[goal: {goal}] {head}"


_WORDS = (
    "archive museum river station harbor festival council bridge temple stadium "
    "election season record population district founder painting gallery summit "
    "expedition treaty island valley observatory library cathedral campus"
).split()


def _synthetic_words(seed: str, n: int) -> str:
    h = hashlib.sha256(seed.encode("utf-8")).digest()
    out = []
    while len(out) < n:
        for b in h:
            out.append(_WORDS[b % len(_WORDS)])
        h = hashlib.sha256(h).digest()
    return " ".join(out[:n])


class SyntheticSearchBackend:
    """Hash-derived fake results for any query; used by the ``--mock`` profile."""

    domain = "https://mock.example"

    def search(self, query: str, n: int) -> list[SearchResult]:
        key = _digest("web", query)[:12]
        return [
            SearchResult(
                title=f"{query} - result {i}",
                snippet=_synthetic_words(f"{key}/{i}", 24),
                url=f"{self.domain}/page/{key}/{i}",
            )
            for i in range(1, n + 1)
        ]

    def reverse_image_search(self, image: ImagePayload, n: int) -> list[SearchResult]:
        key = image.sha256[:12]
        return [
            SearchResult(
                title=f"Visually similar page {i}",
                snippet=_synthetic_words(f"{key}/{i}", 16),
                url=f"{self.domain}/page/{key}/{i}",
                image_url=f"{self.domain}/image/{key}/{i}.png",
            )
            for i in range(1, n + 1)
        ]

    def image_lookup(self, query: str, n: int) -> list[SearchResult]:
        key = _digest("img", query)[:12]
        return [
            SearchResult(
                title=f"{query} (image {i})",
                snippet="",
                url=f"{self.domain}/page/{key}/{i}",
                image_url=f"{self.domain}/image/{key}/{i}.png",
            )
            for i in range(1, n + 1)
        ]


def synthetic_png(seed: str, size: tuple[int, int] = (64, 48)) -> bytes:
    from PIL import Image

    h = hashlib.sha256(seed.encode("utf-8")).digest()
    img = Image.new("RGB", size, (h[0], h[1], h[2]))
    buf = io.BytesIO()
    img.save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


class SyntheticPageFetcher:
    """Serves generated HTML and PNGs for SyntheticSearchBackend URLs."""

    def fetch(self, url: str) -> bytes:
        if not url.startswith(SyntheticSearchBackend.domain):
            raise FetchError(f"unreachable: {url}")
        if url.endswith(".png"):
            return synthetic_png(url)
        body = _synthetic_words(url, 120)
        return (
            f"<html><head><title>Mock page {url.rsplit('/', 1)[-1]}</title></head><body>"
            f"<nav>Home | About</nav><article><h1>Mock page</h1><p>{body}</p></article>"
            f"<footer>mock footer</footer></body></html>"
        ).encode("utf-8")


# whole-call fixtures


def fixture_key(call: ToolCall, query: Query | None = None) -> str:
    """Canonical hash of a tool call. image_search also keys on the image."""
    canon: dict[str, Any] = {"tool": call.name, "arguments": call.arguments}
    if call.name == "image_search" and query is not None:
        idx = call.arguments.get("image_index")
        if isinstance(idx, int) and 0 <= idx < len(query.images):
            canon["image_sha256"] = query.images[idx].sha256
    return hashlib.sha256(json.dumps(canon, sort_keys=True, ensure_ascii=False).encode("utf-8")).hexdigest()


class FixtureStore:
    """Directory of ``<tool>-<hash>.json`` files, one recorded observation each."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, call: ToolCall, query: Query | None = None) -> Path:
        return self.root / f"{call.name}-{fixture_key(call, query)[:32]}.json"

    def get(self, call: ToolCall, query: Query | None = None) -> Observation:
        path = self.path(call, query)
        if not path.exists():
            raise FixtureMissing(f"no fixture for {call.name} {call.arguments} ({path.name})")
        data = json.loads(path.read_text(encoding="utf-8"))
        images = tuple(
            ImagePayload(base64.b64decode(im["data_b64"]), media_type=im.get("media_type", "image/png"))
            for im in data.get("images", [])
        )
        return Observation(text=data["text"], tool_name=call.name, images=images)

    def put(self, call: ToolCall, obs: Observation, query: Query | None = None) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path(call, query)
        record = {
            "tool": call.name,
            "arguments": call.arguments,
            "text": obs.text,
            "images": [
                {"media_type": im.media_type, "data_b64": base64.b64encode(im.data).decode("ascii")}
                for im in obs.images
            ],
        }
        path.write_text(json.dumps(record, ensure_ascii=False, indent=1, sort_keys=True), encoding="utf-8")
        return path


class FixtureGateway:
    """Replays recorded tool calls; a missing fixture is an error."""

    def __init__(self, store: FixtureStore | str | Path):
        self.store = store if isinstance(store, FixtureStore) else FixtureStore(store)

    def execute(self, call: ToolCall, query: Query) -> Observation:
        return self.store.get(call, query)


class RecordingGateway:
    """Runs calls through ``inner`` and writes each result as a fixture."""

    def __init__(self, inner, store: FixtureStore | str | Path):
        self.inner = inner
        self.store = store if isinstance(store, FixtureStore) else FixtureStore(store)

    def execute(self, call: ToolCall, query: Query) -> Observation:
        obs = self.inner.execute(call, query)
        self.store.put(call, obs, query)
        return obs
