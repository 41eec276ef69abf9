"""Model requests and clients for chat-completions style endpoints."""

from __future__ import annotations

import itertools
import json
import re
import threading
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Literal, Protocol, Sequence, Union

import httpx

from foldsearch.errors import EndpointError
from foldsearch.history import ImagePayload, TokenEstimator

Part = Union[str, ImagePayload]


@dataclass(frozen=True)
class Message:
    role: Literal["system", "user", "assistant"]
    parts: tuple[Part, ...]

    @property
    def text(self) -> str:
        return "".join(p for p in self.parts if isinstance(p, str))

    @property
    def images(self) -> list[ImagePayload]:
        return [p for p in self.parts if isinstance(p, ImagePayload)]

    def to_wire(self) -> dict[str, Any]:
        if all(isinstance(p, str) for p in self.parts):
            return {"role": self.role, "content": self.text}
        content = []
        for p in self.parts:
            if isinstance(p, str):
                if p:
                    content.append({"type": "text", "text": p})
            else:
                content.append({"type": "image_url", "image_url": {"url": p.data_uri()}})
        return {"role": self.role, "content": content}


@dataclass(frozen=True)
class ModelRequest:
    messages: tuple[Message, ...]

    @property
    def images(self) -> list[ImagePayload]:
        return [im for m in self.messages for im in m.images]

    def text_tokens(self, estimator: TokenEstimator | None = None) -> int:
        estimator = estimator or TokenEstimator()
        return sum(estimator(m.text) for m in self.messages)

    def visual_tokens(self, patch_px: int = 28) -> int:
        from foldsearch.vfold.render import estimate_visual_tokens

        return sum(estimate_visual_tokens(*im.size, patch_px) for im in self.images)

    def text_length(self) -> int:
        return sum(len(m.text) for m in self.messages)

    def to_wire(self) -> list[dict[str, Any]]:
        return [m.to_wire() for m in self.messages]

    @classmethod
    def from_text(cls, prompt: str, system: str | None = None) -> "ModelRequest":
        msgs = []
        if system:
            msgs.append(Message("system", (system,)))
        msgs.append(Message("user", (prompt,)))
        return cls(tuple(msgs))


class ModelClient(Protocol):
    def complete(self, request: ModelRequest) -> str: ...


class ChatCompletionsClient:
    """Blocking client for an OpenAI-compatible ``/chat/completions`` endpoint.

    Decode parameters are passed through verbatim. ``transport`` accepts an
    ``httpx`` transport, which is how tests run it offline.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        decode_params: dict[str, Any] | None = None,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.decode_params = dict(decode_params or {})
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def payload(self, request: ModelRequest) -> dict[str, Any]:
        return {"model": self.model, "messages": request.to_wire(), **self.decode_params}

    def complete(self, request: ModelRequest) -> str:
        try:
            resp = self._http.post(f"{self.base_url}/chat/completions", json=self.payload(request))
        except httpx.TimeoutException as exc:
            raise EndpointError(f"model endpoint timed out: {exc}") from None
        except httpx.TransportError as exc:
            raise EndpointError(f"model endpoint unreachable: {exc}") from None
        if resp.status_code >= 400:
            retry_after = resp.headers.get("retry-after")
            raise EndpointError(
                f"model endpoint returned {resp.status_code}: {resp.text[:500]}",
                status=resp.status_code,
                retry_after=float(retry_after) if retry_after and retry_after.replace(".", "", 1).isdigit() else None,
            )
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"unexpected response shape: {exc}", status=resp.status_code) from None

    def close(self) -> None:
        self._http.close()


class ScriptedModelClient:
    """Replays a fixed script of raw turns, or calls ``script(request, i)``.

    A finite script repeats its last turn once exhausted when
    ``repeat_last`` is set; otherwise running past the end is an error.
    """

    def __init__(self, script: Sequence[str] | Callable[[ModelRequest, int], str], repeat_last: bool = False):
        self.script = script
        self.repeat_last = repeat_last
        self.calls = 0
        self.requests: list[ModelRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: ModelRequest) -> str:
        with self._lock:
            i = self.calls
            self.calls += 1
            self.requests.append(request)
        if callable(self.script):
            return self.script(request, i)
        if i < len(self.script):
            return self.script[i]
        if self.repeat_last and self.script:
            return self.script[-1]
        raise EndpointError(f"scripted model exhausted after {len(self.script)} turns")


class ContextLimitedClient:
    """Wraps a client and rejects requests above a token budget, like a
    server enforcing its context window."""

    def __init__(self, inner: ModelClient, limit_tokens: int = 32_000, estimator: TokenEstimator | None = None, patch_px: int = 28):
        self.inner = inner
        self.limit_tokens = limit_tokens
        self.estimator = estimator or TokenEstimator()
        self.patch_px = patch_px

    def complete(self, request: ModelRequest) -> str:
        total = request.text_tokens(self.estimator) + request.visual_tokens(self.patch_px)
        if total > self.limit_tokens:
            raise EndpointError(
                f"request of ~{total} tokens exceeds the context limit of {self.limit_tokens}",
                status=400,
            )
        return self.inner.complete(request)


def cycle_script(turns: Iterable[str]) -> Callable[[ModelRequest, int], str]:
    """Script that loops over ``turns`` forever."""
    turns = list(turns)
    pool = itertools.cycle(turns)
    lock = threading.Lock()

    def next_turn(request: ModelRequest, i: int) -> str:
        with lock:
            return next(pool)

    return next_turn


class MockPolicyClient:
    """Stateless stand-in policy for offline runs.

    The next turn is a pure function of the request: a web search for the
    question, then a visit to the first linked page, then a boxed answer
    (looked up in ``answers`` by question, else ``default_answer``). Being
    stateless it can be shared between concurrent episodes.
    """

    def __init__(self, answers: dict[str, str] | None = None, default_answer: str = "unknown"):
        self.answers = dict(answers or {})
        self.default_answer = default_answer

    def complete(self, request: ModelRequest) -> str:
        question = request.messages[1].text.strip()
        responses = [m for m in request.messages[2:] if m.role == "user"]
        if not responses:
            call = {"name": "web_search", "arguments": {"queries": [question[:200]]}}
            return f"<think>\nI should search for the question first.\n</think>\n<tool_call>\n{json.dumps(call, ensure_ascii=False)}\n</tool_call>"
        if len(responses) == 1:
            m = re.search(r"\]\((https?://[^)\s]+)\)", responses[-1].text)
            if m:
                call = {"name": "visit", "arguments": {"url": [m.group(1)], "goal": question[:200]}}
                return f"<think>\nThe first result looks relevant.\n</think>\n<tool_call>\n{json.dumps(call, ensure_ascii=False)}\n</tool_call>"
        answer = self.answers.get(question, self.default_answer)
        return f"<think>\nI have enough information.\n</think>\n<answer>\nThe answer is \\boxed{{{answer}}}\n</answer>"
