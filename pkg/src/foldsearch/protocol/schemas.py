"""The three built-in tool schemas and tool-call validation against them."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Any, Iterable, Mapping

from foldsearch.errors import (
    ImageIndexOutOfRange,
    ImageSearchRepeated,
    MissingArgument,
    UnknownArgument,
    UnknownTool,
    WrongArgumentType,
)
from foldsearch.protocol.grammar import ToolCall

BUILTIN_TOOLS = ("web_search", "visit", "image_search")

_JSON_TO_SEMANTIC = {"string": "string", "integer": "integer"}


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    required_arguments: tuple[tuple[str, str], ...]
    optional_arguments: tuple[tuple[str, str], ...] = ()
    source: Mapping[str, Any] | None = None

    @property
    def argument_types(self) -> dict[str, str]:
        return dict(self.required_arguments + self.optional_arguments)

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ToolSchema":
        fn = obj["function"]
        params = fn.get("parameters", {})
        required = list(params.get("required", []))
        props = params.get("properties", {})
        req, opt = [], []
        for name, spec in props.items():
            (req if name in required else opt).append((name, _semantic_type(spec)))
        return cls(
            name=fn["name"],
            description=fn.get("description", ""),
            required_arguments=tuple(req),
            optional_arguments=tuple(opt),
            source=obj,
        )

    def to_json(self) -> dict[str, Any]:
        if self.source is not None:
            return dict(self.source)
        properties = {n: _json_type(t) for n, t in self.argument_types.items()}
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": [n for n, _ in self.required_arguments],
                },
            },
        }


def _semantic_type(spec: Mapping[str, Any]) -> str:
    if spec.get("type") == "array" and spec.get("items", {}).get("type") == "string":
        return "string-array"
    try:
        return _JSON_TO_SEMANTIC[spec["type"]]
    except KeyError:
        raise ValueError(f"unsupported argument type: {spec!r}") from None


def _json_type(semantic: str) -> dict[str, Any]:
    if semantic == "string-array":
        return {"type": "array", "items": {"type": "string"}}
    return {"type": semantic}


def load_builtin_schemas() -> dict[str, ToolSchema]:
    """Read the shipped schema files, one per built-in tool."""
    root = resources.files("foldsearch.data") / "tools"
    schemas = {}
    for name in BUILTIN_TOOLS:
        obj = json.loads((root / f"{name}.json").read_text(encoding="utf-8"))
        schemas[name] = ToolSchema.from_json(obj)
    return schemas


def make_registry(schemas: Iterable[ToolSchema] | None = None) -> dict[str, ToolSchema]:
    if schemas is None:
        return load_builtin_schemas()
    registry: dict[str, ToolSchema] = {}
    for schema in schemas:
        if schema.name in registry:
            raise ValueError(f"duplicate tool name {schema.name!r}")
        registry[schema.name] = schema
    return registry


def _type_ok(value: Any, semantic: str) -> bool:
    if semantic == "string":
        return isinstance(value, str)
    if semantic == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if semantic == "string-array":
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    return False


@dataclass
class EpisodeToolState:
    """Per-episode facts that validation depends on. Owned by the caller."""

    image_count: int = 0
    image_search_used: bool = False


def validate_tool_call(
    call: ToolCall,
    registry: Mapping[str, ToolSchema],
    state: EpisodeToolState,
    *,
    reject_unknown_arguments: bool = True,
    image_search_once: bool = True,
) -> None:
    """Raise a ToolValidationError subclass if ``call`` is not acceptable.

    Pure: does not update ``state``; the caller marks image search as used
    after dispatching a valid call.
    """
    schema = registry.get(call.name)
    if schema is None:
        raise UnknownTool(f"unknown tool {call.name!r}")
    types = schema.argument_types
    for name, semantic in schema.required_arguments:
        if name not in call.arguments:
            raise MissingArgument(name, call.name)
    for name, value in call.arguments.items():
        if name not in types:
            if reject_unknown_arguments:
                raise UnknownArgument(f"{call.name}: unexpected argument {name!r}")
            continue
        if not _type_ok(value, types[name]):
            raise WrongArgumentType(
                f"{call.name}: argument {name!r} must be {types[name]}, got {type(value).__name__}"
            )
    if call.name == "image_search":
        index = call.arguments["image_index"]
        if not 0 <= index < state.image_count:
            raise ImageIndexOutOfRange(
                f"image_index {index} outside [0, {state.image_count})"
            )
        if image_search_once and state.image_search_used:
            raise ImageSearchRepeated("image_search may be called at most once per episode")
