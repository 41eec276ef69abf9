from foldsearch.protocol.grammar import (
    Answer,
    ParsedTurn,
    ToolCall,
    extract_boxed,
    parse_model_turn,
    serialize_turn,
    wrap_tool_response,
)
from foldsearch.protocol.schemas import (
    EpisodeToolState,
    ToolSchema,
    load_builtin_schemas,
    make_registry,
    validate_tool_call,
)

__all__ = [
    "Answer",
    "EpisodeToolState",
    "ParsedTurn",
    "ToolCall",
    "ToolSchema",
    "extract_boxed",
    "load_builtin_schemas",
    "make_registry",
    "parse_model_turn",
    "serialize_turn",
    "validate_tool_call",
    "wrap_tool_response",
]
