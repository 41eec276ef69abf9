from foldsearch.vfold.fold import (
    CompressedHistory,
    FoldedTurn,
    FoldPolicy,
    HistoryFolder,
    fold_history,
    partition_observations,
    should_compress,
)
from foldsearch.vfold.render import (
    LayoutLine,
    RenderConfig,
    RenderedObservation,
    RenderedPage,
    TextRenderer,
    estimate_visual_tokens,
    layout_lines,
    render_observation,
    render_text,
)

__all__ = [
    "CompressedHistory",
    "FoldPolicy",
    "FoldedTurn",
    "HistoryFolder",
    "LayoutLine",
    "RenderConfig",
    "RenderedObservation",
    "RenderedPage",
    "TextRenderer",
    "estimate_visual_tokens",
    "fold_history",
    "layout_lines",
    "partition_observations",
    "render_observation",
    "render_text",
    "should_compress",
]
