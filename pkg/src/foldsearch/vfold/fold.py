"""Adaptive history folding.

Once a history's text length passes the threshold, every observation except
the ``k`` most recent is replaced by its rendered page images. Actions always
stay verbatim text, and the turn order is untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, TypeVar, Union

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from foldsearch.errors import RenderError
from foldsearch.history import (
    Action,
    InteractionHistory,
    Observation,
    Query,
    TokenEstimator,
    history_token_length,
)
from foldsearch.vfold.render import RenderConfig, RenderedObservation, render_observation

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class FoldPolicy:
    threshold_tokens: int = 8000
    fresh_window_k: int = 2
    estimator: TokenEstimator = field(default_factory=TokenEstimator)
    visual_patch_px: int = 28

    def __post_init__(self):
        if self.threshold_tokens <= 0:
            raise ValueError("threshold_tokens must be positive")
        if self.fresh_window_k < 0:
            raise ValueError("fresh_window_k must be >= 0")
        if self.visual_patch_px < 1:
            raise ValueError("visual_patch_px must be >= 1")


def should_compress(history: InteractionHistory, policy: FoldPolicy | None = None) -> bool:
    """True iff the history's text length strictly exceeds the threshold."""
    policy = policy or FoldPolicy()
    return history_token_length(history, policy.estimator) > policy.threshold_tokens


def partition_observations(
    history: InteractionHistory | Sequence[T], k: int
) -> tuple[list[T], list[T]]:
    """Split observations into (stale, fresh); fresh holds the last ``k``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    obs = list(history.observations if isinstance(history, InteractionHistory) else history)
    cut = max(0, len(obs) - k)
    return obs[:cut], obs[cut:]


Slot = Union[Observation, RenderedObservation, None]


@dataclass(frozen=True)
class FoldedTurn:
    action: Action
    observation: Slot

    @property
    def rendered(self) -> bool:
        return isinstance(self.observation, RenderedObservation)


@dataclass(frozen=True)
class CompressedHistory:
    query: Query
    turns: tuple[FoldedTurn, ...]
    folded: bool = False

    @property
    def rendered_observations(self) -> list[RenderedObservation]:
        return [t.observation for t in self.turns if t.rendered]

    @property
    def text_observations(self) -> list[Observation]:
        return [t.observation for t in self.turns if isinstance(t.observation, Observation)]

    @property
    def visual_token_estimate(self) -> int:
        return sum(r.visual_token_estimate for r in self.rendered_observations)

    def slot_kinds(self) -> list[tuple[str, str]]:
        """(action kind, slot kind) per turn; slot kind is text/rendered/none."""
        out = []
        for t in self.turns:
            if t.observation is None:
                kind = "none"
            elif t.rendered:
                kind = "rendered"
            else:
                kind = "text"
            out.append((t.action.kind, kind))
        return out


def _passthrough(history: InteractionHistory) -> CompressedHistory:
    return CompressedHistory(
        history.query, tuple(FoldedTurn(a, o) for a, o in history.turns), folded=False
    )


def fold_history(
    history: InteractionHistory,
    policy: FoldPolicy | None = None,
    cfg: RenderConfig | None = None,
    *,
    force: bool = False,
    renderer=render_observation,
) -> CompressedHistory:
    """Build the compressed view of ``history``.

    Always recomputed from the source history, so rendering never sees an
    already-rendered artifact. ``force`` skips the length trigger (used for
    fully rendered training exports together with ``fresh_window_k=0``).
    A render failure keeps that observation as text and logs a warning.
    """
    policy = policy or FoldPolicy()
    cfg = cfg or RenderConfig()
    if not force and not should_compress(history, policy):
        return _passthrough(history)
    stale, _ = partition_observations(history, policy.fresh_window_k)
    stale_ids = {id(o) for o in stale}
    turns = []
    for action, obs in history.turns:
        slot: Slot = obs
        if obs is not None and id(obs) in stale_ids:
            try:
                slot = renderer(obs, cfg, patch_px=policy.visual_patch_px, estimator=policy.estimator)
            except RenderError as exc:
                logger.warning("rendering observation %d failed, keeping text: %s", obs.turn_index, exc)
        turns.append(FoldedTurn(action, slot))
    return CompressedHistory(history.query, tuple(turns), folded=True)


class HistoryFolder(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`fold_history`.

    ``transform`` maps a sequence of histories to compressed histories.
    Rendered observations are memoized by (text, attachments) since rendering
    is a pure function of them.
    """

    def __init__(
        self,
        threshold_tokens: int = 8000,
        fresh_window_k: int = 2,
        estimator: TokenEstimator | None = None,
        visual_patch_px: int = 28,
        render_config: RenderConfig | None = None,
        force: bool = False,
    ):
        self.threshold_tokens = threshold_tokens
        self.fresh_window_k = fresh_window_k
        self.estimator = estimator
        self.visual_patch_px = visual_patch_px
        self.render_config = render_config
        self.force = force

    def fit(self, X=None, y=None):
        self.policy_ = FoldPolicy(
            threshold_tokens=self.threshold_tokens,
            fresh_window_k=self.fresh_window_k,
            estimator=self.estimator or TokenEstimator(),
            visual_patch_px=self.visual_patch_px,
        )
        self.render_config_ = self.render_config or RenderConfig()
        self._cache: dict = {}
        return self

    def _render(self, obs: Observation, cfg, *, patch_px, estimator):
        key = (obs.text, tuple(im.sha256 for im in obs.images))
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = render_observation(obs, cfg, patch_px=patch_px, estimator=estimator)
        if hit.source_turn_index != obs.turn_index:
            hit = RenderedObservation(
                obs.turn_index, hit.pages, hit.visual_token_estimate,
                hit.source_text_token_estimate, hit.drawn_text, hit.truncated, hit.attachments,
            )
        return hit

    def fold(self, history: InteractionHistory) -> CompressedHistory:
        check_is_fitted(self, "policy_")
        return fold_history(
            history, self.policy_, self.render_config_, force=self.force, renderer=self._render
        )

    def transform(self, X):
        return [self.fold(h) for h in X]
