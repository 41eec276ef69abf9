"""Deterministic text-to-page rasterization.

Text is typeset greedily into left-aligned lines, paginated, drawn with a
pinned TrueType face and encoded as PNG. Identical text, config and font file
give byte-identical pages.
"""

from __future__ import annotations

import io
import math
import re
import warnings
from dataclasses import asdict, dataclass, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, NamedTuple

from PIL import Image, ImageDraw, ImageFont
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from foldsearch.errors import EmptyText, FontLoadError, PageLimitExceeded
from foldsearch.history import ImagePayload, Observation, TokenEstimator

EMPTY_OBSERVATION_TEXT = "(empty tool response)"
TAB_WIDTH = 4

# fields accepted for parity with the reference parameter table but only
# supported at their zero default
_ZERO_ONLY = ("space_before", "space_after", "border_width", "border_padding")


@dataclass(frozen=True)
class RenderConfig:
    page_width_px: int = 595
    page_height_px: int = 842
    dpi: int = 72
    margin_x: int = 10
    margin_y: int = 10
    font: str | None = None
    font_size: float = 9
    line_height: float = 10
    font_color: str = "#000000"
    page_bg: str = "#FFFFFF"
    para_bg: str = "#FFFFFF"
    alignment: str = "LEFT"
    horizontal_scale: float = 1.0
    first_line_indent: int = 0
    left_indent: int = 0
    right_indent: int = 0
    space_before: int = 0
    space_after: int = 0
    border_width: int = 0
    border_padding: int = 0
    auto_crop_width: bool = True
    auto_crop_last_page: bool = True
    max_pages_per_observation: int = 8

    def __post_init__(self):
        if self.alignment.lower() not in ("left", "center", "right"):
            raise ValueError(f"unsupported alignment {self.alignment!r}")
        if 2 * self.margin_x >= self.page_width_px or 2 * self.margin_y >= self.page_height_px:
            raise ValueError("margins must be less than half the page dimensions")
        if self.horizontal_scale <= 0:
            raise ValueError("horizontal_scale must be positive")
        if self.max_pages_per_observation < 1:
            raise ValueError("max_pages_per_observation must be >= 1")
        for name in _ZERO_ONLY:
            if getattr(self, name):
                raise ValueError(f"{name} other than 0 is not supported")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RenderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown render options: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    # pixel geometry; table values are points at ``dpi``

    def _px(self, value: float) -> int:
        return int(round(value * self.dpi / 72))

    @property
    def page_size(self) -> tuple[int, int]:
        return self._px(self.page_width_px), self._px(self.page_height_px)

    @property
    def line_height_px(self) -> int:
        return max(1, self._px(self.line_height))

    @property
    def content_width(self) -> int:
        return self.page_size[0] - 2 * self._px(self.margin_x) - self._px(self.left_indent) - self._px(self.right_indent)

    @property
    def lines_per_page(self) -> int:
        return max(1, (self.page_size[1] - 2 * self._px(self.margin_y)) // self.line_height_px)

    def font_file(self) -> str:
        if self.font:
            return self.font
        return str(resources.files("foldsearch.data") / "fonts" / "DejaVuSans.ttf")


@lru_cache(maxsize=16)
def load_font(path: str, size_px: float) -> ImageFont.FreeTypeFont:
    try:
        return ImageFont.truetype(path, size=size_px, layout_engine=ImageFont.Layout.BASIC)
    except OSError as exc:
        raise FontLoadError(f"cannot load font {path!r}: {exc}") from None


class GlyphCache:
    """Per-character advances and coverage masks for one face, size and scale.

    Lines are measured as the sum of advances (no kerning) and drawn by
    pasting cached glyph masks at the running pen position, so measured and
    drawn widths agree exactly.
    """

    def __init__(self, font: ImageFont.FreeTypeFont, scale: float = 1.0):
        self.font = font
        self.scale = scale
        self._advance: dict[str, float] = {}
        self._mask: dict[str, tuple[Image.Image, int, int] | None] = {}

    def advance(self, ch: str) -> float:
        adv = self._advance.get(ch)
        if adv is None:
            adv = self._advance[ch] = self.font.getlength(ch) * self.scale
        return adv

    def width(self, s: str) -> float:
        adv = self._advance
        total = 0.0
        for ch in s:
            a = adv.get(ch)
            total += a if a is not None else self.advance(ch)
        return total

    def mask(self, ch: str) -> tuple[Image.Image, int, int] | None:
        if ch in self._mask:
            return self._mask[ch]
        x0, y0, x1, y1 = self.font.getbbox(ch, anchor="la")
        if x1 <= x0 or y1 <= y0:
            self._mask[ch] = None
            return None
        tile = Image.new("L", (x1 - x0, y1 - y0), 0)
        ImageDraw.Draw(tile).text((-x0, -y0), ch, font=self.font, fill=255, anchor="la")
        if self.scale != 1.0:
            w = max(1, int(round(tile.width * self.scale)))
            tile = tile.resize((w, tile.height), Image.Resampling.LANCZOS)
            x0 = int(round(x0 * self.scale))
        self._mask[ch] = (tile, x0, y0)
        return self._mask[ch]

    def draw(self, img: Image.Image, x: float, y: int, text: str, color) -> float:
        """Draw ``text`` with its pen starting at (x, y); return the end x."""
        pen = x
        for ch in text:
            m = self.mask(ch)
            if m is not None:
                tile, dx, dy = m
                img.paste(color, (int(round(pen)) + dx, y + dy), tile)
            pen += self.advance(ch)
        return pen


@lru_cache(maxsize=16)
def _glyphs(path: str, size_px: float, scale: float) -> GlyphCache:
    return GlyphCache(load_font(path, size_px), scale)


def glyphs_for(cfg: RenderConfig) -> GlyphCache:
    return _glyphs(cfg.font_file(), cfg.font_size * cfg.dpi / 72, cfg.horizontal_scale)


_CONTROL = re.compile(r"[\x00-\x08\x0b-\x1f\x7f]")


def visible_text(line_text: str) -> str:
    """What actually gets drawn for a layout line."""
    s = line_text.rstrip("\n").rstrip()
    s = s.replace("\t", " " * TAB_WIDTH)
    return _CONTROL.sub("", s)


class LayoutLine(NamedTuple):
    page: int
    text: str


class _Measure:
    def __init__(self, glyphs: GlyphCache):
        self.glyphs = glyphs

    def __call__(self, line_text: str) -> float:
        return self.glyphs.width(visible_text(line_text))


def _fit_prefix(s: str, limit: float, width: _Measure) -> int:
    """Longest prefix length of ``s`` whose width fits, at least 1."""
    lo, hi = 1, len(s)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if width(s[:mid]) <= limit:
            lo = mid
        else:
            hi = mid - 1
    return lo


_TOKEN = re.compile(r"[^\S\n]+|\S+")


def _break_paragraph(para: str, cfg: RenderConfig, width: _Measure) -> list[str]:
    avail = cfg.content_width
    first_avail = avail - cfg._px(cfg.first_line_indent)
    lines: list[str] = []
    current = ""

    def limit() -> float:
        return first_avail if not lines else avail

    for token in _TOKEN.findall(para):
        if token.isspace():
            current += token
            continue
        candidate = current + token
        if width(candidate) <= limit():
            current = candidate
            continue
        if current.strip():
            lines.append(current)
            current = token
            if width(current) <= limit():
                continue
        else:
            current = candidate
        while width(current) > limit():
            n = _fit_prefix(current, limit(), width)
            lines.append(current[:n])
            current = current[n:]
    if current or not lines:
        lines.append(current)
    return lines


def layout_lines(text: str, cfg: RenderConfig | None = None) -> list[LayoutLine]:
    """Greedy line breaking and pagination.

    Soft breaks keep the whitespace run at the end of the broken line and hard
    breaks keep their newline, so ``"".join(l.text for l in lines) == text``.
    """
    if not text:
        raise EmptyText("nothing to lay out")
    cfg = cfg or RenderConfig()
    width = _Measure(glyphs_for(cfg))
    paragraphs = text.split("\n")
    raw_lines: list[str] = []
    for i, para in enumerate(paragraphs):
        last = i == len(paragraphs) - 1
        if last and para == "":
            break
        broken = _break_paragraph(para, cfg, width)
        if not last:
            broken[-1] += "\n"
        raw_lines.extend(broken)
    per_page = cfg.lines_per_page
    return [LayoutLine(i // per_page, s) for i, s in enumerate(raw_lines)]


@dataclass(frozen=True)
class RenderedPage:
    data: bytes
    width: int
    height: int

    def as_image(self) -> ImagePayload:
        return ImagePayload(self.data, media_type="image/png")


@dataclass(frozen=True)
class RenderedObservation:
    source_turn_index: int
    pages: tuple[RenderedPage, ...]
    visual_token_estimate: int
    source_text_token_estimate: int
    drawn_text: str
    truncated: bool = False
    attachments: tuple[ImagePayload, ...] = ()

    def __post_init__(self):
        if not self.pages:
            raise ValueError("a rendered observation has at least one page")

    @property
    def images(self) -> tuple[ImagePayload, ...]:
        return tuple(p.as_image() for p in self.pages)


def estimate_visual_tokens(width: int, height: int, patch_px: int = 28) -> int:
    """Patch count for one image: ceil(w / patch) * ceil(h / patch)."""
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    return math.ceil(width / patch_px) * math.ceil(height / patch_px)


def _encode(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", compress_level=6, optimize=False)
    return buf.getvalue()


def _is_paragraph_start(lines: list[LayoutLine], i: int) -> bool:
    return i == 0 or lines[i - 1].text.endswith("\n")


def _draw_page(
    page_lines: list[tuple[int, str, bool]],
    cfg: RenderConfig,
    glyphs: GlyphCache,
    crop: bool,
) -> RenderedPage:
    page_w, page_h = cfg.page_size
    mx, my = cfg._px(cfg.margin_x), cfg._px(cfg.margin_y)
    lh = cfg.line_height_px
    img = Image.new("RGB", (page_w, page_h), cfg.page_bg)
    if cfg.para_bg.upper() != cfg.page_bg.upper():
        ImageDraw.Draw(img).rectangle([mx, my, page_w - mx - 1, page_h - my - 1], fill=cfg.para_bg)
    left = mx + cfg._px(cfg.left_indent)
    used_right = mx
    align = cfg.alignment.lower()
    for slot, drawn, para_start in page_lines:
        if not drawn:
            continue
        x0 = left + (cfg._px(cfg.first_line_indent) if para_start else 0)
        room = left + cfg.content_width - x0
        w = glyphs.width(drawn)
        if align == "center":
            x0 += max(0.0, (room - w) / 2)
        elif align == "right":
            x0 += max(0.0, room - w)
        end = glyphs.draw(img, x0, my + slot * lh, drawn, cfg.font_color)
        used_right = max(used_right, math.ceil(end))
    if crop:
        n_slots = max(slot for slot, _, _ in page_lines) + 1
        height = min(page_h, 2 * my + n_slots * lh)
        width = min(page_w, used_right + mx) if cfg.auto_crop_width else page_w
        img = img.crop((0, 0, width, height))
    return RenderedPage(_encode(img), img.width, img.height)


def render_text(
    text: str,
    cfg: RenderConfig | None = None,
    *,
    patch_px: int = 28,
    estimator: TokenEstimator | None = None,
    source_turn_index: int = 0,
    attachments: Iterable[ImagePayload] = (),
) -> RenderedObservation:
    cfg = cfg or RenderConfig()
    estimator = estimator or TokenEstimator()
    if not text.strip():
        text = EMPTY_OBSERVATION_TEXT
    glyphs = glyphs_for(cfg)
    lines = layout_lines(text, cfg)
    per_page = cfg.lines_per_page
    n_pages = lines[-1].page + 1
    truncated = n_pages > cfg.max_pages_per_observation
    if truncated:
        keep = cfg.max_pages_per_observation
        warnings.warn(
            f"observation needs {n_pages} pages, keeping {keep}", PageLimitExceeded, stacklevel=2
        )
        lines = [ln for ln in lines if ln.page < keep]
        dropped = n_pages - keep
        marker = f"[... truncated: {dropped} more page(s) not rendered ...]"
        lines[-1] = LayoutLine(lines[-1].page, marker)
        n_pages = keep

    pages = []
    drawn_parts = []
    for p in range(n_pages):
        page_lines = []
        for i, ln in enumerate(lines):
            if ln.page != p:
                continue
            page_lines.append((i - p * per_page, visible_text(ln.text), _is_paragraph_start(lines, i)))
        last = p == n_pages - 1
        pages.append(_draw_page(page_lines, cfg, glyphs, crop=last and cfg.auto_crop_last_page))
    for ln in lines[:-1] if truncated else lines:
        drawn_parts.append(ln.text)

    visual = sum(estimate_visual_tokens(pg.width, pg.height, patch_px) for pg in pages)
    return RenderedObservation(
        source_turn_index=source_turn_index,
        pages=tuple(pages),
        visual_token_estimate=visual,
        source_text_token_estimate=estimator(text),
        drawn_text="".join(drawn_parts),
        truncated=truncated,
        attachments=tuple(attachments),
    )


def render_observation(
    obs: Observation,
    cfg: RenderConfig | None = None,
    *,
    patch_px: int = 28,
    estimator: TokenEstimator | None = None,
) -> RenderedObservation:
    """Fold one observation into page images; image attachments pass through."""
    return render_text(
        obs.text,
        cfg,
        patch_px=patch_px,
        estimator=estimator,
        source_turn_index=obs.turn_index,
        attachments=obs.images,
    )


class TextRenderer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`render_text`.

    ``fit`` resolves and loads the font; ``transform`` maps a sequence of
    strings or observations to rendered observations.
    """

    def __init__(self, config: RenderConfig | None = None, patch_px: int = 28, estimator: TokenEstimator | None = None):
        self.config = config
        self.patch_px = patch_px
        self.estimator = estimator

    def fit(self, X=None, y=None):
        self.config_ = self.config or RenderConfig()
        if self.patch_px < 1:
            raise ValueError("patch_px must be >= 1")
        self.font_ = glyphs_for(self.config_).font
        self.font_path_ = str(Path(self.config_.font_file()))
        return self

    def transform(self, X):
        check_is_fitted(self, "font_")
        out = []
        for item in X:
            if isinstance(item, Observation):
                out.append(render_observation(item, self.config_, patch_px=self.patch_px, estimator=self.estimator))
            else:
                out.append(render_text(item, self.config_, patch_px=self.patch_px, estimator=self.estimator))
        return out
