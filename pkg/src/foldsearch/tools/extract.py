"""Readability-style main-content extraction from raw HTML.

Boilerplate containers (navigation, headers, footers, sidebars, forms,
scripts) are dropped. If the page has an ``<article>`` or ``<main>`` element,
only its content is kept. What remains is emitted as light markdown: headings
get ``#`` prefixes, list items get ``- ``, and block elements become
paragraphs.
"""

from __future__ import annotations

import codecs
import re
from html.parser import HTMLParser

from foldsearch.errors import Unparseable

_SKIP_TAGS = {
    "script", "style", "noscript", "template", "svg", "canvas", "iframe", "object",
    "nav", "header", "footer", "aside", "form", "button", "select", "menu", "dialog",
}
_VOID_TAGS = {
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta",
    "param", "source", "track", "wbr",
}
_BLOCK_TAGS = {
    "p", "div", "section", "article", "main", "blockquote", "pre", "table", "tr",
    "ul", "ol", "dl", "dt", "dd", "figure", "figcaption", "address", "body", "td", "th",
}
_HEADINGS = {"h1": 1, "h2": 2, "h3": 3, "h4": 4, "h5": 5, "h6": 6}
_BOILERPLATE = re.compile(
    r"(^|[\s_-])(nav|navbar|menu|footer|header|sidebar|breadcrumbs?|cookie|banner|"
    r"advert|ads?|promo|share|social|comments?|related|subscribe|newsletter|popup|modal)($|[\s_-])",
    re.I,
)
_BOILERPLATE_ROLES = {"navigation", "banner", "contentinfo", "complementary", "search", "menu"}

_META_CHARSET = re.compile(rb"""<meta[^>]+charset\s*=\s*["']?\s*([A-Za-z0-9_\-:.]+)""", re.I)


def decode_html(html: bytes) -> str:
    """Decode with BOM, then ``<meta charset>``, then UTF-8, then cp1252."""
    for bom, enc in ((codecs.BOM_UTF8, "utf-8-sig"), (codecs.BOM_UTF16_LE, "utf-16"), (codecs.BOM_UTF16_BE, "utf-16")):
        if html.startswith(bom):
            return html.decode(enc, errors="replace")
    m = _META_CHARSET.search(html[:4096])
    if m:
        try:
            return html.decode(m.group(1).decode("ascii"), errors="replace")
        except LookupError:
            pass
    try:
        return html.decode("utf-8")
    except UnicodeDecodeError:
        return html.decode("cp1252", errors="replace")


class _Node:
    __slots__ = ("tag", "attrs", "children", "parent")

    def __init__(self, tag: str, attrs: dict[str, str], parent: "_Node | None"):
        self.tag = tag
        self.attrs = attrs
        self.children: list[_Node | str] = []
        self.parent = parent


class _TreeBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = _Node("#root", {}, None)
        self.cur = self.root
        self.title = ""
        self._in_title = False

    def handle_starttag(self, tag, attrs):
        if tag == "title":
            self._in_title = True
            return
        node = _Node(tag, {k: v or "" for k, v in attrs}, self.cur)
        self.cur.children.append(node)
        if tag not in _VOID_TAGS:
            self.cur = node

    def handle_startendtag(self, tag, attrs):
        self.cur.children.append(_Node(tag, {k: v or "" for k, v in attrs}, self.cur))

    def handle_endtag(self, tag):
        if tag == "title":
            self._in_title = False
            return
        node = self.cur
        while node is not self.root and node.tag != tag:
            node = node.parent
        if node is not self.root:
            self.cur = node.parent

    def handle_data(self, data):
        if self._in_title:
            self.title += data
        else:
            self.cur.children.append(data)


def _is_boilerplate(node: _Node) -> bool:
    if node.tag in _SKIP_TAGS:
        return True
    a = node.attrs
    if "hidden" in a or a.get("aria-hidden") == "true":
        return True
    if a.get("role", "").lower() in _BOILERPLATE_ROLES:
        return True
    if re.search(r"display\s*:\s*none", a.get("style", ""), re.I):
        return True
    return bool(_BOILERPLATE.search(a.get("class", "")) or _BOILERPLATE.search(a.get("id", "")))


def _find(node: _Node, tags: set[str]) -> _Node | None:
    for child in node.children:
        if isinstance(child, _Node):
            if _is_boilerplate(child):
                continue
            if child.tag in tags:
                return child
            found = _find(child, tags)
            if found is not None:
                return found
    return None


class _Emitter:
    def __init__(self):
        self.blocks: list[str] = []
        self.buf: list[str] = []
        self.prefix = ""

    def text(self, s: str) -> None:
        self.buf.append(s)

    def flush(self) -> None:
        line = re.sub(r"\s+", " ", "".join(self.buf)).strip()
        if line:
            self.blocks.append(self.prefix + line)
        self.buf = []
        self.prefix = ""

    def walk(self, node: _Node) -> None:
        for child in node.children:
            if isinstance(child, str):
                self.text(child)
                continue
            if _is_boilerplate(child):
                continue
            tag = child.tag
            if tag == "br":
                self.text(" ")
                continue
            if tag in _HEADINGS:
                self.flush()
                self.walk(child)
                self.prefix = "#" * _HEADINGS[tag] + " "
                self.flush()
            elif tag == "li":
                self.flush()
                self.walk(child)
                self.prefix = "- "
                self.flush()
            elif tag in _BLOCK_TAGS:
                self.flush()
                self.walk(child)
                self.flush()
            else:
                self.walk(child)


def parse_html(html: bytes) -> tuple[str, str]:
    """Return (title, main text)."""
    if not html or not html.strip():
        raise Unparseable("empty document")
    builder = _TreeBuilder()
    try:
        builder.feed(decode_html(html))
        builder.close()
    except Exception as exc:  # html.parser is lenient; anything raised here is fatal
        raise Unparseable(str(exc)) from None
    main = _find(builder.root, {"article", "main"}) or builder.root
    emitter = _Emitter()
    emitter.walk(main)
    emitter.flush()
    text = "\n\n".join(emitter.blocks)
    if not text:
        raise Unparseable("no extractable text")
    return re.sub(r"\s+", " ", builder.title).strip(), text


def extract_page_content(html: bytes, base_url: str = "") -> str:
    """Boilerplate-stripped main text of a page. Deterministic."""
    return parse_html(html)[1]
