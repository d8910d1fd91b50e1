"""Error-tolerant HTML tree building and a tiny selector language.

The tokenizer is the stdlib :class:`html.parser.HTMLParser`; tree
construction (implied end tags, void elements, opaque script/style/comment
text) is done here so that behaviour on malformed newspaper markup is fixed
and predictable.

Selector grammar, steps separated by whitespace with descendant semantics::

    selector := step (WS step)* accessor?
    step     := (tag | "*") ("." class | "#" id | "[" name "=" value "]" | "[" n "]")*
    accessor := "::text" | "::attr(" name ")"

Example: ``div.headline a::attr(href)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Iterator

VOID_ELEMENTS = frozenset(
    "area base br col embed hr img input link meta param source track wbr".split()
)
OPAQUE_ELEMENTS = frozenset({"script", "style"})

# opening any of these closes an open <p> (implied end tag)
_CLOSES_P = frozenset(
    """address article aside blockquote details dialog div dl fieldset figcaption figure
    footer form h1 h2 h3 h4 h5 h6 header hgroup hr main menu nav ol p pre section table ul""".split()
)
_SCOPE_BOUNDARY = frozenset({"#root", "html", "table", "td", "th", "caption", "button", "object", "template"})
# tag -> (tags it implicitly closes, tags that stop the search); closing a tag closes everything inside it
_IMPLIED_END = {
    "li": ({"li"}, {"ul", "ol", "menu"}),
    "dt": ({"dt", "dd"}, {"dl"}),
    "dd": ({"dt", "dd"}, {"dl"}),
    "tr": ({"tr"}, {"table", "tbody", "thead", "tfoot"}),
    "td": ({"td", "th"}, {"tr", "table"}),
    "th": ({"td", "th"}, {"tr", "table"}),
    "tbody": ({"tbody", "thead", "tfoot"}, {"table"}),
    "thead": ({"tbody", "thead", "tfoot"}, {"table"}),
    "tfoot": ({"tbody", "thead", "tfoot"}, {"table"}),
    "option": ({"option"}, {"select", "datalist"}),
}
_TABLE_PARTS = frozenset({"tr", "td", "th", "tbody", "thead", "tfoot"})
_HEADINGS = frozenset({"h1", "h2", "h3", "h4", "h5", "h6"})


@dataclass(frozen=True, repr=False)
class DomNode:
    """Immutable tree node.  ``kind`` is ``"element"`` or ``"text"``.

    Text nodes flagged ``opaque`` hold comments and script/style bodies; they
    are kept in the tree but skipped by :func:`text_content`.
    """

    kind: str
    tag: str = ""
    attrs: tuple[tuple[str, str], ...] = ()
    children: tuple["DomNode", ...] = ()
    text: str = ""
    opaque: bool = False

    def __repr__(self) -> str:
        if self.kind == "text":
            return f"Text({self.text!r}{', opaque' if self.opaque else ''})"
        return f"<{self.tag}{''.join(f' {k}={v!r}' for k, v in self.attrs)}> {list(self.children)!r}"

    @property
    def is_element(self) -> bool:
        return self.kind == "element"

    def get(self, name: str, default: str | None = None) -> str | None:
        for key, value in self.attrs:
            if key == name:
                return value
        return default

    @property
    def classes(self) -> list[str]:
        return (self.get("class") or "").split()

    def iter(self) -> Iterator["DomNode"]:
        """Pre-order walk including ``self``."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def descendants(self) -> Iterator["DomNode"]:
        it = self.iter()
        next(it)
        return it

    def text_content(self) -> str:
        return text_content(self)


class _Building:
    __slots__ = ("tag", "attrs", "children")

    def __init__(self, tag: str, attrs: tuple = ()):
        self.tag = tag
        self.attrs = attrs
        self.children: list = []


def _freeze(root: _Building) -> DomNode:
    # iterative post-order so pathological nesting cannot hit the recursion limit
    done: dict[int, DomNode] = {}
    stack: list[tuple[_Building, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if not expanded:
            stack.append((node, True))
            stack.extend((c, False) for c in node.children if isinstance(c, _Building))
            continue
        kids = tuple(done.pop(id(c)) if isinstance(c, _Building) else c for c in node.children)
        done[id(node)] = DomNode("element", node.tag, node.attrs, kids)
    return done[id(root)]


class _TreeBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = _Building("#root")
        self.stack = [self.root]

    @property
    def top(self) -> _Building:
        return self.stack[-1]

    def _close_through(self, index: int) -> None:
        del self.stack[index:]

    def _find_open(self, targets, stoppers) -> int | None:
        for i in range(len(self.stack) - 1, 0, -1):
            tag = self.stack[i].tag
            if tag in targets:
                return i
            if tag in stoppers:
                return None
        return None

    def _apply_implied_ends(self, tag: str) -> None:
        if tag in _CLOSES_P:
            i = self._find_open({"p"}, _SCOPE_BOUNDARY)
            if i is not None:
                self._close_through(i)
        if tag in _IMPLIED_END:
            targets, stoppers = _IMPLIED_END[tag]
            boundary = _SCOPE_BOUNDARY - {"td", "th"} if tag in _TABLE_PARTS else _SCOPE_BOUNDARY
            i = self._find_open(targets, stoppers | boundary)
            if i is not None:
                self._close_through(i)
        if tag in _HEADINGS and self.top.tag in _HEADINGS:
            self.stack.pop()

    def handle_starttag(self, tag, attrs):
        tag = tag.lower()
        self._apply_implied_ends(tag)
        node = _Building(tag, tuple((k.lower(), v if v is not None else "") for k, v in attrs))
        self.top.children.append(node)
        if tag not in VOID_ELEMENTS:
            self.stack.append(node)

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)
        if tag.lower() not in VOID_ELEMENTS and self.top.tag == tag.lower():
            self.stack.pop()

    def handle_endtag(self, tag):
        tag = tag.lower()
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                self._close_through(i)
                return
        # stray end tag: ignored

    def handle_data(self, data):
        if data:
            self.top.children.append(DomNode("text", text=data, opaque=self.top.tag in OPAQUE_ELEMENTS))

    def handle_comment(self, data):
        self.top.children.append(DomNode("text", text=data, opaque=True))


def parse_html(text: str | bytes) -> DomNode:
    """Parse arbitrary input into a tree under a synthetic ``#root`` element."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    builder = _TreeBuilder()
    try:
        builder.feed(text)
        builder.close()
    except Exception:  # tokenizer edge cases; keep whatever was built
        pass
    return _freeze(builder.root)


def normalize_space(text: str) -> str:
    return " ".join(text.split())


def text_content(node: DomNode) -> str:
    if node.kind == "text":
        return "" if node.opaque else normalize_space(node.text)
    return normalize_space("".join(n.text for n in node.iter() if n.kind == "text" and not n.opaque))


# --------------------------------------------------------------------------
# selectors


class SelectorSyntax(ValueError):
    def __init__(self, position: int, message: str):
        super().__init__(f"{message} at position {position}")
        self.position = position
        self.message = message


class MissingAttribute(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"element has no attribute {self.name!r}"


@dataclass(frozen=True)
class Accessor:
    kind: str = "text"  # "text" or "attr"
    name: str | None = None


TEXT = Accessor()


def attr(name: str) -> Accessor:
    return Accessor("attr", name.lower())


@dataclass(frozen=True)
class Step:
    tag: str = "*"
    classes: tuple[str, ...] = ()
    id: str | None = None
    attrs: tuple[tuple[str, str], ...] = ()
    index: int | None = None

    def __post_init__(self):
        if self.index is not None and self.index < 1:
            raise ValueError("step index is 1-based")

    def matches(self, node: DomNode) -> bool:
        if not node.is_element or node.tag == "#root":
            return False
        if self.tag != "*" and node.tag != self.tag:
            return False
        if self.classes:
            have = node.classes
            if any(c not in have for c in self.classes):
                return False
        if self.id is not None and node.get("id") != self.id:
            return False
        return all(node.get(k) == v for k, v in self.attrs)


@dataclass(frozen=True)
class Selector:
    steps: tuple[Step, ...]
    accessor: Accessor = field(default=TEXT)

    def __post_init__(self):
        if not self.steps:
            raise ValueError("selector needs at least one step")

    def __str__(self) -> str:
        return print_selector(self)


_NAME = re.compile(r"[\w-]+")
_TAG = re.compile(r"[A-Za-z_][\w-]*")
_BARE_VALUE = re.compile(r"[\w./:-]+")


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self, n: int = 1) -> str:
        return self.text[self.pos : self.pos + n]

    def at_end(self) -> bool:
        return self.pos >= len(self.text)

    def fail(self, message: str):
        raise SelectorSyntax(self.pos, message)

    def expect(self, literal: str) -> None:
        if not self.text.startswith(literal, self.pos):
            self.fail(f"expected {literal!r}")
        self.pos += len(literal)

    def match(self, pattern: re.Pattern, what: str) -> str:
        m = pattern.match(self.text, self.pos)
        if not m:
            self.fail(f"expected {what}")
        self.pos = m.end()
        return m.group()

    def skip_ws(self) -> bool:
        start = self.pos
        while not self.at_end() and self.text[self.pos].isspace():
            self.pos += 1
        return self.pos > start


def _parse_quoted(sc: _Scanner) -> str:
    sc.expect('"')
    out = []
    while True:
        if sc.at_end():
            sc.fail("unterminated string")
        ch = sc.text[sc.pos]
        sc.pos += 1
        if ch == '"':
            return "".join(out)
        if ch == "\\":
            if sc.at_end():
                sc.fail("dangling escape")
            ch = sc.text[sc.pos]
            sc.pos += 1
        out.append(ch)


def _parse_step(sc: _Scanner) -> Step:
    if sc.peek() == "*":
        sc.pos += 1
        tag = "*"
    elif sc.peek() in (".", "#", "["):
        tag = "*"
    else:
        tag = sc.match(_TAG, "tag name").lower()
    classes: list[str] = []
    ident = None
    attrs: list[tuple[str, str]] = []
    index = None
    while not sc.at_end():
        ch = sc.peek()
        if ch == ".":
            sc.pos += 1
            classes.append(sc.match(_NAME, "class name"))
        elif ch == "#":
            if ident is not None:
                sc.fail("duplicate id")
            sc.pos += 1
            ident = sc.match(_NAME, "id")
        elif ch == "[":
            sc.pos += 1
            sc.skip_ws()
            # a bare digit run is an index; "[1=x]" is an attribute named "1"
            if re.compile(r"\d+\s*\]").match(sc.text, sc.pos):
                if index is not None:
                    sc.fail("duplicate index")
                start = sc.pos
                index = int(sc.match(re.compile(r"\d+"), "index"))
                if index < 1:
                    raise SelectorSyntax(start, "index must be >= 1")
            else:
                name = sc.match(_NAME, "attribute name").lower()
                sc.skip_ws()
                sc.expect("=")
                sc.skip_ws()
                value = _parse_quoted(sc) if sc.peek() == '"' else sc.match(_BARE_VALUE, "attribute value")
                attrs.append((name, value))
            sc.skip_ws()
            sc.expect("]")
        else:
            break
    return Step(tag, tuple(classes), ident, tuple(attrs), index)


def parse_selector(text: str) -> Selector:
    sc = _Scanner(text)
    sc.skip_ws()
    if sc.at_end():
        sc.fail("empty selector")
    steps: list[Step] = []
    accessor = TEXT
    while not sc.at_end():
        if sc.peek(2) == "::":
            if not steps:
                sc.fail("accessor without a step")
            sc.pos += 2
            if sc.text.startswith("text", sc.pos):
                sc.pos += 4
            elif sc.text.startswith("attr(", sc.pos):
                sc.pos += 5
                sc.skip_ws()
                name = sc.match(_NAME, "attribute name")
                sc.skip_ws()
                sc.expect(")")
                accessor = attr(name)
            else:
                sc.fail("unknown accessor")
            sc.skip_ws()
            if not sc.at_end():
                sc.fail("trailing input after accessor")
            break
        steps.append(_parse_step(sc))
        if sc.at_end() or sc.peek(2) == "::":
            continue
        if not sc.skip_ws():
            sc.fail(f"unexpected character {sc.peek()!r}")
    return Selector(tuple(steps), accessor)


def _print_value(value: str) -> str:
    if _BARE_VALUE.fullmatch(value):
        return value
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def print_selector(sel: Selector) -> str:
    parts = []
    for step in sel.steps:
        s = step.tag
        s += "".join(f".{c}" for c in step.classes)
        if step.id is not None:
            s += f"#{step.id}"
        s += "".join(f"[{k}={_print_value(v)}]" for k, v in step.attrs)
        if step.index is not None:
            s += f"[{step.index}]"
        parts.append(s)
    out = " ".join(parts)
    if sel.accessor.kind == "attr":
        out += f"::attr({sel.accessor.name})"
    else:
        out += "::text"
    return out


def select(root: DomNode, sel: Selector) -> list[DomNode]:
    """Match ``sel`` under ``root``; results in document order, no duplicates."""
    order = {id(n): i for i, n in enumerate(root.iter())}
    context = [root]
    for step in sel.steps:
        found: dict[int, DomNode] = {}
        for ctx in context:
            matches = [n for n in ctx.descendants() if step.matches(n)]
            if step.index is not None:
                matches = matches[step.index - 1 : step.index]
            for node in matches:
                found.setdefault(id(node), node)
        context = sorted(found.values(), key=lambda n: order[id(n)])
        if not context:
            break
    return context


def extract_value(node: DomNode, accessor: Accessor = TEXT) -> str:
    if not node.is_element:
        raise ValueError("extract_value needs an element")
    if accessor.kind == "attr":
        value = node.get(accessor.name)
        if value is None:
            raise MissingAttribute(accessor.name)
        return value
    return text_content(node)


def select_values(root: DomNode, sel: Selector) -> list[str]:
    """Apply ``sel`` and its accessor; elements lacking the attribute are skipped."""
    out = []
    for node in select(root, sel):
        try:
            out.append(extract_value(node, sel.accessor))
        except MissingAttribute:
            continue
    return out
