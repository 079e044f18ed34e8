"""Accessibility tree parsing, serialization, and preprocessing.

The text format is one node per line::

    <indent>[id] role 'name'? 'value'? (key=value)*

Indentation encodes depth (one unit per level, tab or a fixed space count
auto-detected from the first indented line). Names and values are
single-quoted with backslash escaping for ``'`` and ``\\``; a run of
unquoted words after the role is also accepted as a name. Attribute values
may be bare (``href=/x``) or quoted (``alt='a b'``).

Trees are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator


class AXTreeError(ValueError):
    """Base class for tree construction and parsing failures."""


class MalformedLineError(AXTreeError):
    def __init__(self, line_index: int, reason: str):
        super().__init__(f"line {line_index}: {reason}")
        self.line_index = line_index
        self.reason = reason


class MultipleRootsError(AXTreeError):
    def __init__(self, line_index: int):
        super().__init__(f"line {line_index}: second node at depth 0")
        self.line_index = line_index


class IndentJumpError(AXTreeError):
    def __init__(self, line_index: int, depth: int, parent_depth: int):
        super().__init__(
            f"line {line_index}: depth {depth} skips levels (previous node at depth {parent_depth})"
        )
        self.line_index = line_index


class DuplicateIdError(AXTreeError):
    def __init__(self, node_id: str, line_index: int | None = None):
        at = f" at line {line_index}" if line_index is not None else ""
        super().__init__(f"duplicate node id {node_id!r}{at}")
        self.node_id = node_id


_ID_RE = re.compile(r"\[([^\]\s]+)\]")
_ATTR_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.:-]*\Z")

# Roles an agent can perceive or act on even without a name/value.
INTERACTIVE_ROLES = frozenset(
    {"link", "button", "textbox", "combobox", "checkbox", "image", "heading"}
)
# Content-free wrapper roles eligible for removal during preprocessing.
WRAPPER_ROLES = frozenset({"generic", "none"})


@dataclass(frozen=True)
class AXNode:
    """One accessibility-tree node. ``id`` is persistent across same-page mutations."""

    id: str
    role: str
    name: str | None = None
    value: str | None = None
    attrs: dict[str, str] | None = None
    children: tuple["AXNode", ...] = ()

    def __post_init__(self) -> None:
        if not self.id or any(c.isspace() for c in self.id) or "]" in self.id:
            raise AXTreeError(f"invalid node id {self.id!r}")
        if not self.role or any(c.isspace() for c in self.role) or "'" in self.role or "=" in self.role:
            raise AXTreeError(f"invalid role {self.role!r} for node {self.id!r}")
        for key in self.attrs or ():
            if not _ATTR_KEY_RE.match(key):
                raise AXTreeError(f"invalid attribute key {key!r} on node {self.id!r}")
        # Empty strings denote absence; normalizing keeps serialization bijective.
        if self.name == "":
            object.__setattr__(self, "name", None)
        if self.value == "":
            object.__setattr__(self, "value", None)
        if self.attrs is not None and not self.attrs:
            object.__setattr__(self, "attrs", None)
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    def walk(self) -> Iterator["AXNode"]:
        """Pre-order traversal of this subtree."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(frozen=True)
class AXTree:
    """A parsed page observation; node ids are unique and every node is reachable once."""

    root: AXNode
    url: str = ""
    node_count: int = field(init=False, compare=False)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        count = 0
        for node in self.root.walk():
            if node.id in seen:
                raise DuplicateIdError(node.id)
            seen.add(node.id)
            count += 1
        object.__setattr__(self, "node_count", count)

    def walk(self) -> Iterator[AXNode]:
        return self.root.walk()

    @cached_property
    def nodes_by_id(self) -> dict[str, AXNode]:
        return {node.id: node for node in self.walk()}

    @cached_property
    def parent_ids(self) -> dict[str, str | None]:
        parents: dict[str, str | None] = {self.root.id: None}
        for node in self.walk():
            for child in node.children:
                parents[child.id] = node.id
        return parents

    @cached_property
    def depths(self) -> dict[str, int]:
        depths = {self.root.id: 0}
        for node in self.walk():
            for child in node.children:
                depths[child.id] = depths[node.id] + 1
        return depths

    @cached_property
    def document_order(self) -> dict[str, int]:
        return {node.id: i for i, node in enumerate(self.walk())}

    def edges(self) -> Iterator[tuple[str, str]]:
        """All (parent_id, child_id) pairs in document order."""
        for node in self.walk():
            for child in node.children:
                yield node.id, child.id


# --- parsing ---------------------------------------------------------------


def _read_quoted(s: str, start: int, lineno: int) -> tuple[str, int]:
    # start points at the opening quote
    out: list[str] = []
    i = start + 1
    while i < len(s):
        c = s[i]
        if c == "\\":
            if i + 1 >= len(s) or s[i + 1] not in ("'", "\\"):
                raise MalformedLineError(lineno, "unsupported escape sequence")
            out.append(s[i + 1])
            i += 2
        elif c == "'":
            return "".join(out), i + 1
        else:
            out.append(c)
            i += 1
    raise MalformedLineError(lineno, "unterminated quoted string")


def _tokenize(s: str, lineno: int):
    """Yield ('quoted', str), ('attr', (key, value)), or ('bare', str) tokens."""
    i = 0
    n = len(s)
    while i < n:
        if s[i] == " ":
            i += 1
            continue
        if s[i] == "'":
            text, i = _read_quoted(s, i, lineno)
            if i < n and s[i] != " ":
                raise MalformedLineError(lineno, "missing space after quoted string")
            yield "quoted", text
            continue
        j = i
        while j < n and s[j] not in (" ", "'"):
            j += 1
        word = s[i:j]
        if j < n and s[j] == "'":
            # quoted attribute value: key='...'
            if not word.endswith("="):
                raise MalformedLineError(lineno, "quote inside unquoted token")
            key = word[:-1]
            if not _ATTR_KEY_RE.match(key):
                raise MalformedLineError(lineno, f"invalid attribute key {key!r}")
            value, j = _read_quoted(s, j, lineno)
            if j < n and s[j] != " ":
                raise MalformedLineError(lineno, "missing space after quoted string")
            yield "attr", (key, value)
        elif "=" in word:
            key, value = word.split("=", 1)
            if not _ATTR_KEY_RE.match(key):
                raise MalformedLineError(lineno, f"invalid attribute key {key!r}")
            yield "attr", (key, value)
        else:
            yield "bare", word
        i = j


def _parse_line(body: str, lineno: int) -> AXNode:
    match = _ID_RE.match(body)
    if not match:
        raise MalformedLineError(lineno, "expected [id] at start of node")
    node_id = match.group(1)
    tokens = list(_tokenize(body[match.end():], lineno))
    if not tokens or tokens[0][0] != "bare":
        raise MalformedLineError(lineno, "missing role after [id]")
    role = tokens[0][1]

    name: str | None = None
    value: str | None = None
    bare_parts: list[str] = []
    attrs: dict[str, str] = {}
    for kind, payload in tokens[1:]:
        if kind == "attr":
            key, val = payload
            if key in attrs:
                raise MalformedLineError(lineno, f"duplicate attribute {key!r}")
            attrs[key] = val
        elif attrs:
            raise MalformedLineError(lineno, "name/value after attributes")
        elif kind == "quoted":
            if name is None and not bare_parts:
                name = payload
            elif value is None:
                if bare_parts:
                    name = " ".join(bare_parts)
                    bare_parts = []
                value = payload
            else:
                raise MalformedLineError(lineno, "too many quoted fields")
        else:  # bare word
            if name is None and value is None:
                bare_parts.append(payload)
            else:
                raise MalformedLineError(lineno, "unquoted text after quoted field")
    if bare_parts:
        name = " ".join(bare_parts)
    try:
        return AXNode(id=node_id, role=role, name=name, value=value, attrs=attrs or None)
    except AXTreeError as exc:
        raise MalformedLineError(lineno, str(exc)) from exc


def _split_indent(line: str) -> tuple[str, str]:
    i = 0
    while i < len(line) and line[i] in (" ", "\t"):
        i += 1
    return line[:i], line[i:]


def parse_axtree(text: str, url: str = "") -> AXTree:
    """Parse the indentation-based text format into an AXTree.

    Raises MalformedLineError, MultipleRootsError, IndentJumpError, or
    DuplicateIdError; line indices in errors are 1-based. Blank lines are
    skipped.
    """
    unit: str | None = None  # indentation unit, e.g. "\t" or "  "
    root: AXNode | None = None
    # stack of (depth, node_id); children collected per node id
    stack: list[tuple[int, str]] = []
    children: dict[str, list[AXNode]] = {}
    nodes: dict[str, AXNode] = {}
    seen_ids: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        indent, body = _split_indent(raw)
        if indent:
            if unit is None:
                if " " in indent and "\t" in indent:
                    raise MalformedLineError(lineno, "mixed tabs and spaces in indent")
                unit = "\t" if "\t" in indent else " " * len(indent)
            q, r = divmod(len(indent), len(unit))
            if r or indent != unit * q:
                raise MalformedLineError(lineno, "inconsistent indentation")
            depth = q
        else:
            depth = 0

        node = _parse_line(body, lineno)
        if node.id in seen_ids:
            raise DuplicateIdError(node.id, lineno)
        seen_ids.add(node.id)

        if depth == 0:
            if root is not None:
                raise MultipleRootsError(lineno)
            root = node
        else:
            if root is None:
                raise MalformedLineError(lineno, "indented node before root")
            while stack and stack[-1][0] >= depth:
                stack.pop()
            if not stack or stack[-1][0] != depth - 1:
                parent_depth = stack[-1][0] if stack else -1
                raise IndentJumpError(lineno, depth, parent_depth)
            children.setdefault(stack[-1][1], []).append(node)
        nodes[node.id] = node
        stack.append((depth, node.id))

    if root is None:
        raise MalformedLineError(0, "no root node")

    def build(node: AXNode) -> AXNode:
        kids = tuple(build(c) for c in children.get(node.id, ()))
        return replace(node, children=kids) if kids else node

    return AXTree(root=build(root), url=url)


# --- serialization ---------------------------------------------------------


def _quote(text: str) -> str:
    return "'" + text.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _attr_token(key: str, value: str) -> str:
    if value == "" or any(c in value for c in (" ", "'", "\\")):
        return f"{key}={_quote(value)}"
    return f"{key}={value}"


def serialize_node(node: AXNode) -> str:
    """Canonical single-line form of one node (no indent)."""
    parts = [f"[{node.id}]", node.role]
    if node.name is not None:
        parts.append(_quote(node.name))
    if node.value is not None:
        if node.name is None:
            parts.append(_quote(""))  # value requires a name slot before it
        parts.append(_quote(node.value))
    for key, val in (node.attrs or {}).items():
        parts.append(_attr_token(key, val))
    return " ".join(parts)


def serialize_axtree(tree: AXTree, indent: str = "\t") -> str:
    """Canonical text; ``parse_axtree(serialize_axtree(t))`` equals ``t``."""
    lines: list[str] = []

    def emit(node: AXNode, depth: int) -> None:
        lines.append(indent * depth + serialize_node(node))
        for child in node.children:
            emit(child, depth + 1)

    emit(tree.root, 0)
    return "\n".join(lines) + "\n"


# --- preprocessing ----------------------------------------------------------


def _is_visible(node: AXNode) -> bool:
    return bool(node.name) or bool(node.value) or node.role in INTERACTIVE_ROLES


def _enrich(node: AXNode) -> AXNode:
    kids = tuple(_enrich(c) for c in node.children)
    name = node.name
    if not name and node.attrs:
        if node.role == "image" and node.attrs.get("src"):
            name = node.attrs["src"]
        elif node.role == "link" and node.attrs.get("href"):
            name = node.attrs["href"]
    if name is not node.name or kids != node.children:
        return replace(node, name=name, children=kids)
    return node


def preprocess(tree: AXTree) -> AXTree:
    """Drop content-free wrapper nodes, promote their children, enrich names.

    A ``generic``/``none`` node with no name and no value is removed and its
    children spliced into its place, unless two or more of its child branches
    each contain a visible descendant (such wrappers preserve grouping).
    Nameless ``image``/``link`` nodes take their name from attrs src/href.
    The root always survives so the result stays a tree. Idempotent.
    """

    def keep(node: AXNode, is_root: bool) -> list[tuple[AXNode, bool]]:
        kept = [entry for child in node.children for entry in keep(child, False)]
        kids = tuple(e[0] for e in kept)
        visible = _is_visible(node) or any(e[1] for e in kept)
        rebuilt = replace(node, children=kids) if kids != node.children else node
        if is_root or node.role not in WRAPPER_ROLES or node.name or node.value:
            return [(rebuilt, visible)]
        if sum(1 for e in kept if e[1]) >= 2:
            return [(rebuilt, visible)]
        return kept

    enriched = _enrich(tree.root)
    survivors = keep(enriched, True)
    return AXTree(root=survivors[0][0], url=tree.url)
