"""Per-page observation sessions: select regions once at page entry, then
track transitions against the entry tree instead of re-decomposing.

A session freezes the entry-time tree, its region partition, abstractions,
and the selected region set. Each same-page step diffs the new tree against
the entry tree by persistent node id: removed nodes disappear from their
region's rendering, modified nodes update in place, added nodes collect
into a separate grouped subforest rendered at the end of the digest. A URL
change ends the session; the caller opens a fresh one (view_all state does
not carry over).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

from .abstraction import (
    LmBackend,
    LmEndpointConfig,
    LmError,
    RegionAbstraction,
    abstract_partition,
    load_prompt,
    render_selection_prompt,
)
from .axtree import AXNode, AXTree, serialize_node
from .decomposer import RegionPartition, decompose

logger = logging.getLogger(__name__)


class SelectionParseError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionDelta:
    """Diff of the current tree against the entry tree.

    ``added`` holds group roots of a subforest of new nodes (children pruned
    to added nodes only); ``anchors`` maps each group root to its nearest
    surviving ancestor. A relocated node id (same id, different parent) is
    treated as removed at its old position and added at its new one.
    """

    added: tuple[AXNode, ...] = ()
    removed: frozenset[str] = frozenset()
    modified: tuple[tuple[str, str, str | None, str | None], ...] = ()
    anchors: dict[str, str] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.added and not self.removed and not self.modified

    def added_ids(self) -> set[str]:
        return {n.id for g in self.added for n in g.walk()}


@dataclass(frozen=True)
class SamePage:
    delta: TransitionDelta


@dataclass(frozen=True)
class NewPage:
    pass


StepResult = SamePage | NewPage


# --- selectors -----------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]{3,}")
_STOPWORDS = frozenset(
    "the and for with from this that are was were been being have has had not "
    "all any can could should would will does how what which when where who "
    "then than into your our their his her its you please click navigate via "
    "using use per each".split()
)
_REGION_ID_RE = re.compile(r"R\d+")


def content_words(text: str) -> set[str]:
    return {w for w in _WORD_RE.findall(text.lower()) if w not in _STOPWORDS}


class StubSelector:
    """Offline keyword-overlap selector: a region is picked when its purpose
    or state summary shares a content word with the task; never empty. With
    ``k`` set, the top k regions by overlap (document order breaks ties)."""

    name = "stub"

    def __init__(self, k: int | None = None):
        self.k = k

    def select(
        self, task: str, action_history: list[str], abstractions: list[RegionAbstraction]
    ) -> set[str]:
        task_words = content_words(task)
        scored = []
        for i, a in enumerate(abstractions):
            overlap = len(task_words & content_words(f"{a.purpose} {a.state_summary}"))
            scored.append((-overlap, i, a.region_id))
        scored.sort()
        if self.k is not None:
            picked = [rid for _, _, rid in scored[: self.k]]
        else:
            picked = [rid for neg, _, rid in scored if neg < 0]
        if not picked:
            picked = [scored[0][2]]
        return set(picked)


class LmSelector:
    """Task-relevant region selection through a chat-completion endpoint."""

    name = "lm"

    def __init__(self, config: LmEndpointConfig, transport=None):
        self._backend = LmBackend(config, transport=transport)

    def select(
        self, task: str, action_history: list[str], abstractions: list[RegionAbstraction]
    ) -> set[str]:
        prompt = render_selection_prompt(task, action_history, abstractions)
        reply = self._backend.complete(prompt)
        return parse_selection_reply(reply, {a.region_id for a in abstractions})


def parse_selection_reply(reply: str, valid_ids: set[str]) -> set[str]:
    found = [rid for rid in _REGION_ID_RE.findall(reply) if rid in valid_ids]
    if not found:
        raise SelectionParseError(f"no region ids in reply: {reply[:120]!r}")
    return set(found)


# --- session -----------------------------------------------------------------


@dataclass
class PageSession:
    url: str
    task: str
    entry_tree: AXTree
    partition: RegionPartition
    abstractions: list[RegionAbstraction]
    selected: frozenset[str]
    view_all_active: bool = False
    step_index: int = 0
    current_tree: AXTree = None  # type: ignore[assignment]
    delta: TransitionDelta = field(default_factory=TransitionDelta)

    def __post_init__(self) -> None:
        if self.current_tree is None:
            self.current_tree = self.entry_tree
        region_ids = {r.region_id for r in self.partition.regions}
        if not self.selected <= region_ids:
            raise ValueError(f"selected ids {self.selected - region_ids} not in partition")

    # step / view_all mutate; a session must not be shared across threads.

    def step(self, new_tree: AXTree, new_url: str) -> StepResult:
        """Same-page transition tracking; URL change means a fresh session."""
        if new_url != self.url:
            return NewPage()
        self.delta = diff_trees(self.entry_tree, new_tree)
        self.current_tree = new_tree
        self.step_index += 1
        return SamePage(self.delta)

    def view_all(self) -> None:
        """Reveal every region fully; sticks until the session is replaced."""
        self.view_all_active = True

    def render_digest(self) -> str:
        return render_digest(self)


def open_session(
    tree: AXTree,
    task: str,
    action_history: list[str],
    model,
    abstraction_backend,
    selector_backend,
    tau: float | None = None,
    vocab=None,
) -> PageSession:
    """Decompose -> abstract -> select on a preprocessed entry tree.

    Selection failures (unparseable reply, unreachable endpoint) fall back
    to selecting every region, a safe superset.
    """
    partition = decompose(tree, model, tau=tau, vocab=vocab)
    abstractions = abstract_partition(partition, tree, abstraction_backend)
    partition = partition.with_abstractions(
        {a.region_id: (a.purpose, a.state_summary) for a in abstractions}
    )
    try:
        selected = selector_backend.select(task, action_history, abstractions)
    except (SelectionParseError, LmError) as exc:
        logger.warning("region selection failed (%s); selecting all regions", exc)
        selected = {r.region_id for r in partition.regions}
    return PageSession(
        url=tree.url,
        task=task,
        entry_tree=tree,
        partition=partition,
        abstractions=abstractions,
        selected=frozenset(selected),
    )


# --- diffing -----------------------------------------------------------------


def diff_trees(entry: AXTree, current: AXTree) -> TransitionDelta:
    """Persistent-id diff of ``current`` against ``entry``."""
    entry_nodes = entry.nodes_by_id
    cur_nodes = current.nodes_by_id
    entry_ids = set(entry_nodes)
    cur_ids = set(cur_nodes)

    removed = entry_ids - cur_ids
    added = cur_ids - entry_ids
    collided: set[str] = set()
    modified: list[tuple[str, str, str | None, str | None]] = []
    for node_id in entry_ids & cur_ids:
        if entry.parent_ids[node_id] != current.parent_ids[node_id]:
            # same id, incompatible position: treat as remove + add
            logger.warning("node %s moved parents; treating as remove+add", node_id)
            collided.add(node_id)
            continue
        old, new = entry_nodes[node_id], cur_nodes[node_id]
        for fld in ("role", "name", "value"):
            o, n = getattr(old, fld), getattr(new, fld)
            if o != n:
                modified.append((node_id, fld, o, n))

    added |= collided
    removed |= collided

    # group added nodes under their nearest surviving ancestor, keeping
    # the structural grouping among them
    groups: list[AXNode] = []
    anchors: dict[str, str] = {}

    def prune_to_added(node: AXNode) -> AXNode:
        kids = tuple(prune_to_added(c) for c in node.children if c.id in added)
        return replace(node, children=kids) if kids != node.children else node

    for node in current.walk():
        if node.id not in added:
            continue
        parent = current.parent_ids[node.id]
        if parent is not None and parent in added:
            continue  # nested inside an already-collected group
        anchor = parent
        while anchor is not None and anchor not in entry_ids:
            anchor = current.parent_ids[anchor]
        groups.append(prune_to_added(node))
        if anchor is not None:
            anchors[node.id] = anchor

    return TransitionDelta(
        added=tuple(groups),
        removed=frozenset(removed),
        modified=tuple(sorted(modified)),
        anchors=anchors,
    )


# --- digest rendering ----------------------------------------------------------


def _escape_attr(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


def _subtree_lines(node: AXNode, depth: int, out: list[str]) -> None:
    out.append("\t" * depth + serialize_node(node))
    for child in node.children:
        _subtree_lines(child, depth + 1, out)


def render_digest(session: PageSession) -> str:
    """Deterministic wire form: one block per region in document order.

    Selected regions (or all of them once view_all is active) render their
    member nodes in current state inside ``<Rx purpose="...">...</Rx>``;
    the rest emit only the opening tag. Added nodes, if any, follow inside
    one ``<added_elements>`` block.
    """
    cur_nodes = session.current_tree.nodes_by_id
    removed = session.delta.removed
    lines: list[str] = []

    for region in session.partition.regions:
        tag = f'<{region.region_id} purpose="{_escape_attr(region.purpose or "")}">'
        if not (session.view_all_active or region.region_id in session.selected):
            lines.append(tag)
            continue
        lines.append(tag)
        entry_root = session.entry_tree.nodes_by_id[region.root_node_id]

        def emit(node: AXNode, depth: int) -> None:
            if node.id in removed:
                return
            current = cur_nodes.get(node.id)
            if current is None:
                return
            lines.append("\t" * depth + serialize_node(current))
            for child in node.children:
                if child.id in region.member_node_ids:
                    emit(child, depth + 1)

        emit(entry_root, 0)
        lines.append(f"</{region.region_id}>")

    if session.delta.added:
        lines.append("<added_elements>")
        for group in session.delta.added:
            _subtree_lines(group, 0, lines)
        lines.append("</added_elements>")

    return "\n".join(lines) + "\n"
