"""Seeded random page trees with rule-derived edge labels.

Stands in for an annotated page corpus during training and tests: tree
shapes, roles, and names are drawn from a fixed working set, and a
role-based rule labels each edge (cut when the child's role is in the
rule set), which a trained model should recover near-perfectly.
"""

from __future__ import annotations

import numpy as np

from .axtree import AXNode, AXTree
from .decomposer import EdgeLabelSet

DEFAULT_CUT_ROLES = frozenset({"navigation", "list", "form"})

# (role, weight, may have children)
_ROLE_POOL = [
    ("StaticText", 20, False),
    ("link", 16, False),
    ("button", 7, False),
    ("heading", 6, False),
    ("image", 5, False),
    ("listitem", 8, True),
    ("paragraph", 5, True),
    ("list", 6, True),
    ("navigation", 4, True),
    ("form", 3, True),
    ("textbox", 3, False),
    ("combobox", 2, False),
    ("checkbox", 1, False),
    ("table", 2, True),
    ("row", 3, True),
    ("cell", 4, True),
    ("main", 1, True),
    ("banner", 1, True),
    ("contentinfo", 1, True),
    ("region", 2, True),
    ("group", 2, True),
    ("article", 2, True),
    ("menuitem", 2, False),
]

_WORDS = (
    "home search cart account product price review order list menu settings "
    "profile help about contact news sale filter sort category brand item "
    "detail shipping checkout wish compare store open close next previous "
    "page result total quantity add remove update save cancel submit login "
    "logout register forum thread reply commit branch issue merge map route "
    "directions export layer marker title summary date author tag edit view"
).split()


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.counter = 0

    def next_id(self) -> str:
        self.counter += 1
        return f"n{self.counter}"

    def words(self, low: int = 1, high: int = 3) -> str:
        k = int(self.rng.integers(low, high + 1))
        return " ".join(self.rng.choice(_WORDS) for _ in range(k))


def random_tree(rng: np.random.Generator, n_nodes: int, url: str, max_branch: int = 6) -> AXTree:
    """Random attachment tree; containers only acquire children."""
    builder = _Builder(rng)
    roles = [r for r, _, _ in _ROLE_POOL]
    weights = np.array([w for _, w, _ in _ROLE_POOL], dtype=np.float64)
    weights /= weights.sum()
    container = {r for r, _, c in _ROLE_POOL if c}

    root_id = builder.next_id()
    children: dict[str, list[str]] = {root_id: []}
    meta: dict[str, tuple[str, str | None, str | None]] = {
        root_id: ("RootWebArea", builder.words(2, 4), None)
    }
    open_parents = [root_id]

    for _ in range(n_nodes - 1):
        parent = open_parents[int(rng.integers(len(open_parents)))]
        role = str(rng.choice(roles, p=weights))
        name = builder.words() if rng.random() < 0.85 else None
        value = builder.words(1, 2) if role == "textbox" and rng.random() < 0.5 else None
        node_id = builder.next_id()
        children[parent].append(node_id)
        children[node_id] = []
        meta[node_id] = (role, name, value)
        if role in container:
            open_parents.append(node_id)
        if len(children[parent]) >= max_branch and parent != root_id:
            open_parents.remove(parent)

    def build(node_id: str) -> AXNode:
        role, name, value = meta[node_id]
        return AXNode(
            id=node_id,
            role=role,
            name=name,
            value=value,
            children=tuple(build(c) for c in children[node_id]),
        )

    return AXTree(root=build(root_id), url=url)


def rule_labels(tree: AXTree, cut_roles: frozenset[str] = DEFAULT_CUT_ROLES) -> EdgeLabelSet:
    return EdgeLabelSet.from_rule(tree, set(cut_roles))


def synthetic_corpus(
    n_trees: int = 200,
    seed: int = 0,
    min_nodes: int = 15,
    max_nodes: int = 40,
    cut_roles: frozenset[str] = DEFAULT_CUT_ROLES,
) -> list[tuple[AXTree, EdgeLabelSet]]:
    """Deterministic labeled corpus for trainer tests and the train CLI."""
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(n_trees):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        tree = random_tree(rng, n, url=f"https://synthetic.test/{seed}/{i}")
        corpus.append((tree, rule_labels(tree, cut_roles)))
    return corpus
