"""Bottom-up edge classification splitting a page tree into functional regions.

One post-order pass per tree: at each internal node the classifier scores
every child edge against the sibling-mean context; edges at or above the
cut threshold detach the child's accumulated subtree as a region, the rest
merge upward. The root's accumulated subtree becomes the final region, so
regions == cut edges + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .axtree import AXNode, AXTree
from .features import NodeFeatures, RoleVocabulary, compute_features, feature_matrix, load_vocabulary
from .model import REPR_DIM, DecompositionModel, ShapeMismatchError


class MissingLabelError(KeyError):
    pass


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    region_id: str
    root_node_id: str
    member_node_ids: frozenset[str]
    purpose: str | None = None
    state_summary: str | None = None


@dataclass(frozen=True)
class RegionPartition:
    """Disjoint, exhaustive cover of a tree's nodes by connected subtrees."""

    regions: tuple[Region, ...]
    url: str
    node_count: int

    @classmethod
    def build(cls, tree: AXTree, groups: Sequence[tuple[str, Sequence[str]]]) -> "RegionPartition":
        """Validate ``(root_id, member_ids)`` groups against ``tree`` and number
        them R0, R1, ... in document order of their roots."""
        order = tree.document_order
        parents = tree.parent_ids
        seen: set[str] = set()
        for root_id, members in groups:
            mset = set(members)
            if root_id not in mset:
                raise PartitionError(f"region root {root_id} not among its members")
            if seen & mset:
                raise PartitionError(f"overlapping regions at {sorted(seen & mset)[:3]}")
            seen |= mset
            for m in mset:
                if m not in order:
                    raise PartitionError(f"unknown node id {m}")
                if m != root_id and parents[m] not in mset:
                    raise PartitionError(f"region rooted at {root_id} is not a connected subtree")
        if len(seen) != tree.node_count:
            raise PartitionError(f"regions cover {len(seen)} of {tree.node_count} nodes")
        ordered = sorted(groups, key=lambda g: order[g[0]])
        regions = tuple(
            Region(region_id=f"R{i}", root_node_id=root, member_node_ids=frozenset(members))
            for i, (root, members) in enumerate(ordered)
        )
        return cls(regions=regions, url=tree.url, node_count=tree.node_count)

    def region_of(self) -> dict[str, str]:
        """node id -> region id."""
        out: dict[str, str] = {}
        for region in self.regions:
            for m in region.member_node_ids:
                out[m] = region.region_id
        return out

    def by_id(self, region_id: str) -> Region:
        for region in self.regions:
            if region.region_id == region_id:
                return region
        raise KeyError(region_id)

    def with_abstractions(self, texts: dict[str, tuple[str, str]]) -> "RegionPartition":
        regions = tuple(
            replace(r, purpose=texts[r.region_id][0], state_summary=texts[r.region_id][1])
            if r.region_id in texts
            else r
            for r in self.regions
        )
        return replace(self, regions=regions)


@dataclass(frozen=True)
class EdgeLabelSet:
    """cut/merge decision per (parent_id, child_id) edge; True means cut."""

    labels: dict[tuple[str, str], bool]

    def is_cut(self, parent_id: str, child_id: str) -> bool:
        try:
            return self.labels[(parent_id, child_id)]
        except KeyError:
            raise MissingLabelError(f"no label for edge ({parent_id}, {child_id})") from None

    def cut_edges(self) -> set[tuple[str, str]]:
        return {e for e, cut in self.labels.items() if cut}

    def num_cut(self) -> int:
        return sum(self.labels.values())

    @classmethod
    def from_partition(cls, tree: AXTree, partition: RegionPartition) -> "EdgeLabelSet":
        """Edge is cut iff parent and child fall in different regions."""
        assignment = partition.region_of()
        labels = {
            (p, c): assignment[p] != assignment[c]
            for p, c in tree.edges()
        }
        return cls(labels=labels)

    @classmethod
    def from_rule(cls, tree: AXTree, cut_roles: set[str]) -> "EdgeLabelSet":
        nodes = tree.nodes_by_id
        return cls(labels={(p, c): nodes[c].role in cut_roles for p, c in tree.edges()})


def region_subtree(tree: AXTree, region: Region) -> AXTree:
    """The region's members as a standalone tree rooted at the region root."""
    nodes = tree.nodes_by_id

    def prune(node: AXNode) -> AXNode:
        kids = tuple(prune(c) for c in node.children if c.id in region.member_node_ids)
        return replace(node, children=kids) if kids != node.children else node

    return AXTree(root=prune(nodes[region.root_node_id]), url=tree.url)


def partition_from_labels(tree: AXTree, labels: EdgeLabelSet) -> RegionPartition:
    """Connected components of the forest left after deleting cut edges.

    Used both as the ground-truth materialization for training and as the
    reference the traversal is checked against.
    """
    groups: list[tuple[str, list[str]]] = []

    def collect(region_root: AXNode) -> None:
        members: list[str] = []
        stack = [region_root]
        while stack:
            node = stack.pop()
            members.append(node.id)
            for child in node.children:
                if labels.is_cut(node.id, child.id):
                    collect(child)
                else:
                    stack.append(child)
        groups.append((region_root.id, members))

    collect(tree.root)
    return RegionPartition.build(tree, groups)


# --- scorers -----------------------------------------------------------------


class EdgeScorer(Protocol):
    """Pluggable boundary scorer driven by the shared traversal."""

    repr_dim: int

    def prepare(self, tree: AXTree) -> None: ...

    def node_repr(self, node: AXNode, merged_mean: np.ndarray) -> np.ndarray: ...

    def edge_probs(
        self,
        parent: AXNode,
        children: Sequence[AXNode],
        child_reprs: np.ndarray,
        sibling_mean: np.ndarray,
    ) -> np.ndarray: ...


class ModelScorer:
    """Neural scorer: region-encoder representations, edge-classifier probabilities."""

    def __init__(self, model: DecompositionModel, vocab: RoleVocabulary):
        if model.vocab_sha256 and model.vocab_sha256 != vocab.sha256():
            raise ShapeMismatchError("model was trained against a different role vocabulary")
        self.model = model
        self.vocab = vocab
        self.repr_dim = REPR_DIM
        self._vecs: dict[str, np.ndarray] = {}

    def prepare(self, tree: AXTree) -> None:
        feats = compute_features(tree, self.vocab)
        ids = list(feats)
        mat = feature_matrix(feats, ids, self.model.role_embedding)
        self._vecs = {node_id: mat[i] for i, node_id in enumerate(ids)}

    def node_repr(self, node: AXNode, merged_mean: np.ndarray) -> np.ndarray:
        inp = np.concatenate([self._vecs[node.id], merged_mean])
        return self.model.region_encoder.forward(inp[None, :])[0]

    def edge_probs(self, parent, children, child_reprs, sibling_mean):
        k = len(children)
        x = np.tile(self._vecs[parent.id], (k, 1))
        bar = np.tile(sibling_mean, (k, 1))
        logits = self.model.edge_classifier.forward(np.hstack([x, child_reprs, bar]))[:, 0]
        return 1.0 / (1.0 + np.exp(-logits))


class RoleRuleScorer:
    """Deterministic stub: cut probability 1 when the child's role matches."""

    repr_dim = 1

    def __init__(self, cut_roles: set[str] | frozenset[str]):
        self.cut_roles = frozenset(cut_roles)

    def prepare(self, tree: AXTree) -> None:
        pass

    def node_repr(self, node: AXNode, merged_mean: np.ndarray) -> np.ndarray:
        return np.zeros(1)

    def edge_probs(self, parent, children, child_reprs, sibling_mean):
        return np.array([1.0 if c.role in self.cut_roles else 0.0 for c in children])


def _post_order(root: AXNode) -> list[AXNode]:
    out: list[AXNode] = []
    stack: list[tuple[AXNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            out.append(node)
        else:
            stack.append((node, True))
            for child in reversed(node.children):
                stack.append((child, False))
    return out


def decompose(
    tree: AXTree,
    model: DecompositionModel | EdgeScorer,
    tau: float | None = None,
    vocab: RoleVocabulary | None = None,
) -> RegionPartition:
    """Single bottom-up pass per the traversal contract.

    ``model`` may be a DecompositionModel (scored with its MLPs and stored
    tau unless overridden) or any EdgeScorer stub. Sibling-mean context is
    taken over all children; the merged-children mean feeds the region
    encoder (zeros for leaves or when every child was cut).
    """
    if isinstance(model, DecompositionModel):
        scorer: EdgeScorer = ModelScorer(model, vocab or load_vocabulary())
        if tau is None:
            tau = model.tau
    else:
        scorer = model
        if tau is None:
            raise ValueError("tau is required when decomposing with a scorer stub")
    scorer.prepare(tree)

    reprs: dict[str, np.ndarray] = {}
    members: dict[str, list[str]] = {}
    groups: list[tuple[str, list[str]]] = []
    zeros = np.zeros(scorer.repr_dim)

    for node in _post_order(tree.root):
        own = members[node.id] = [node.id]
        if not node.children:
            reprs[node.id] = scorer.node_repr(node, zeros)
            continue
        child_reprs = np.stack([reprs[c.id] for c in node.children])
        sibling_mean = child_reprs.mean(axis=0)
        probs = scorer.edge_probs(node, node.children, child_reprs, sibling_mean)
        merged_rows = []
        for i, child in enumerate(node.children):
            if probs[i] >= tau:
                groups.append((child.id, members.pop(child.id)))
            else:
                merged_rows.append(i)
                own.extend(members.pop(child.id))
        merged_mean = child_reprs[merged_rows].mean(axis=0) if merged_rows else zeros
        reprs[node.id] = scorer.node_repr(node, merged_mean)

    groups.append((tree.root.id, members.pop(tree.root.id)))
    return RegionPartition.build(tree, groups)
