"""Per-node structural features feeding the decomposition model.

Each node gets a 16-dimensional vector: an 11-dim learned role embedding
concatenated with five numeric features (depth, subtree size, number of
children, name presence, child role diversity). Numeric features are used
raw; any scaling is a trainer-side choice recorded in checkpoint metadata.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .axtree import AXNode, AXTree

VOCAB_SIZE = 204
EMBED_DIM = 11
NUM_NUMERIC = 5
FEATURE_DIM = EMBED_DIM + NUM_NUMERIC


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class RoleVocabulary:
    """Fixed role list; the last entry is the fallback slot for unseen roles."""

    roles: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.roles) != VOCAB_SIZE:
            raise VocabularyError(f"expected {VOCAB_SIZE} roles, got {len(self.roles)}")
        if len(set(self.roles)) != len(self.roles):
            raise VocabularyError("role vocabulary contains duplicates")
        if "unknown" not in self.roles:
            raise VocabularyError("role vocabulary is missing the 'unknown' slot")
        object.__setattr__(self, "_index", {r: i for i, r in enumerate(self.roles)})
        object.__setattr__(self, "_unknown", self.roles.index("unknown"))

    def index(self, role: str) -> int:
        return self._index.get(role, self._unknown)

    @property
    def unknown_index(self) -> int:
        return self._unknown

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.roles).encode()).hexdigest()

    @classmethod
    def from_lines(cls, lines: list[str]) -> "RoleVocabulary":
        return cls(roles=tuple(line.strip() for line in lines if line.strip()))


def load_vocabulary(path: str | None = None) -> RoleVocabulary:
    """Load the packaged role vocabulary, or one role per line from ``path``."""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            return RoleVocabulary.from_lines(fh.readlines())
    text = resources.files("axregion.data").joinpath("roles.txt").read_text("utf-8")
    return RoleVocabulary.from_lines(text.splitlines())


@dataclass(frozen=True)
class NodeFeatures:
    role_index: int
    depth: int
    subtree_size: int
    num_children: int
    name_presence: int
    child_role_diversity: float

    @property
    def numeric(self) -> tuple[float, float, float, float, float]:
        return (
            float(self.depth),
            float(self.subtree_size),
            float(self.num_children),
            float(self.name_presence),
            self.child_role_diversity,
        )


def compute_features(tree: AXTree, vocab: RoleVocabulary) -> dict[str, NodeFeatures]:
    """One NodeFeatures per node id; pure function of tree structure."""
    out: dict[str, NodeFeatures] = {}

    def visit(node: AXNode, depth: int) -> int:
        size = 1
        for child in node.children:
            size += visit(child, depth + 1)
        k = len(node.children)
        diversity = len({c.role for c in node.children}) / k if k else 0.0
        out[node.id] = NodeFeatures(
            role_index=vocab.index(node.role),
            depth=depth,
            subtree_size=size,
            num_children=k,
            name_presence=1 if node.name else 0,
            child_role_diversity=diversity,
        )
        return size

    visit(tree.root, 0)
    return out


def embed(features: NodeFeatures, model) -> np.ndarray:
    """16-vector: embedding row for the role followed by the numeric features.

    ``model`` is anything exposing a (204, 11) ``role_embedding`` array.
    """
    table = np.asarray(model.role_embedding, dtype=np.float64)
    if table.shape != (VOCAB_SIZE, EMBED_DIM):
        raise VocabularyError(f"role embedding shape {table.shape} != {(VOCAB_SIZE, EMBED_DIM)}")
    return np.concatenate([table[features.role_index], np.asarray(features.numeric)])


def feature_matrix(
    features: dict[str, NodeFeatures], node_ids: list[str], role_embedding: np.ndarray
) -> np.ndarray:
    """Stacked 16-dim vectors for ``node_ids`` in the given order."""
    idx = np.array([features[i].role_index for i in node_ids], dtype=np.intp)
    numeric = np.array([features[i].numeric for i in node_ids], dtype=np.float64)
    if numeric.size == 0:
        numeric = numeric.reshape(0, NUM_NUMERIC)
    return np.hstack([role_embedding[idx], numeric])
