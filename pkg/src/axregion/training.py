"""Teacher-forced training of the decomposition model.

Ground-truth labels drive every merge/cut decision during the bottom-up
pass, so edge logits are a pure readout: representations are computed
level-by-level (all trees in a batch together), then one batched classifier
pass scores every edge. Gradients are hand-derived per layer and checked
against finite differences in the test suite. Loss is the mean binary
focal loss over the edges of a batch.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .axtree import AXTree
from .decomposer import (
    EdgeLabelSet,
    RegionPartition,
    decompose,
    partition_from_labels,
)
from .features import compute_features, load_vocabulary, RoleVocabulary
from .model import DecompositionModel, CHECKPOINT_FORMAT_VERSION

DEFAULT_TAUS = (0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70)


class EmptyDatasetError(ValueError):
    pass


class EmptyValidationError(ValueError):
    pass


class LabelMismatchError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-4
    alpha: float = 0.75
    gamma: float = 2.0
    clip: float = 1.0
    seed: int = 0
    batch_size: int = 8
    val_fraction: float = 0.1
    split_seed: int = 42
    taus: tuple[float, ...] = DEFAULT_TAUS
    edge_threshold: float = 0.5  # probability cutoff for edge-level F1

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0,1), got {self.alpha}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        self.taus = tuple(float(t) for t in self.taus)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)


# --- focal loss --------------------------------------------------------------


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def focal_loss(logit, label, alpha: float = 0.75, gamma: float = 2.0):
    """Binary focal loss and its gradient with respect to the logit.

    With p = sigmoid(logit): label 1 costs -alpha*(1-p)^gamma*log(p),
    label 0 costs -(1-alpha)*p^gamma*log(1-p). Scalars in, scalars out;
    arrays broadcast elementwise.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    if gamma < 0.0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    z = np.asarray(logit, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("focal loss received a non-finite logit")
    y = np.asarray(label, dtype=np.float64)

    p = _sigmoid(z)
    q = _sigmoid(-z)  # 1 - p, computed stably
    log_p = -_softplus(-z)
    log_q = -_softplus(z)

    loss_pos = -alpha * np.power(q, gamma) * log_p
    loss_neg = -(1.0 - alpha) * np.power(p, gamma) * log_q
    grad_pos = alpha * np.power(q, gamma) * (gamma * p * log_p - q)
    grad_neg = (1.0 - alpha) * np.power(p, gamma) * (p - gamma * q * log_q)

    loss = np.where(y == 1.0, loss_pos, loss_neg)
    grad = np.where(y == 1.0, grad_pos, grad_neg)
    if np.isscalar(logit) or np.ndim(logit) == 0:
        return float(loss), float(grad)
    return loss, grad


# --- optimizer ---------------------------------------------------------------


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# --- batched teacher-forced graph --------------------------------------------


class _TreePrep:
    """Index arrays for one labeled tree, reused across epochs."""

    def __init__(self, tree: AXTree, labels: EdgeLabelSet, vocab: RoleVocabulary):
        feats = compute_features(tree, vocab)
        ids: list[str] = []
        heights: dict[str, int] = {}

        def visit(node) -> int:
            h = 0
            for child in node.children:
                h = max(h, visit(child) + 1)
            ids.append(node.id)
            heights[node.id] = h
            return h

        visit(tree.root)
        idx = {node_id: i for i, node_id in enumerate(ids)}
        self.n = len(ids)
        self.role_idx = np.array([feats[i].role_index for i in ids], dtype=np.intp)
        self.numeric = np.array([feats[i].numeric for i in ids], dtype=np.float64)
        self.heights = np.array([heights[i] for i in ids], dtype=np.intp)

        tree_edges = set(tree.edges())
        extra = set(labels.labels) - tree_edges
        if extra:
            raise LabelMismatchError(f"labels for edges not in tree: {sorted(extra)[:3]}")
        edges_p, edges_c, y = [], [], []
        merged_p, merged_c = [], []
        for p, c in tree.edges():
            cut = labels.is_cut(p, c)  # raises MissingLabelError when absent
            edges_p.append(idx[p])
            edges_c.append(idx[c])
            y.append(1.0 if cut else 0.0)
            if not cut:
                merged_p.append(idx[p])
                merged_c.append(idx[c])
        self.edges_p = np.array(edges_p, dtype=np.intp)
        self.edges_c = np.array(edges_c, dtype=np.intp)
        self.y = np.array(y, dtype=np.float64)
        self.merged_p = np.array(merged_p, dtype=np.intp)
        self.merged_c = np.array(merged_c, dtype=np.intp)


class _BatchGraph:
    """Concatenated trees with per-height row groups for level-batched passes."""

    def __init__(self, preps: Sequence[_TreePrep]):
        offsets = np.cumsum([0] + [p.n for p in preps])
        self.n = int(offsets[-1])
        self.role_idx = np.concatenate([p.role_idx for p in preps])
        self.numeric = np.vstack([p.numeric for p in preps])
        heights = np.concatenate([p.heights for p in preps])
        self.edges_p = np.concatenate([p.edges_p + o for p, o in zip(preps, offsets)])
        self.edges_c = np.concatenate([p.edges_c + o for p, o in zip(preps, offsets)])
        self.y = np.concatenate([p.y for p in preps])
        merged_p = np.concatenate([p.merged_p + o for p, o in zip(preps, offsets)])
        merged_c = np.concatenate([p.merged_c + o for p, o in zip(preps, offsets)])

        self.child_count = np.zeros(self.n, dtype=np.float64)
        np.add.at(self.child_count, self.edges_p, 1.0)
        merged_count = np.zeros(self.n, dtype=np.float64)
        np.add.at(merged_count, merged_p, 1.0)

        self.max_height = int(heights.max()) if self.n else 0
        pos_in_height = np.empty(self.n, dtype=np.intp)
        self.rows_at: list[np.ndarray] = []
        for h in range(self.max_height + 1):
            rows = np.nonzero(heights == h)[0]
            pos_in_height[rows] = np.arange(len(rows))
            self.rows_at.append(rows)
        # merged (parent,child) pairs grouped by parent height
        self.m_pairs_at: list[tuple[np.ndarray, np.ndarray]] = []
        self.m_counts_at: list[np.ndarray] = []
        for h in range(self.max_height + 1):
            sel = heights[merged_p] == h
            self.m_pairs_at.append((pos_in_height[merged_p[sel]], merged_c[sel]))
            self.m_counts_at.append(merged_count[self.rows_at[h]])


def _forward(model: DecompositionModel, batch: _BatchGraph, keep_cache: bool):
    x = np.hstack([model.role_embedding[batch.role_idx], batch.numeric])
    r = np.empty((batch.n, model.region_encoder.dims[-1]))
    enc_caches = []
    for h in range(batch.max_height + 1):
        rows = batch.rows_at[h]
        m = np.zeros((len(rows), r.shape[1]))
        m_pos, m_child = batch.m_pairs_at[h]
        if len(m_pos):
            np.add.at(m, m_pos, r[m_child])
            counts = batch.m_counts_at[h]
            nz = counts > 0
            m[nz] /= counts[nz, None]
        inp = np.hstack([x[rows], m])
        if keep_cache:
            out, acts = model.region_encoder.forward_cached(inp)
            enc_caches.append(acts)
        else:
            out = model.region_encoder.forward(inp)
        r[rows] = out

    rbar = np.zeros_like(r)
    np.add.at(rbar, batch.edges_p, r[batch.edges_c])
    denom = np.maximum(batch.child_count, 1.0)
    rbar /= denom[:, None]

    ec_in = np.hstack([x[batch.edges_p], r[batch.edges_c], rbar[batch.edges_p]])
    if keep_cache:
        logits, ec_acts = model.edge_classifier.forward_cached(ec_in)
        return logits[:, 0], (x, r, enc_caches, ec_acts, denom)
    return model.edge_classifier.forward(ec_in)[:, 0], None


def _backward(model: DecompositionModel, batch: _BatchGraph, cache, dlogits: np.ndarray):
    x, r, enc_caches, ec_acts, denom = cache
    feat_dim = x.shape[1]
    rep_dim = r.shape[1]

    din_ec, d_cls_w, d_cls_b = model.edge_classifier.backward(ec_acts, dlogits[:, None])
    dx = np.zeros_like(x)
    dr = np.zeros_like(r)
    np.add.at(dx, batch.edges_p, din_ec[:, :feat_dim])
    np.add.at(dr, batch.edges_c, din_ec[:, feat_dim:feat_dim + rep_dim])
    drbar = np.zeros_like(r)
    np.add.at(drbar, batch.edges_p, din_ec[:, feat_dim + rep_dim:])
    drbar /= denom[:, None]
    np.add.at(dr, batch.edges_c, drbar[batch.edges_p])

    d_enc_w = [np.zeros_like(w) for w in model.region_encoder.weights]
    d_enc_b = [np.zeros_like(b) for b in model.region_encoder.biases]
    for h in range(batch.max_height, -1, -1):
        rows = batch.rows_at[h]
        dinp, dws, dbs = model.region_encoder.backward(enc_caches[h], dr[rows])
        for acc, g in zip(d_enc_w, dws):
            acc += g
        for acc, g in zip(d_enc_b, dbs):
            acc += g
        dx[rows] += dinp[:, :feat_dim]
        m_pos, m_child = batch.m_pairs_at[h]
        if len(m_pos):
            counts = batch.m_counts_at[h]
            contrib = dinp[m_pos, feat_dim:] / counts[m_pos, None]
            np.add.at(dr, m_child, contrib)

    d_embed = np.zeros_like(model.role_embedding)
    np.add.at(d_embed, batch.role_idx, dx[:, : model.role_embedding.shape[1]])

    grads = [d_embed]
    for dw, db in zip(d_enc_w, d_enc_b):
        grads.extend([dw, db])
    for dw, db in zip(d_cls_w, d_cls_b):
        grads.extend([dw, db])
    return grads


def _prf_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _edge_f1(model: DecompositionModel, batch: _BatchGraph, threshold: float) -> float:
    logits, _ = _forward(model, batch, keep_cache=False)
    pred = _sigmoid(logits) >= threshold
    truth = batch.y == 1.0
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return _prf_from_counts(tp, fp, fn)[2]


# --- trainer ------------------------------------------------------------------


@dataclass
class TrainResult:
    model: DecompositionModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = 0.0
    n_train: int = 0
    n_val: int = 0


def split_dataset(
    dataset: Sequence, val_fraction: float, split_seed: int
) -> tuple[list, list]:
    """Deterministic tree-level split; validation is empty for tiny datasets."""
    indices = np.random.default_rng(split_seed).permutation(len(dataset))
    n_val = int(round(len(dataset) * val_fraction))
    if n_val >= len(dataset):
        n_val = len(dataset) - 1
    val_idx = set(indices[:n_val].tolist())
    train = [dataset[i] for i in range(len(dataset)) if i not in val_idx]
    val = [dataset[i] for i in sorted(val_idx)]
    return train, val


def train(
    dataset: Sequence[tuple[AXTree, EdgeLabelSet]],
    config: TrainConfig,
    vocab: RoleVocabulary | None = None,
) -> TrainResult:
    """Teacher-forced training; returns the best validation edge-F1 checkpoint.

    Deterministic for a fixed config. The returned model carries the tuned
    region-level tau (validation sweep over config.taus) and self-describing
    metadata.
    """
    if not dataset:
        raise EmptyDatasetError("training dataset is empty")
    vocab = vocab or load_vocabulary()

    train_set, val_set = split_dataset(dataset, config.val_fraction, config.split_seed)
    train_preps = [_TreePrep(t, l, vocab) for t, l in train_set]
    val_preps = [_TreePrep(t, l, vocab) for t, l in val_set]
    val_batch = _BatchGraph(val_preps) if val_preps else None
    train_eval_batch = _BatchGraph(train_preps)

    model = DecompositionModel.initialize(config.seed, vocab_sha256=vocab.sha256())
    params = model.parameters()
    optimizer = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)

    best = model.copy()
    best_val_f1 = -1.0
    best_gap = float("inf")
    best_epoch = 0
    history: list[dict] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_preps))
        epoch_loss = 0.0
        n_edges = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_preps[i] for i in order[start:start + config.batch_size]]
            batch = _BatchGraph(chunk)
            if len(batch.y) == 0:
                continue
            logits, cache = _forward(model, batch, keep_cache=True)
            losses, dloss = focal_loss(logits, batch.y, config.alpha, config.gamma)
            # teacher forcing: merge sets came from labels, predictions only scored
            epoch_loss += float(np.sum(losses))
            n_edges += len(losses)
            grads = _backward(model, batch, cache, dloss / len(losses))
            clip_global_norm(grads, config.clip)
            optimizer.step(params, grads)

        train_f1 = _edge_f1(model, train_eval_batch, config.edge_threshold)
        val_f1 = _edge_f1(model, val_batch, config.edge_threshold) if val_batch else train_f1
        history.append(
            {
                "epoch": epoch,
                "loss": epoch_loss / max(n_edges, 1),
                "train_f1": train_f1,
                "val_f1": val_f1,
            }
        )
        gap = abs(train_f1 - val_f1)
        # prefer higher validation F1; among equals, the smaller train/val gap
        if val_f1 > best_val_f1 or (val_f1 == best_val_f1 and gap < best_gap):
            best = model.copy()
            best_val_f1 = val_f1
            best_gap = gap
            best_epoch = epoch

    if config.epochs == 0:
        best = model.copy()
        best_val_f1 = 0.0

    best.metadata.update(
        {
            "version": CHECKPOINT_FORMAT_VERSION,
            "training": asdict(config) | {"taus": list(config.taus)},
            "best_epoch": best_epoch,
            "best_val_f1": best_val_f1,
            "loss_reduction": "mean_per_batch",
            "n_train_trees": len(train_set),
            "n_val_trees": len(val_set),
        }
    )

    if config.epochs > 0 and val_set and config.taus:
        truth = [(t, partition_from_labels(t, l)) for t, l in val_set]
        best.tau = tune_threshold(best, truth, list(config.taus), vocab=vocab)
        best.metadata["tuned_tau"] = best.tau

    return TrainResult(
        model=best,
        history=history,
        best_epoch=best_epoch,
        best_val_f1=best_val_f1,
        n_train=len(train_set),
        n_val=len(val_set),
    )


def tune_threshold(
    model,
    validation: Sequence[tuple[AXTree, RegionPartition]],
    taus: Sequence[float],
    iou_threshold: float = 0.5,
    vocab: RoleVocabulary | None = None,
) -> float:
    """Pick the tau with the best region-level F1 (micro over the validation
    set); ties go to the larger tau."""
    from .metrics import region_prf

    if not validation:
        raise EmptyValidationError("threshold tuning needs a non-empty validation set")
    if not taus:
        raise ValueError("taus must be non-empty")
    for t in taus:
        if not 0.0 < t < 1.0:
            raise ValueError(f"tau candidates must be in (0,1), got {t}")

    best_tau = None
    best_f1 = -1.0
    for tau in sorted(taus):
        matched = n_pred = n_truth = 0
        for tree, truth in validation:
            pred = decompose(tree, model, tau=tau, vocab=vocab)
            report = region_prf(pred, truth, iou_threshold)
            matched += len(report.matched)
            n_pred += len(pred.regions)
            n_truth += len(truth.regions)
        _, _, f1 = _prf_from_counts(matched, n_pred - matched, n_truth - matched)
        if f1 >= best_f1:
            best_f1 = f1
            best_tau = tau
    return float(best_tau)
