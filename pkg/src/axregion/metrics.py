"""Edge- and region-level evaluation plus trace analysis measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .axtree import AXTree
from .decomposer import EdgeLabelSet, RegionPartition


class DomainMismatchError(ValueError):
    pass


class NodeSetMismatchError(ValueError):
    pass


class UnknownIdError(KeyError):
    pass


class EmptyBeforeError(ValueError):
    pass


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    # neither side has positives -> perfect by convention
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def edge_f1(predictions: EdgeLabelSet, truth: EdgeLabelSet) -> tuple[float, float, float]:
    """Precision/recall/F1 with cut as the positive class."""
    if set(predictions.labels) != set(truth.labels):
        raise DomainMismatchError("prediction and truth label different edge sets")
    tp = fp = fn = 0
    for edge, pred_cut in predictions.labels.items():
        true_cut = truth.labels[edge]
        if pred_cut and true_cut:
            tp += 1
        elif pred_cut:
            fp += 1
        elif true_cut:
            fn += 1
    return _prf(tp, fp, fn)


@dataclass(frozen=True)
class RegionMatchReport:
    matched: tuple[tuple[str, str, float], ...]  # (gt_region_id, pred_region_id, iou)
    precision: float
    recall: float
    f1: float
    iou_threshold: float


def prf_from_match_counts(matched: int, n_pred: int, n_truth: int) -> tuple[float, float, float]:
    """Region P/R/F1 from aggregate match counts (precision = matched/|pred|,
    recall = matched/|truth|)."""
    precision = matched / n_pred if n_pred else (1.0 if not n_truth else 0.0)
    recall = matched / n_truth if n_truth else (1.0 if not n_pred else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def region_prf(
    pred: RegionPartition, truth: RegionPartition, iou_threshold: float = 0.5
) -> RegionMatchReport:
    """Greedy one-to-one matching of ground-truth to predicted regions by
    descending member-set IoU; a pair counts when IoU meets the threshold.

    The tie-break key is symmetric in the two partitions, so swapping pred
    and truth swaps precision and recall but leaves F1 unchanged.
    """
    pred_nodes = {m for r in pred.regions for m in r.member_node_ids}
    truth_nodes = {m for r in truth.regions for m in r.member_node_ids}
    if pred_nodes != truth_nodes:
        raise NodeSetMismatchError("partitions cover different node sets")

    pred_of = {m: r for r in pred.regions for m in r.member_node_ids}
    overlaps: dict[tuple[str, str], int] = {}
    pred_by_id = {r.region_id: r for r in pred.regions}
    for gt in truth.regions:
        for m in gt.member_node_ids:
            key = (gt.region_id, pred_of[m].region_id)
            overlaps[key] = overlaps.get(key, 0) + 1

    candidates = []
    for (gt_id, pr_id), inter in overlaps.items():
        gt_members = truth.by_id(gt_id).member_node_ids
        pr_members = pred_by_id[pr_id].member_node_ids
        iou = inter / len(gt_members | pr_members)
        if iou >= iou_threshold:
            canon = tuple(sorted((tuple(sorted(gt_members)), tuple(sorted(pr_members)))))
            candidates.append((-iou, canon, gt_id, pr_id, iou))

    candidates.sort(key=lambda c: (c[0], c[1]))
    used_gt: set[str] = set()
    used_pred: set[str] = set()
    matched: list[tuple[str, str, float]] = []
    for _, _, gt_id, pr_id, iou in candidates:
        if gt_id in used_gt or pr_id in used_pred:
            continue
        used_gt.add(gt_id)
        used_pred.add(pr_id)
        matched.append((gt_id, pr_id, iou))

    precision, recall, f1 = prf_from_match_counts(
        len(matched), len(pred.regions), len(truth.regions)
    )
    return RegionMatchReport(
        matched=tuple(matched),
        precision=precision,
        recall=recall,
        f1=f1,
        iou_threshold=iou_threshold,
    )


def lca_depth_ratio(tree: AXTree, id_a: str, id_b: str) -> float:
    """depth(LCA) / max depth of the tree, with the root at depth 0."""
    depths = tree.depths
    parents = tree.parent_ids
    for node_id in (id_a, id_b):
        if node_id not in depths:
            raise UnknownIdError(node_id)
    max_depth = max(depths.values())
    if max_depth == 0:
        return 0.0

    a, b = id_a, id_b
    while depths[a] > depths[b]:
        a = parents[a]
    while depths[b] > depths[a]:
        b = parents[b]
    while a != b:
        a = parents[a]
        b = parents[b]
    return depths[a] / max_depth


def change_ratio(before: AXTree, after: AXTree) -> float:
    """(added + removed node ids) / nodes before; persistent-id based, so
    value edits and sibling reordering contribute nothing."""
    before_ids = set(before.nodes_by_id)
    after_ids = set(after.nodes_by_id)
    if not before_ids:
        raise EmptyBeforeError("before tree has no nodes")
    return (len(after_ids - before_ids) + len(before_ids - after_ids)) / len(before_ids)


# --- token counting -----------------------------------------------------------

TokenCounter = Callable[[str], int]


def default_token_counter(text: str) -> int:
    """Tokenizer-free approximation: ceil of the mean of ceil(bytes/4) and the
    whitespace word count; 0 for empty text. Used consistently on both sides
    of every reduction comparison, so ratios stay meaningful."""
    if not text:
        return 0
    byte_est = math.ceil(len(text.encode("utf-8")) / 4)
    words = len(text.split())
    return math.ceil((byte_est + words) / 2)


def token_count(text: str, counter: TokenCounter | None = None) -> int:
    return (counter or default_token_counter)(text)
