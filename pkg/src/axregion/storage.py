"""Versioned JSON formats for partitions and edge-label sets."""

from __future__ import annotations

import json
from pathlib import Path

from .axtree import AXTree
from .decomposer import EdgeLabelSet, PartitionError, Region, RegionPartition

PARTITION_SCHEMA = "axregion.partition/1"
LABELS_SCHEMA = "axregion.edge-labels/1"


def partition_to_dict(partition: RegionPartition, tau: float | None = None) -> dict:
    out = {
        "schema": PARTITION_SCHEMA,
        "url": partition.url,
        "node_count": partition.node_count,
        "regions": [
            {
                "region_id": r.region_id,
                "root": r.root_node_id,
                "members": sorted(r.member_node_ids),
                **({"purpose": r.purpose} if r.purpose is not None else {}),
                **({"state_summary": r.state_summary} if r.state_summary is not None else {}),
            }
            for r in partition.regions
        ],
    }
    if tau is not None:
        out["tau"] = tau
    return out


def partition_from_dict(data: dict, tree: AXTree | None = None) -> RegionPartition:
    """Rebuild a partition; validated against ``tree`` when provided."""
    if data.get("schema") != PARTITION_SCHEMA:
        raise PartitionError(f"unexpected partition schema {data.get('schema')!r}")
    if tree is not None:
        part = RegionPartition.build(tree, [(r["root"], r["members"]) for r in data["regions"]])
        texts = {
            # re-key by the rebuilt document-order ids via the root node
            next(p.region_id for p in part.regions if p.root_node_id == r["root"]):
            (r.get("purpose"), r.get("state_summary"))
            for r in data["regions"]
            if r.get("purpose") is not None
        }
        if texts:
            part = part.with_abstractions({k: (p, s or "") for k, (p, s) in texts.items()})
        return part
    regions = tuple(
        Region(
            region_id=r["region_id"],
            root_node_id=r["root"],
            member_node_ids=frozenset(r["members"]),
            purpose=r.get("purpose"),
            state_summary=r.get("state_summary"),
        )
        for r in data["regions"]
    )
    return RegionPartition(regions=regions, url=data.get("url", ""), node_count=data["node_count"])


def save_partition(path: str | Path, partition: RegionPartition, tau: float | None = None) -> None:
    Path(path).write_text(
        json.dumps(partition_to_dict(partition, tau), indent=2, sort_keys=True) + "\n"
    )


def load_partition(path: str | Path, tree: AXTree | None = None) -> RegionPartition:
    return partition_from_dict(json.loads(Path(path).read_text()), tree)


def labels_to_dict(labels: EdgeLabelSet) -> dict:
    return {
        "schema": LABELS_SCHEMA,
        "edges": [
            {"parent": p, "child": c, "label": "cut" if cut else "merge"}
            for (p, c), cut in sorted(labels.labels.items())
        ],
    }


def labels_from_dict(data: dict) -> EdgeLabelSet:
    if data.get("schema") != LABELS_SCHEMA:
        raise ValueError(f"unexpected labels schema {data.get('schema')!r}")
    return EdgeLabelSet(
        labels={(e["parent"], e["child"]): e["label"] == "cut" for e in data["edges"]}
    )


def save_labels(path: str | Path, labels: EdgeLabelSet) -> None:
    Path(path).write_text(json.dumps(labels_to_dict(labels), indent=2, sort_keys=True) + "\n")


def load_labels(path: str | Path) -> EdgeLabelSet:
    return labels_from_dict(json.loads(Path(path).read_text()))
