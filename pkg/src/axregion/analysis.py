"""Trace-level measurements behind the analyze command.

Over consecutive same-page steps: the change ratio distribution (share of
node ids added or removed) and the LCA depth ratio of consecutive action
targets. An optional uniform-node-pair baseline for the LCA ratio is
sampled per tree and labeled as an approximation, since true action
eligibility is not recoverable from a trace.
"""

from __future__ import annotations

import re
import statistics
from dataclasses import dataclass, field

import numpy as np

from .axtree import AXTree, parse_axtree
from .metrics import change_ratio, lca_depth_ratio
from .trace import TraceRecord

ANALYSIS_SCHEMA = "axregion.analysis/1"

_TARGET_RE = re.compile(r"\(\s*['\"]([^'\"]+)['\"]")


def action_target(action: str) -> str | None:
    """First quoted argument of an action call, e.g. click('a324') -> a324."""
    match = _TARGET_RE.search(action)
    return match.group(1) if match else None


@dataclass
class Histogram:
    """Fixed-edge counting; ``clamp_last`` adds one overflow bucket for
    values at or beyond the top edge."""

    edges: list[float]
    clamp_last: bool = False
    counts: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.counts:
            self.counts = [0] * (len(self.edges) - 1 + (1 if self.clamp_last else 0))

    def add(self, value: float) -> None:
        if self.clamp_last and value >= self.edges[-1]:
            self.counts[-1] += 1
            return
        for i in range(len(self.edges) - 1):
            if value < self.edges[i + 1]:
                self.counts[i] += 1
                return
        self.counts[len(self.edges) - 2] += 1  # value equals the top edge

    def total(self) -> int:
        return sum(self.counts)

    def rows(self) -> list[tuple[str, int, float]]:
        total = self.total() or 1
        out = []
        n_range = len(self.edges) - 1
        for i in range(n_range):
            close = ")" if (i < n_range - 1 or self.clamp_last) else "]"
            label = f"[{self.edges[i]:.2f}-{self.edges[i + 1]:.2f}{close}"
            out.append((label, self.counts[i], self.counts[i] / total))
        if self.clamp_last:
            out.append((f"[{self.edges[-1]:.2f}+", self.counts[-1], self.counts[-1] / total))
        return out


@dataclass
class AnalysisReport:
    steps: int
    same_page_pairs: int
    zero_change: int
    change_hist: Histogram
    lca_pairs: int
    lca_median: float | None
    lca_hist: Histogram
    baseline_samples: int = 0
    baseline_median: float | None = None
    skipped_actions: int = 0

    def to_json_dict(self) -> dict:
        return {
            "schema": ANALYSIS_SCHEMA,
            "steps": self.steps,
            "same_page_pairs": self.same_page_pairs,
            "change": {
                "zero": self.zero_change,
                "zero_fraction": (
                    self.zero_change / self.same_page_pairs if self.same_page_pairs else 0.0
                ),
                "histogram": [
                    {"bucket": label, "count": c, "fraction": round(f, 6)}
                    for label, c, f in self.change_hist.rows()
                ],
            },
            "lca": {
                "pairs": self.lca_pairs,
                "median": self.lca_median,
                "histogram": [
                    {"bucket": label, "count": c, "fraction": round(f, 6)}
                    for label, c, f in self.lca_hist.rows()
                ],
                "skipped_actions": self.skipped_actions,
            },
            "baseline": {
                "note": "uniform node-pair sampling; approximation only",
                "samples": self.baseline_samples,
                "median": self.baseline_median,
            },
        }

    def to_text(self) -> str:
        out = [
            "trace analysis",
            f"steps: {self.steps}  within-page pairs: {self.same_page_pairs}",
            "",
            "change ratio (node ids added or removed / nodes before):",
        ]
        if self.same_page_pairs:
            zero_pct = 100.0 * self.zero_change / self.same_page_pairs
            out.append(f"  zero change: {self.zero_change} ({zero_pct:.1f}%)")
            for label, count, frac in self.change_hist.rows():
                bar = "#" * round(40 * frac)
                out.append(f"  {label:<12} {count:>5} ({100 * frac:5.1f}%) {bar}")
        else:
            out.append("  (no within-page pairs)")
        out += ["", "LCA depth ratio of consecutive action targets:"]
        if self.lca_pairs:
            out.append(f"  pairs: {self.lca_pairs}  median: {self.lca_median:.3f}")
            for label, count, frac in self.lca_hist.rows():
                bar = "#" * round(40 * frac)
                out.append(f"  {label:<12} {count:>5} ({100 * frac:5.1f}%) {bar}")
        else:
            out.append("  (no measurable action pairs)")
        if self.skipped_actions:
            out.append(f"  skipped actions without a resolvable target: {self.skipped_actions}")
        if self.baseline_samples:
            out.append(
                f"  random baseline (uniform node pairs, approximation): "
                f"median {self.baseline_median:.3f} over {self.baseline_samples} samples"
            )
        return "\n".join(out) + "\n"


def analyze_trace(
    records: list[TraceRecord], baseline_samples: int = 0, seed: int = 0
) -> AnalysisReport:
    trees = [parse_axtree(r.axtree, r.url) for r in records]
    change_hist = Histogram(edges=[i / 10 for i in range(10)], clamp_last=True)
    lca_hist = Histogram(edges=[i / 10 for i in range(11)])

    same_page = 0
    zero_change = 0
    lca_values: list[float] = []
    skipped = 0

    for prev, cur, prev_tree, cur_tree in zip(records, records[1:], trees, trees[1:]):
        if prev.url != cur.url:
            continue
        same_page += 1
        ratio = change_ratio(prev_tree, cur_tree)
        if ratio == 0.0:
            zero_change += 1
        change_hist.add(ratio)
        a = action_target(prev.action)
        b = action_target(cur.action)
        if a is None or b is None:
            skipped += 1
            continue
        ids = cur_tree.nodes_by_id
        if a not in ids or b not in ids:
            skipped += 1
            continue
        value = lca_depth_ratio(cur_tree, a, b)
        lca_values.append(value)
        lca_hist.add(value)

    baseline_median = None
    n_samples = 0
    if baseline_samples > 0 and trees:
        rng = np.random.default_rng(seed)
        samples: list[float] = []
        for tree in trees:
            ids = list(tree.nodes_by_id)
            for _ in range(baseline_samples):
                a, b = rng.choice(len(ids)), rng.choice(len(ids))
                samples.append(lca_depth_ratio(tree, ids[int(a)], ids[int(b)]))
        baseline_median = float(statistics.median(samples))
        n_samples = len(samples)

    return AnalysisReport(
        steps=len(records),
        same_page_pairs=same_page,
        zero_change=zero_change,
        change_hist=change_hist,
        lca_pairs=len(lca_values),
        lca_median=float(statistics.median(lca_values)) if lca_values else None,
        lca_hist=lca_hist,
        baseline_samples=n_samples,
        baseline_median=baseline_median,
        skipped_actions=skipped,
    )
