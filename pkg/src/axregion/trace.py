"""Trace files and replay: drive page sessions over recorded observations.

A trace is JSON-lines; each record carries the step index, page url, the
action string the agent issued at that step, and the observation's axtree
text. Replay opens a session at every page entry (url change), steps it
within the page, applies view_all() actions, and accounts tokens three
ways: actor observations, selection-prompt inputs, and view_all expansions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .axtree import parse_axtree, preprocess, serialize_axtree, AXTreeError
from .metrics import TokenCounter, token_count
from .session import PageSession, SamePage, open_session
from .abstraction import render_selection_prompt

REPORT_SCHEMA = "axregion.replay-report/1"
_VIEW_ALL_ACTION = "view_all"


class TraceParseError(ValueError):
    def __init__(self, line_index: int, reason: str):
        super().__init__(f"trace line {line_index}: {reason}")
        self.line_index = line_index


@dataclass(frozen=True)
class TraceRecord:
    step: int
    url: str
    action: str
    axtree: str
    task: str = ""


def read_trace(path: str | Path) -> list[TraceRecord]:
    records: list[TraceRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceParseError(lineno, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise TraceParseError(lineno, "record is not an object")
            missing = {"step", "url", "action", "axtree"} - set(obj)
            if missing:
                raise TraceParseError(lineno, f"missing fields {sorted(missing)}")
            records.append(
                TraceRecord(
                    step=int(obj["step"]),
                    url=str(obj["url"]),
                    action=str(obj["action"]),
                    axtree=str(obj["axtree"]),
                    task=str(obj.get("task", "")),
                )
            )
    return records


def write_trace(path: str | Path, records: list[TraceRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {"step": rec.step, "url": rec.url, "action": rec.action, "axtree": rec.axtree}
            if rec.task:
                row["task"] = rec.task
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


@dataclass
class StepReport:
    step: int
    url: str
    action: str
    new_page: bool
    digest_tokens: int
    baseline_tokens: int
    selection_tokens: int = 0
    view_all_tokens: int = 0
    delta_added: int = 0
    delta_removed: int = 0
    delta_modified: int = 0


@dataclass
class ReplayReport:
    steps: list[StepReport] = field(default_factory=list)
    pages: int = 0
    view_all_calls: int = 0
    actor_tokens: int = 0
    selection_tokens: int = 0
    view_all_tokens: int = 0
    baseline_tokens: int = 0
    flagged_steps: list[int] = field(default_factory=list)  # digest >= baseline

    @property
    def task_total(self) -> int:
        return self.actor_tokens + self.selection_tokens + self.view_all_tokens

    def shares(self) -> dict[str, float]:
        total = self.task_total
        if not total:
            return {"actor": 0.0, "selection": 0.0, "view_all": 0.0}
        return {
            "actor": self.actor_tokens / total,
            "selection": self.selection_tokens / total,
            "view_all": self.view_all_tokens / total,
        }

    def reduction(self) -> float:
        """Fraction of baseline tokens saved by the actor observations."""
        if not self.baseline_tokens:
            return 0.0
        return 1.0 - self.actor_tokens / self.baseline_tokens

    def to_json_dict(self) -> dict:
        shares = self.shares()
        return {
            "schema": REPORT_SCHEMA,
            "pages": self.pages,
            "steps": len(self.steps),
            "view_all_calls": self.view_all_calls,
            "tokens": {
                "actor": self.actor_tokens,
                "selection": self.selection_tokens,
                "view_all": self.view_all_tokens,
                "task_total": self.task_total,
                "baseline": self.baseline_tokens,
            },
            "reduction": round(self.reduction(), 6),
            "shares": {k: round(v, 6) for k, v in shares.items()},
            "flagged_steps": self.flagged_steps,
            "per_step": [
                {
                    "step": s.step,
                    "url": s.url,
                    "action": s.action,
                    "new_page": s.new_page,
                    "digest_tokens": s.digest_tokens,
                    "baseline_tokens": s.baseline_tokens,
                    "selection_tokens": s.selection_tokens,
                    "view_all_tokens": s.view_all_tokens,
                    "delta": [s.delta_added, s.delta_removed, s.delta_modified],
                }
                for s in self.steps
            ],
        }

    def to_text(self) -> str:
        out = [
            "replay report",
            f"pages: {self.pages}  steps: {len(self.steps)}  view_all calls: {self.view_all_calls}",
            f"tokens: actor={self.actor_tokens} selection={self.selection_tokens} "
            f"view_all={self.view_all_tokens} task_total={self.task_total}",
            f"baseline (full trees): {self.baseline_tokens}  "
            f"actor reduction: {100.0 * self.reduction():.1f}%",
        ]
        shares = self.shares()
        out.append(
            "task-total share: actor {a:.1f}%, selection {s:.1f}%, view_all {v:.1f}%".format(
                a=100 * shares["actor"], s=100 * shares["selection"], v=100 * shares["view_all"]
            )
        )
        if self.flagged_steps:
            out.append(f"flagged (digest >= baseline): steps {self.flagged_steps}")
        out.append("step  entry  digest  baseline  action")
        for s in self.steps:
            marker = "*" if s.new_page else " "
            out.append(
                f"{s.step:>4}  {marker:<5}  {s.digest_tokens:>6}  {s.baseline_tokens:>8}  {s.action}"
            )
        return "\n".join(out) + "\n"


def _is_view_all(action: str) -> bool:
    return action.strip().replace(" ", "").startswith(f"{_VIEW_ALL_ACTION}(")


def replay(
    trace: list[TraceRecord] | str | Path,
    model,
    abstraction_backend,
    selector_backend,
    task: str | None = None,
    tau: float | None = None,
    vocab=None,
    counter: TokenCounter | None = None,
    on_digest=None,
) -> ReplayReport:
    """Replay a trace; deterministic with the offline backends.

    ``on_digest(step_index, digest)`` is called for every rendered actor
    observation (and again after a view_all expansion).
    """
    records = read_trace(trace) if isinstance(trace, (str, Path)) else list(trace)
    report = ReplayReport()
    session: PageSession | None = None
    history: list[str] = []
    if task is None:
        task = next((r.task for r in records if r.task), "")

    for rec in records:
        try:
            tree = preprocess(parse_axtree(rec.axtree, rec.url))
        except AXTreeError as exc:
            raise TraceParseError(rec.step, f"bad axtree at step {rec.step}: {exc}") from exc
        baseline = token_count(serialize_axtree(tree), counter)
        row = StepReport(
            step=rec.step, url=rec.url, action=rec.action,
            new_page=False, digest_tokens=0, baseline_tokens=baseline,
        )

        if session is None or not isinstance(session.step(tree, rec.url), SamePage):
            # page entry: decompose/abstract/select run exactly once here
            session = open_session(
                tree, task, list(history), model, abstraction_backend, selector_backend,
                tau=tau, vocab=vocab,
            )
            row.new_page = True
            report.pages += 1
            prompt = render_selection_prompt(task, list(history), session.abstractions)
            row.selection_tokens = token_count(prompt, counter)
            report.selection_tokens += row.selection_tokens
        else:
            row.delta_added = len(session.delta.added_ids())
            row.delta_removed = len(session.delta.removed)
            row.delta_modified = len(session.delta.modified)

        digest = session.render_digest()
        if on_digest is not None:
            on_digest(rec.step, digest)
        row.digest_tokens = token_count(digest, counter)
        report.actor_tokens += row.digest_tokens
        report.baseline_tokens += baseline
        if row.digest_tokens >= baseline:
            report.flagged_steps.append(rec.step)

        if _is_view_all(rec.action):
            session.view_all()
            report.view_all_calls += 1
            expanded = session.render_digest()
            if on_digest is not None:
                on_digest(rec.step, expanded)
            row.view_all_tokens = token_count(expanded, counter)
            report.view_all_tokens += row.view_all_tokens

        history.append(rec.action)
        report.steps.append(row)

    return report
