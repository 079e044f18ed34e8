"""Per-region (purpose, state summary) via pluggable backends.

The heuristic backend is deterministic and fully offline: purpose comes
from a fixed template table keyed on the dominant role pattern and heading
text, the state summary enumerates interactive elements and key text. The
LM backend renders the packaged abstraction prompt against a
chat-completion endpoint and parses a JSON reply; any failure falls back
to the heuristic and flags the result accordingly.
"""

from __future__ import annotations

import json
import os
import re
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

import httpx

from .axtree import AXNode, AXTree, WRAPPER_ROLES
from .decomposer import RegionPartition, region_subtree
from .axtree import serialize_axtree

HEURISTIC = "heuristic"
LM = "lm"

# roles enumerated by the heuristic state summary
_ACTIONABLE_ROLES = (
    "link", "button", "textbox", "searchbox", "combobox", "checkbox",
    "radio", "switch", "menuitem", "tab", "option", "slider", "spinbutton",
)
_TEXT_ROLES = frozenset({"StaticText", "heading", "paragraph", "LabelText"})


class LmError(RuntimeError):
    pass


class LmTimeoutError(LmError):
    pass


class LmMalformedReplyError(LmError):
    pass


@dataclass(frozen=True)
class RegionAbstraction:
    region_id: str
    purpose: str
    state_summary: str
    backend: str
    latency_ms: int = 0


@dataclass(frozen=True)
class LmEndpointConfig:
    base_url: str
    model_name: str
    api_key_env_var_name: str = ""
    timeout_ms: int = 30_000
    max_retries: int = 2
    max_concurrency: int = 4

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def load_prompt(name: str) -> str:
    return resources.files("axregion.data.prompts").joinpath(f"{name}.txt").read_text("utf-8")


# --- heuristic backend --------------------------------------------------------


def _short(text: str, max_words: int = 6, max_chars: int = 60) -> str:
    words = text.split()[:max_words]
    out = " ".join(words)
    return out[:max_chars].rstrip()


def _heuristic_purpose(subtree: AXTree) -> str:
    root = subtree.root
    nodes = list(subtree.walk())
    if all(n.role in WRAPPER_ROLES and not n.name and not n.value for n in nodes):
        return "structural wrapper"
    if (
        root.role == "search"
        or any(n.role == "searchbox" for n in nodes)
        or any(
            n.role in ("combobox", "textbox") and n.name and "search" in n.name.lower()
            for n in nodes
        )
    ):
        return "search form"
    if root.role in ("navigation", "menu", "menubar", "tablist"):
        return "site navigation links"
    has_input = any(n.role in ("textbox", "combobox", "checkbox", "radio") for n in nodes)
    has_button = any(n.role == "button" for n in nodes)
    if root.role == "form" or (has_input and has_button):
        return "input form"
    heading = next((n for n in nodes if n.role == "heading" and n.name), None)
    if heading:
        return f"{_short(heading.name)} section"
    leaf_roles = Counter(n.role for n in nodes if not n.children and n.role not in _TEXT_ROLES)
    if leaf_roles:
        role, count = leaf_roles.most_common(1)[0]
        if count >= 2 and count >= sum(leaf_roles.values()) / 2:
            table = {
                "link": "link collection",
                "image": "image gallery",
                "listitem": "item list",
                "button": "action buttons",
                "menuitem": "menu options",
                "cell": "data table",
            }
            if role in table:
                return table[role]
    return f"{root.role} content"


def _heuristic_state(subtree: AXTree) -> str:
    nodes = list(subtree.walk())
    parts = []
    for role in _ACTIONABLE_ROLES:
        hits = [n for n in nodes if n.role == role]
        if not hits:
            continue
        label = role if len(hits) == 1 else role + "s"
        named = [n.name for n in hits if n.name][:4]
        if named:
            quoted = ", ".join(f"'{n}'" for n in named)
            parts.append(f"{len(hits)} {label} ({quoted})")
        else:
            parts.append(f"{len(hits)} {label}")
    first = "Contains " + ", ".join(parts) + "." if parts else "No interactive elements."
    texts = [n.name for n in nodes if n.role in _TEXT_ROLES and n.name]
    if texts:
        return f"{first} Key text: '{_short(' | '.join(texts), max_words=12, max_chars=120)}'."
    return first


class HeuristicBackend:
    name = HEURISTIC

    def abstract(self, subtree: AXTree) -> tuple[str, str]:
        return _heuristic_purpose(subtree), _heuristic_state(subtree)


# --- LM backend ---------------------------------------------------------------

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_lm_reply(content: str) -> tuple[str, str]:
    """Extract {purpose, state_summary} from a chat reply, tolerating fenced
    blocks and surrounding prose."""
    fenced = _FENCE_RE.search(content)
    body = fenced.group(1) if fenced else content
    decoder = json.JSONDecoder()
    for start in range(len(body)):
        if body[start] != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(body, start)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and obj.get("purpose") and obj.get("state_summary"):
            return str(obj["purpose"]), str(obj["state_summary"])
    raise LmMalformedReplyError(f"no purpose/state_summary object in reply: {content[:200]!r}")


class LmBackend:
    """Chat-completion client for region abstraction."""

    name = LM

    def __init__(self, config: LmEndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._prompt = load_prompt("abstraction")
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.timeout_ms / 1000.0,
            transport=transport,
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env_var_name:
            key = os.environ.get(self.config.api_key_env_var_name, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        last: Exception | None = None
        for _ in range(self.config.max_retries + 1):
            try:
                resp = self._client.post("/chat/completions", json=payload, headers=self._headers())
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except httpx.TimeoutException as exc:
                last = LmTimeoutError(str(exc))
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = LmError(str(exc))
        raise last  # type: ignore[misc]

    def abstract(self, subtree: AXTree) -> tuple[str, str]:
        prompt = self._prompt.format(region_axtree=serialize_axtree(subtree))
        reply = self.complete(prompt)
        return parse_lm_reply(reply)


# --- public operations ----------------------------------------------------------


def abstract_region(region_subtree_: AXTree, backend, region_id: str = "R0") -> RegionAbstraction:
    """One (purpose, state summary) for a region subtree; LM failures fall
    back to the heuristic and report backend='heuristic'."""
    start = time.monotonic()
    try:
        purpose, state = backend.abstract(region_subtree_)
        used = backend.name
    except LmError:
        purpose, state = HeuristicBackend().abstract(region_subtree_)
        used = HEURISTIC
    latency = int((time.monotonic() - start) * 1000) if backend.name == LM else 0
    return RegionAbstraction(
        region_id=region_id,
        purpose=purpose,
        state_summary=state,
        backend=used,
        latency_ms=latency,
    )


def abstract_partition(
    partition: RegionPartition, tree: AXTree, backend
) -> list[RegionAbstraction]:
    """One abstraction per region, in region order; per-region failures become
    heuristic fallbacks and never abort the batch. Regions of nothing but
    content-free wrapper nodes short-circuit to 'structural wrapper'."""
    subtrees = [(r.region_id, region_subtree(tree, r)) for r in partition.regions]

    def one(item: tuple[str, AXTree]) -> RegionAbstraction:
        region_id, sub = item
        if all(n.role in WRAPPER_ROLES and not n.name and not n.value for n in sub.walk()):
            purpose, state = HeuristicBackend().abstract(sub)
            return RegionAbstraction(region_id, purpose, state, HEURISTIC)
        return abstract_region(sub, backend, region_id=region_id)

    max_workers = getattr(getattr(backend, "config", None), "max_concurrency", 0)
    if backend.name == LM and max_workers > 1 and len(subtrees) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(one, subtrees))
    return [one(item) for item in subtrees]


def format_region_abstractions(abstractions: list[RegionAbstraction]) -> str:
    """Stable text block handed to the selection prompt."""
    blocks = []
    for a in abstractions:
        blocks.append(f"{a.region_id}\npurpose: {a.purpose}\nstate_summary: {a.state_summary}")
    return "\n\n".join(blocks)


def render_selection_prompt(
    task: str, action_history: list[str], abstractions: list[RegionAbstraction]
) -> str:
    history = "\n".join(action_history) if action_history else "(none)"
    return load_prompt("selection").format(
        task_instruction=task,
        action_history=history,
        region_abstractions=format_region_abstractions(abstractions),
    )
