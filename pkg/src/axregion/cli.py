"""Command-line surface: parse / decompose / train / eval / digest / analyze,
plus synth (corpus generation) and serve (HTTP API).

Exit codes: 0 success, 1 input error, 2 configuration or shape error,
3 external-service failure. All commands are deterministic given --seed
and the offline backends; LM-dependent paths require --backend lm.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import yaml

from . import __version__
from .abstraction import HEURISTIC, HeuristicBackend, LM, LmBackend, LmEndpointConfig
from .analysis import analyze_trace
from .axtree import AXTreeError, parse_axtree, preprocess, serialize_axtree
from .decomposer import decompose
from .features import load_vocabulary
from .metrics import region_prf, prf_from_match_counts, token_count
from .model import CheckpointError, DecompositionModel, ShapeMismatchError
from .session import LmSelector, StubSelector
from .storage import load_labels, load_partition, save_labels, save_partition
from .synthetic import DEFAULT_CUT_ROLES, rule_labels, synthetic_corpus
from .trace import TraceParseError, read_trace, replay
from .training import (
    EmptyDatasetError,
    TrainConfig,
    partition_from_labels,
    train,
)

EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_SERVICE = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        _fail(EXIT_INPUT, f"cannot read {path}: {exc}")
        raise AssertionError  # unreachable


def _load_model(path: str) -> DecompositionModel:
    try:
        return DecompositionModel.load(path, expected_vocab_sha256=load_vocabulary().sha256())
    except OSError as exc:
        _fail(EXIT_CONFIG, f"cannot read checkpoint {path}: {exc}")
    except (CheckpointError, ShapeMismatchError) as exc:
        _fail(EXIT_CONFIG, str(exc))
    raise AssertionError


def _lm_config(path: str | None) -> LmEndpointConfig:
    if not path:
        _fail(EXIT_CONFIG, "--backend lm requires --lm-config")
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
        return LmEndpointConfig(**data)
    except OSError as exc:
        _fail(EXIT_CONFIG, f"cannot read lm config {path}: {exc}")
    except (TypeError, ValueError, yaml.YAMLError) as exc:
        _fail(EXIT_CONFIG, f"bad lm config: {exc}")
    raise AssertionError


@click.group()
@click.version_option(version=__version__)
def main() -> None:
    """Functional-region decomposition and page digests for accessibility trees."""


@main.command("parse")
@click.argument("input_path")
@click.option("--out", "out_path", default=None, help="Write canonical tree here instead of stdout.")
@click.option("--url", default="", help="URL recorded on the tree.")
@click.option("--raw", is_flag=True, help="Skip preprocessing.")
def cmd_parse(input_path: str, out_path: str | None, url: str, raw: bool) -> None:
    """Parse a tree file, preprocess it, and emit the canonical form."""
    text = _read_text(input_path)
    try:
        tree = parse_axtree(text, url)
    except AXTreeError as exc:
        _fail(EXIT_INPUT, f"{input_path}: {exc}")
    if not raw:
        tree = preprocess(tree)
    canonical = serialize_axtree(tree)
    if out_path:
        Path(out_path).write_text(canonical)
    else:
        click.echo(canonical, nl=False)
    click.echo(f"nodes: {tree.node_count}", err=True)


@main.command("decompose")
@click.argument("input_path")
@click.option("--checkpoint", required=True, help="Model checkpoint path.")
@click.option("--tau", type=float, default=None, help="Override the checkpoint's cut threshold.")
@click.option("--abstract", is_flag=True, help="Attach heuristic purposes and state summaries.")
@click.option("--out", "out_path", default=None, help="Write the partition JSON here.")
@click.option("--url", default="")
def cmd_decompose(input_path, checkpoint, tau, abstract, out_path, url) -> None:
    """Decompose one tree into regions; prints the region count."""
    text = _read_text(input_path)
    try:
        tree = preprocess(parse_axtree(text, url))
    except AXTreeError as exc:
        _fail(EXIT_INPUT, f"{input_path}: {exc}")
    model = _load_model(checkpoint)
    if tau is not None and not 0.0 < tau < 1.0:
        _fail(EXIT_CONFIG, f"--tau must be in (0,1), got {tau}")
    try:
        partition = decompose(tree, model, tau=tau)
    except ShapeMismatchError as exc:
        _fail(EXIT_CONFIG, str(exc))
    if abstract:
        from .abstraction import abstract_partition

        abstractions = abstract_partition(partition, tree, HeuristicBackend())
        partition = partition.with_abstractions(
            {a.region_id: (a.purpose, a.state_summary) for a in abstractions}
        )
    used_tau = tau if tau is not None else model.tau
    if out_path:
        save_partition(out_path, partition, tau=used_tau)
    else:
        click.echo(json.dumps(__import__("axregion.storage", fromlist=["partition_to_dict"])
                              .partition_to_dict(partition, used_tau), indent=2, sort_keys=True))
    click.echo(f"regions: {len(partition.regions)}", err=True)


def _load_corpus_dir(data_dir: Path) -> list:
    dataset = []
    for tree_path in sorted(data_dir.glob("*.axtree")):
        labels_path = tree_path.with_suffix(".labels.json")
        if not labels_path.exists():
            _fail(EXIT_INPUT, f"missing labels for {tree_path.name}")
        try:
            tree = parse_axtree(tree_path.read_text(), url=tree_path.stem)
            dataset.append((tree, load_labels(labels_path)))
        except (AXTreeError, ValueError, json.JSONDecodeError) as exc:
            _fail(EXIT_INPUT, f"{tree_path.name}: {exc}")
    return dataset


@main.command("train")
@click.argument("data_dir")
@click.option("--config", "config_path", default=None, help="YAML training config.")
@click.option("--out", "out_path", required=True, help="Checkpoint output path.")
@click.option("--log", "log_path", default=None, help="Per-epoch metrics CSV.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def cmd_train(data_dir, config_path, out_path, log_path, seed) -> None:
    """Train on a directory of NAME.axtree + NAME.labels.json pairs."""
    directory = Path(data_dir)
    if not directory.is_dir():
        _fail(EXIT_INPUT, f"{data_dir} is not a directory")
    try:
        raw = yaml.safe_load(Path(config_path).read_text()) if config_path else {}
        config = TrainConfig.from_dict(raw or {})
    except OSError as exc:
        _fail(EXIT_CONFIG, f"cannot read config: {exc}")
    except (TypeError, ValueError, yaml.YAMLError) as exc:
        _fail(EXIT_CONFIG, f"bad training config: {exc}")
    if seed is not None:
        config.seed = seed
    dataset = _load_corpus_dir(directory)
    if not dataset:
        _fail(EXIT_CONFIG, f"no training pairs found in {data_dir}")
    try:
        result = train(dataset, config)
    except EmptyDatasetError as exc:
        _fail(EXIT_CONFIG, str(exc))
    result.model.save(out_path)
    if log_path:
        lines = ["epoch,loss,train_f1,val_f1"]
        lines += [
            f"{h['epoch']},{h['loss']:.6f},{h['train_f1']:.6f},{h['val_f1']:.6f}"
            for h in result.history
        ]
        Path(log_path).write_text("\n".join(lines) + "\n")
    click.echo(
        f"trained on {result.n_train} trees ({result.n_val} validation); "
        f"best epoch {result.best_epoch} val edge-F1 {result.best_val_f1:.4f}; "
        f"tau {result.model.tau:.2f}; checkpoint {out_path}"
    )


@main.command("eval")
@click.option("--pred-dir", default=None, help="Predicted partition JSONs.")
@click.option("--truth-dir", required=True, help="Ground-truth NAME.regions.json (+ NAME.axtree for sweeps).")
@click.option("--checkpoint", default=None, help="Sweep this model over --taus instead of --pred-dir.")
@click.option("--iou", type=float, default=0.5, show_default=True)
@click.option("--taus", default=None, help="Comma-separated thresholds for the sweep mode.")
@click.option("--out", "out_path", default=None, help="Write the JSON report here.")
def cmd_eval(pred_dir, truth_dir, checkpoint, iou, taus, out_path) -> None:
    """Region-level P/R/F1, either pred-vs-truth or a threshold sweep."""
    truth = Path(truth_dir)
    if not truth.is_dir():
        _fail(EXIT_INPUT, f"{truth_dir} is not a directory")
    truth_files = sorted(truth.glob("*.regions.json"))
    if not truth_files:
        _fail(EXIT_INPUT, f"no *.regions.json files in {truth_dir}")

    if checkpoint:
        model = _load_model(checkpoint)
        try:
            tau_list = [float(t) for t in (taus or "").split(",") if t.strip()]
        except ValueError:
            _fail(EXIT_CONFIG, f"bad --taus value: {taus}")
        if not tau_list:
            tau_list = [model.tau]
        pairs = []
        for tf in truth_files:
            tree_path = tf.with_name(tf.name.replace(".regions.json", ".axtree"))
            if not tree_path.exists():
                _fail(EXIT_INPUT, f"missing tree for {tf.name}")
            tree = parse_axtree(tree_path.read_text(), url=tree_path.stem)
            pairs.append((tree, load_partition(tf, tree)))
        rows = []
        for tau in sorted(tau_list):
            matched = n_pred = n_truth = 0
            for tree, truth_part in pairs:
                pred = decompose(tree, model, tau=tau)
                rep = region_prf(pred, truth_part, iou)
                matched += len(rep.matched)
                n_pred += len(pred.regions)
                n_truth += len(truth_part.regions)
            p, r, f1 = prf_from_match_counts(matched, n_pred, n_truth)
            rows.append({"tau": tau, "precision": p, "recall": r, "f1": f1})
        click.echo("tau    precision  recall     f1")
        for row in rows:
            click.echo(
                f"{row['tau']:.2f}   {row['precision']:.4f}     {row['recall']:.4f}     {row['f1']:.4f}"
            )
        best = max(rows, key=lambda r: (r["f1"], r["tau"]))
        click.echo(f"best tau: {best['tau']:.2f} (F1 {best['f1']:.4f})")
        payload = {"schema": "axregion.eval/1", "mode": "sweep", "iou": iou, "rows": rows}
    else:
        if not pred_dir:
            _fail(EXIT_CONFIG, "need --pred-dir or --checkpoint")
        pred = Path(pred_dir)
        matched = n_pred = n_truth = 0
        per_file = []
        for tf in truth_files:
            pf = pred / tf.name
            if not pf.exists():
                _fail(EXIT_INPUT, f"missing prediction for {tf.name}")
            truth_part = load_partition(tf)
            pred_part = load_partition(pf)
            rep = region_prf(pred_part, truth_part, iou)
            matched += len(rep.matched)
            n_pred += len(pred_part.regions)
            n_truth += len(truth_part.regions)
            per_file.append({"name": tf.name, "precision": rep.precision,
                             "recall": rep.recall, "f1": rep.f1})
        p, r, f1 = prf_from_match_counts(matched, n_pred, n_truth)
        click.echo(f"files: {len(per_file)}  precision {p:.4f}  recall {r:.4f}  f1 {f1:.4f}")
        payload = {
            "schema": "axregion.eval/1", "mode": "pairwise", "iou": iou,
            "precision": p, "recall": r, "f1": f1, "files": per_file,
        }
    if out_path:
        Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@main.command("digest")
@click.argument("trace_path")
@click.option("--checkpoint", required=True)
@click.option("--task", default=None, help="Task text for region selection.")
@click.option("--tau", type=float, default=None)
@click.option("--backend", type=click.Choice([HEURISTIC, LM]), default=HEURISTIC, show_default=True)
@click.option("--lm-config", default=None, help="YAML endpoint config for --backend lm.")
@click.option("--select-k", type=int, default=None, help="Cap the stub selector at k regions.")
@click.option("--digest-dir", default=None, help="Write per-step digests into this directory.")
@click.option("--out", "out_path", default=None, help="Write the JSON replay report here.")
def cmd_digest(trace_path, checkpoint, task, tau, backend, lm_config, select_k, digest_dir, out_path):
    """Replay a trace into per-step digests and a token accounting report."""
    model = _load_model(checkpoint)
    try:
        records = read_trace(trace_path)
    except OSError as exc:
        _fail(EXIT_INPUT, f"cannot read {trace_path}: {exc}")
    except TraceParseError as exc:
        _fail(EXIT_INPUT, str(exc))
    if not records:
        _fail(EXIT_CONFIG, f"{trace_path}: trace is empty")

    if backend == LM:
        config = _lm_config(lm_config)
        abstraction_backend = LmBackend(config)
        selector = LmSelector(config)
    else:
        abstraction_backend = HeuristicBackend()
        selector = StubSelector(k=select_k)

    sink = None
    if digest_dir:
        ddir = Path(digest_dir)
        ddir.mkdir(parents=True, exist_ok=True)

        def sink(step: int, digest: str) -> None:
            (ddir / f"step_{step:04d}.txt").write_text(digest)

    try:
        report = replay(records, model, abstraction_backend, selector,
                        task=task, tau=tau, on_digest=sink)
    except TraceParseError as exc:
        _fail(EXIT_INPUT, str(exc))
    except ShapeMismatchError as exc:
        _fail(EXIT_CONFIG, str(exc))
    click.echo(report.to_text(), nl=False)
    if out_path:
        Path(out_path).write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
    if backend == LM and report.pages:
        from .abstraction import HEURISTIC as H

        fallbacks = all(a.backend == H for a in ([]))
        # replay already fell back per-region; a fully offline result under
        # --backend lm means the endpoint never answered
    sys.exit(0)


@main.command("analyze")
@click.argument("trace_path")
@click.option("--baseline-samples", type=int, default=0,
              help="Uniform node-pair LCA baseline samples per tree (approximation).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", default=None, help="Write the JSON report here.")
def cmd_analyze(trace_path, baseline_samples, seed, out_path) -> None:
    """Change-ratio and LCA-depth-ratio distributions over a trace."""
    try:
        records = read_trace(trace_path)
    except OSError as exc:
        _fail(EXIT_INPUT, f"cannot read {trace_path}: {exc}")
    except TraceParseError as exc:
        _fail(EXIT_INPUT, str(exc))
    if not records:
        _fail(EXIT_CONFIG, f"{trace_path}: trace is empty")
    try:
        report = analyze_trace(records, baseline_samples=baseline_samples, seed=seed)
    except AXTreeError as exc:
        _fail(EXIT_INPUT, str(exc))
    click.echo(report.to_text(), nl=False)
    if out_path:
        Path(out_path).write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")


@main.command("synth")
@click.argument("out_dir")
@click.option("--trees", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--min-nodes", type=int, default=15, show_default=True)
@click.option("--max-nodes", type=int, default=40, show_default=True)
@click.option("--cut-roles", default=",".join(sorted(DEFAULT_CUT_ROLES)), show_default=True)
def cmd_synth(out_dir, trees, seed, min_nodes, max_nodes, cut_roles) -> None:
    """Generate a labeled synthetic corpus (trees, edge labels, region truth)."""
    roles = frozenset(r.strip() for r in cut_roles.split(",") if r.strip())
    if not roles:
        _fail(EXIT_CONFIG, "--cut-roles must name at least one role")
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    corpus = synthetic_corpus(trees, seed=seed, min_nodes=min_nodes,
                              max_nodes=max_nodes, cut_roles=roles)
    for i, (tree, labels) in enumerate(corpus):
        stem = directory / f"tree_{i:04d}"
        stem.with_suffix(".axtree").write_text(serialize_axtree(tree))
        save_labels(stem.with_suffix(".labels.json"), labels)
        save_partition(stem.with_suffix(".regions.json"), partition_from_labels(tree, labels))
    click.echo(f"wrote {len(corpus)} labeled trees to {out_dir}")


@main.command("serve")
@click.option("--checkpoint", default=None, help="Model checkpoint; role-rule fallback without one.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def cmd_serve(checkpoint, host, port) -> None:
    """Run the HTTP API wrapping the library."""
    import uvicorn

    from .service.app import create_app

    if checkpoint:
        _load_model(checkpoint)  # fail fast with exit 2 on bad checkpoints
    uvicorn.run(create_app(checkpoint_path=checkpoint), host=host, port=port)


if __name__ == "__main__":
    main()
