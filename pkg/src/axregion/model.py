"""Decomposition model: role embedding plus two small MLPs.

The region encoder maps (node vector, merged-children mean) -> 256-dim
representation; the edge classifier maps (parent vector, child
representation, sibling mean) -> one logit. Each MLP has three hidden
layers of 256 with ReLU and a linear output head, giving 536,773
parameters total including the 204x11 embedding table.

Checkpoints are a binary container: 8-byte magic, u32 little-endian header
length, a JSON header (shapes, vocabulary hash, tau, training metadata),
then the flat float64 little-endian weight arrays in header order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import EMBED_DIM, FEATURE_DIM, VOCAB_SIZE

HIDDEN_DIM = 256
REPR_DIM = 256
ENCODER_IN = FEATURE_DIM + REPR_DIM  # 272
CLASSIFIER_IN = FEATURE_DIM + 2 * REPR_DIM  # 528
EXPECTED_PARAM_COUNT = 536_773
PARAM_COUNT_TARGET = 536_000  # asserted within +/-1%

_CHECKPOINT_MAGIC = b"AXRGCKPT"
CHECKPOINT_FORMAT_VERSION = 1


class ShapeMismatchError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class MLP:
    """Plain dense network; weights are (fan_in, fan_out), x @ W + b."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def he_uniform(cls, dims: list[int], rng: np.random.Generator) -> "MLP":
        weights, biases = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                np.maximum(a, 0.0, out=a)
        return a

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward keeping post-activation inputs of every layer for backward."""
        acts = [x]
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                np.maximum(a, 0.0, out=a)
                acts.append(a)
        return a, acts

    def backward(
        self, acts: list[np.ndarray], dout: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        """Gradients for one cached forward; returns (dx, dweights, dbiases)."""
        d_weights: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        d_biases: list[np.ndarray] = [None] * len(self.biases)  # type: ignore[list-item]
        dz = dout
        for i in range(len(self.weights) - 1, -1, -1):
            d_weights[i] = acts[i].T @ dz
            d_biases[i] = dz.sum(axis=0)
            dx = dz @ self.weights[i].T
            if i > 0:
                # acts[i] is post-ReLU output of layer i-1
                dz = dx * (acts[i] > 0.0)
            else:
                dz = dx
        return dz, d_weights, d_biases


@dataclass
class DecompositionModel:
    role_embedding: np.ndarray
    region_encoder: MLP
    edge_classifier: MLP
    tau: float = 0.5
    metadata: dict = field(default_factory=dict)
    vocab_sha256: str = ""

    def __post_init__(self) -> None:
        if self.role_embedding.shape != (VOCAB_SIZE, EMBED_DIM):
            raise ShapeMismatchError(
                f"role embedding shape {self.role_embedding.shape} != {(VOCAB_SIZE, EMBED_DIM)}"
            )
        enc_dims = [ENCODER_IN, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, REPR_DIM]
        cls_dims = [CLASSIFIER_IN, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, 1]
        if self.region_encoder.dims != enc_dims:
            raise ShapeMismatchError(f"region encoder dims {self.region_encoder.dims} != {enc_dims}")
        if self.edge_classifier.dims != cls_dims:
            raise ShapeMismatchError(f"edge classifier dims {self.edge_classifier.dims} != {cls_dims}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0,1), got {self.tau}")
        count = self.param_count()
        if abs(count - PARAM_COUNT_TARGET) > 0.01 * PARAM_COUNT_TARGET:
            raise ShapeMismatchError(f"parameter count {count} outside 1% of {PARAM_COUNT_TARGET}")

    def param_count(self) -> int:
        return (
            self.role_embedding.size
            + self.region_encoder.param_count()
            + self.edge_classifier.param_count()
        )

    @classmethod
    def initialize(cls, seed: int, vocab_sha256: str = "", tau: float = 0.5) -> "DecompositionModel":
        """He-uniform MLP weights, zero biases, N(0, 0.02) embedding, all seeded."""
        rng = np.random.default_rng(seed)
        embedding = rng.normal(0.0, 0.02, size=(VOCAB_SIZE, EMBED_DIM))
        encoder = MLP.he_uniform([ENCODER_IN, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, REPR_DIM], rng)
        classifier = MLP.he_uniform([CLASSIFIER_IN, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, 1], rng)
        metadata = {
            "version": CHECKPOINT_FORMAT_VERSION,
            "seed": seed,
            "init": "he_uniform/normal(0,0.02)",
            "feature_scaling": "raw",
        }
        return cls(
            role_embedding=embedding,
            region_encoder=encoder,
            edge_classifier=classifier,
            tau=tau,
            metadata=metadata,
            vocab_sha256=vocab_sha256,
        )

    # --- flat parameter access (training/optimizer order is fixed) ---------

    def parameters(self) -> list[np.ndarray]:
        params = [self.role_embedding]
        for mlp in (self.region_encoder, self.edge_classifier):
            for w, b in zip(mlp.weights, mlp.biases):
                params.extend([w, b])
        return params

    def parameter_names(self) -> list[str]:
        names = ["role_embedding"]
        for prefix, mlp in (("encoder", self.region_encoder), ("classifier", self.edge_classifier)):
            for i in range(len(mlp.weights)):
                names.extend([f"{prefix}.w{i}", f"{prefix}.b{i}"])
        return names

    def copy(self) -> "DecompositionModel":
        return DecompositionModel(
            role_embedding=self.role_embedding.copy(),
            region_encoder=MLP([w.copy() for w in self.region_encoder.weights],
                               [b.copy() for b in self.region_encoder.biases]),
            edge_classifier=MLP([w.copy() for w in self.edge_classifier.weights],
                                [b.copy() for b in self.edge_classifier.biases]),
            tau=self.tau,
            metadata=dict(self.metadata),
            vocab_sha256=self.vocab_sha256,
        )

    # --- checkpoint io ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        arrays = list(zip(self.parameter_names(), self.parameters()))
        header = {
            "format": "axregion.checkpoint",
            "version": CHECKPOINT_FORMAT_VERSION,
            "dtype": "<f8",
            "tau": self.tau,
            "vocab_sha256": self.vocab_sha256,
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
            "metadata": self.metadata,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as fh:
            fh.write(_CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, arr in arrays:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path, expected_vocab_sha256: str | None = None) -> "DecompositionModel":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _CHECKPOINT_MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint file")
            (hlen,) = struct.unpack("<I", fh.read(4))
            try:
                header = json.loads(fh.read(hlen).decode())
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CheckpointError(f"{path}: corrupt header") from exc
            if header.get("version") != CHECKPOINT_FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
            arrays: dict[str, np.ndarray] = {}
            for spec in header["arrays"]:
                shape = tuple(spec["shape"])
                n = int(np.prod(shape)) if shape else 1
                buf = fh.read(n * 8)
                if len(buf) != n * 8:
                    raise CheckpointError(f"{path}: truncated array {spec['name']}")
                arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if expected_vocab_sha256 and header["vocab_sha256"] and header["vocab_sha256"] != expected_vocab_sha256:
            raise ShapeMismatchError("checkpoint was built against a different role vocabulary")

        def take_mlp(prefix: str, n_layers: int) -> MLP:
            try:
                return MLP(
                    [arrays[f"{prefix}.w{i}"] for i in range(n_layers)],
                    [arrays[f"{prefix}.b{i}"] for i in range(n_layers)],
                )
            except KeyError as exc:
                raise CheckpointError(f"{path}: missing array {exc}") from exc

        return cls(
            role_embedding=arrays["role_embedding"],
            region_encoder=take_mlp("encoder", 4),
            edge_classifier=take_mlp("classifier", 4),
            tau=float(header["tau"]),
            metadata=header.get("metadata", {}),
            vocab_sha256=header.get("vocab_sha256", ""),
        )
