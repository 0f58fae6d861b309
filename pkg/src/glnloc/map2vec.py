"""Location embeddings trained by message passing over the floor-plan graph.

Hidden states start from the (normalized) metric coordinates, get smoothed
through the plan's adjacency, and are trained with a node-identity objective
(predict your own location id), which both separates locations and keeps
neighbors correlated. Embeddings exist for every location, seen or unseen;
no image data enters here.

Embedding file: header `MAP2VEC v1 <k> <dim>`, then k text rows of dim floats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .floorplan import FloorPlan, plan_normalized_adjacency


@dataclass(frozen=True)
class EmbeddingTable:
    """One row per location; rows are frozen after training."""

    vectors: np.ndarray     # (k, dim), read-only

    def __post_init__(self):
        self.vectors.setflags(write=False)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def embedding_of(self, y: int) -> np.ndarray:
        if not 0 <= y < self.k:
            raise IndexError(f"location {y} out of range (k={self.k})")
        return self.vectors[y]


@dataclass(frozen=True)
class Map2VecConfig:
    layers: int = 2
    hidden_dims: tuple | None = None    # per-layer output dims; default (dim,) * layers
    dim: int | None = None              # embedding dim; default k (location count)
    epochs: int = 400
    lr: float = 1e-2
    seed: int = 0
    objective: str = "node-identity"    # or "none" (untrained forward pass)
    # Neighbor-only aggregation by default: self-loop smoothing exactly cancels
    # the (zero-mean) coordinate signal on two-node plans, killing training.
    self_loops: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.objective not in ("node-identity", "none"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.hidden_dims is not None and len(self.hidden_dims) != self.layers:
            raise ValueError("hidden_dims must list one output dim per layer")

    def resolve_dims(self, k: int):
        dim = self.dim if self.dim is not None else k
        dims = tuple(self.hidden_dims) if self.hidden_dims is not None else (dim,) * self.layers
        if dims[-1] != dim:
            raise ValueError(f"final layer dim {dims[-1]} != embedding dim {dim}")
        return dims


def normalize_coords(coords: np.ndarray) -> np.ndarray:
    """Zero mean / unit variance per axis; decouples scale from map units."""
    mu = coords.mean(axis=0, keepdims=True)
    sd = coords.std(axis=0, keepdims=True)
    sd[sd == 0] = 1.0
    return (coords - mu) / sd


def _forward_states(h0, weights, a_hat):
    """Plan-wide GCN stack: ReLU between layers, identity on the last one so
    the final states act directly as logits/embedding rows."""
    h = nm.constant(h0)
    a_node = nm.constant(a_hat)
    for i, w in enumerate(weights):
        h = nm.matmul(nm.matmul(a_node, h), w)
        if i + 1 < len(weights):
            h = nm.relu(h)
    return h


def train_map2vec(plan: FloorPlan, config: Map2VecConfig | None = None):
    """Train embeddings for all k locations from the plan alone.

    Returns (EmbeddingTable, per-epoch loss log). Deterministic given the seed.
    """
    config = config or Map2VecConfig()
    k = plan.k
    if k < 2:
        raise ValueError("map2vec needs at least 2 locations")
    dims = config.resolve_dims(k)
    if config.objective == "node-identity" and dims[-1] != k:
        raise ValueError(f"node-identity objective needs embedding dim == k ({k}), got {dims[-1]}")

    rng = np.random.default_rng(config.seed)
    a_hat = plan_normalized_adjacency(plan, self_loops=config.self_loops)
    h0 = normalize_coords(plan.coords)

    weights = []
    in_dim = h0.shape[1]
    for out_dim in dims:
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        weights.append(nm.parameter(rng.uniform(-limit, limit, size=(in_dim, out_dim))))
        in_dim = out_dim

    log = []
    if config.objective == "node-identity":
        labels = np.arange(k)
        opt = nm.adam_init(weights, lr=config.lr)
        for epoch in range(1, config.epochs + 1):
            states = _forward_states(h0, weights, a_hat)
            loss = nm.cross_entropy(nm.softmax_rows(states), labels)
            nm.check_finite(loss.value, "map2vec loss")
            nm.zero_grad(weights)
            nm.backward(loss)
            nm.adam_step(weights, opt)
            log.append((epoch, float(loss.value[0, 0])))

    final = _forward_states(h0, weights, a_hat).value
    nm.check_finite(final, "map2vec embeddings")
    return EmbeddingTable(vectors=final.copy()), log


def save_embeddings(path, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"MAP2VEC v1 {table.k} {table.dim}\n")
        for row in table.vectors:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "MAP2VEC" or header[1] != "v1":
            raise ValueError(f"{path}: bad embedding header")
        k, dim = int(header[2]), int(header[3])
        rows = []
        for line in fh:
            line = line.strip()
            if line:
                rows.append(np.array(line.split(), dtype=np.float64))
    if len(rows) != k or any(r.shape[0] != dim for r in rows):
        raise ValueError(f"{path}: expected {k} rows of {dim} floats")
    return EmbeddingTable(vectors=np.stack(rows))
