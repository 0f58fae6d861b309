"""Bilinear compatibility between multi-view samples and location embeddings.

Training sees only seen-class samples: the network learns to map a sample
onto the embedding space so that the dot product with the true location's
embedding wins a softmax over the seen classes. Embedding rows stay frozen
throughout, which is what lets unseen locations inherit a meaningful score.
Prediction is generalized: every location, seen or unseen, competes.

The coordinate-only control model swaps the learned embeddings for raw
normalized 2-D coordinates and keeps everything else identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .datasets import DataError, MultiViewSample, SampleSet
from .floorplan import FloorPlan, Split
from .gln_model import (GLNConfig, GLNParams, TrainConfig, _sample_views, _set_views,
                        fit_cross_entropy, forward_logits, init_params, load_checkpoint,
                        rank_scores, save_checkpoint)
from .map2vec import EmbeddingTable, normalize_coords

EMB_BLOCK = b"EMB1"
SPLIT_BLOCK = b"SPL1"


@dataclass(frozen=True)
class CompatibilityModel:
    params: GLNParams
    config: GLNConfig
    embeddings: EmbeddingTable
    split: Split
    kind: str = "zeroshot"          # or "baseline-coord"

    def __post_init__(self):
        if self.config.out_dim != self.embeddings.dim:
            raise ValueError(f"network out_dim {self.config.out_dim} != "
                             f"embedding dim {self.embeddings.dim}")
        if self.split.seen | self.split.unseen != set(range(self.embeddings.k)):
            raise ValueError("split does not partition the embedded locations")


def compatibility_score(sample: MultiViewSample, y: int, model: CompatibilityModel) -> float:
    """Bilinear score: <network(sample), embedding(y)>."""
    emb = model.embeddings.embedding_of(y)  # raises IndexError when y is invalid
    out = forward_logits(_sample_views(sample), model.params, model.config,
                         training=False).value[0]
    return float(out @ emb)


def score_matrix(sample_set: SampleSet, model: CompatibilityModel) -> np.ndarray:
    """Scores of every sample against every location (n x k)."""
    out = forward_logits(_set_views(sample_set), model.params, model.config,
                         training=False).value
    return out @ model.embeddings.vectors.T


def zero_shot_predict(sample: MultiViewSample, model: CompatibilityModel,
                      k_best: int | None = None):
    """Ranked (location, score) pairs over ALL k locations (generalized setting)."""
    k = model.embeddings.k
    k_best = k if k_best is None else k_best
    if not 1 <= k_best <= k:
        raise ValueError(f"k_best must be in 1..{k}, got {k_best}")
    emb = model.embeddings.vectors
    out = forward_logits(_sample_views(sample), model.params, model.config,
                         training=False).value[0]
    scores = out @ emb.T
    order = rank_scores(scores)[:k_best]
    return [(int(i), float(scores[i])) for i in order]


def rankings_for(sample_set: SampleSet, model: CompatibilityModel) -> np.ndarray:
    """Full ranking (ids, best first) per sample; ties broken by ascending id."""
    scores = score_matrix(sample_set, model)
    return np.stack([rank_scores(row) for row in scores])


def _check_seen_only(sample_set: SampleSet, split: Split, what: str) -> None:
    bad = sorted({s.location for s in sample_set.samples} - split.seen)
    if bad:
        raise DataError(f"{what} contains unseen-class locations {bad}; "
                        "compatibility training may only see seen classes")


def train_compatibility(seen_train: SampleSet, seen_val: SampleSet | None,
                        embeddings: EmbeddingTable, split: Split, config: GLNConfig,
                        train_config: TrainConfig | None = None, kind: str = "zeroshot"):
    """Learn the sample->embedding-space map on seen classes only.

    The softmax in the loss normalizes over seen classes (unseen ones have no
    samples to compete with); embedding rows are constants, so unseen rows
    are untouched by training. Returns (CompatibilityModel, log).
    """
    tc = train_config or TrainConfig()
    if len(seen_train) == 0:
        raise ValueError("empty training set")
    _check_seen_only(seen_train, split, "training data")
    if seen_val is not None and len(seen_val):
        _check_seen_only(seen_val, split, "validation data")
    else:
        seen_val = None
    if config.out_dim != embeddings.dim:
        config = replace(config, out_dim=embeddings.dim)

    seen_ids = sorted(split.seen)
    col_of = {loc: i for i, loc in enumerate(seen_ids)}
    seen_emb_t = nm.constant(embeddings.vectors[seen_ids].T)   # dim x n_seen

    def build_scores(p, views, training, dropout_seed):
        out = forward_logits(views, p, config, training, dropout_seed)
        return nm.matmul(out, seen_emb_t)

    train_views = _set_views(seen_train)
    train_labels = np.array([col_of[s.location] for s in seen_train.samples], dtype=np.intp)
    val_views = _set_views(seen_val) if seen_val is not None else None
    val_labels = (np.array([col_of[s.location] for s in seen_val.samples], dtype=np.intp)
                  if seen_val is not None else None)

    params = init_params(config, seed=tc.seed)
    params, log = fit_cross_entropy(params, build_scores, train_views, train_labels,
                                    val_views, val_labels, tc)
    return CompatibilityModel(params, config, embeddings, split, kind=kind), log


def coordinate_embeddings(plan: FloorPlan) -> EmbeddingTable:
    """Raw location coordinates (normalized per axis) as a 2-D embedding table."""
    return EmbeddingTable(vectors=normalize_coords(plan.coords))


def baseline_coord_model(plan: FloorPlan, split: Split, seen_train: SampleSet,
                         seen_val: SampleSet | None, config: GLNConfig,
                         train_config: TrainConfig | None = None):
    """Control model: identical pipeline, coordinates in place of embeddings."""
    coords = coordinate_embeddings(plan)
    return train_compatibility(seen_train, seen_val, coords, split,
                               replace(config, out_dim=2), train_config,
                               kind="baseline-coord")


# ---------------------------------------------------------------------------
# checkpoint blocks
# ---------------------------------------------------------------------------


def _trailer_bytes(model: CompatibilityModel) -> bytes:
    emb = model.embeddings
    parts = [EMB_BLOCK, struct.pack("<II", emb.k, emb.dim),
             np.ascontiguousarray(emb.vectors, dtype="<f8").tobytes()]
    flags = bytes(1 if i in model.split.seen else 0 for i in range(emb.k))
    parts += [SPLIT_BLOCK, struct.pack("<I", emb.k), flags]
    return b"".join(parts)


def save_compatibility(path, model: CompatibilityModel) -> None:
    save_checkpoint(path, model.params, model.config, kind=model.kind,
                    trailer=_trailer_bytes(model))


def load_compatibility(path) -> CompatibilityModel:
    params, config, meta = load_checkpoint(path)
    kind = meta.get("kind")
    if kind not in ("zeroshot", "baseline-coord"):
        raise ValueError(f"{path}: checkpoint kind {kind!r} is not a compatibility model")
    buf = meta["_trailer"]
    off = 0
    if buf[off:off + 4] != EMB_BLOCK:
        raise ValueError(f"{path}: missing embedding block")
    k, dim = struct.unpack_from("<II", buf, off + 4)
    off += 12
    vectors = np.frombuffer(buf, dtype="<f8", count=k * dim, offset=off).reshape(k, dim).copy()
    off += k * dim * 8
    if buf[off:off + 4] != SPLIT_BLOCK:
        raise ValueError(f"{path}: missing split block")
    (k2,) = struct.unpack_from("<I", buf, off + 4)
    off += 8
    if k2 != k:
        raise ValueError(f"{path}: split block size {k2} != k {k}")
    flags = buf[off:off + k]
    seen = frozenset(i for i in range(k) if flags[i] == 1)
    split = Split(seen, frozenset(range(k)) - seen)
    return CompatibilityModel(params, config, EmbeddingTable(vectors=vectors), split, kind=kind)
