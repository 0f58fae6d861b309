"""Graph Location Network: message passing over the 4-view graph (plain GCN
or attentional), fusion by concatenation, and a linear classification head.

The same network doubles as the image side of the zero-shot compatibility
model by pointing `out_dim` at the embedding dimension instead of the class
count (see `zeroshot`).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .datasets import MultiViewSample, SampleSet
from .floorplan import ViewGraph

GLN_MAGIC = b"GLN1"


@dataclass(frozen=True)
class GLNConfig:
    feature_dim: int = 2048
    hidden_dim: int = 256
    layers: int = 1
    attention: bool = False
    dropout_p: float = 0.5
    self_loops: bool = True
    batch_norm: bool = True
    activation: str | None = None   # None resolves to relu / leaky_relu (attentional)
    leaky_slope: float = 0.2
    out_dim: int = 0                # class count, or embedding dim in the zero-shot role

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if min(self.feature_dim, self.hidden_dim, self.out_dim) <= 0:
            raise ValueError("feature_dim, hidden_dim and out_dim must be positive")
        if self.activation not in (None, "relu", "leaky_relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def resolved_activation(self) -> str:
        if self.activation is not None:
            return self.activation
        return "leaky_relu" if self.attention else "relu"


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 20          # early-stopping patience on val loss (when val data given)
    seed: int = 0


class GLNParams:
    """Learnable state: shared per-layer transform, attention vectors,
    head weights/bias, and per-layer batch-norm running statistics."""

    def __init__(self, layer_weights, attn_vectors, head_w, head_b, bn_states):
        self.layer_weights = layer_weights
        self.attn_vectors = attn_vectors
        self.head_w = head_w
        self.head_b = head_b
        self.bn_states = bn_states

    def trainable(self):
        out = list(self.layer_weights) + list(self.attn_vectors)
        out.extend([self.head_w, self.head_b])
        return out

    def clone(self) -> "GLNParams":
        return GLNParams(
            [nm.parameter(w.value.copy()) for w in self.layer_weights],
            [nm.parameter(a.value.copy()) for a in self.attn_vectors],
            nm.parameter(self.head_w.value.copy()),
            nm.parameter(self.head_b.value.copy()),
            [s.copy() for s in self.bn_states],
        )

    def matrices(self):
        """Checkpoint declaration order: W^l, attention vectors, head, bn stats."""
        mats = [("W", w.value) for w in self.layer_weights]
        mats += [("a", a.value) for a in self.attn_vectors]
        mats += [("head_w", self.head_w.value), ("head_b", self.head_b.value)]
        for s in self.bn_states:
            mats += [("bn_mean", s.running_mean), ("bn_var", s.running_var)]
        return mats


def _glorot(rng, rows, cols):
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def init_params(config: GLNConfig, seed: int = 0) -> GLNParams:
    """Glorot-uniform message-passing weights, zero head (uniform initial output)."""
    rng = np.random.default_rng(seed)
    weights, attn = [], []
    in_dim = config.feature_dim
    for _ in range(config.layers):
        weights.append(nm.parameter(_glorot(rng, in_dim, config.hidden_dim)))
        if config.attention:
            attn.append(nm.parameter(_glorot(rng, 2 * config.hidden_dim, 1)))
        in_dim = config.hidden_dim
    head_w = nm.parameter(np.zeros((4 * config.hidden_dim, config.out_dim)))
    head_b = nm.parameter(np.zeros((1, config.out_dim)))
    bn = [nm.BatchNormState(config.hidden_dim) for _ in range(config.layers)]
    return GLNParams(weights, attn, head_w, head_b, bn)


def _activate(node, kind, slope):
    if kind == "relu":
        return nm.relu(node)
    if kind == "leaky_relu":
        return nm.leaky_relu(node, slope)
    return node


def _as_nodes(views):
    nodes = []
    for v in views:
        nodes.append(v if isinstance(v, nm.DiffNode) else nm.constant(v))
    return nodes


def _attention_alpha(y_nodes, a_node, graph: ViewGraph, slope: float):
    """Per-node neighbor weights from transformed states y = W h.

    Raw scores are LeakyReLU(a . [y_i, y_j]) with a shared across edges;
    softmax over each node's neighbor set makes the weights sum to 1.
    Returns (list over i of (neighbors, alpha DiffNode (B x |N(i)|))).
    """
    f = y_nodes[0].shape[1]
    a_src = nm.slice_rows(a_node, 0, f)
    a_dst = nm.slice_rows(a_node, f, 2 * f)
    src = [nm.matmul(y, a_src) for y in y_nodes]   # B x 1 each
    dst = [nm.matmul(y, a_dst) for y in y_nodes]
    out = []
    for i in range(graph.n_nodes):
        nbrs = graph.neighbors_of(i)
        scores = [nm.leaky_relu(nm.add(src[i], dst[j]), slope) for j in nbrs]
        alpha = nm.softmax_rows(nm.concat_cols(scores))
        out.append((nbrs, alpha))
    return out


def attention_weights(views, params: GLNParams, config: GLNConfig, layer: int = 0):
    """Edge-weight table alpha[(i, j)] -> (B,) array for one layer's states.

    `views` are that layer's input hidden states (4 arrays of B x F_in).
    """
    if not config.attention:
        raise ValueError("attention_weights requires an attentional config")
    graph = ViewGraph(self_loops=config.self_loops)
    nodes = _as_nodes(views)
    y = [nm.matmul(h, params.layer_weights[layer]) for h in nodes]
    table = {}
    for i, (nbrs, alpha) in enumerate(_attention_alpha(y, params.attn_vectors[layer],
                                                       graph, config.leaky_slope)):
        for col, j in enumerate(nbrs):
            table[(i, j)] = alpha.value[:, col].copy()
    return table


def message_pass(views, params: GLNParams, config: GLNConfig,
                 training: bool = False, dropout_seed: int = 0):
    """Run L message-passing steps; returns the 4 final hidden states (B x F').

    GCN mode aggregates neighbors with the 1/sqrt(|N(i)||N(j)|) constants;
    attention mode replaces them with learned softmax weights. Activation,
    then batch norm (statistics shared across the 4 nodes), then dropout.
    """
    graph = ViewGraph(self_loops=config.self_loops)
    act = config.resolved_activation()
    h = _as_nodes(views)
    if len(h) != 4:
        raise nm.ShapeError(f"message_pass needs 4 views, got {len(h)}")
    batch = h[0].shape[0]
    a_hat = graph.normalized_adjacency()
    for layer in range(config.layers):
        w = params.layer_weights[layer]
        y = [nm.matmul(node, w) for node in h]
        if config.attention:
            alphas = _attention_alpha(y, params.attn_vectors[layer], graph, config.leaky_slope)
            pre = []
            for i in range(4):
                nbrs, alpha = alphas[i]
                terms = [nm.mul_colvec(y[j], nm.slice_cols(alpha, c, c + 1))
                         for c, j in enumerate(nbrs)]
                acc = terms[0]
                for t in terms[1:]:
                    acc = nm.add(acc, t)
                pre.append(acc)
        else:
            pre = []
            for i in range(4):
                terms = [nm.scale(y[j], a_hat[i, j]) for j in graph.neighbors_of(i)]
                acc = terms[0]
                for t in terms[1:]:
                    acc = nm.add(acc, t)
                pre.append(acc)
        activated = [_activate(p, act, config.leaky_slope) for p in pre]
        stacked = nm.concat_rows(activated)
        if config.batch_norm:
            stacked = nm.batch_norm(stacked, params.bn_states[layer], training)
        dropped = nm.dropout(stacked, config.dropout_p, training, dropout_seed + layer)
        h = [nm.slice_rows(dropped, v * batch, (v + 1) * batch) for v in range(4)]
    return h


def fuse(hidden):
    """Concatenate the four final states in fixed view order -> B x 4F'."""
    hidden = list(hidden)
    if len(hidden) != 4:
        raise nm.ShapeError(f"fuse needs exactly 4 states, got {len(hidden)}")
    return nm.concat_cols(_as_nodes(hidden))


def forward_logits(views, params: GLNParams, config: GLNConfig,
                   training: bool = False, dropout_seed: int = 0):
    hidden = message_pass(views, params, config, training, dropout_seed)
    fused = fuse(hidden)
    return nm.add_rowvec(nm.matmul(fused, params.head_w), params.head_b)


def forward(views, params: GLNParams, config: GLNConfig,
            training: bool = False, dropout_seed: int = 0):
    """Class probabilities (B x out_dim), rows summing to 1."""
    return nm.softmax_rows(forward_logits(views, params, config, training, dropout_seed))


def _sample_views(sample: MultiViewSample):
    return [sample.views[v].reshape(1, -1) for v in range(4)]


def _set_views(sample_set: SampleSet):
    return [sample_set.view_matrix(v) for v in range(4)]


def predict_proba(sample_set: SampleSet, params: GLNParams, config: GLNConfig) -> np.ndarray:
    """Inference-mode probabilities for a whole sample set (n x out_dim)."""
    return forward(_set_views(sample_set), params, config, training=False).value


def rank_scores(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties broken by ascending id."""
    ids = np.arange(scores.shape[-1])
    return np.lexsort((ids, -scores))


def predict_topk(sample: MultiViewSample, params: GLNParams, config: GLNConfig, k_best: int):
    """Top-k (location, probability) pairs for one sample."""
    if not 1 <= k_best <= config.out_dim:
        raise ValueError(f"k_best must be in 1..{config.out_dim}, got {k_best}")
    probs = forward(_sample_views(sample), params, config, training=False).value[0]
    order = rank_scores(probs)[:k_best]
    return [(int(i), float(probs[i])) for i in order]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_acc: float | None = None

    def format(self) -> str:
        parts = [f"epoch {self.epoch}", f"train_loss {self.train_loss:.6f}"]
        if self.val_loss is not None:
            parts += [f"val_loss {self.val_loss:.6f}", f"val_acc {self.val_acc:.4f}"]
        return " ".join(parts)


def fit_cross_entropy(params: GLNParams, build_scores, train_views, train_labels,
                      val_views, val_labels, tc: TrainConfig):
    """Shared Adam + softmax cross-entropy loop over minibatches.

    `build_scores(params, views, training, dropout_seed)` returns the class
    score matrix; standard training scores against the head directly, the
    zero-shot trainer scores against embedding rows. Returns (params, log);
    row 0 is the pre-training state. With validation data, stops after
    `patience` epochs without val-loss improvement and restores the best
    parameters (batch-norm statistics included).
    """

    def evaluate(p, views, labels):
        probs = nm.softmax_rows(build_scores(p, views, training=False, dropout_seed=0))
        loss = nm.cross_entropy(probs, labels).value[0, 0]
        acc = float((np.argmax(probs.value, axis=1) == labels).mean())
        return float(loss), acc

    rng = np.random.default_rng(tc.seed)
    opt = nm.adam_init(params.trainable(), lr=tc.lr, beta1=tc.beta1,
                       beta2=tc.beta2, epsilon=tc.epsilon)
    row0 = EpochRow(0, evaluate(params, train_views, train_labels)[0])
    if val_views is not None:
        row0.val_loss, row0.val_acc = evaluate(params, val_views, val_labels)
    log = [row0]

    n = train_labels.shape[0]
    best_val = np.inf
    best_params = None
    stall = 0
    for epoch in range(1, tc.epochs + 1):
        perm = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, tc.batch_size):
            idx = perm[start:start + tc.batch_size]
            batch_views = [nm.constant(v[idx]) for v in train_views]
            seed = int(rng.integers(0, 2 ** 62))
            scores = build_scores(params, batch_views, training=True, dropout_seed=seed)
            loss = nm.cross_entropy(nm.softmax_rows(scores), train_labels[idx])
            nm.check_finite(loss.value, "training loss")
            nm.zero_grad(params.trainable())
            nm.backward(loss)
            nm.adam_step(params.trainable(), opt)
            epoch_losses.append(loss.value[0, 0])
        row = EpochRow(epoch, float(np.mean(epoch_losses)))
        if val_views is not None:
            row.val_loss, row.val_acc = evaluate(params, val_views, val_labels)
            if row.val_loss < best_val - 1e-12:
                best_val = row.val_loss
                best_params = params.clone()
                stall = 0
            else:
                stall += 1
        log.append(row)
        if val_views is not None and stall >= tc.patience:
            break
    if best_params is not None:
        params = best_params
    return params, log


def train_standard(train_set: SampleSet, val_set: SampleSet | None,
                   config: GLNConfig, train_config: TrainConfig | None = None):
    """Train the supervised location classifier; deterministic given the seed."""
    tc = train_config or TrainConfig()
    if len(train_set) == 0:
        raise ValueError("empty training set")
    labels = train_set.labels()
    if labels.max() >= config.out_dim:
        raise ValueError(f"label {labels.max()} outside out_dim {config.out_dim}")
    params = init_params(config, seed=tc.seed)
    val_views = _set_views(val_set) if val_set is not None and len(val_set) else None
    val_labels = val_set.labels() if val_views is not None else None

    def build_scores(p, views, training, dropout_seed):
        return forward_logits(views, p, config, training, dropout_seed)

    return fit_cross_entropy(params, build_scores, _set_views(train_set), labels,
                             val_views, val_labels, tc)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _config_dict(config: GLNConfig) -> dict:
    return {
        "feature_dim": config.feature_dim,
        "hidden_dim": config.hidden_dim,
        "layers": config.layers,
        "attention": config.attention,
        "dropout_p": config.dropout_p,
        "self_loops": config.self_loops,
        "batch_norm": config.batch_norm,
        "activation": config.activation,
        "leaky_slope": config.leaky_slope,
        "out_dim": config.out_dim,
    }


def config_from_dict(d: dict) -> GLNConfig:
    return GLNConfig(**d)


def _write_matrix(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_matrix(fh) -> np.ndarray:
    rows, cols = struct.unpack("<II", fh.read(8))
    data = fh.read(rows * cols * 8)
    if len(data) != rows * cols * 8:
        raise ValueError("truncated checkpoint matrix")
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()


def save_checkpoint(path, params: GLNParams, config: GLNConfig,
                    kind: str = "standard", trailer: bytes = b"") -> None:
    """Binary checkpoint: magic, JSON config block, then shape-headed float64
    matrices in declaration order. `trailer` carries extra binary blocks
    (the zero-shot embedding table and split)."""
    meta = {"kind": kind, "gln": _config_dict(config)}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GLN_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        mats = params.matrices()
        fh.write(struct.pack("<I", len(mats)))
        for _, arr in mats:
            _write_matrix(fh, arr)
        fh.write(trailer)


def load_checkpoint(path):
    """Returns (params, config, meta dict). Raises on bad magic or layout.

    Any bytes past the matrices are returned in meta["_trailer"]."""
    with open(path, "rb") as fh:
        if fh.read(4) != GLN_MAGIC:
            raise ValueError(f"{path}: not a GLN checkpoint")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(blob_len).decode("utf-8"))
        config = config_from_dict(meta["gln"])
        (n_mats,) = struct.unpack("<I", fh.read(4))
        mats = [_read_matrix(fh) for _ in range(n_mats)]
        trailer = fh.read()
    # W per layer, optional a per layer, head_w, head_b, bn mean/var per layer
    n_expected = config.layers + (config.layers if config.attention else 0) + 2 + 2 * config.layers
    if n_mats != n_expected:
        raise ValueError(f"{path}: expected {n_expected} matrices, found {n_mats}")
    i = 0
    weights = [nm.parameter(mats[i + l]) for l in range(config.layers)]
    i += config.layers
    attn = []
    if config.attention:
        attn = [nm.parameter(mats[i + l]) for l in range(config.layers)]
        i += config.layers
    head_w = nm.parameter(mats[i])
    head_b = nm.parameter(mats[i + 1])
    i += 2
    bn = []
    for _ in range(config.layers):
        state = nm.BatchNormState(config.hidden_dim,
                                  running_mean=mats[i], running_var=mats[i + 1])
        bn.append(state)
        i += 2
    params = GLNParams(weights, attn, head_w, head_b, bn)
    meta["_trailer"] = trailer
    return params, config, meta
