"""The action selection model: CAS, actionness, fused top-k selection, losses.

The classifier network scores every instance for every class (the class
activation sequence). The actionness network scores every instance with a
class-agnostic action probability. Both scores are fused with a convex
combination to drive top-k instance selection; the union of the selected
instances over the video's classes becomes the positive target set for the
actionness network, trained with a noise-tolerant generalized cross entropy.

Gradients never cross the discrete selection: top-k indices and the
positive/negative partition are constants of the backward pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import VideoRecord
from .errors import ConfigError, DataError, NumericError, ShapeError
from .numerics import MlpParams, init_mlp, make_rng, mlp_backward, mlp_forward

PROB_FLOOR = 1e-12
GCE = "gce"
BCE = "bce"

_CKPT_MAGIC = b"ASLCKPT\x01"


@dataclass
class AslModel:
    classifier: MlpParams  # d -> C per instance
    actionness: MlpParams  # d -> 1 per instance
    beta: float = 0.5
    k_ratio: float = 0.125
    q: float = 0.7
    actionness_loss: str = GCE

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if not 0.0 < self.q <= 1.0:
            raise ConfigError(f"q must be in (0, 1], got {self.q}")
        if self.actionness_loss not in (GCE, BCE):
            raise ConfigError(f"unknown actionness loss {self.actionness_loss!r}")

    @property
    def num_classes(self) -> int:
        return self.classifier.out_dim

    @property
    def feature_dim(self) -> int:
        return self.classifier.in_dim

    def k_for(self, num_instances: int) -> int:
        return max(1, int(num_instances * self.k_ratio))


def init_model(
    seed: int,
    feature_dim: int,
    num_classes: int,
    hidden: int = 512,
    beta: float = 0.5,
    k_ratio: float = 0.125,
    q: float = 0.7,
    actionness_loss: str = GCE,
) -> AslModel:
    rng = make_rng(seed)
    return AslModel(
        classifier=init_mlp(rng, feature_dim, hidden, num_classes),
        actionness=init_mlp(rng, feature_dim, hidden, 1),
        beta=beta,
        k_ratio=k_ratio,
        q=q,
        actionness_loss=actionness_loss,
    )


@dataclass
class SelectionState:
    cas: np.ndarray  # (C, T) raw scores
    actionness: np.ndarray  # (T,) in (0, 1)
    fused: np.ndarray  # (C, T)
    k: int
    topk: list[np.ndarray]  # per class, sorted indices, each of size k
    t_pos: np.ndarray  # sorted indices
    t_neg: np.ndarray  # sorted indices
    f_cache: tuple | None = None
    g_cache: tuple | None = None


@dataclass
class LossBreakdown:
    l_cls: float
    l_asl: float

    @property
    def total(self) -> float:
        return self.l_cls + self.l_asl


def compute_cas(classifier: MlpParams, features: np.ndarray) -> np.ndarray:
    """Raw per-class, per-instance scores, shape (C, T)."""
    out, _ = mlp_forward(classifier, features)
    return out.T


def compute_actionness(actionness: MlpParams, features: np.ndarray) -> np.ndarray:
    """Sigmoid-squashed per-instance action probability, shape (T,)."""
    out, _ = mlp_forward(actionness, features)
    return _sigmoid(out[:, 0])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fuse_selection(actionness: np.ndarray, cas: np.ndarray, beta: float) -> np.ndarray:
    """Convex combination beta * a_t + (1 - beta) * s_{c,t}, shape (C, T)."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must be in [0, 1], got {beta}")
    return beta * actionness[None, :] + (1.0 - beta) * cas


def topk_per_class(fused: np.ndarray, k: int) -> list[np.ndarray]:
    """Indices of the k largest entries per class row; ties favor lower index."""
    num_instances = fused.shape[1]
    if not 1 <= k <= num_instances:
        raise ConfigError(f"k={k} out of range [1, {num_instances}]")
    sets = []
    for row in fused:
        order = np.argsort(-row, kind="stable")
        sets.append(np.sort(order[:k]))
    return sets


def video_class_probs(cas: np.ndarray, topk: list[np.ndarray]) -> np.ndarray:
    """Softmax over per-class means of the selected CAS scores."""
    means = np.array([cas[c, idx].mean() for c, idx in enumerate(topk)])
    shifted = means - means.max()
    expm = np.exp(shifted)
    return expm / expm.sum()


def classification_loss(probs: np.ndarray, labels: tuple[int, ...]) -> float:
    """Mean negative log probability over the video's classes."""
    if not labels:
        raise ConfigError("video has no labels")
    return float(-np.mean(np.log(np.maximum(probs[list(labels)], PROB_FLOOR))))


def build_pos_neg(
    topk: list[np.ndarray], labels: tuple[int, ...], num_instances: int
) -> tuple[np.ndarray, np.ndarray]:
    """Positive set = union of top-k over the video's classes; negative = rest."""
    if not labels:
        raise ConfigError("video has no labels")
    pos_mask = np.zeros(num_instances, dtype=bool)
    for c in labels:
        pos_mask[topk[c]] = True
    return np.flatnonzero(pos_mask), np.flatnonzero(~pos_mask)


def asl_loss(
    actionness: np.ndarray,
    t_pos: np.ndarray,
    t_neg: np.ndarray,
    q: float,
    variant: str = GCE,
) -> float:
    """Selection loss for the actionness network.

    GCE: mean over positives of (1 - a^q)/q plus mean over negatives of
    (1 - (1-a)^q)/q. BCE: standard binary cross entropy with positives
    labeled 1. An empty set contributes 0 to its term.
    """
    a_pos = actionness[t_pos]
    a_neg = actionness[t_neg]
    if variant == GCE:
        pos_term = float(np.mean((1.0 - a_pos**q) / q)) if a_pos.size else 0.0
        neg_term = float(np.mean((1.0 - (1.0 - a_neg) ** q) / q)) if a_neg.size else 0.0
    elif variant == BCE:
        pos_term = float(np.mean(-np.log(np.maximum(a_pos, PROB_FLOOR)))) if a_pos.size else 0.0
        neg_term = (
            float(np.mean(-np.log(np.maximum(1.0 - a_neg, PROB_FLOOR)))) if a_neg.size else 0.0
        )
    else:
        raise ConfigError(f"unknown actionness loss {variant!r}")
    return pos_term + neg_term


def run_forward(
    model: AslModel,
    record: VideoRecord,
    frozen: SelectionState | None = None,
) -> SelectionState:
    """Full forward pass producing the selection state.

    When ``frozen`` is given, its top-k indices and positive/negative
    partition are reused instead of recomputed (gradient-check support and
    subsampled-positive training).
    """
    features = record.features
    f_out, f_cache = mlp_forward(model.classifier, features)
    g_out, g_cache = mlp_forward(model.actionness, features)
    cas = f_out.T
    actionness = _sigmoid(g_out[:, 0])
    fused = fuse_selection(actionness, cas, model.beta)
    if frozen is None:
        k = model.k_for(record.num_instances)
        topk = topk_per_class(fused, k)
        t_pos, t_neg = build_pos_neg(topk, record.labels, record.num_instances)
    else:
        k, topk, t_pos, t_neg = frozen.k, frozen.topk, frozen.t_pos, frozen.t_neg
    return SelectionState(cas, actionness, fused, k, topk, t_pos, t_neg, f_cache, g_cache)


def losses_from_state(model: AslModel, record: VideoRecord, state: SelectionState) -> LossBreakdown:
    probs = video_class_probs(state.cas, state.topk)
    l_cls = classification_loss(probs, record.labels)
    l_asl = asl_loss(state.actionness, state.t_pos, state.t_neg, model.q, model.actionness_loss)
    if not (np.isfinite(l_cls) and np.isfinite(l_asl)):
        raise NumericError(f"non-finite loss on video {record.id}")
    return LossBreakdown(l_cls, l_asl)


def forward_and_loss(
    model: AslModel,
    record: VideoRecord,
    frozen: SelectionState | None = None,
) -> tuple[SelectionState, LossBreakdown]:
    state = run_forward(model, record, frozen)
    return state, losses_from_state(model, record, state)


def output_gradients(
    model: AslModel, record: VideoRecord, state: SelectionState
) -> tuple[np.ndarray, np.ndarray]:
    """d(total loss)/d(network outputs), selection indices held fixed.

    Returns (grad wrt classifier output (T, C), grad wrt actionness logit (T, 1)).
    """
    num_instances = record.num_instances
    num_classes = model.num_classes

    probs = video_class_probs(state.cas, state.topk)
    in_labels = np.zeros(num_classes)
    in_labels[list(record.labels)] = 1.0 / len(record.labels)
    grad_means = probs - in_labels
    gf = np.zeros((num_instances, num_classes))
    for c, idx in enumerate(state.topk):
        gf[idx, c] += grad_means[c] / len(idx)

    a = state.actionness
    grad_a = np.zeros(num_instances)
    if model.actionness_loss == GCE:
        if state.t_pos.size:
            grad_a[state.t_pos] -= a[state.t_pos] ** (model.q - 1.0) / state.t_pos.size
        if state.t_neg.size:
            grad_a[state.t_neg] += (1.0 - a[state.t_neg]) ** (model.q - 1.0) / state.t_neg.size
    else:
        if state.t_pos.size:
            grad_a[state.t_pos] -= 1.0 / (np.maximum(a[state.t_pos], PROB_FLOOR) * state.t_pos.size)
        if state.t_neg.size:
            grad_a[state.t_neg] += 1.0 / (
                np.maximum(1.0 - a[state.t_neg], PROB_FLOOR) * state.t_neg.size
            )
    gg = (grad_a * a * (1.0 - a))[:, None]
    return gf, gg


def backward(
    model: AslModel, record: VideoRecord, state: SelectionState
) -> tuple[MlpParams, MlpParams]:
    """Analytic gradients of the total loss for both networks."""
    if state.f_cache is None or state.g_cache is None:
        raise ShapeError("state carries no forward caches; call run_forward first")
    gf_out, gg_out = output_gradients(model, record, state)
    f_grads, _ = mlp_backward(model.classifier, state.f_cache, gf_out)
    g_grads, _ = mlp_backward(model.actionness, state.g_cache, gg_out)
    return f_grads, g_grads


def save_checkpoint(model: AslModel, path: str) -> None:
    """Binary checkpoint: magic, dims, hyperparameters, float32 LE matrices.

    Layout after the 8-byte magic (all little-endian):
    u32 feature_dim, u32 classifier_hidden, u32 num_classes, u32 actionness_hidden,
    f64 beta, f64 k_ratio, f64 q, u8 loss variant (0 = gce, 1 = bce), then the
    eight parameter arrays (classifier w1, b1, w2, b2; actionness w1, b1, w2, b2)
    as row-major float32.
    """
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(
            struct.pack(
                "<IIIIdddB",
                model.feature_dim,
                model.classifier.hidden_dim,
                model.num_classes,
                model.actionness.hidden_dim,
                model.beta,
                model.k_ratio,
                model.q,
                0 if model.actionness_loss == GCE else 1,
            )
        )
        for arr in model.classifier.arrays() + model.actionness.arrays():
            fh.write(np.asarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> AslModel:
    with open(path, "rb") as fh:
        if fh.read(8) != _CKPT_MAGIC:
            raise DataError(f"{path}: not a model checkpoint (bad magic)")
        header = fh.read(struct.calcsize("<IIIIdddB"))
        d, f_hidden, c, g_hidden, beta, k_ratio, q, variant = struct.unpack("<IIIIdddB", header)
        shapes = [
            (d, f_hidden), (f_hidden,), (f_hidden, c), (c,),
            (d, g_hidden), (g_hidden,), (g_hidden, 1), (1,),
        ]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            raw = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if raw.size != count:
                raise DataError(f"{path}: truncated checkpoint")
            arrays.append(raw.astype(np.float64).reshape(shape))
    return AslModel(
        classifier=MlpParams(*arrays[:4]),
        actionness=MlpParams(*arrays[4:]),
        beta=beta,
        k_ratio=k_ratio,
        q=q,
        actionness_loss=GCE if variant == 0 else BCE,
    )
