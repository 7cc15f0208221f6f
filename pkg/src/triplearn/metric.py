"""Embedding metric over a learned network: distances, triplet probabilities,
entropy scores, the exponential triplet loss, and per-triplet gradients.

Triplets reference objects by row index into a feature matrix. Orderings use
the wire tokens "j" (first candidate closer) and "k" (second candidate
closer); pools store them as a uint8 array with 0 = "j", 1 = "k".

The per-triplet operations are the contract surface; batch helpers taking a
precomputed embedding table do the same math vectorized and carry the
training loop and acquisition scoring.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError
from .nn import LayerGrads, MLPParams, backward_batch, forward_batch

FIRST_CLOSER = "j"
SECOND_CLOSER = "k"
ORDERING_TOKENS = (FIRST_CLOSER, SECOND_CLOSER)


@dataclass(frozen=True)
class Triplet:
    """An anchor and two candidate objects, by index. Unlabeled."""

    anchor: int
    first: int
    second: int

    def __post_init__(self):
        if len({self.anchor, self.first, self.second}) != 3:
            raise ContractError(
                f"triplet indices must be distinct, got {(self.anchor, self.first, self.second)}"
            )


@dataclass(frozen=True)
class LabeledTriplet:
    """A triplet plus its annotated ordering ("j": first closer, "k": second)."""

    triplet: Triplet
    closer: str

    def __post_init__(self):
        if self.closer not in ORDERING_TOKENS:
            raise ContractError(f"ordering must be one of {ORDERING_TOKENS}, got {self.closer!r}")

    def near_far(self) -> tuple[int, int]:
        t = self.triplet
        if self.closer == FIRST_CLOSER:
            return t.first, t.second
        return t.second, t.first


@dataclass
class EmbeddingModel:
    """The embedding network; distances are Euclidean in its output space."""

    params: MLPParams

    @property
    def input_dim(self) -> int:
        return self.params.input_dim

    @property
    def embed_dim(self) -> int:
        return self.params.output_dim

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.params.copy())


def _check_index(features: np.ndarray, idx: int) -> None:
    if not 0 <= idx < features.shape[0]:
        raise IndexError(f"object index {idx} out of range for {features.shape[0]} objects")


def embed_all(model: EmbeddingModel, features: np.ndarray) -> np.ndarray:
    """Embedding table for every object row; (n, embed_dim)."""
    out, _ = forward_batch(model.params, features)
    return out


def embed_with_hidden(model: EmbeddingModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings plus the inputs feeding the final layer.

    The second array is what the last layer multiplies, i.e. the previous
    layer's post-activation (or the raw features for a single-layer net);
    last-layer gradients are outer products against it.
    """
    out, cache = forward_batch(model.params, features)
    hidden = cache.post[-2] if len(model.params.layers) > 1 else cache.inputs
    return out, hidden


def distance(model: EmbeddingModel, features: np.ndarray, a: int, b: int) -> float:
    """Euclidean distance between two objects in embedding space."""
    _check_index(features, a)
    _check_index(features, b)
    emb, _ = forward_batch(model.params, features[[a, b]])
    return float(np.linalg.norm(emb[0] - emb[1]))


# ---------------------------------------------------------------------------
# Batch kernels over a precomputed embedding table.

def batch_squared_distances(table: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = table[a] - table[b]
    return np.einsum("td,td->t", diff, diff)


def batch_probabilities(
    table: np.ndarray,
    anchors: np.ndarray,
    first: np.ndarray,
    second: np.ndarray,
    mu: float,
) -> np.ndarray:
    """Probability that each anchor is closer to its first candidate.

    p = (mu + d2(anchor, second)) / (2 mu + d2(anchor, second) + d2(anchor, first)).
    The denominator is built as (mu + d2_second) + (mu + d2_first) so that
    swapping the candidates reproduces bit-identical complements. The fully
    degenerate 0/0 case returns 0.5.
    """
    if mu < 0:
        raise ContractError(f"mu must be non-negative, got {mu}")
    s = mu + batch_squared_distances(table, anchors, second)
    u = mu + batch_squared_distances(table, anchors, first)
    den = s + u
    with np.errstate(invalid="ignore"):
        p = np.where(den > 0.0, s / np.where(den > 0.0, den, 1.0), 0.5)
    return p


def batch_entropy(p: np.ndarray) -> np.ndarray:
    """Binary Shannon entropy in bits, with 0 log 0 := 0. Range [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = 1.0 - p
    out = np.zeros_like(p)
    mask = (p > 0.0) & (p < 1.0)
    pm, qm = p[mask], q[mask]
    out[mask] = -pm * np.log2(pm) - qm * np.log2(qm)
    return out


def batch_loss_terms(
    table: np.ndarray, anchors: np.ndarray, near: np.ndarray, far: np.ndarray
) -> np.ndarray:
    """Per-triplet exponential loss exp(-(d2(a, far) - d2(a, near)))."""
    d2_far = batch_squared_distances(table, anchors, far)
    d2_near = batch_squared_distances(table, anchors, near)
    terms = np.exp(-(d2_far - d2_near))
    if not np.all(np.isfinite(terms)):
        raise NumericError("triplet loss overflowed; margins too large")
    return terms


def batch_embedding_gradients(
    table: np.ndarray, anchors: np.ndarray, near: np.ndarray, far: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the per-triplet loss w.r.t. the three embeddings.

    Returns (d_anchor, d_near, d_far), each (T, embed_dim).
    """
    diff_near = table[anchors] - table[near]
    diff_far = table[anchors] - table[far]
    w = batch_loss_terms(table, anchors, near, far)[:, None]
    d_anchor = 2.0 * w * (diff_near - diff_far)
    d_near = -2.0 * w * diff_near
    d_far = 2.0 * w * diff_far
    return d_anchor, d_near, d_far


def batch_last_layer_gradients(
    table: np.ndarray,
    hidden: np.ndarray,
    anchors: np.ndarray,
    near: np.ndarray,
    far: np.ndarray,
) -> np.ndarray:
    """Per-triplet loss gradient w.r.t. the final layer, flattened.

    Layout is the weight matrix row-major followed by the biases, so each row
    has length embed_dim * hidden_dim + embed_dim.
    """
    d_anchor, d_near, d_far = batch_embedding_gradients(table, anchors, near, far)
    dw = (
        np.einsum("td,th->tdh", d_anchor, hidden[anchors])
        + np.einsum("td,th->tdh", d_near, hidden[near])
        + np.einsum("td,th->tdh", d_far, hidden[far])
    )
    db = d_anchor + d_near + d_far
    t = dw.shape[0]
    return np.concatenate([dw.reshape(t, -1), db], axis=1)


def batch_embedding_gradient_norms(
    table: np.ndarray, anchors: np.ndarray, near: np.ndarray, far: np.ndarray
) -> np.ndarray:
    """L2 norm of the stacked (anchor, near, far) embedding gradient."""
    d_anchor, d_near, d_far = batch_embedding_gradients(table, anchors, near, far)
    sq = (
        np.einsum("td,td->t", d_anchor, d_anchor)
        + np.einsum("td,td->t", d_near, d_near)
        + np.einsum("td,td->t", d_far, d_far)
    )
    return np.sqrt(sq)


# ---------------------------------------------------------------------------
# Contract operations on explicit triplets.

def _single(model: EmbeddingModel, features: np.ndarray, t: Triplet) -> tuple[np.ndarray, np.ndarray]:
    for idx in (t.anchor, t.first, t.second):
        _check_index(features, idx)
    return embed_with_hidden(model, features[[t.anchor, t.first, t.second]])


def triplet_probability(model: EmbeddingModel, features: np.ndarray, t: Triplet, mu: float) -> float:
    """Probability that the anchor is closer to `first` than to `second`."""
    table, _ = _single(model, features, t)
    p = batch_probabilities(table, np.array([0]), np.array([1]), np.array([2]), mu)
    return float(p[0])


def triplet_entropy(model: EmbeddingModel, features: np.ndarray, t: Triplet, mu: float) -> float:
    """Ordering uncertainty of one triplet, in bits (0 = certain, 1 = coin flip)."""
    return float(batch_entropy(np.array([triplet_probability(model, features, t, mu)]))[0])


def _labeled_arrays(labeled) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    anchors, near, far = [], [], []
    for item in labeled:
        if not isinstance(item, LabeledTriplet):
            raise ContractError(f"expected LabeledTriplet, got {type(item).__name__}")
        n, f = item.near_far()
        anchors.append(item.triplet.anchor)
        near.append(n)
        far.append(f)
    return (
        np.asarray(anchors, dtype=np.intp),
        np.asarray(near, dtype=np.intp),
        np.asarray(far, dtype=np.intp),
    )


def triplet_loss(model: EmbeddingModel, features: np.ndarray, labeled) -> float:
    """Sum of exp(-(d2(anchor, far) - d2(anchor, near))) over labeled triplets."""
    anchors, near, far = _labeled_arrays(labeled)
    if anchors.size == 0:
        return 0.0
    table = embed_all(model, features)
    return float(batch_loss_terms(table, anchors, near, far).sum())


def loss_gradient_arrays(
    model: EmbeddingModel,
    features: np.ndarray,
    anchors: np.ndarray,
    near: np.ndarray,
    far: np.ndarray,
) -> list[LayerGrads]:
    """Exact full-parameter gradient of the summed loss, from index arrays.

    One batched forward over the feature matrix, scatter-add of the
    per-triplet embedding gradients onto their objects, one batched backward.
    """
    out, cache = forward_batch(model.params, features)
    d_anchor, d_near, d_far = batch_embedding_gradients(out, anchors, near, far)
    upstream = np.zeros_like(out)
    np.add.at(upstream, anchors, d_anchor)
    np.add.at(upstream, near, d_near)
    np.add.at(upstream, far, d_far)
    grads, _ = backward_batch(model.params, cache, upstream)
    return grads


def loss_gradient(model: EmbeddingModel, features: np.ndarray, labeled) -> list[LayerGrads]:
    """Gradient of `triplet_loss` w.r.t. every parameter, summed over triplets."""
    anchors, near, far = _labeled_arrays(labeled)
    if anchors.size == 0:
        return [
            LayerGrads(np.zeros_like(l.weights), np.zeros_like(l.biases))
            for l in model.params.layers
        ]
    return loss_gradient_arrays(model, features, anchors, near, far)


def expected_last_layer_gradient(
    model: EmbeddingModel, features: np.ndarray, t: Triplet, mu: float
) -> np.ndarray:
    """Probability-weighted mix of the two orderings' last-layer gradients."""
    table, hidden = _single(model, features, t)
    a, j, k = np.array([0]), np.array([1]), np.array([2])
    p = batch_probabilities(table, a, j, k, mu)[0]
    g_first = batch_last_layer_gradients(table, hidden, a, j, k)[0]
    g_second = batch_last_layer_gradients(table, hidden, a, k, j)[0]
    return p * g_first + (1.0 - p) * g_second


def most_probable_gradient(
    model: EmbeddingModel, features: np.ndarray, t: Triplet, mu: float
) -> np.ndarray:
    """Last-layer gradient for the more probable ordering (tie: first closer)."""
    table, hidden = _single(model, features, t)
    a, j, k = np.array([0]), np.array([1]), np.array([2])
    p = batch_probabilities(table, a, j, k, mu)[0]
    if p >= 0.5:
        return batch_last_layer_gradients(table, hidden, a, j, k)[0]
    return batch_last_layer_gradients(table, hidden, a, k, j)[0]
