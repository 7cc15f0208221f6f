"""Batch selection for the active loop.

Scores unlabeled triplets for informativeness (uncertainty, expected gradient
length, or model output change), measures how far apart two triplets are in
the current embedding (four variants), combines both into a weighted
separation, and picks batches by farthest-point sampling, plain top-k,
uniform sampling, or k-means++ seeding over gradient vectors.

Triplet-to-triplet distances:

* gradient  - cosine distance between expected last-layer loss gradients
* euclidean - distance between concatenated object embeddings, taken against
              the nearest candidate ordering of the other triplet so that it
              is ordering-invariant (a literal one-sided variant is available
              behind ``euclidean_literal_one_sided``)
* centroid  - distance between the means of the three object embeddings
* oriented  - anchor distance plus cosine distance of orientation vectors

All tie-breaking is by ascending triplet index for reproducibility.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .metric import (
    EmbeddingModel,
    Triplet,
    batch_embedding_gradient_norms,
    batch_entropy,
    batch_last_layer_gradients,
    batch_probabilities,
    embed_with_hidden,
)

UNCERTAINTY = "uncertainty"
EXPECTED_GRADIENT_LENGTH = "expected_gradient_length"
MODEL_OUTPUT_CHANGE = "model_output_change"
INFORMATIVENESS_KINDS = (UNCERTAINTY, EXPECTED_GRADIENT_LENGTH, MODEL_OUTPUT_CHANGE)

GRADIENT = "gradient"
EUCLIDEAN = "euclidean"
CENTROID = "centroid"
ORIENTED = "oriented"
DIVERSITY_KINDS = (GRADIENT, EUCLIDEAN, CENTROID, ORIENTED)

RANDOM = "random"
TOPK_INFORMATIVE = "topk_informative"
DECORRELATED = "decorrelated"
FPS_ONLY = "fps_only"
BADGE = "badge"
STRATEGY_KINDS = (RANDOM, TOPK_INFORMATIVE, DECORRELATED, FPS_ONLY, BADGE)

ZERO_NORM = 1e-12


@dataclass
class AcquisitionConfig:
    """Batch-selection settings. ``oversample_size`` defaults to twice the
    batch size when unset. ``fps_candidates`` caps the diversity-only
    strategy's candidate pool (None = farthest-point sampling over the whole
    unlabeled pool, computed by streaming scans)."""

    batch_size: int
    oversample_size: int | None = None
    mu: float = 0.05
    informativeness: str = UNCERTAINTY
    diversity: str = GRADIENT
    strategy: str = DECORRELATED
    seed: int = 0
    euclidean_literal_one_sided: bool = False
    fps_candidates: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.oversample_size is None:
            self.oversample_size = 2 * self.batch_size
        if self.oversample_size < self.batch_size:
            raise ConfigError(
                f"oversample size {self.oversample_size} < batch size {self.batch_size}"
            )
        if self.strategy not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.strategy in (TOPK_INFORMATIVE, DECORRELATED):
            if self.informativeness not in INFORMATIVENESS_KINDS:
                raise ConfigError(f"unknown informativeness {self.informativeness!r}")
        if self.strategy in (DECORRELATED, FPS_ONLY):
            if self.diversity not in DIVERSITY_KINDS:
                raise ConfigError(f"unknown diversity measure {self.diversity!r}")
        if self.mu < 0:
            raise ConfigError(f"mu must be non-negative, got {self.mu}")


def _as_index_array(triplets) -> np.ndarray:
    if hasattr(triplets, "indices"):
        return np.asarray(triplets.indices, dtype=np.intp).reshape(-1, 3)
    arr = np.asarray(
        [
            (t.anchor, t.first, t.second) if isinstance(t, Triplet) else tuple(t)
            for t in triplets
        ],
        dtype=np.intp,
    )
    return arr.reshape(-1, 3)


def expected_gradient_matrix(
    table: np.ndarray, hidden: np.ndarray, idx: np.ndarray, mu: float
) -> np.ndarray:
    """Expected last-layer gradient per triplet, (T, D)."""
    a, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    p = batch_probabilities(table, a, j, k, mu)[:, None]
    g_first = batch_last_layer_gradients(table, hidden, a, j, k)
    g_second = batch_last_layer_gradients(table, hidden, a, k, j)
    return p * g_first + (1.0 - p) * g_second


def most_probable_gradient_matrix(
    table: np.ndarray, hidden: np.ndarray, idx: np.ndarray, mu: float
) -> np.ndarray:
    """Last-layer gradient for each triplet's most probable ordering."""
    a, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    p = batch_probabilities(table, a, j, k, mu)[:, None]
    g_first = batch_last_layer_gradients(table, hidden, a, j, k)
    g_second = batch_last_layer_gradients(table, hidden, a, k, j)
    return np.where(p >= 0.5, g_first, g_second)


def score_informativeness(
    model: EmbeddingModel, features: np.ndarray, triplets, measure: str, mu: float
) -> np.ndarray:
    """Non-negative informativeness score per triplet."""
    idx = _as_index_array(triplets)
    if idx.shape[0] == 0:
        return np.zeros(0)
    if measure not in INFORMATIVENESS_KINDS:
        raise ConfigError(f"unknown informativeness {measure!r}")
    table, hidden = embed_with_hidden(model, features)
    return _scores_from_tables(table, hidden, idx, measure, mu)


def _scores_from_tables(
    table: np.ndarray, hidden: np.ndarray, idx: np.ndarray, measure: str, mu: float
) -> np.ndarray:
    a, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    if measure == UNCERTAINTY:
        return batch_entropy(batch_probabilities(table, a, j, k, mu))
    if measure == EXPECTED_GRADIENT_LENGTH:
        return np.linalg.norm(expected_gradient_matrix(table, hidden, idx, mu), axis=1)
    p = batch_probabilities(table, a, j, k, mu)
    n_first = batch_embedding_gradient_norms(table, a, j, k)
    n_second = batch_embedding_gradient_norms(table, a, k, j)
    return p * n_first + (1.0 - p) * n_second


def select_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k highest scores, descending, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    if k > scores.shape[0]:
        raise ConfigError(f"k={k} exceeds pool size {scores.shape[0]}")
    order = np.argsort(-scores, kind="stable")
    return order[:k]


# ---------------------------------------------------------------------------
# Triplet-to-triplet distances, pairwise ops and candidate matrices.

def _pairwise_dist(x: np.ndarray, y: np.ndarray, block: int = 256) -> np.ndarray:
    """Pairwise Euclidean distances via direct differences, blocked to bound
    memory. Unlike the quadratic-expansion trick this is exactly zero on
    identical rows and exactly symmetric, which the self-distance and
    symmetry invariants rely on."""
    out = np.empty((x.shape[0], y.shape[0]))
    for start in range(0, x.shape[0], block):
        stop = min(start + block, x.shape[0])
        diff = x[start:stop, None, :] - y[None, :, :]
        out[start:stop] = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    return out


def _exact_symmetric(g: np.ndarray) -> np.ndarray:
    # Bitwise symmetry; the measures are symmetric already, this only strips
    # accumulation-order noise.
    return 0.5 * (g + g.T)


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    small = norms < ZERO_NORM
    safe = np.where(small, 1.0, norms)
    return x / safe[:, None], small


def gradient_gamma_matrix(g: np.ndarray) -> np.ndarray:
    """1 - cosine of expected gradients; near-zero gradients count as
    orthogonal (distance 1)."""
    unit, small = _unit_rows(g)
    gamma = 1.0 - unit @ unit.T
    gamma[small, :] = 1.0
    gamma[:, small] = 1.0
    return _exact_symmetric(np.clip(gamma, 0.0, 2.0))


def euclidean_gamma_matrix(
    table: np.ndarray, idx: np.ndarray, literal_one_sided: bool = False
) -> np.ndarray:
    """Distance between concatenated (anchor, first, second) embeddings.

    ``aligned[a, b]`` compares stored orders, ``swapped[a, b]`` compares
    against the other triplet's candidate swap; swapping both triplets only
    permutes coordinates, so those two numbers are the whole picture. The
    default takes the nearer of the two orderings (making identical triplets
    distance 0 regardless of candidate order); the literal variant averages
    them.
    """
    rep = np.concatenate([table[idx[:, 0]], table[idx[:, 1]], table[idx[:, 2]]], axis=1)
    swap = np.concatenate([table[idx[:, 0]], table[idx[:, 2]], table[idx[:, 1]]], axis=1)
    aligned = _pairwise_dist(rep, rep)
    swapped = _pairwise_dist(rep, swap)
    if literal_one_sided:
        return _exact_symmetric(0.5 * (aligned + swapped))
    return _exact_symmetric(np.minimum(aligned, swapped))


def centroid_gamma_matrix(table: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Distance between the centroids of the triplets' object embeddings."""
    centroids = (table[idx[:, 0]] + table[idx[:, 1]] + table[idx[:, 2]]) / 3.0
    return _pairwise_dist(centroids, centroids)  # exactly symmetric already


def oriented_gamma_matrix(table: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Anchor distance plus cosine distance between orientation vectors
    unit(e_first + e_second - 2 e_anchor); degenerate orientations become the
    zero vector."""
    anchors = table[idx[:, 0]]
    r = table[idx[:, 1]] + table[idx[:, 2]] - 2.0 * anchors
    unit, small = _unit_rows(r)
    unit[small] = 0.0
    gamma = _pairwise_dist(anchors, anchors) + (1.0 - unit @ unit.T)
    return _exact_symmetric(np.maximum(gamma, 0.0))


def gamma_matrix(
    model: EmbeddingModel,
    features: np.ndarray,
    triplets,
    kind: str,
    mu: float,
    literal_one_sided: bool = False,
) -> np.ndarray:
    """Pairwise triplet distance matrix for a candidate set."""
    idx = _as_index_array(triplets)
    table, hidden = embed_with_hidden(model, features)
    return _gamma_from_tables(table, hidden, idx, kind, mu, literal_one_sided)


def _gamma_from_tables(
    table: np.ndarray,
    hidden: np.ndarray,
    idx: np.ndarray,
    kind: str,
    mu: float,
    literal_one_sided: bool = False,
) -> np.ndarray:
    if kind == GRADIENT:
        return gradient_gamma_matrix(expected_gradient_matrix(table, hidden, idx, mu))
    if kind == EUCLIDEAN:
        return euclidean_gamma_matrix(table, idx, literal_one_sided)
    if kind == CENTROID:
        return centroid_gamma_matrix(table, idx)
    if kind == ORIENTED:
        return oriented_gamma_matrix(table, idx)
    raise ConfigError(f"unknown diversity measure {kind!r}")


def _pair_gamma(
    model: EmbeddingModel,
    features: np.ndarray,
    t: Triplet,
    t_other: Triplet,
    kind: str,
    mu: float,
    literal_one_sided: bool = False,
) -> float:
    mat = gamma_matrix(model, features, [t, t_other], kind, mu, literal_one_sided)
    return float(mat[0, 1])


def gamma_gradient(model, features, t: Triplet, t_other: Triplet, mu: float) -> float:
    return _pair_gamma(model, features, t, t_other, GRADIENT, mu)


def gamma_euclidean(
    model, features, t: Triplet, t_other: Triplet, mu: float = 0.0,
    literal_one_sided: bool = False,
) -> float:
    return _pair_gamma(model, features, t, t_other, EUCLIDEAN, mu, literal_one_sided)


def gamma_centroid(model, features, t: Triplet, t_other: Triplet) -> float:
    return _pair_gamma(model, features, t, t_other, CENTROID, 0.0)


def gamma_oriented(model, features, t: Triplet, t_other: Triplet) -> float:
    return _pair_gamma(model, features, t, t_other, ORIENTED, 0.0)


def rho(
    model: EmbeddingModel,
    features: np.ndarray,
    t: Triplet,
    t_other: Triplet,
    config: AcquisitionConfig,
) -> float:
    """Informativeness-weighted separation f(t) * f(t') * gamma(t, t').

    Under the diversity-only strategy the informativeness factors are 1.
    """
    gamma_value = _pair_gamma(
        model, features, t, t_other, config.diversity, config.mu,
        config.euclidean_literal_one_sided,
    )
    if config.strategy == FPS_ONLY:
        return gamma_value
    f = score_informativeness(
        model, features, [t, t_other], config.informativeness, config.mu
    )
    return float(f[0] * f[1] * gamma_value)


def rho_from_scores(scores: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return np.outer(scores, scores) * gamma


# ---------------------------------------------------------------------------
# Selection procedures.

def _materialize(distance, ids: np.ndarray) -> np.ndarray:
    if callable(distance):
        k = len(ids)
        mat = np.zeros((k, k))
        for p in range(k):
            for q in range(k):
                mat[p, q] = distance(int(ids[p]), int(ids[q]))
        return mat
    mat = np.asarray(distance, dtype=np.float64)
    if mat.shape != (len(ids), len(ids)):
        raise ConfigError(
            f"distance matrix shape {mat.shape} does not match {len(ids)} candidates"
        )
    return mat


def fps_select(
    candidates,
    distance,
    b: int,
    informativeness: np.ndarray | None = None,
) -> np.ndarray:
    """Greedy farthest-point batch over a candidate separation oracle.

    Seeds with the most separated pair, then repeatedly adds the candidate
    maximizing the minimum separation to the chosen set. ``distance`` is a
    (k, k) matrix aligned with ``candidates`` or a callable on candidate ids.
    Ties always resolve to the smallest triplet id. For b=1 the single
    most informative candidate is returned instead (first by id if scores are
    uniform or absent).
    """
    ids = np.asarray(candidates, dtype=np.intp)
    k = len(ids)
    if b > k:
        raise ConfigError(f"batch {b} exceeds candidate count {k}")
    if b < 1:
        raise ConfigError(f"batch size must be >= 1, got {b}")
    if b == 1:
        if informativeness is None:
            pos = int(np.argmin(ids))
        else:
            scores = np.asarray(informativeness, dtype=np.float64)
            best = scores.max()
            tied = np.flatnonzero(scores == best)
            pos = int(tied[np.argmin(ids[tied])])
        return ids[[pos]]

    mat = _materialize(distance, ids)

    # Seed: the most separated pair, ties by ascending (low id, high id).
    iu, ju = np.triu_indices(k, 1)
    vals = mat[iu, ju]
    best = vals.max()
    tied = np.flatnonzero(vals == best)
    pair_keys = [
        (min(ids[iu[t]], ids[ju[t]]), max(ids[iu[t]], ids[ju[t]]), iu[t], ju[t])
        for t in tied
    ]
    _, _, p, q = min(pair_keys)
    if ids[q] < ids[p]:
        p, q = q, p
    selected = [p, q]
    chosen = np.zeros(k, dtype=bool)
    chosen[[p, q]] = True
    min_sep = np.minimum(mat[:, p], mat[:, q])

    while len(selected) < b:
        masked = np.where(chosen, -np.inf, min_sep)
        best = masked.max()
        tied = np.flatnonzero(masked == best)
        nxt = int(tied[np.argmin(ids[tied])])
        selected.append(nxt)
        chosen[nxt] = True
        min_sep = np.minimum(min_sep, mat[:, nxt])
    return ids[selected]


def _streaming_separation(
    table: np.ndarray,
    hidden: np.ndarray,
    idx: np.ndarray,
    kind: str,
    mu: float,
    literal_one_sided: bool = False,
):
    """Row-block separation oracle for pool-scale FPS.

    Returns sep_rows(positions) -> (len(positions), n) separations against
    every candidate, without materializing the full n x n matrix. Distance
    blocks use the quadratic expansion, so values can differ from the small
    candidate-set matrices by ~1e-8; only argmax decisions consume them.
    """
    if kind == GRADIENT:
        unit, small = _unit_rows(expected_gradient_matrix(table, hidden, idx, mu))
        unit[small] = 0.0  # zero-gradient rows count as orthogonal to everything

        def sep_rows(pos):
            return np.clip(1.0 - unit[pos] @ unit.T, 0.0, 2.0)

        return sep_rows

    def block_dist(x, y, pos):
        sq = (
            np.einsum("id,id->i", x[pos], x[pos])[:, None]
            + np.einsum("id,id->i", y, y)[None, :]
            - 2.0 * (x[pos] @ y.T)
        )
        return np.sqrt(np.maximum(sq, 0.0))

    if kind == EUCLIDEAN:
        rep = np.concatenate([table[idx[:, 0]], table[idx[:, 1]], table[idx[:, 2]]], axis=1)
        swap = np.concatenate([table[idx[:, 0]], table[idx[:, 2]], table[idx[:, 1]]], axis=1)
        if literal_one_sided:
            return lambda pos: 0.5 * (block_dist(rep, rep, pos) + block_dist(rep, swap, pos))
        return lambda pos: np.minimum(block_dist(rep, rep, pos), block_dist(rep, swap, pos))

    if kind == CENTROID:
        centroids = (table[idx[:, 0]] + table[idx[:, 1]] + table[idx[:, 2]]) / 3.0
        return lambda pos: block_dist(centroids, centroids, pos)

    if kind == ORIENTED:
        anchors = table[idx[:, 0]]
        unit, small = _unit_rows(table[idx[:, 1]] + table[idx[:, 2]] - 2.0 * anchors)
        unit[small] = 0.0

        def sep_rows(pos):
            return np.maximum(
                block_dist(anchors, anchors, pos) + (1.0 - unit[pos] @ unit.T), 0.0
            )

        return sep_rows

    raise ConfigError(f"unknown diversity measure {kind!r}")


def fps_select_over_pool(candidates, sep_rows, b: int, block: int = 1024) -> np.ndarray:
    """Farthest-point sampling over a pool too large for a pairwise matrix.

    Same selection rules and tie-breaks as `fps_select`; the seed-pair search
    streams row blocks of the separation oracle.
    """
    ids = np.asarray(candidates, dtype=np.intp)
    n = len(ids)
    if b > n:
        raise ConfigError(f"batch {b} exceeds candidate count {n}")
    if b < 1:
        raise ConfigError(f"batch size must be >= 1, got {b}")
    if b == 1:
        return ids[[int(np.argmin(ids))]]

    best_val = -np.inf
    best_key = None
    best_pair = None
    cols = np.arange(n)[None, :]
    for start in range(0, n, block):
        stop = min(start + block, n)
        rows = sep_rows(np.arange(start, stop))
        # mask the lower triangle (and diagonal) of the global pair grid
        rows[cols <= np.arange(start, stop)[:, None]] = -np.inf
        mx = rows.max()
        if mx < best_val:
            continue
        for local_p, q in np.argwhere(rows == mx):
            p = start + int(local_p)
            q = int(q)
            key = (min(ids[p], ids[q]), max(ids[p], ids[q]))
            if mx > best_val or key < best_key:
                best_val = mx
                best_key = key
                best_pair = (p, q) if ids[p] < ids[q] else (q, p)
    p, q = best_pair
    selected = [p, q]
    chosen = np.zeros(n, dtype=bool)
    chosen[[p, q]] = True
    min_sep = np.minimum(sep_rows([p])[0], sep_rows([q])[0])
    while len(selected) < b:
        masked = np.where(chosen, -np.inf, min_sep)
        mx = masked.max()
        tied = np.flatnonzero(masked == mx)
        nxt = int(tied[np.argmin(ids[tied])])
        selected.append(nxt)
        chosen[nxt] = True
        min_sep = np.minimum(min_sep, sep_rows([nxt])[0])
    return ids[selected]


def kmeanspp_select(vectors: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over gradient vectors; returns the b seed indices.

    First seed uniform; each next seed drawn with probability proportional to
    squared distance to the nearest seed. Falls back to uniform sampling
    without replacement whenever all remaining distances are zero.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if b > n:
        raise ConfigError(f"batch {b} exceeds pool size {n}")
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < b:
        total = d2.sum()
        if total <= 0.0:
            remaining = np.setdiff1d(np.arange(n), np.array(chosen))
            idx = int(rng.choice(remaining))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(chosen, dtype=np.intp)


def random_select(pool, b: int, rng: np.random.Generator) -> np.ndarray:
    """b ids uniform without replacement; deterministic per generator state."""
    ids = np.arange(pool, dtype=np.intp) if np.isscalar(pool) else np.asarray(pool, dtype=np.intp)
    if b > len(ids):
        raise ConfigError(f"batch {b} exceeds pool size {len(ids)}")
    return rng.choice(ids, size=b, replace=False)


def select_batch(
    model: EmbeddingModel,
    features: np.ndarray,
    pool_indices: np.ndarray,
    unlabeled_ids: np.ndarray,
    config: AcquisitionConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Pick config.batch_size triplet ids from the unlabeled pool.

    ``pool_indices`` is the full pool's (n, 3) index array; ids are row
    positions in it. The oversample size is capped at the pool size late in
    a run.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    ids = np.asarray(unlabeled_ids, dtype=np.intp)
    b = config.batch_size
    if b > len(ids):
        raise ConfigError(f"batch {b} exceeds unlabeled pool {len(ids)}")

    if config.strategy == RANDOM:
        return random_select(ids, b, rng)

    table, hidden = embed_with_hidden(model, features)
    idx = np.asarray(pool_indices, dtype=np.intp)

    if config.strategy == TOPK_INFORMATIVE:
        scores = _scores_from_tables(table, hidden, idx[ids], config.informativeness, config.mu)
        return ids[select_topk(scores, b)]

    if config.strategy == BADGE:
        grads = most_probable_gradient_matrix(table, hidden, idx[ids], config.mu)
        return ids[kmeanspp_select(grads, b, rng)]

    if config.strategy == FPS_ONLY:
        if config.fps_candidates is None:
            sep_rows = _streaming_separation(
                table, hidden, idx[ids], config.diversity, config.mu,
                config.euclidean_literal_one_sided,
            )
            return fps_select_over_pool(ids, sep_rows, b)
        k = min(config.fps_candidates, len(ids))
        cand_ids = random_select(ids, k, rng)
        cand_scores = np.ones(k)
    elif config.strategy == DECORRELATED:
        k = min(config.oversample_size, len(ids))
        scores = _scores_from_tables(table, hidden, idx[ids], config.informativeness, config.mu)
        cand_pos = select_topk(scores, k)
        cand_ids = ids[cand_pos]
        cand_scores = scores[cand_pos]
    else:
        raise ConfigError(f"unknown strategy {config.strategy!r}")

    gamma = _gamma_from_tables(
        table, hidden, idx[cand_ids], config.diversity, config.mu,
        config.euclidean_literal_one_sided,
    )
    separation = rho_from_scores(cand_scores, gamma)
    return fps_select(cand_ids, separation, b, informativeness=cand_scores)
