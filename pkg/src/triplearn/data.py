"""Datasets and triplet pools: synthetic generation with a random Mahalanobis
ground truth, triplet sampling, label-noise injection, train/test splitting,
and the CSV interchange formats.

Feature file: header ``id,f0,...,f{d-1}``, one object per row.
Triplet file: header ``anchor_id,j_id,k_id`` with an optional ``ordering``
column whose values are "j" or "k". Both are UTF-8 with LF line endings.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ParseError, ValidationError
from .metric import (
    FIRST_CLOSER,
    SECOND_CLOSER,
    EmbeddingModel,
    LabeledTriplet,
    Triplet,
)
from .nn import IDENTITY, LayerParams, MLPParams

ORDERING_CODES = {FIRST_CLOSER: 0, SECOND_CLOSER: 1}
ORDERING_FROM_CODE = (FIRST_CLOSER, SECOND_CLOSER)


@dataclass
class ObjectSet:
    """Immutable object collection: features, opaque ids, optional assets."""

    features: np.ndarray
    ids: list[str]
    assets: list[str | None] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {self.features.shape}")
        if len(self.ids) != self.features.shape[0]:
            raise ValidationError(
                f"{len(self.ids)} ids for {self.features.shape[0]} feature rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("duplicate object ids")
        if self.assets is not None and len(self.assets) != len(self.ids):
            raise ValidationError("asset list length does not match ids")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class GroundTruthMetric:
    """Mahalanobis metric M = factor^T factor, PSD by construction."""

    matrix: np.ndarray
    factor: np.ndarray

    def squared_distance(self, x: np.ndarray, y: np.ndarray) -> float:
        diff = np.asarray(x) - np.asarray(y)
        return float(diff @ self.matrix @ diff)

    def pairwise_squared(self, features: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        diff = features[a] - features[b]
        return np.einsum("td,de,te->t", diff, self.matrix, diff)

    def as_embedding_model(self) -> EmbeddingModel:
        """Linear embedding x -> factor @ x realizing this metric exactly."""
        d = self.factor.shape[1]
        layer = LayerParams(self.factor.copy(), np.zeros(self.factor.shape[0]), IDENTITY)
        model = EmbeddingModel(MLPParams([layer]))
        assert model.input_dim == d
        return model


@dataclass
class TripletPool:
    """A sequence of triplets stored as an (n, 3) index array, optionally with
    stored orderings (uint8, 0 = first candidate closer, 1 = second)."""

    indices: np.ndarray
    orderings: np.ndarray | None = None
    provenance: str = "synthetic"

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp).reshape(-1, 3)
        if self.orderings is not None:
            self.orderings = np.asarray(self.orderings, dtype=np.uint8)
            if self.orderings.shape != (self.indices.shape[0],):
                raise ValidationError("orderings length does not match triplet count")

    def __len__(self) -> int:
        return self.indices.shape[0]

    def triplet(self, i: int) -> Triplet:
        a, j, k = self.indices[i]
        return Triplet(int(a), int(j), int(k))

    def labeled(self, i: int) -> LabeledTriplet:
        if self.orderings is None:
            raise ValidationError("pool has no stored orderings")
        return LabeledTriplet(self.triplet(i), ORDERING_FROM_CODE[self.orderings[i]])

    def validate(self, n_objects: int, forbid_duplicates: bool = False) -> None:
        idx = self.indices
        if idx.size and (idx.min() < 0 or idx.max() >= n_objects):
            raise ValidationError(
                f"triplet index out of range for {n_objects} objects"
            )
        same = (
            (idx[:, 0] == idx[:, 1]) | (idx[:, 0] == idx[:, 2]) | (idx[:, 1] == idx[:, 2])
        )
        if same.any():
            raise ValidationError(
                f"triplet {int(np.flatnonzero(same)[0])} repeats an object index"
            )
        if forbid_duplicates:
            unique = np.unique(idx, axis=0)
            if unique.shape[0] != idx.shape[0]:
                raise ValidationError("duplicate triplets present")


@dataclass
class NoiseSpec:
    """Exact-count label flipping: floor(rate * pool) orderings inverted."""

    flip_rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ConfigError(f"flip rate must be in [0, 1], got {self.flip_rate}")


def generate_synthetic(n: int = 100, d: int = 10, seed: int = 0) -> tuple[ObjectSet, GroundTruthMetric]:
    """Standard-normal objects plus a random Mahalanobis ground truth.

    The metric is M = A^T A with A's entries drawn i.i.d. standard normal
    from the same seeded stream as the features.
    """
    if n < 3:
        raise ConfigError(f"need at least 3 objects to form triplets, got {n}")
    if d < 1:
        raise ConfigError(f"feature dimension must be positive, got {d}")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, d))
    factor = rng.standard_normal((d, d))
    matrix = factor.T @ factor
    width = max(3, len(str(n - 1)))
    ids = [f"obj-{i:0{width}d}" for i in range(n)]
    return ObjectSet(features, ids), GroundTruthMetric(matrix, factor)


def sample_triplets(
    objects: ObjectSet,
    metric: GroundTruthMetric,
    count: int,
    seed: int = 0,
    allow_duplicates: bool = True,
) -> TripletPool:
    """Uniformly sampled triplets with ground-truth orderings.

    Index triples are uniform over distinct (anchor, first, second); the
    ordering compares the squared Mahalanobis distances. Exact distance ties
    are rejected and resampled; 1000 consecutive tie rejections indicate a
    degenerate metric and raise.
    """
    if count < 1:
        raise ConfigError(f"triplet count must be >= 1, got {count}")
    n = len(objects)
    if n < 3:
        raise ConfigError("need at least 3 objects")
    rng = np.random.default_rng(seed)
    rows: list[np.ndarray] = []
    codes: list[np.ndarray] = []
    seen: set[tuple[int, int, int]] = set()
    collected = 0
    tie_run = 0
    while collected < count:
        chunk = max(1024, count - collected)
        draw = rng.integers(0, n, size=(chunk, 3))
        distinct = (
            (draw[:, 0] != draw[:, 1])
            & (draw[:, 0] != draw[:, 2])
            & (draw[:, 1] != draw[:, 2])
        )
        draw = draw[distinct]
        if draw.shape[0] == 0:
            continue
        d2_first = metric.pairwise_squared(objects.features, draw[:, 0], draw[:, 1])
        d2_second = metric.pairwise_squared(objects.features, draw[:, 0], draw[:, 2])
        tie = d2_first == d2_second
        # Track the run of consecutive tie rejections across chunk boundaries.
        if tie.all():
            tie_run += int(tie.size)
        else:
            last_ok = int(np.flatnonzero(~tie)[-1])
            tie_run = int(tie.size - 1 - last_ok)
        if tie_run >= 1000:
            raise NumericError("1000 consecutive distance ties; metric looks degenerate")
        draw = draw[~tie]
        code = (d2_second[~tie] < d2_first[~tie]).astype(np.uint8)
        if not allow_duplicates:
            keep = []
            for pos in range(draw.shape[0]):
                key = (int(draw[pos, 0]), int(draw[pos, 1]), int(draw[pos, 2]))
                if key not in seen:
                    seen.add(key)
                    keep.append(pos)
            draw = draw[keep]
            code = code[keep]
        take = min(count - collected, draw.shape[0])
        rows.append(draw[:take])
        codes.append(code[:take])
        collected += take
    return TripletPool(np.concatenate(rows), np.concatenate(codes), provenance="synthetic")


def flip_labels(pool: TripletPool, spec: NoiseSpec) -> TripletPool:
    """Invert exactly floor(rate * len(pool)) stored orderings, chosen
    uniformly without replacement; deterministic per seed."""
    if pool.orderings is None:
        raise ValidationError("pool has no stored orderings to flip")
    n_flip = int(spec.flip_rate * len(pool))
    orderings = pool.orderings.copy()
    if n_flip > 0:
        rng = np.random.default_rng(spec.seed)
        chosen = rng.choice(len(pool), size=n_flip, replace=False)
        orderings[chosen] ^= 1
    return TripletPool(pool.indices.copy(), orderings, provenance=pool.provenance)


def split(
    pool: TripletPool, train_count: int, test_count: int, seed: int = 0
) -> tuple[TripletPool, TripletPool]:
    """Disjoint train/test split by pool position, deterministic per seed."""
    if train_count + test_count > len(pool):
        raise ConfigError(
            f"cannot take {train_count}+{test_count} triplets from a pool of {len(pool)}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pool))
    train_idx = perm[:train_count]
    test_idx = perm[train_count : train_count + test_count]

    def take(which: np.ndarray) -> TripletPool:
        ords = pool.orderings[which] if pool.orderings is not None else None
        return TripletPool(pool.indices[which], ords, provenance=pool.provenance)

    return take(train_idx), take(test_idx)


# ---------------------------------------------------------------------------
# CSV interchange.

def save_features(path, objects: ObjectSet) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id"] + [f"f{i}" for i in range(objects.dim)])
        for i, obj_id in enumerate(objects.ids):
            writer.writerow([obj_id] + [repr(float(v)) for v in objects.features[i]])


def load_features(path) -> ObjectSet:
    """Read a feature CSV; raises ParseError with the offending line number."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row is mandatory") from None
        if not header or header[0] != "id":
            raise ParseError(f"{path}:1: header must start with 'id'")
        expected = ["id"] + [f"f{i}" for i in range(len(header) - 1)]
        if header != expected:
            raise ParseError(f"{path}:1: malformed header {header!r}")
        d = len(header) - 1
        if d == 0:
            raise ParseError(f"{path}:1: no feature columns")
        ids: list[str] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != d + 1:
                raise ParseError(f"{path}:{line_no}: expected {d + 1} fields, got {len(row)}")
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from None
            ids.append(row[0])
            rows.append(values)
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate object ids")
    return ObjectSet(np.array(rows, dtype=np.float64).reshape(len(ids), d), ids)


def save_triplets(path, pool: TripletPool, objects: ObjectSet) -> None:
    with_orderings = pool.orderings is not None
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        header = ["anchor_id", "j_id", "k_id"]
        if with_orderings:
            header.append("ordering")
        writer.writerow(header)
        for i in range(len(pool)):
            a, j, k = pool.indices[i]
            row = [objects.ids[a], objects.ids[j], objects.ids[k]]
            if with_orderings:
                row.append(ORDERING_FROM_CODE[pool.orderings[i]])
            writer.writerow(row)


def load_triplets(path, objects: ObjectSet) -> TripletPool:
    """Read a triplet CSV against an object set; unknown ids, repeated objects
    and bad ordering tokens raise with the offending line number."""
    id_to_index = {obj_id: i for i, obj_id in enumerate(objects.ids)}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row is mandatory") from None
        if header not in (
            ["anchor_id", "j_id", "k_id"],
            ["anchor_id", "j_id", "k_id", "ordering"],
        ):
            raise ParseError(f"{path}:1: malformed header {header!r}")
        with_orderings = len(header) == 4
        rows: list[list[int]] = []
        codes: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                idx = [id_to_index[row[0]], id_to_index[row[1]], id_to_index[row[2]]]
            except KeyError as exc:
                raise ValidationError(f"{path}:{line_no}: unknown object id {exc}") from None
            if len(set(idx)) != 3:
                raise ValidationError(f"{path}:{line_no}: triplet repeats an object")
            if with_orderings:
                if row[3] not in ORDERING_CODES:
                    raise ValidationError(
                        f"{path}:{line_no}: ordering must be 'j' or 'k', got {row[3]!r}"
                    )
                codes.append(ORDERING_CODES[row[3]])
            rows.append(idx)
    orderings = np.array(codes, dtype=np.uint8) if with_orderings else None
    pool = TripletPool(
        np.array(rows, dtype=np.intp).reshape(-1, 3), orderings, provenance="loaded"
    )
    pool.validate(len(objects))
    return pool
