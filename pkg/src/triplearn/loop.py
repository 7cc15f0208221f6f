"""The incremental annotation loop: initial-pool training, per-round batch
selection, oracle answers, warm-start retraining, and bookkeeping.

Labeled/unlabeled membership is tracked by triplet id (row position in the
training pool); triplets move from U to L when answered and are never
duplicated or dropped. Selection and label application are separate steps so
a human-annotation service can drive the same machinery as the in-process
dataset oracle.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .acquisition import RANDOM, AcquisitionConfig, select_batch
from .data import ORDERING_FROM_CODE, TripletPool
from .errors import ConfigError, NumericError, PoolExhaustedError
from .metric import (
    FIRST_CLOSER,
    SECOND_CLOSER,
    EmbeddingModel,
    loss_gradient_arrays,
)
from .nn import AdamState, adam_step, init_params


@dataclass
class TrainBudget:
    """Per-round training effort; minibatch_size None means full batch."""

    epochs_per_round: int = 200
    minibatch_size: int | None = None

    def __post_init__(self):
        if self.epochs_per_round < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs_per_round}")


@dataclass
class LoopState:
    """Everything one active-learning run carries between rounds."""

    pool: TripletPool
    labeled_ids: np.ndarray
    labeled_closer: np.ndarray
    unlabeled_mask: np.ndarray
    model: EmbeddingModel
    round: int
    rng: np.random.Generator

    @property
    def labeled_count(self) -> int:
        return int(self.labeled_ids.shape[0])

    def unlabeled_ids(self) -> np.ndarray:
        return np.flatnonzero(self.unlabeled_mask)

    def labeled_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(anchors, near, far) index arrays over the labeled set."""
        idx = self.pool.indices[self.labeled_ids]
        closer = self.labeled_closer
        near = np.where(closer == 0, idx[:, 1], idx[:, 2])
        far = np.where(closer == 0, idx[:, 2], idx[:, 1])
        return idx[:, 0], near, far


class DatasetOracle:
    """Answers ordering queries from stored pool orderings or a ground-truth
    metric, optionally flipping each answer with an independent coin."""

    def __init__(self, metric=None, features=None, flip_rate: float = 0.0, seed: int = 0,
                 rng: np.random.Generator | None = None):
        if not 0.0 <= flip_rate <= 1.0:
            raise ConfigError(f"flip rate must be in [0, 1], got {flip_rate}")
        if metric is not None and features is None:
            raise ConfigError("metric oracle needs the object features")
        self.metric = metric
        self.features = features
        self.flip_rate = flip_rate
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    def answer(self, pool: TripletPool, triplet_id: int) -> str:
        if self.metric is not None:
            t = pool.triplet(triplet_id)
            d2_first = self.metric.squared_distance(
                self.features[t.anchor], self.features[t.first]
            )
            d2_second = self.metric.squared_distance(
                self.features[t.anchor], self.features[t.second]
            )
            if d2_first == d2_second:
                raise NumericError(
                    f"exact ground-truth tie for triplet {triplet_id}; "
                    "pools must reject ties at construction"
                )
            token = FIRST_CLOSER if d2_first < d2_second else SECOND_CLOSER
        else:
            if pool.orderings is None:
                raise ConfigError("oracle has neither a metric nor stored orderings")
            token = ORDERING_FROM_CODE[pool.orderings[triplet_id]]
        if self.flip_rate > 0.0 and self.rng.random() < self.flip_rate:
            token = SECOND_CLOSER if token == FIRST_CLOSER else FIRST_CLOSER
        return token


def train_model(
    model: EmbeddingModel,
    features: np.ndarray,
    anchors: np.ndarray,
    near: np.ndarray,
    far: np.ndarray,
    budget: TrainBudget,
    learning_rate: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> EmbeddingModel:
    """Train on the given labeled arrays starting from the model's current
    parameters, with a fresh Adam state. Gradients are summed over each batch."""
    params = model.params.copy()
    n = anchors.shape[0]
    if n == 0:
        return EmbeddingModel(params)
    state = AdamState.for_params(params, learning_rate)
    batch = budget.minibatch_size
    for _ in range(budget.epochs_per_round):
        if batch is None or batch >= n:
            grads = loss_gradient_arrays(EmbeddingModel(params), features, anchors, near, far)
            params, state = adam_step(params, grads, state)
        else:
            if rng is None:
                raise ConfigError("minibatch training needs an rng for shuffling")
            perm = rng.permutation(n)
            for start in range(0, n, batch):
                sel = perm[start : start + batch]
                grads = loss_gradient_arrays(
                    EmbeddingModel(params), features, anchors[sel], near[sel], far[sel]
                )
                params, state = adam_step(params, grads, state)
    return EmbeddingModel(params)


def draw_initial_ids(pool_size: int, l: int, rng: np.random.Generator) -> np.ndarray:
    """The l uniform-random triplet ids that seed the labeled set."""
    if l > pool_size:
        raise ConfigError(f"initial pool {l} exceeds unlabeled pool {pool_size}")
    if l == 0:
        return np.zeros(0, dtype=np.intp)
    return rng.choice(pool_size, size=l, replace=False)


def fresh_state(
    features: np.ndarray,
    pool: TripletPool,
    layer_sizes: list[int],
    rng: np.random.Generator,
) -> LoopState:
    """A round-0 state with a freshly initialized, untrained model."""
    if layer_sizes[0] != features.shape[1]:
        raise ConfigError(
            f"network input dim {layer_sizes[0]} does not match features {features.shape[1]}"
        )
    init_seed = int(rng.integers(0, 2**63 - 1))
    model = EmbeddingModel(init_params(layer_sizes, init_seed))
    return LoopState(
        pool=pool,
        labeled_ids=np.zeros(0, dtype=np.intp),
        labeled_closer=np.zeros(0, dtype=np.uint8),
        unlabeled_mask=np.ones(len(pool), dtype=bool),
        model=model,
        round=0,
        rng=rng,
    )


def initialize(
    features: np.ndarray,
    pool: TripletPool,
    l: int,
    budget: TrainBudget,
    oracle: DatasetOracle,
    layer_sizes: list[int],
    rng: np.random.Generator | int,
    learning_rate: float = 1e-4,
) -> LoopState:
    """Label l random triplets and train the initial model from scratch."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    state = fresh_state(features, pool, layer_sizes, rng)
    ids = draw_initial_ids(len(pool), l, rng)
    tokens = [oracle.answer(pool, int(i)) for i in ids]
    return apply_labels_and_train(
        state, features, ids, tokens, budget, learning_rate, advance_round=False
    )


def apply_labels_and_train(
    state: LoopState,
    features: np.ndarray,
    ids: np.ndarray,
    tokens: list[str],
    budget: TrainBudget,
    learning_rate: float = 1e-4,
    advance_round: bool = True,
) -> LoopState:
    """Move answered triplets from U to L and retrain warm-started on all of L.

    Parameters continue from the current model; the Adam state is reset.
    """
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and not state.unlabeled_mask[ids].all():
        raise ConfigError("a submitted triplet is not in the unlabeled pool")
    if len(tokens) != ids.shape[0]:
        raise ConfigError(f"{len(tokens)} labels for {ids.shape[0]} triplets")
    for tok in tokens:
        if tok not in (FIRST_CLOSER, SECOND_CLOSER):
            raise ConfigError(f"bad ordering token {tok!r}")
    codes = np.array(
        [0 if tok == FIRST_CLOSER else 1 for tok in tokens], dtype=np.uint8
    )
    mask = state.unlabeled_mask.copy()
    mask[ids] = False
    new_state = LoopState(
        pool=state.pool,
        labeled_ids=np.concatenate([state.labeled_ids, ids]),
        labeled_closer=np.concatenate([state.labeled_closer, codes]),
        unlabeled_mask=mask,
        model=state.model,
        round=state.round + 1 if advance_round else state.round,
        rng=state.rng,
    )
    anchors, near, far = new_state.labeled_arrays()
    new_state.model = train_model(
        state.model, features, anchors, near, far, budget, learning_rate, rng=state.rng
    )
    return new_state


def select_round_batch(
    state: LoopState, features: np.ndarray, acq: AcquisitionConfig
) -> np.ndarray:
    """Pick the next batch's triplet ids from the unlabeled pool."""
    unlabeled = state.unlabeled_ids()
    if unlabeled.shape[0] < acq.batch_size:
        raise PoolExhaustedError(
            f"unlabeled pool has {unlabeled.shape[0]} triplets, batch needs {acq.batch_size}"
        )
    return select_batch(
        state.model, features, state.pool.indices, unlabeled, acq, rng=state.rng
    )


def run_round(
    state: LoopState,
    features: np.ndarray,
    acq: AcquisitionConfig,
    oracle: DatasetOracle,
    budget: TrainBudget,
    learning_rate: float = 1e-4,
) -> tuple[LoopState, np.ndarray]:
    """One full round: select, annotate, move U to L, retrain warm-started.

    Returns the new state and the selected triplet ids.
    """
    ids = select_round_batch(state, features, acq)
    tokens = [oracle.answer(state.pool, int(i)) for i in ids]
    new_state = apply_labels_and_train(
        state, features, ids, tokens, budget, learning_rate, advance_round=True
    )
    return new_state, ids


@dataclass
class ExperimentConfig:
    """Everything one run needs besides the data and the oracle."""

    layer_sizes: list[int]
    acquisition: AcquisitionConfig
    initial_pool: int
    rounds: int
    budget: TrainBudget = field(default_factory=TrainBudget)
    learning_rate: float = 1e-4
    seed: int = 0


@dataclass
class ExperimentResult:
    """Learning curve plus the audit trail of one run."""

    tga: list[float]
    seconds: list[float]
    selected: list[list[int]]
    state: LoopState


def run_experiment(
    features: np.ndarray,
    train_pool: TripletPool,
    config: ExperimentConfig,
    oracle: DatasetOracle,
    eval_hook: Callable[[LoopState], float],
    record_timing: bool = True,
) -> ExperimentResult:
    """Run initialize plus M rounds; the curve has M+1 entries (one after the
    initial model, then one per round)."""
    if config.rounds * config.acquisition.batch_size + config.initial_pool > len(train_pool):
        raise ConfigError(
            f"{config.rounds} rounds of {config.acquisition.batch_size} plus initial "
            f"{config.initial_pool} exceed the pool of {len(train_pool)}"
        )
    if config.initial_pool == 0 and config.acquisition.strategy != RANDOM:
        raise ConfigError("an empty initial pool is only allowed with random selection")
    rng = np.random.default_rng(config.seed)
    started = time.perf_counter()
    state = initialize(
        features,
        train_pool,
        config.initial_pool,
        config.budget,
        oracle,
        config.layer_sizes,
        rng,
        config.learning_rate,
    )
    tga = [float(eval_hook(state))]
    seconds = [time.perf_counter() - started if record_timing else 0.0]
    selected: list[list[int]] = [[int(i) for i in state.labeled_ids]]
    for _ in range(config.rounds):
        started = time.perf_counter()
        state, ids = run_round(
            state, features, config.acquisition, oracle, config.budget, config.learning_rate
        )
        tga.append(float(eval_hook(state)))
        seconds.append(time.perf_counter() - started if record_timing else 0.0)
        selected.append([int(i) for i in ids])
    return ExperimentResult(tga=tga, seconds=seconds, selected=selected, state=state)
