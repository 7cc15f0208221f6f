"""Evaluation harness: triplet generalization accuracy, multi-seed experiment
grids, and machine-readable learning-curve tables.

TGA is the fraction of held-out triplets whose ordering the model preserves;
exact squared-distance ties earn half credit. Grids sweep cells of
(strategy, batch size, initial pool, noise rate, ...) over explicit seed
lists; each (cell, seed) run resamples pools, flips labels, and runs the
full loop, so one seed with one cell reproduces a direct run exactly.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionConfig
from .data import (
    NoiseSpec,
    ObjectSet,
    TripletPool,
    flip_labels,
    generate_synthetic,
    load_features,
    load_triplets,
    sample_triplets,
    split,
)
from .errors import ConfigError, ContractError
from .loop import (
    DatasetOracle,
    ExperimentConfig,
    TrainBudget,
    run_experiment,
)
from .metric import EmbeddingModel, batch_squared_distances, embed_all

log = logging.getLogger(__name__)

TIE_EPS = 1e-12
CURVE_HEADER = [
    "strategy",
    "batch_size",
    "initial_pool",
    "noise_rate",
    "seed",
    "round",
    "labeled_count",
    "tga",
    "seconds",
]


def compute_tga(model: EmbeddingModel, features: np.ndarray, test_pool: TripletPool) -> float:
    """Fraction of test triplets whose ordering the model reproduces.

    Exact ties (squared-distance difference below 1e-12) count 0.5.
    """
    if len(test_pool) == 0:
        raise ContractError("empty test pool")
    if test_pool.orderings is None:
        raise ContractError("test pool has no stored orderings")
    table = embed_all(model, features)
    idx = test_pool.indices
    d2_first = batch_squared_distances(table, idx[:, 0], idx[:, 1])
    d2_second = batch_squared_distances(table, idx[:, 0], idx[:, 2])
    diff = d2_second - d2_first
    predicts_first = diff > 0.0
    stored_first = test_pool.orderings == 0
    credit = np.where(
        np.abs(diff) < TIE_EPS, 0.5, (predicts_first == stored_first).astype(np.float64)
    )
    return float(credit.mean())


# ---------------------------------------------------------------------------
# Grid definitions.

@dataclass
class SyntheticDataset:
    """Standard-normal objects with a random Mahalanobis ground truth; pools
    are resampled and resplit per run seed, the objects stay fixed."""

    n: int = 100
    d: int = 10
    seed: int = 0
    pool_size: int = 40000
    train_count: int = 20000
    test_count: int = 20000


@dataclass
class FileDataset:
    """Precomputed features and triplet files; pools are fixed across seeds."""

    features: str
    train_triplets: str
    test_triplets: str


@dataclass
class GridCell:
    strategy: str
    batch_size: int
    initial_pool: int
    noise_rate: float = 0.0
    mu: float = 0.05
    rounds: int = 10
    epochs: int = 200
    oversample: int | None = None
    informativeness: str = "uncertainty"
    diversity: str = "gradient"
    learning_rate: float = 1e-4
    layer_sizes: list[int] | None = None
    fps_candidates: int | None = None
    name: str | None = None

    def label(self) -> str:
        return self.name if self.name is not None else self.strategy


@dataclass
class ExperimentGrid:
    dataset: SyntheticDataset | FileDataset
    cells: list[GridCell]
    seeds: list[int]

    def __post_init__(self):
        if not self.cells:
            raise ConfigError("grid needs at least one cell")
        if not self.seeds:
            raise ConfigError("grid needs at least one seed")


@dataclass
class TGARecord:
    strategy: str
    batch_size: int
    initial_pool: int
    noise_rate: float
    seed: int
    round: int
    labeled_count: int
    tga: float
    seconds: float


@dataclass
class GridResult:
    records: list[TGARecord]
    failures: list[str] = field(default_factory=list)
    selections: dict = field(default_factory=dict)


def derive_seeds(run_seed: int, n: int) -> list[int]:
    """Independent child seeds for the stages of one run."""
    return [int(s) for s in np.random.SeedSequence(run_seed).generate_state(n, dtype=np.uint64)]


def prepare_pools(
    dataset: SyntheticDataset | FileDataset, run_seed: int
) -> tuple[ObjectSet, TripletPool, TripletPool]:
    """Objects plus clean train/test pools for one run seed."""
    if isinstance(dataset, SyntheticDataset):
        objects, metric = generate_synthetic(dataset.n, dataset.d, dataset.seed)
        sample_seed, split_seed = derive_seeds(run_seed, 2)
        pool = sample_triplets(objects, metric, dataset.pool_size, sample_seed)
        train_pool, test_pool = split(pool, dataset.train_count, dataset.test_count, split_seed)
        return objects, train_pool, test_pool
    objects = load_features(dataset.features)
    train_pool = load_triplets(dataset.train_triplets, objects)
    test_pool = load_triplets(dataset.test_triplets, objects)
    return objects, train_pool, test_pool


def run_cell(
    dataset: SyntheticDataset | FileDataset,
    cell: GridCell,
    run_seed: int,
    record_timing: bool = True,
) -> tuple[list[TGARecord], list[list[int]]]:
    """One (cell, seed) experiment; returns its records and selection audit."""
    objects, train_pool, test_pool = prepare_pools(dataset, run_seed)
    _, _, flip_seed, exp_seed = derive_seeds(run_seed, 4)
    if cell.noise_rate > 0.0:
        train_pool = flip_labels(train_pool, NoiseSpec(cell.noise_rate, flip_seed))
    layer_sizes = cell.layer_sizes or [objects.dim, 10, 20, 10]
    acq = AcquisitionConfig(
        batch_size=cell.batch_size,
        oversample_size=cell.oversample,
        mu=cell.mu,
        informativeness=cell.informativeness,
        diversity=cell.diversity,
        strategy=cell.strategy,
        fps_candidates=cell.fps_candidates,
    )
    config = ExperimentConfig(
        layer_sizes=layer_sizes,
        acquisition=acq,
        initial_pool=cell.initial_pool,
        rounds=cell.rounds,
        budget=TrainBudget(epochs_per_round=cell.epochs),
        learning_rate=cell.learning_rate,
        seed=exp_seed,
    )
    oracle = DatasetOracle()
    features = objects.features

    def eval_hook(state) -> float:
        return compute_tga(state.model, features, test_pool)

    result = run_experiment(
        features, train_pool, config, oracle, eval_hook, record_timing=record_timing
    )
    records = []
    for rnd, (tga, secs) in enumerate(zip(result.tga, result.seconds)):
        records.append(
            TGARecord(
                strategy=cell.label(),
                batch_size=cell.batch_size,
                initial_pool=cell.initial_pool,
                noise_rate=cell.noise_rate,
                seed=run_seed,
                round=rnd,
                labeled_count=cell.initial_pool + rnd * cell.batch_size,
                tga=tga,
                seconds=secs,
            )
        )
    return records, result.selected


def run_grid(grid: ExperimentGrid, record_timing: bool = True) -> GridResult:
    """All cells crossed with all seeds; a failing cell is recorded and the
    grid continues. Records are ordered by (cell, seed, round)."""
    out = GridResult(records=[])
    for cell_index, cell in enumerate(grid.cells):
        for seed in grid.seeds:
            try:
                records, selected = run_cell(grid.dataset, cell, seed, record_timing)
            except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                msg = f"cell {cell_index} ({cell.label()}) seed {seed}: {exc}"
                log.error("grid cell failed: %s", msg)
                out.failures.append(msg)
                continue
            out.records.extend(records)
            out.selections[(cell_index, seed)] = selected
    return out


def summarize(records: list[TGARecord]) -> list[dict]:
    """Per-cell learning-curve statistics over seeds (mean and population
    stddev of TGA at each round)."""
    cells: dict[tuple, dict[int, list[float]]] = {}
    for rec in records:
        key = (rec.strategy, rec.batch_size, rec.initial_pool, rec.noise_rate)
        cells.setdefault(key, {}).setdefault(rec.round, []).append(rec.tga)
    out = []
    for key in sorted(cells, key=str):
        rounds = sorted(cells[key])
        values = [cells[key][r] for r in rounds]
        out.append(
            {
                "strategy": key[0],
                "batch_size": key[1],
                "initial_pool": key[2],
                "noise_rate": key[3],
                "rounds": rounds,
                "mean": [float(np.mean(v)) for v in values],
                "std": [float(np.std(v)) for v in values],
                "seeds_per_round": [len(v) for v in values],
            }
        )
    return out


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_curves(records: list[TGARecord], path) -> None:
    """Write the curve table; floats carry 17 significant digits so parsing
    recovers them bit-exactly."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.strategy,
                    r.batch_size,
                    r.initial_pool,
                    _fmt(r.noise_rate),
                    r.seed,
                    r.round,
                    r.labeled_count,
                    _fmt(r.tga),
                    _fmt(r.seconds),
                ]
            )


def load_curves(path) -> list[TGARecord]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != CURVE_HEADER:
            raise ConfigError(f"{path}: unexpected curve header {header!r}")
        out = []
        for row in reader:
            out.append(
                TGARecord(
                    strategy=row[0],
                    batch_size=int(row[1]),
                    initial_pool=int(row[2]),
                    noise_rate=float(row[3]),
                    seed=int(row[4]),
                    round=int(row[5]),
                    labeled_count=int(row[6]),
                    tga=float(row[7]),
                    seconds=float(row[8]),
                )
            )
    return out


# ---------------------------------------------------------------------------
# Config-file plumbing for the CLI.

def grid_from_config(blob: dict) -> ExperimentGrid:
    ds = blob.get("dataset", {})
    kind = ds.get("kind", "synthetic")
    if kind == "synthetic":
        dataset = SyntheticDataset(
            n=ds.get("n", 100),
            d=ds.get("d", 10),
            seed=ds.get("seed", 0),
            pool_size=ds.get("pool_size", 40000),
            train_count=ds.get("train_count", 20000),
            test_count=ds.get("test_count", 20000),
        )
    elif kind == "files":
        dataset = FileDataset(
            features=ds["features"],
            train_triplets=ds["train_triplets"],
            test_triplets=ds["test_triplets"],
        )
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    cells = []
    for c in blob.get("cells", []):
        cells.append(
            GridCell(
                strategy=c["strategy"],
                batch_size=c["batch_size"],
                initial_pool=c["initial_pool"],
                noise_rate=c.get("noise_rate", 0.0),
                mu=c.get("mu", 0.05),
                rounds=c.get("rounds", 10),
                epochs=c.get("epochs", 200),
                oversample=c.get("oversample"),
                informativeness=c.get("informativeness", "uncertainty"),
                diversity=c.get("diversity", "gradient"),
                learning_rate=c.get("learning_rate", 1e-4),
                layer_sizes=c.get("layer_sizes"),
                fps_candidates=c.get("fps_candidates"),
                name=c.get("name"),
            )
        )
    return ExperimentGrid(dataset=dataset, cells=cells, seeds=list(blob.get("seeds", [0])))


def apply_overrides(grid: ExperimentGrid, overrides: dict) -> ExperimentGrid:
    """Apply flat CLI overrides; cell-level keys hit every cell."""
    cells = grid.cells
    cell_keys = {
        "strategy",
        "batch_size",
        "initial_pool",
        "noise_rate",
        "mu",
        "rounds",
        "epochs",
        "oversample",
        "informativeness",
        "diversity",
        "learning_rate",
    }
    updates = {k: v for k, v in overrides.items() if k in cell_keys and v is not None}
    if updates:
        cells = [replace(c, **updates) for c in cells]
    seeds = grid.seeds
    if overrides.get("seeds") is not None:
        seeds = list(overrides["seeds"])
    elif overrides.get("seed") is not None:
        seeds = [overrides["seed"]]
    return ExperimentGrid(dataset=grid.dataset, cells=cells, seeds=seeds)
