"""Versioned JSON checkpoints for resumable runs.

A checkpoint self-describes one LoopState (pool, labels, model parameters,
RNG state, round counter) plus an optional pending-query map and free-form
metadata. Floats survive the round trip bit-exactly because json uses
shortest-round-trip float formatting.
"""
from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .data import TripletPool
from .errors import ValidationError
from .loop import LoopState
from .metric import EmbeddingModel
from .nn import LayerParams, MLPParams

CHECKPOINT_VERSION = 1


def params_to_jsonable(params: MLPParams) -> list[dict]:
    return [
        {
            "weights": layer.weights.tolist(),
            "biases": layer.biases.tolist(),
            "activation": layer.activation,
        }
        for layer in params.layers
    ]


def params_from_jsonable(blob: list[dict]) -> MLPParams:
    return MLPParams(
        [
            LayerParams(
                np.array(layer["weights"], dtype=np.float64),
                np.array(layer["biases"], dtype=np.float64),
                layer["activation"],
            )
            for layer in blob
        ]
    )


def rng_to_jsonable(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_jsonable(blob: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = blob
    return rng


def state_to_jsonable(state: LoopState) -> dict:
    return {
        "round": state.round,
        "model": params_to_jsonable(state.model.params),
        "pool": {
            "indices": state.pool.indices.tolist(),
            "orderings": None
            if state.pool.orderings is None
            else state.pool.orderings.tolist(),
            "provenance": state.pool.provenance,
        },
        "labeled_ids": state.labeled_ids.tolist(),
        "labeled_closer": state.labeled_closer.tolist(),
        "rng": rng_to_jsonable(state.rng),
    }


def state_from_jsonable(blob: dict) -> LoopState:
    pool = TripletPool(
        np.array(blob["pool"]["indices"], dtype=np.intp).reshape(-1, 3),
        None
        if blob["pool"]["orderings"] is None
        else np.array(blob["pool"]["orderings"], dtype=np.uint8),
        provenance=blob["pool"]["provenance"],
    )
    labeled_ids = np.array(blob["labeled_ids"], dtype=np.intp)
    mask = np.ones(len(pool), dtype=bool)
    mask[labeled_ids] = False
    return LoopState(
        pool=pool,
        labeled_ids=labeled_ids,
        labeled_closer=np.array(blob["labeled_closer"], dtype=np.uint8),
        unlabeled_mask=mask,
        model=EmbeddingModel(params_from_jsonable(blob["model"])),
        round=int(blob["round"]),
        rng=rng_from_jsonable(blob["rng"]),
    )


def save_checkpoint(path, state: LoopState, pending: dict | None = None,
                    meta: dict | None = None) -> None:
    """Atomically write a checkpoint file."""
    blob = {
        "version": CHECKPOINT_VERSION,
        "kind": "triplearn-checkpoint",
        "state": state_to_jsonable(state),
        "pending": pending or {},
        "meta": meta or {},
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(blob, f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[LoopState, dict, dict]:
    """Read a checkpoint; returns (state, pending, meta)."""
    with open(path, "r", encoding="utf-8") as f:
        blob = json.load(f)
    if blob.get("kind") != "triplearn-checkpoint":
        raise ValidationError(f"{path}: not a checkpoint file")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"{path}: unsupported checkpoint version {blob.get('version')!r}"
        )
    return state_from_jsonable(blob["state"]), blob.get("pending", {}), blob.get("meta", {})
