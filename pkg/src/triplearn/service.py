"""Annotation service: exposes the loop's pending triplet queries over HTTP
so a human can supply orderings, and persists everything needed to survive a
restart mid-round.

One session drives one experiment. The initial pool is served as the round-0
batch; answering the last query of a batch flips the session to ``training``,
a worker retrains, evaluates, selects the next batch, checkpoints, and the
session returns to ``awaiting_labels`` (or ``finished`` after the last
round). Every answer is flushed to an append-only NDJSON log before it is
acknowledged; on restart the pending set is recomputed as the checkpointed
batch minus the logged answers.
"""
from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .acquisition import AcquisitionConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import ObjectSet, TripletPool, load_features, load_triplets
from .errors import ConfigError
from .evaluation import compute_tga
from .loop import (
    LoopState,
    TrainBudget,
    apply_labels_and_train,
    draw_initial_ids,
    fresh_state,
    select_round_batch,
)

AWAITING = "awaiting_labels"
TRAINING = "training"
FINISHED = "finished"


class SessionCreateRequest(BaseModel):
    features_csv: str
    train_triplets_csv: str
    test_triplets_csv: str | None = None
    initial_pool: int = 5
    batch_size: int = 5
    rounds: int = 2
    strategy: str = "decorrelated"
    informativeness: str = "uncertainty"
    diversity: str = "gradient"
    mu: float = 0.05
    oversample: int | None = None
    epochs: int = 50
    learning_rate: float = 1e-4
    layer_sizes: list[int] | None = None
    seed: int = 0
    session_id: str | None = None
    assets: dict[str, str] | None = None


class AnswerRequest(BaseModel):
    query_id: str
    ordering: Literal["j", "k"]


def _query_id(round_no: int, triplet_id: int) -> str:
    return f"r{round_no}-t{triplet_id}"


@dataclass
class Session:
    session_id: str
    directory: str
    config: dict
    objects: ObjectSet
    test_pool: TripletPool | None
    state: LoopState
    pending: dict[str, int]
    batch_order: list[str]
    batch_round: int
    answered: dict[str, str] = field(default_factory=dict)
    status: str = AWAITING
    tga_curve: list[float] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    log_seq: int = 0

    # -- persistence ------------------------------------------------------

    @property
    def log_path(self) -> str:
        return os.path.join(self.directory, "labels.ndjson")

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(self.directory, "checkpoint.json")

    def append_label(self, query_id: str, ordering: str) -> None:
        """Durably log one answer before it is acknowledged."""
        triplet_id = self.pending[query_id]
        entry = {
            "session_id": self.session_id,
            "query_id": query_id,
            "seq": self.log_seq,
            "triplet": [int(v) for v in self.state.pool.indices[triplet_id]],
            "ordering": ordering,
            "unix_time": time.time(),
        }
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry) + "\n")
            f.flush()
            os.fsync(f.fileno())
        self.log_seq += 1

    def write_checkpoint(self) -> None:
        save_checkpoint(
            self.checkpoint_path,
            self.state,
            pending={qid: int(tid) for qid, tid in self.pending.items()},
            meta={
                "batch_order": self.batch_order,
                "batch_round": self.batch_round,
                "tga_curve": self.tga_curve,
                "status": FINISHED if self.status == FINISHED else AWAITING,
                "log_seq": self.log_seq,
            },
        )

    # -- loop plumbing -----------------------------------------------------

    def acquisition_config(self) -> AcquisitionConfig:
        c = self.config
        return AcquisitionConfig(
            batch_size=c["batch_size"],
            oversample_size=c.get("oversample"),
            mu=c.get("mu", 0.05),
            informativeness=c.get("informativeness", "uncertainty"),
            diversity=c.get("diversity", "gradient"),
            strategy=c.get("strategy", "decorrelated"),
        )

    def budget(self) -> TrainBudget:
        return TrainBudget(epochs_per_round=self.config.get("epochs", 50))

    def evaluate(self) -> float | None:
        if self.test_pool is None:
            return None
        return compute_tga(self.state.model, self.objects.features, self.test_pool)

    def train_and_advance(self) -> None:
        """Worker body: fold the answered batch in, retrain, pick the next
        batch, checkpoint, and reopen the session (or finish)."""
        ids = [self.pending[qid] for qid in self.batch_order]
        tokens = [self.answered[qid] for qid in self.batch_order]
        new_state = apply_labels_and_train(
            self.state,
            self.objects.features,
            np.array(ids, dtype=np.intp),
            tokens,
            self.budget(),
            self.config.get("learning_rate", 1e-4),
            advance_round=self.batch_round > 0,
        )
        tga = None
        if self.test_pool is not None:
            tga = compute_tga(new_state.model, self.objects.features, self.test_pool)
        rounds = self.config["rounds"]
        if new_state.round >= rounds:
            next_pending: dict[str, int] = {}
            next_order: list[str] = []
            next_round = self.batch_round
            next_status = FINISHED
        else:
            next_round = new_state.round + 1
            batch = select_round_batch(new_state, self.objects.features, self.acquisition_config())
            next_order = [_query_id(next_round, int(t)) for t in batch]
            next_pending = {qid: int(t) for qid, t in zip(next_order, batch)}
            next_status = AWAITING
        with self.lock:
            self.state = new_state
            if tga is not None:
                self.tga_curve.append(tga)
            self.pending = next_pending
            self.batch_order = next_order
            self.batch_round = next_round
            self.answered = {}
            self.status = next_status
            self.write_checkpoint()

    def start_training_worker(self) -> None:
        threading.Thread(target=self.train_and_advance, daemon=True).start()

    # -- views -------------------------------------------------------------

    def _object_payload(self, index: int) -> dict:
        obj_id = self.objects.ids[index]
        asset = None
        if self.config.get("assets"):
            asset = self.config["assets"].get(obj_id)
        return {
            "id": obj_id,
            "features": [float(v) for v in self.objects.features[index]],
            "asset": asset,
        }

    def pending_view(self) -> dict:
        queries = []
        for qid in self.batch_order:
            if qid in self.answered:
                continue
            a, j, k = self.state.pool.indices[self.pending[qid]]
            queries.append(
                {
                    "query_id": qid,
                    "anchor": self._object_payload(int(a)),
                    "option_j": self._object_payload(int(j)),
                    "option_k": self._object_payload(int(k)),
                }
            )
        return {"status": self.status, "round": self.batch_round, "queries": queries}

    def status_view(self) -> dict:
        tga = self.tga_curve[-1] if self.tga_curve else None
        return {
            "session_id": self.session_id,
            "status": self.status,
            "round": self.state.round,
            "labeled_count": self.state.labeled_count,
            "pending_count": len(self.batch_order) - len(self.answered),
            "tga": tga,
            "tga_curve": list(self.tga_curve),
        }


class SessionStore:
    """Creates sessions, reloads them from disk, and owns the id registry."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()

    def create(self, req: SessionCreateRequest) -> Session:
        session_id = req.session_id or uuid.uuid4().hex[:12]
        directory = os.path.join(self.root, session_id)
        if os.path.exists(directory):
            raise ConfigError(f"session {session_id} already exists")
        os.makedirs(directory)
        objects = load_features(req.features_csv)
        train_pool = load_triplets(req.train_triplets_csv, objects)
        test_pool = None
        if req.test_triplets_csv:
            test_pool = load_triplets(req.test_triplets_csv, objects)
        config = req.model_dump()
        layer_sizes = config.get("layer_sizes") or [objects.dim, 10, 20, 10]
        config["layer_sizes"] = layer_sizes
        rng = np.random.default_rng(req.seed)
        state = fresh_state(objects.features, train_pool, layer_sizes, rng)
        initial = draw_initial_ids(len(train_pool), req.initial_pool, rng)
        batch_order = [_query_id(0, int(t)) for t in initial]
        session = Session(
            session_id=session_id,
            directory=directory,
            config=config,
            objects=objects,
            test_pool=test_pool,
            state=state,
            pending={qid: int(t) for qid, t in zip(batch_order, initial)},
            batch_order=batch_order,
            batch_round=0,
        )
        with open(os.path.join(directory, "session.json"), "w", encoding="utf-8") as f:
            json.dump({"session_id": session_id, "config": config}, f)
        session.write_checkpoint()
        with self.lock:
            self.sessions[session_id] = session
        return session

    def load(self, session_id: str) -> Session:
        """Rebuild a session from its directory: checkpoint plus label log."""
        with self.lock:
            return self._load_locked(session_id)

    def _load_locked(self, session_id: str) -> Session:
        directory = os.path.join(self.root, session_id)
        with open(os.path.join(directory, "session.json"), "r", encoding="utf-8") as f:
            meta = json.load(f)
        config = meta["config"]
        objects = load_features(config["features_csv"])
        test_pool = None
        if config.get("test_triplets_csv"):
            test_pool = load_triplets(config["test_triplets_csv"], objects)
        state, pending, ckpt_meta = load_checkpoint(os.path.join(directory, "checkpoint.json"))
        session = Session(
            session_id=session_id,
            directory=directory,
            config=config,
            objects=objects,
            test_pool=test_pool,
            state=state,
            pending={qid: int(t) for qid, t in pending.items()},
            batch_order=list(ckpt_meta.get("batch_order", [])),
            batch_round=int(ckpt_meta.get("batch_round", 0)),
            tga_curve=list(ckpt_meta.get("tga_curve", [])),
            log_seq=int(ckpt_meta.get("log_seq", 0)),
        )
        if ckpt_meta.get("status") == FINISHED:
            session.status = FINISHED
        log_path = session.log_path
        if os.path.exists(log_path):
            with open(log_path, "r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    qid = entry["query_id"]
                    if qid in session.pending and qid not in session.answered:
                        session.answered[qid] = entry["ordering"]
                    session.log_seq = max(session.log_seq, entry["seq"] + 1)
        self.sessions[session_id] = session
        if (
            session.status == AWAITING
            and session.batch_order
            and len(session.answered) == len(session.batch_order)
        ):
            # Crashed between the last ack and the end of retraining: redo it.
            session.status = TRAINING
            session.start_training_worker()
        return session

    def get(self, session_id: str) -> Session:
        with self.lock:
            if session_id in self.sessions:
                return self.sessions[session_id]
            directory = os.path.join(self.root, session_id)
            if os.path.isdir(directory):
                return self._load_locked(session_id)
        raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")


def create_app(root: str) -> FastAPI:
    app = FastAPI(title="triplearn annotation service")
    store = SessionStore(root)
    app.state.store = store

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/sessions", status_code=201)
    def create_session(req: SessionCreateRequest):
        try:
            session = store.create(req)
        except (ConfigError, FileNotFoundError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        with session.lock:
            view = session.status_view()
        return view

    @app.get("/sessions/{session_id}/pending")
    def get_pending(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return session.pending_view()

    @app.post("/sessions/{session_id}/answers")
    def post_answer(session_id: str, req: AnswerRequest):
        session = store.get(session_id)
        with session.lock:
            if req.query_id in session.answered:
                raise HTTPException(status_code=409, detail="already answered; first answer wins")
            if req.query_id not in session.pending or session.status != AWAITING:
                raise HTTPException(status_code=404, detail=f"unknown query {req.query_id!r}")
            session.append_label(req.query_id, req.ordering)
            session.answered[req.query_id] = req.ordering
            remaining = len(session.batch_order) - len(session.answered)
            if remaining == 0:
                session.status = TRAINING
                session.start_training_worker()
            return {"remaining": remaining, "status": session.status}

    @app.get("/sessions/{session_id}/status")
    def get_status(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return session.status_view()

    return app
