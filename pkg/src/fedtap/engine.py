"""Federated round loop: broadcast, client selection, local training, FedAvg.

The engine is deliberately synchronous: one round = broadcast to everyone,
select floor(p_c * pool) clients, train the selected ones, aggregate in
client-id order. Honest clients are trained in-engine; attacker clients are
driven through agent objects exposing step(ctx).
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import nn
from .data import Dataset
from .nn import LayerSpec, TrainConfig


class ClientKind(Enum):
    HONEST = "honest"
    SENDER = "sender"
    RECEIVER = "receiver"


@dataclass
class ClientHandle:
    id: int
    kind: ClientKind
    train_data: Dataset | None = None
    test_data: Dataset | None = None
    train_cfg: TrainConfig | None = None
    weight: float = 1.0  # FedAvg example count (nominal for attacker clients)


@dataclass
class RoundContext:
    round_index: int
    model: np.ndarray  # broadcast copy (jammed when jamming is active)
    selected: bool


@dataclass
class RoundLog:
    round_index: int
    selected_ids: list[int]
    snapshot_id: str
    wall_time: float
    accuracy: float | None = None
    distances: dict[int, float] | None = None
    outlier_id: int | None = None


@dataclass
class FLSystem:
    spec: list[LayerSpec]
    global_params: np.ndarray
    pool: list[ClientHandle]
    p_c: float
    selection_rng: np.random.Generator
    t: int = 0
    round_logs: list[RoundLog] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.p_c <= 1.0:
            raise ValueError(f"p_c must be in (0, 1], got {self.p_c}")
        ids = [c.id for c in self.pool]
        if len(ids) != len(set(ids)):
            raise ValueError("client ids must be unique")

    def client(self, cid: int) -> ClientHandle:
        for c in self.pool:
            if c.id == cid:
                return c
        raise KeyError(cid)


def snapshot_id(params: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()[:16]


def select_clients(system: FLSystem) -> list[int]:
    """Exactly floor(p_c * pool_size) distinct ids, uniform without replacement."""
    if not system.pool:
        raise ValueError("empty client pool")
    k = int(np.floor(system.p_c * len(system.pool)))
    if k == 0:
        raise ValueError(
            f"floor(p_c * pool) = 0 with p_c={system.p_c}, pool={len(system.pool)}")
    ids = np.array(sorted(c.id for c in system.pool))
    chosen = system.selection_rng.choice(ids, size=k, replace=False)
    return sorted(int(i) for i in chosen)


def aggregate_fedavg(models: list[tuple[np.ndarray, float]]) -> np.ndarray:
    """Elementwise average weighted by example count."""
    if not models:
        raise ValueError("nothing to aggregate")
    total = float(sum(w for _, w in models))
    if total <= 0.0:
        raise ValueError("aggregation weights sum to zero")
    length = models[0][0].shape
    out = np.zeros(length)
    for params, w in models:
        if params.shape != length:
            raise ValueError("parameter vectors differ in length")
        out += (w / total) * params
    return out


def _round_seed(base: int, t: int, cid: int) -> int:
    return ((base * 1_000_003 + t) * 1_000_003 + cid) % (2**63)


def run_round(system: FLSystem, agents: dict | None = None,
              broadcast_fn=None, detect: bool = False,
              accuracy_fn=None) -> RoundLog:
    """Execute one federated round and advance the system in place.

    broadcast_fn, when given, maps the server model to the copy actually
    distributed (used for jamming); the stored global model stays clean.
    Agents receive a step(ctx) call every round, selected or not, because the
    server broadcasts to every client.
    """
    agents = agents or {}
    start = time.perf_counter()
    broadcast = system.global_params if broadcast_fn is None else broadcast_fn(system.global_params)

    selected = select_clients(system)
    selected_set = set(selected)

    uploads: list[tuple[int, np.ndarray, float]] = []
    for client in sorted(system.pool, key=lambda c: c.id):
        is_sel = client.id in selected_set
        if client.id in agents:
            update = agents[client.id].step(
                RoundContext(system.t, broadcast, is_sel))
            if is_sel:
                if update is None:
                    raise RuntimeError(f"selected agent {client.id} returned no model")
                uploads.append((client.id, update, client.weight))
        elif is_sel:
            cfg = client.train_cfg
            per_round = TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate,
                                    _round_seed(cfg.shuffle_seed, system.t, client.id))
            local = nn.train_local(broadcast, system.spec, client.train_data, per_round)
            uploads.append((client.id, local, client.weight))

    distances = None
    outlier = None
    if detect and len(uploads) >= 2:
        from .defense import detect_outlier
        record = detect_outlier([(cid, p) for cid, p, _ in uploads],
                                system.global_params, round_index=system.t)
        distances = record.distances
        outlier = record.outlier_id

    system.global_params = aggregate_fedavg([(p, w) for _, p, w in uploads])
    log = RoundLog(
        round_index=system.t,
        selected_ids=selected,
        snapshot_id=snapshot_id(system.global_params),
        wall_time=time.perf_counter() - start,
        accuracy=None if accuracy_fn is None else accuracy_fn(system),
        distances=distances,
        outlier_id=outlier,
    )
    system.round_logs.append(log)
    system.t += 1
    return log


def pretrain(system: FLSystem, rounds: int, accuracy_fn=None) -> FLSystem:
    """Run honest-only warmup rounds before any attacker joins."""
    if any(c.kind is not ClientKind.HONEST for c in system.pool):
        raise ValueError("pretrain expects an honest-only pool")
    for _ in range(rounds):
        run_round(system, accuracy_fn=accuracy_fn)
    return system
