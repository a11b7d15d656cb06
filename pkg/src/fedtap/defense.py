"""Server-side defenses: accuracy monitoring, L2 anomaly detection, jamming."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .engine import ClientKind, FLSystem


@dataclass
class DetectionRecord:
    round_index: int
    distances: dict[int, float]  # anomaly score per uploading client
    outlier_id: int
    max_distance: float
    is_true_positive: bool | None = None


def monitor_accuracy(system: FLSystem, trusted_client_id: int) -> float:
    """Accuracy of the current global model on the trusted client's test shard.

    Read-only: neither the system nor the shard is modified.
    """
    client = system.client(trusted_client_id)
    if client.kind is not ClientKind.HONEST:
        raise ValueError(f"trusted client {trusted_client_id} is not honest")
    if client.test_data is None or len(client.test_data) == 0:
        raise ValueError(f"trusted client {trusted_client_id} has no test shard")
    return nn.accuracy(system.global_params, system.spec, client.test_data)


def detect_outlier(local_models: list[tuple[int, np.ndarray]],
                   global_params: np.ndarray,
                   round_index: int = 0,
                   sender_id: int | None = None) -> DetectionRecord:
    """Tag the uploading client whose model is farthest (L2) from the global.

    Ties resolve to the lowest client id.
    """
    if len(local_models) < 2:
        raise ValueError("need at least two local models to rank an outlier")
    distances = {int(cid): nn.param_distance(params, global_params)
                 for cid, params in local_models}
    outlier = max(sorted(distances), key=lambda cid: distances[cid])
    return DetectionRecord(
        round_index=round_index,
        distances=distances,
        outlier_id=outlier,
        max_distance=distances[outlier],
        is_true_positive=None if sender_id is None else outlier == sender_id,
    )


def jam(global_params: np.ndarray, sigma: float,
        rng: np.random.Generator) -> np.ndarray:
    """Broadcast-side Gaussian perturbation of the global model."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return global_params.copy()
    return global_params + rng.normal(0.0, sigma, size=global_params.shape)
