"""Decentralized federated training: per-CS gradients, synchronous averaging, one global model.

Gradient exchange is simulated in-process. Each epoch every CS computes a
full-batch gradient of its local sum-of-squares loss on the shared model, the
gradients are averaged in a fixed order, and one Adam step updates the model.
"""

from __future__ import annotations

import csv
import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .ingest import EncodedDataset
from .neuralnet import (AdamState, GradientUpdate, ModelParams, adam_step, forward, gradient,
                        init_params, loss)

__all__ = ["GradientUpdate", "FederationConfig", "OverheadLedger", "TrainingRun", "aggregate",
           "train_dfel", "train_centralized", "rmse", "overhead_report", "dropout_seed",
           "write_history", "write_overhead"]

BYTES_PER_SCALAR = 8


@dataclass
class FederationConfig:
    """Network, optimizer and stopping settings plus the per-CS training shards."""

    shards: Mapping[str, EncodedDataset]
    hidden_sizes: tuple[int, ...] = (64, 64)
    dropout_rate: float = 0.15
    epochs_max: int = 200
    convergence_window: int = 5
    convergence_tol: float = 1e-4
    lam: float = 0.01
    gamma_eta: float = 0.9
    gamma_delta: float = 0.999
    epsilon: float = 1e-8
    output_bias_init: str = "label_mean"
    workers: int = 1

    def __post_init__(self):
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")
        if self.output_bias_init not in ("label_mean", "uniform"):
            raise ValueError("output_bias_init must be 'label_mean' or 'uniform'")
        if not self.shards:
            raise ValueError("need at least one shard")
        widths = set()
        for cs, shard in self.shards.items():
            if len(shard) == 0:
                raise ValueError(f"shard {cs!r} is empty")
            widths.add(shard.features.shape[1])
        if len(widths) != 1:
            raise ValueError("shards disagree on feature width")

    @property
    def cs_ids(self) -> list[str]:
        return list(self.shards)

    @property
    def input_width(self) -> int:
        return next(iter(self.shards.values())).features.shape[1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_width, *self.hidden_sizes, 1]

    def adam(self, params: ModelParams) -> AdamState:
        return AdamState.zeros(params, gamma_eta=self.gamma_eta, gamma_delta=self.gamma_delta,
                               lam=self.lam, epsilon=self.epsilon)


@dataclass
class OverheadLedger:
    """Scalars sent per exchange round: every CS uploads one gradient of the model's size."""

    n_cs: int
    n_params: int
    rounds: int = 0
    scalars_per_round: list[int] = field(default_factory=list)
    setup_scalars: int = 0

    def record_round(self) -> None:
        self.rounds += 1
        self.scalars_per_round.append(self.n_cs * self.n_params)

    @property
    def scalars(self) -> int:
        return int(sum(self.scalars_per_round))


@dataclass
class TrainingRun:
    params: ModelParams
    history: list[tuple[int, str, float]]
    ledger: OverheadLedger
    converged: bool

    @property
    def epochs(self) -> int:
        return self.ledger.rounds


def dropout_seed(seed: int, cs_position: int, epoch: int) -> int:
    """Per-CS, per-epoch mask seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, cs_position, epoch]).generate_state(1)[0])


def _init_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(b"init")]).generate_state(1)[0])


def aggregate(updates: Sequence[GradientUpdate], expected_sources: Sequence[str] | None = None
              ) -> np.ndarray:
    """Arithmetic mean of one epoch's local gradients, summed in the given source order.

    ``expected_sources`` enforces the barrier: every listed CS exactly once.
    """
    if not updates:
        raise ValueError("no updates to aggregate")
    sources = [u.source_cs for u in updates]
    if len(set(sources)) != len(sources):
        dup = sorted({s for s in sources if sources.count(s) > 1})
        raise ValueError(f"duplicate updates from {dup}")
    if expected_sources is not None:
        missing = [s for s in expected_sources if s not in sources]
        extra = [s for s in sources if s not in set(expected_sources)]
        if missing or extra:
            raise ValueError(f"barrier not met: missing {missing}, unexpected {extra}")
    epochs = {u.epoch for u in updates}
    if len(epochs) != 1:
        raise ValueError(f"updates span several epochs {sorted(epochs)}")
    shape = updates[0].grads.shape
    total = np.zeros(shape)
    for u in updates:
        if u.grads.shape != shape:
            raise ValueError("gradient shapes differ")
        total = total + u.grads
    return total / len(updates)


def _converged(history: dict[str, list[float]], window: int, tol: float) -> bool:
    for losses in history.values():
        if len(losses) <= window:
            return False
        old, new = losses[-1 - window], losses[-1]
        if not abs(new - old) < tol * max(abs(old), np.finfo(float).tiny):
            return False
    return True


def federated_label_mean(shards: Mapping[str, EncodedDataset]) -> float:
    """Global label mean from each CS's (label sum, row count): two scalars per CS."""
    total = sum(float(np.sum(s.labels)) for s in shards.values())
    count = sum(len(s) for s in shards.values())
    return total / count


def initial_model(config: FederationConfig, seed: int) -> tuple[ModelParams, int]:
    """Seeded uniform initialization; with ``label_mean`` the output bias starts at the
    federated label mean. Returns the model and the setup scalars exchanged."""
    params = init_params(config.layer_sizes, config.dropout_rate, _init_seed(seed))
    if config.output_bias_init == "uniform":
        return params, 0
    params.biases[-1][:] = federated_label_mean(config.shards)
    return params, 2 * len(config.shards)


def train_dfel(config: FederationConfig, seed: int = 0,
               params: ModelParams | None = None) -> TrainingRun:
    """Federated training; stops at ``epochs_max`` or once every local loss has settled.

    The recorded loss of a CS at epoch t is its local loss, dropout off, at the
    model the epoch starts from.
    """
    ids = config.cs_ids
    setup = 0
    if params is None:
        params, setup = initial_model(config, seed)
    state = config.adam(params)
    ledger = OverheadLedger(len(ids), params.size, setup_scalars=setup)
    per_cs: dict[str, list[float]] = {cs: [] for cs in ids}
    history: list[tuple[int, str, float]] = []
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def local(task):
        k, cs, p, epoch = task
        shard = config.shards[cs]
        upd = gradient(p, shard.features, shard.labels, dropout_seed(seed, k, epoch), cs, epoch)
        upd.loss = loss(p, shard.features, shard.labels)
        return upd

    converged = False
    try:
        for epoch in range(1, config.epochs_max + 1):
            tasks = [(k, cs, params, epoch) for k, cs in enumerate(ids)]
            updates = list(pool.map(local, tasks)) if pool else [local(t) for t in tasks]
            for u in updates:
                per_cs[u.source_cs].append(u.loss)
                history.append((epoch, u.source_cs, u.loss))
            ledger.record_round()
            state, params = adam_step(state, params, aggregate(updates, ids))
            if _converged(per_cs, config.convergence_window, config.convergence_tol):
                converged = True
                break
    finally:
        if pool:
            pool.shutdown()
    return TrainingRun(params, history, ledger, converged)


def pool_shards(shards: Mapping[str, EncodedDataset]) -> EncodedDataset:
    parts = list(shards.values())
    return EncodedDataset(np.vstack([s.features for s in parts]),
                          np.concatenate([s.labels for s in parts]), parts[0].layout,
                          np.concatenate([s.cs_ids for s in parts]))


def train_centralized(pooled: EncodedDataset, config: FederationConfig, seed: int = 0) -> TrainingRun:
    """The same network and optimizer on one pooled dataset (a single-shard federation)."""
    if len(pooled) == 0:
        raise ValueError("pooled dataset is empty")
    return train_dfel(replace(config, shards={"pooled": pooled}), seed)


def rmse(model: ModelParams, test: EncodedDataset) -> float:
    if len(test) == 0:
        raise ValueError("test set is empty")
    r = forward(model, test.features) - test.labels
    return float(np.sqrt(np.mean(r * r)))


def overhead_report(ledger: OverheadLedger, shards: Mapping[str, EncodedDataset]) -> dict:
    """Byte counts under this package's own model: 8 bytes per transmitted scalar.

    Federated runs upload one gradient per CS per round; the centralized
    alternative uploads every training row (features plus label) once. The
    few scalars of the output-bias setup are listed apart as ``setup_bytes``.
    """
    federated = ledger.scalars * BYTES_PER_SCALAR
    centralized = sum(len(s) * (s.features.shape[1] + 1) for s in shards.values()) * BYTES_PER_SCALAR
    reduction = 100.0 * (1.0 - federated / centralized) if centralized else float("nan")
    return {"federated_bytes": int(federated), "centralized_bytes": int(centralized),
            "reduction_pct": reduction, "rounds": ledger.rounds, "n_cs": ledger.n_cs,
            "n_params": ledger.n_params, "setup_bytes": ledger.setup_scalars * BYTES_PER_SCALAR,
            "bytes_per_scalar": BYTES_PER_SCALAR,
            "accounting": "artifact byte-count model"}


def write_history(history: Sequence[tuple[int, str, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "cs_id", "loss"])
        for epoch, cs, value in history:
            w.writerow([epoch, cs, repr(float(value))])


def write_overhead(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
