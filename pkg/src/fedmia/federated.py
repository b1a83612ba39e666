"""In-process federated-averaging simulation plus the centralized baseline.

Each round the server hands the current global parameters to every
client, each client runs its local epochs on its own shard, and the
returned parameters are combined by a sample-count-weighted average.
Clients are simulated in-process; per-(round, client) seeds make the
result independent of execution order.
"""

import os
from dataclasses import dataclass, replace

from .data import LabeledDataset, partition_disjoint
from .errors import InputError, ShapeError
from .nn import ModelParams, ModelSpec, TrainConfig, init_params, save_params, train
from .seeding import derive_seed


@dataclass(frozen=True)
class FLConfig:
    """Client count, round count, local training settings, architecture."""

    n_clients: int
    rounds: int
    local: TrainConfig
    model: ModelSpec
    seed: int

    def __post_init__(self):
        if self.n_clients < 1:
            raise InputError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.rounds < 1:
            raise InputError(f"rounds must be >= 1, got {self.rounds}")


@dataclass
class RoundUpdate:
    """One client's locally trained parameters for a round."""

    client_id: int
    params: ModelParams
    sample_count: int


def client_seed(master_seed: int, round_index: int, client_id: int) -> int:
    """Seed for one client's local training in one round."""
    return derive_seed(master_seed, "round", round_index, "client", client_id)


def initial_params(cfg: FLConfig) -> ModelParams:
    """The round-zero global model, derived from the run's master seed."""
    return init_params(cfg.model, derive_seed(cfg.seed, "init"))


def aggregation_weights(updates: list) -> list:
    """Normalized per-update weights (ascending client_id order)."""
    if not updates:
        raise InputError("aggregation_weights needs at least one update")
    ordered = sorted(updates, key=lambda u: u.client_id)
    total = sum(u.sample_count for u in ordered)
    if total <= 0:
        raise InputError(f"total sample count must be positive, got {total}")
    return [u.sample_count / total for u in ordered]


def federated_average(updates: list) -> ModelParams:
    """Elementwise weighted mean of client parameters.

    Weights are sample_count / total samples; updates are reduced in
    ascending client_id order, so the result does not depend on the
    order of the input list. If every update carries identical
    parameters the average equals them exactly.
    """
    if not updates:
        raise InputError("federated_average needs at least one update")
    updates = sorted(updates, key=lambda u: u.client_id)
    shapes = [tuple((w.shape, b.shape) for w, b in u.params.layers) for u in updates]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ShapeError("updates carry incompatible parameter shapes")
    if len(updates) == 1:
        return updates[0].params.copy()
    total = sum(u.sample_count for u in updates)
    if total <= 0:
        raise InputError(f"total sample count must be positive, got {total}")
    base = updates[0].params
    # base + sum(w_i * (P_i - base)) keeps the all-identical case exact.
    merged = base.copy()
    for u in updates[1:]:
        weight = u.sample_count / total
        for (mw, mb), (uw, ub), (bw, bb) in zip(merged.layers, u.params.layers, base.layers):
            mw += weight * (uw - bw)
            mb += weight * (ub - bb)
    return merged


def run_round(
    global_params: ModelParams,
    shards: list,
    cfg: FLConfig,
    round_index: int = 0,
) -> ModelParams:
    """One protocol round: distribute, train locally, aggregate."""
    if len(shards) != cfg.n_clients:
        raise InputError(f"{len(shards)} shards for {cfg.n_clients} clients")
    updates = []
    for cid, shard in enumerate(shards):
        local_cfg = replace(cfg.local, seed=client_seed(cfg.seed, round_index, cid))
        local = train(global_params, shard, local_cfg)
        updates.append(RoundUpdate(client_id=cid, params=local, sample_count=len(shard)))
    return federated_average(updates)


def train_federated(
    dataset: LabeledDataset,
    cfg: FLConfig,
    checkpoint_dir=None,
) -> ModelParams:
    """Partition the dataset and run cfg.rounds federated rounds.

    With checkpoint_dir set, the global model after each round is saved
    as round_NNNN.params in that directory.
    """
    if len(dataset) < cfg.n_clients:
        raise InputError(f"dataset size {len(dataset)} < n_clients {cfg.n_clients}")
    shards = partition_disjoint(dataset, cfg.n_clients, derive_seed(cfg.seed, "partition"))
    params = initial_params(cfg)
    for r in range(cfg.rounds):
        params = run_round(params, shards, cfg, round_index=r)
        if checkpoint_dir is not None:
            save_params(params, os.path.join(checkpoint_dir, f"round_{r:04d}.params"))
    return params


def train_centralized(
    dataset: LabeledDataset,
    cfg: FLConfig,
    checkpoint_dir=None,
) -> ModelParams:
    """Baseline: one model trained local.epochs * rounds epochs centrally.

    Uses the same seeded data permutation, initialization, and per-round
    seed schedule as the federated path, so a single-client federated
    run reproduces it bit-for-bit.
    """
    if len(dataset) == 0:
        raise InputError("cannot train on an empty dataset")
    whole = partition_disjoint(dataset, 1, derive_seed(cfg.seed, "partition"))[0]
    params = initial_params(cfg)
    for r in range(cfg.rounds):
        local_cfg = replace(cfg.local, seed=client_seed(cfg.seed, r, 0))
        params = train(params, whole, local_cfg)
        if checkpoint_dir is not None:
            save_params(params, os.path.join(checkpoint_dir, f"round_{r:04d}.params"))
    return params
