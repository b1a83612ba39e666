"""Experiment configuration, orchestration, and CSV reporting.

A run sweeps (seed x training mode x attack mode) cells over one
dataset. Per seed, the source data is carved into three disjoint slices
in a fixed order: the non-member pool first, the master shadow pool
second, the target training set last. Shadow models and attack models
depend only on the seed (never on the target), so they are built once
per seed and reused across training modes.

Config files are flat `key = value` text; `#` starts a comment line and
unknown keys are rejected. See DEFAULTS for the full key list.
"""

import csv
import io
import math
from dataclasses import dataclass, fields

import numpy as np

from . import attack as attack_mod
from . import nn
from .data import DistributionSpec, LabeledDataset, load_cifar_binary, load_idx, synthesize_gaussian
from .errors import ConfigError, InputError
from .federated import FLConfig, train_centralized, train_federated
from .seeding import derive_seed
from .shadow import train_shadows
from .data import sample_shadow_datasets

RESULT_COLUMNS = (
    "dataset", "training_mode", "n_clients", "attack_mode", "batch_size", "seed",
    "target_train_acc", "target_test_acc", "attack_accuracy", "advantage",
)

DEFAULTS = {
    "name": "",                      # row label; defaults to the dataset kind
    "dataset": "synthetic",          # synthetic | idx | cifar10 | cifar100
    "classes": "10",                 # synthetic only
    "dim": "16",
    "means_seed": "2024",
    "spread": "0.5",
    "idx_images": "",                # idx only
    "idx_labels": "",
    "cifar_files": "",               # cifar only; comma-separated paths
    "target_train_size": "1000",
    "nonmember_size": "1000",
    "shadow_master_size": "2000",
    "training_modes": "centralized",
    "rounds": "5",
    "local_epochs": "40",
    "train_batch_size": "32",
    "learning_rate": "0.5",
    "hidden_dims": "64",
    "shadow_count": "8",
    "shadow_size": "1000",
    "shadow_train_fraction": "0.5",
    "shadow_epochs": "",             # blank -> rounds * local_epochs
    "attack_modes": "samplewise,batchwise:32",
    "attack_epochs": "100",
    "attack_learning_rate": "0.5",
    "attack_batch_size": "128",
    "attack_hidden": "0",            # 0 -> logistic regression
    "seeds": "1,2,3,4,5",
    "output": "results.csv",
}


@dataclass(frozen=True)
class TrainingMode:
    """Centralized, or federated with a client count."""

    kind: str
    n_clients: int | None = None

    def __post_init__(self):
        if self.kind == "centralized":
            if self.n_clients is not None:
                raise ConfigError("centralized mode takes no client count")
        elif self.kind == "federated":
            if self.n_clients is None or self.n_clients < 1:
                raise ConfigError(f"federated mode needs n_clients >= 1, got {self.n_clients}")
        else:
            raise ConfigError(f"unknown training mode {self.kind!r}")

    def label(self) -> str:
        return self.kind


CENTRALIZED = TrainingMode("centralized")


def federated_mode(n_clients: int) -> TrainingMode:
    return TrainingMode("federated", n_clients)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DistributionSpec
    dataset_name: str
    target_train_size: int
    nonmember_size: int
    shadow_master_size: int
    training_modes: tuple
    rounds: int
    local_epochs: int
    train_batch_size: int
    learning_rate: float
    hidden_dims: tuple
    shadow_count: int
    shadow_size: int
    shadow_train_fraction: float
    shadow_epochs: int
    attack_modes: tuple
    attack_epochs: int
    attack_learning_rate: float
    attack_batch_size: int
    attack_hidden: int | None
    seeds: tuple
    output_path: str

    def __post_init__(self):
        positive = (
            ("target_train_size", self.target_train_size),
            ("nonmember_size", self.nonmember_size),
            ("shadow_master_size", self.shadow_master_size),
            ("rounds", self.rounds),
            ("local_epochs", self.local_epochs),
            ("train_batch_size", self.train_batch_size),
            ("shadow_count", self.shadow_count),
            ("shadow_size", self.shadow_size),
            ("shadow_epochs", self.shadow_epochs),
            ("attack_epochs", self.attack_epochs),
            ("attack_batch_size", self.attack_batch_size),
        )
        for key, value in positive:
            if value < 1:
                raise ConfigError(f"{key} must be >= 1, got {value}")
        if self.learning_rate <= 0 or self.attack_learning_rate <= 0:
            raise ConfigError("learning rates must be > 0")
        if not 0.0 < self.shadow_train_fraction < 1.0:
            raise ConfigError(
                f"shadow_train_fraction must be in (0, 1), got {self.shadow_train_fraction}"
            )
        if self.shadow_size > self.shadow_master_size:
            raise ConfigError(
                f"shadow_size {self.shadow_size} exceeds shadow_master_size "
                f"{self.shadow_master_size}"
            )
        if not self.training_modes:
            raise ConfigError("at least one training mode is required")
        if not self.attack_modes:
            raise ConfigError("at least one attack mode is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.attack_hidden is not None and self.attack_hidden < 1:
            raise ConfigError(f"attack_hidden must be >= 1 or omitted, got {self.attack_hidden}")
        for mode in self.training_modes:
            if mode.kind == "federated" and mode.n_clients > self.target_train_size:
                raise ConfigError(
                    f"federated:{mode.n_clients} needs n_clients <= target_train_size"
                )


def _parse_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _parse_float(raw: str, key: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite, got {raw!r}")
    return value


def _parse_int_list(raw: str, key: str) -> tuple:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(_parse_int(part.strip(), key) for part in raw.split(","))


def _parse_training_modes(raw: str) -> tuple:
    modes = []
    for part in raw.split(","):
        part = part.strip()
        if part == "centralized":
            modes.append(CENTRALIZED)
        elif part.startswith("federated:"):
            modes.append(federated_mode(_parse_int(part.split(":", 1)[1], "training_modes")))
        else:
            raise ConfigError(
                f"training_modes: expected 'centralized' or 'federated:N', got {part!r}"
            )
    return tuple(modes)


def _parse_attack_modes(raw: str) -> tuple:
    modes = []
    for part in raw.split(","):
        part = part.strip()
        if part == "samplewise":
            modes.append(attack_mod.SAMPLEWISE)
        elif part.startswith("batchwise:"):
            modes.append(attack_mod.batchwise(_parse_int(part.split(":", 1)[1], "attack_modes")))
        else:
            raise ConfigError(
                f"attack_modes: expected 'samplewise' or 'batchwise:B', got {part!r}"
            )
    return tuple(modes)


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse flat key=value config text into a validated ExperimentConfig."""
    values = dict(DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key, raw = key.strip(), raw.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = raw

    kind = values["dataset"]
    try:
        if kind == "synthetic":
            dist = DistributionSpec(
                source="synthetic_gaussian",
                class_count=_parse_int(values["classes"], "classes"),
                dim=_parse_int(values["dim"], "dim"),
                means_seed=_parse_int(values["means_seed"], "means_seed"),
                spread=_parse_float(values["spread"], "spread"),
            )
        elif kind == "idx":
            if not values["idx_images"] or not values["idx_labels"]:
                raise ConfigError("idx datasets need idx_images and idx_labels paths")
            dist = DistributionSpec(
                source="idx_file",
                images_path=values["idx_images"],
                labels_path=values["idx_labels"],
            )
        elif kind in ("cifar10", "cifar100"):
            paths = tuple(p.strip() for p in values["cifar_files"].split(",") if p.strip())
            if not paths:
                raise ConfigError(f"{kind} datasets need cifar_files paths")
            dist = DistributionSpec(source="cifar_binary", cifar_paths=paths, cifar_variant=kind)
        else:
            raise ConfigError(f"dataset: unknown kind {kind!r}")
    except InputError as exc:
        raise ConfigError(str(exc)) from None

    rounds = _parse_int(values["rounds"], "rounds")
    local_epochs = _parse_int(values["local_epochs"], "local_epochs")
    shadow_epochs_raw = values["shadow_epochs"].strip()
    shadow_epochs = (
        _parse_int(shadow_epochs_raw, "shadow_epochs") if shadow_epochs_raw
        else rounds * local_epochs
    )
    attack_hidden = _parse_int(values["attack_hidden"], "attack_hidden")
    return ExperimentConfig(
        dataset=dist,
        dataset_name=values["name"] or kind,
        target_train_size=_parse_int(values["target_train_size"], "target_train_size"),
        nonmember_size=_parse_int(values["nonmember_size"], "nonmember_size"),
        shadow_master_size=_parse_int(values["shadow_master_size"], "shadow_master_size"),
        training_modes=_parse_training_modes(values["training_modes"]),
        rounds=rounds,
        local_epochs=local_epochs,
        train_batch_size=_parse_int(values["train_batch_size"], "train_batch_size"),
        learning_rate=_parse_float(values["learning_rate"], "learning_rate"),
        hidden_dims=_parse_int_list(values["hidden_dims"], "hidden_dims"),
        shadow_count=_parse_int(values["shadow_count"], "shadow_count"),
        shadow_size=_parse_int(values["shadow_size"], "shadow_size"),
        shadow_train_fraction=_parse_float(values["shadow_train_fraction"], "shadow_train_fraction"),
        shadow_epochs=shadow_epochs,
        attack_modes=_parse_attack_modes(values["attack_modes"]),
        attack_epochs=_parse_int(values["attack_epochs"], "attack_epochs"),
        attack_learning_rate=_parse_float(values["attack_learning_rate"], "attack_learning_rate"),
        attack_batch_size=_parse_int(values["attack_batch_size"], "attack_batch_size"),
        attack_hidden=attack_hidden if attack_hidden > 0 else None,
        seeds=_parse_int_list(values["seeds"], "seeds"),
        output_path=values["output"],
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


@dataclass
class DataSlices:
    """The three disjoint carves of the source dataset, in carve order."""

    nonmembers: LabeledDataset
    shadow_master: LabeledDataset
    target_train: LabeledDataset


@dataclass
class ResultRow:
    dataset: str
    training_mode: str
    n_clients: int | None
    attack_mode: str
    batch_size: int | None
    seed: int
    target_train_acc: float
    target_test_acc: float
    attack_accuracy: float
    advantage: float | None


def materialize_source(cfg: ExperimentConfig, seed: int) -> LabeledDataset:
    """The full source dataset for one seed (files are seed-independent)."""
    spec = cfg.dataset
    if spec.source == "synthetic_gaussian":
        total = cfg.nonmember_size + cfg.shadow_master_size + cfg.target_train_size
        return synthesize_gaussian(spec, total, derive_seed(seed, "source"))
    if spec.source == "idx_file":
        return load_idx(spec.images_path, spec.labels_path)
    return load_cifar_binary(list(spec.cifar_paths), spec.cifar_variant)


def carve_slices(source: LabeledDataset, cfg: ExperimentConfig, seed: int) -> DataSlices:
    """Carve nonmember, shadow-master, and target-train slices, disjointly."""
    need = cfg.nonmember_size + cfg.shadow_master_size + cfg.target_train_size
    if need > len(source):
        raise ConfigError(
            f"slices need {need} samples but the source dataset has {len(source)}"
        )
    perm = np.random.default_rng(derive_seed(seed, "carve")).permutation(len(source))
    a, b = cfg.nonmember_size, cfg.nonmember_size + cfg.shadow_master_size
    return DataSlices(
        nonmembers=source.subset(perm[:a]),
        shadow_master=source.subset(perm[a:b]),
        target_train=source.subset(perm[b:need]),
    )


def model_spec_for(cfg: ExperimentConfig, source: LabeledDataset) -> nn.ModelSpec:
    return nn.ModelSpec(
        input_dim=source.dim,
        hidden_dims=cfg.hidden_dims,
        output_dim=source.class_count,
    )


def fl_config_for(cfg: ExperimentConfig, mode: TrainingMode, spec: nn.ModelSpec, seed: int) -> FLConfig:
    local = nn.TrainConfig(
        epochs=cfg.local_epochs,
        batch_size=cfg.train_batch_size,
        learning_rate=cfg.learning_rate,
        seed=0,  # replaced by per-(round, client) derived seeds
    )
    n = mode.n_clients if mode.kind == "federated" else 1
    return FLConfig(
        n_clients=n,
        rounds=cfg.rounds,
        local=local,
        model=spec,
        seed=derive_seed(seed, "target", mode.kind, n),
    )


def train_target(cfg: ExperimentConfig, mode: TrainingMode, target_train: LabeledDataset,
                 spec: nn.ModelSpec, seed: int, checkpoint_dir=None) -> nn.ModelParams:
    fl_cfg = fl_config_for(cfg, mode, spec, seed)
    if mode.kind == "federated":
        return train_federated(target_train, fl_cfg, checkpoint_dir)
    return train_centralized(target_train, fl_cfg, checkpoint_dir)


def build_shadow_ensemble(cfg: ExperimentConfig, master: LabeledDataset,
                          spec: nn.ModelSpec, seed: int):
    shadow_sets = sample_shadow_datasets(
        master,
        k=cfg.shadow_count,
        shadow_size=cfg.shadow_size,
        train_fraction=cfg.shadow_train_fraction,
        seed=derive_seed(seed, "shadow-sample"),
    )
    shadow_cfg = nn.TrainConfig(
        epochs=cfg.shadow_epochs,
        batch_size=cfg.train_batch_size,
        learning_rate=cfg.learning_rate,
        seed=derive_seed(seed, "shadow-train"),
    )
    return train_shadows(shadow_sets, spec, shadow_cfg)


def build_attack_model(cfg: ExperimentConfig, ensemble, mode, seed: int):
    """Attack dataset + trained attack model for one attack mode."""
    if mode.kind == "samplewise":
        data = attack_mod.build_attack_dataset_samplewise(ensemble)
    else:
        data = attack_mod.build_attack_dataset_batchwise(ensemble, mode.batch_size)
    train_cfg = nn.TrainConfig(
        epochs=cfg.attack_epochs,
        batch_size=cfg.attack_batch_size,
        learning_rate=cfg.attack_learning_rate,
        seed=derive_seed(seed, "attack", mode.kind, mode.batch_size or 0),
    )
    return data, attack_mod.train_attack_model(data, train_cfg, hidden_dim=cfg.attack_hidden)


def make_query(params: nn.ModelParams):
    """Wrap model parameters as a black-box prediction interface."""
    return lambda features: nn.forward(params, features)


def _mode_sort_key(mode: TrainingMode):
    return (0, 0) if mode.kind == "centralized" else (1, mode.n_clients)


def _attack_sort_key(mode) -> int:
    return -1 if mode.kind == "samplewise" else mode.batch_size


def run_experiment(cfg: ExperimentConfig) -> list:
    """Run every (seed x training mode x attack mode) cell of the sweep.

    Returns one ResultRow per cell, sorted by (seed, training mode,
    attack batch size). Batch-wise rows carry the advantage over the
    sample-wise row of the same (seed, training mode) when one exists.
    """
    rows = []
    attack_modes = sorted(set(cfg.attack_modes), key=_attack_sort_key)
    training_modes = sorted(set(cfg.training_modes), key=_mode_sort_key)
    for seed in sorted(set(cfg.seeds)):
        source = materialize_source(cfg, seed)
        slices = carve_slices(source, cfg, seed)
        spec = model_spec_for(cfg, source)
        ensemble = build_shadow_ensemble(cfg, slices.shadow_master, spec, seed)
        attackers = {mode: build_attack_model(cfg, ensemble, mode, seed)[1] for mode in attack_modes}
        for mode in training_modes:
            target = train_target(cfg, mode, slices.target_train, spec, seed)
            train_acc, _ = nn.evaluate(target, slices.target_train)
            test_acc, _ = nn.evaluate(target, slices.nonmembers)
            query = make_query(target)
            samplewise_acc = None
            for attack_mode in attack_modes:
                acc = attack_mod.evaluate_attack(
                    attackers[attack_mode], query, slices.target_train,
                    slices.nonmembers, attack_mode,
                )
                if attack_mode.kind == "samplewise":
                    samplewise_acc = acc
                    advantage = None
                else:
                    advantage = (
                        attack_mod.attacker_advantage(acc, samplewise_acc)
                        if samplewise_acc is not None else None
                    )
                rows.append(ResultRow(
                    dataset=cfg.dataset_name,
                    training_mode=mode.kind,
                    n_clients=mode.n_clients,
                    attack_mode=attack_mode.kind,
                    batch_size=attack_mode.batch_size,
                    seed=seed,
                    target_train_acc=train_acc,
                    target_test_acc=test_acc,
                    attack_accuracy=acc,
                    advantage=advantage,
                ))
    return rows


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def results_to_csv_text(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in rows:
        writer.writerow([_format_cell(getattr(row, col)) for col in RESULT_COLUMNS])
    return buf.getvalue()


def write_results_csv(rows: list, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(results_to_csv_text(rows))


def read_results_csv(path) -> list:
    """Parse a results CSV back into ResultRow values."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(RESULT_COLUMNS):
            raise InputError(f"{path}: unexpected results header {header}")
        rows = []
        for record in reader:
            if len(record) != len(RESULT_COLUMNS):
                raise InputError(f"{path}: row has {len(record)} cells")
            get = dict(zip(RESULT_COLUMNS, record))
            rows.append(ResultRow(
                dataset=get["dataset"],
                training_mode=get["training_mode"],
                n_clients=int(get["n_clients"]) if get["n_clients"] else None,
                attack_mode=get["attack_mode"],
                batch_size=int(get["batch_size"]) if get["batch_size"] else None,
                seed=int(get["seed"]),
                target_train_acc=float(get["target_train_acc"]),
                target_test_acc=float(get["target_test_acc"]),
                attack_accuracy=float(get["attack_accuracy"]),
                advantage=float(get["advantage"]) if get["advantage"] else None,
            ))
    return rows


SUMMARY_METRICS = ("attack_accuracy", "advantage")


def summarize(rows: list, group_keys) -> list:
    """Per-group mean and sample standard deviation of the attack metrics.

    Returns one dict per group: the group key fields, the row count, and
    <metric>_mean / <metric>_std for attack_accuracy and advantage
    (advantage stats cover only rows that carry one; both are None for
    groups with no such rows). Groups are ordered by their key values.
    """
    if not rows:
        raise InputError("summarize needs at least one row")
    group_keys = tuple(group_keys)
    valid = {f.name for f in fields(ResultRow)}
    for key in group_keys:
        if key not in valid:
            raise InputError(f"unknown group key {key!r}")
    groups = {}
    for row in rows:
        key = tuple(getattr(row, k) for k in group_keys)
        groups.setdefault(key, []).append(row)

    def stats(values):
        if not values:
            return None, None
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return mean, std

    out = []
    for key in sorted(groups, key=lambda k: tuple(_format_cell(v) for v in k)):
        members = groups[key]
        entry = dict(zip(group_keys, key))
        entry["rows"] = len(members)
        for metric in SUMMARY_METRICS:
            values = [getattr(r, metric) for r in members if getattr(r, metric) is not None]
            entry[f"{metric}_mean"], entry[f"{metric}_std"] = stats(values)
        out.append(entry)
    return out


def summary_to_csv_text(summary: list, group_keys) -> str:
    columns = list(group_keys) + ["rows"] + [
        f"{metric}_{stat}" for metric in SUMMARY_METRICS for stat in ("mean", "std")
    ]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for entry in summary:
        writer.writerow([_format_cell(entry[col]) for col in columns])
    return buf.getvalue()
