"""Membership-inference attack: dataset generation, training, evaluation.

Attack records are built from shadow-model predictions either sample-wise
(one record per shadow sample) or batch-wise (one record per within-split
batch, carrying the elementwise mean of the member samples' features).
Each record's feature vector is the descending-sorted class-probability
vector with the cross-entropy loss appended, so its length is
class_count + 1 regardless of batch size.

The attack model is a binary classifier (logistic regression by default,
optionally with one ReLU hidden layer) trained by mini-batch SGD on
binary cross-entropy. Targets are reachable only through a prediction
callable; no function here accepts target model parameters.
"""

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import LabeledDataset
from .errors import InputError, NumericError, ShapeError
from .nn import LOSS_CLAMP, TrainConfig
from .shadow import ShadowEnsemble
from . import nn


class MembershipLabel(Enum):
    OUT = 0
    IN = 1


@dataclass(frozen=True)
class AttackMode:
    """SampleWise, or BatchWise with its generation batch size."""

    kind: str
    batch_size: int | None = None

    def __post_init__(self):
        if self.kind == "samplewise":
            if self.batch_size is not None:
                raise InputError("samplewise mode takes no batch size")
        elif self.kind == "batchwise":
            if self.batch_size is None or self.batch_size < 1:
                raise InputError(f"batchwise mode needs batch size >= 1, got {self.batch_size}")
        else:
            raise InputError(f"unknown attack mode {self.kind!r}")

    def label(self) -> str:
        return self.kind


SAMPLEWISE = AttackMode("samplewise")


def batchwise(batch_size: int) -> AttackMode:
    return AttackMode("batchwise", batch_size)


@dataclass
class AttackRecord:
    """One (feature, In/Out) training example for the attack model."""

    feature: np.ndarray
    label: MembershipLabel


@dataclass
class AttackDataset:
    """Attack records stored as a feature matrix plus 0/1 labels."""

    features: np.ndarray
    labels: np.ndarray  # 1 = In, 0 = Out
    mode: AttackMode

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(
                f"{self.labels.shape} labels for {self.features.shape[0]} feature rows"
            )
        if len(self.labels) and not np.isin(self.labels, (0, 1)).all():
            raise InputError("labels must be 0 (Out) or 1 (In)")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def records(self) -> list:
        return [
            AttackRecord(feature=f, label=MembershipLabel(int(l)))
            for f, l in zip(self.features, self.labels)
        ]

    def to_csv(self, path) -> None:
        """Columns f0..fC then `label`; label is 1 for In, 0 for Out."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{i}" for i in range(self.features.shape[1])] + ["label"])
            for row, label in zip(self.features, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])


def attack_feature(probs_row, true_label: int) -> np.ndarray:
    """Descending-sorted probabilities with the sample's loss appended."""
    probs_row = np.asarray(probs_row, dtype=np.float64)
    if probs_row.ndim != 1:
        raise ShapeError(f"probs_row must be 1-D, got shape {probs_row.shape}")
    if not 0 <= true_label < probs_row.shape[0]:
        raise InputError(f"label {true_label} out of range [0, {probs_row.shape[0]})")
    loss = -math.log(max(probs_row[true_label], LOSS_CLAMP))
    return np.concatenate([np.sort(probs_row)[::-1], [loss]])


def attack_features(probs, labels) -> np.ndarray:
    """Vectorized attack_feature over a probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"need (N, C) probs with N labels, got {probs.shape} and {labels.shape}")
    if len(labels) and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise InputError(f"labels out of range [0, {probs.shape[1]})")
    ordered = -np.sort(-probs, axis=1)
    picked = probs[np.arange(probs.shape[0]), labels]
    losses = -np.log(np.maximum(picked, LOSS_CLAMP))
    return np.hstack([ordered, losses[:, None]])


def _split_features(model, split: LabeledDataset) -> np.ndarray:
    return attack_features(nn.forward(model, split.features), split.labels)


def build_attack_dataset_samplewise(ensemble: ShadowEnsemble) -> AttackDataset:
    """One record per shadow sample: train split -> In, test split -> Out."""
    parts, labels = [], []
    for model, sd in zip(ensemble.models, ensemble.datasets):
        for split, label in ((sd.train, 1), (sd.test, 0)):
            if len(split) == 0:
                continue
            feats = _split_features(model, split)
            parts.append(feats)
            labels.append(np.full(len(split), label, dtype=np.int64))
    return AttackDataset(np.vstack(parts), np.concatenate(labels), SAMPLEWISE)


def _batch_means(features: np.ndarray, batch_size: int) -> np.ndarray:
    """Mean feature of each consecutive batch; the last one may be short."""
    n = features.shape[0]
    count = -(-n // batch_size)
    return np.vstack([
        features[i * batch_size:(i + 1) * batch_size].mean(axis=0) for i in range(count)
    ])


def build_attack_dataset_batchwise(ensemble: ShadowEnsemble, batch_size: int) -> AttackDataset:
    """One record per within-split batch of each shadow dataset.

    Batches never mix seen and unseen samples; each record's feature is
    the mean of its members' sample-wise features and its label is the
    split's label. The final partial batch of a split is kept.
    """
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    parts, labels = [], []
    for model, sd in zip(ensemble.models, ensemble.datasets):
        for split, label in ((sd.train, 1), (sd.test, 0)):
            if len(split) == 0:
                continue
            means = _batch_means(_split_features(model, split), batch_size)
            parts.append(means)
            labels.append(np.full(means.shape[0], label, dtype=np.int64))
    return AttackDataset(np.vstack(parts), np.concatenate(labels), batchwise(batch_size))


@dataclass
class AttackModel:
    """Binary membership classifier; sigmoid output, 0.5 threshold.

    layers holds one (w, b) pair for logistic regression or two for the
    one-hidden-layer variant (ReLU between).
    """

    layers: list

    def __post_init__(self):
        if len(self.layers) not in (1, 2):
            raise InputError(f"AttackModel supports 1 or 2 layers, got {len(self.layers)}")
        for w, b in self.layers:
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"bad attack layer shapes {w.shape} / {b.shape}")
        if self.layers[-1][0].shape[1] != 1:
            raise ShapeError("final attack layer must have one output")

    @property
    def feature_dim(self) -> int:
        return self.layers[0][0].shape[0]

    def membership_scores(self, features) -> np.ndarray:
        """Sigmoid membership scores in (0, 1), one per feature row."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ShapeError(
                f"features shape {features.shape} does not match feature_dim {self.feature_dim}"
            )
        a = features
        for w, b in self.layers[:-1]:
            a = np.maximum(a @ w + b, 0.0)
        w, b = self.layers[-1]
        scores = _sigmoid((a @ w + b)[:, 0])
        if not np.all(np.isfinite(scores)):
            raise NumericError("non-finite attack scores")
        return scores

    def predict(self, features) -> np.ndarray:
        """True = In. Scores exactly at 0.5 resolve to Out."""
        return self.membership_scores(features) > 0.5


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def train_attack_model(data: AttackDataset, cfg: TrainConfig, hidden_dim: int | None = None) -> AttackModel:
    """Fit the binary attack classifier by mini-batch SGD on BCE.

    Logistic regression by default; hidden_dim adds one ReLU hidden
    layer. Deterministic in (data, cfg, hidden_dim).
    """
    classes = np.unique(data.labels)
    if len(classes) < 2:
        raise InputError("attack dataset must contain both In and Out records")
    x, y = data.features, data.labels.astype(np.float64)
    n, d = x.shape
    rng = np.random.default_rng(cfg.seed)
    if hidden_dim is None:
        layers = [(np.zeros((d, 1)), np.zeros(1))]
    else:
        if hidden_dim < 1:
            raise InputError(f"hidden_dim must be >= 1, got {hidden_dim}")
        limit = math.sqrt(6.0 / (d + hidden_dim))
        layers = [
            (rng.uniform(-limit, limit, (d, hidden_dim)), np.zeros(hidden_dim)),
            (np.zeros((hidden_dim, 1)), np.zeros(1)),
        ]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = perm[start:start + cfg.batch_size]
                xb, yb = x[idx], y[idx]
                m = len(idx)
                if len(layers) == 1:
                    (w, b) = layers[0]
                    err = _sigmoid((xb @ w + b)[:, 0]) - yb  # d(BCE)/d(logit)
                    w -= cfg.learning_rate * (xb.T @ err[:, None]) / m
                    b -= cfg.learning_rate * err.mean(keepdims=True)
                else:
                    (w1, b1), (w2, b2) = layers
                    z1 = xb @ w1 + b1
                    a1 = np.maximum(z1, 0.0)
                    err = _sigmoid((a1 @ w2 + b2)[:, 0]) - yb
                    dw2 = a1.T @ err[:, None] / m
                    db2 = err.mean(keepdims=True)
                    d1 = (err[:, None] @ w2.T) * (z1 > 0.0)
                    w1 -= cfg.learning_rate * (xb.T @ d1) / m
                    b1 -= cfg.learning_rate * d1.mean(axis=0)
                    w2 -= cfg.learning_rate * dw2
                    b2 -= cfg.learning_rate * db2
    model = AttackModel(layers)
    for w, b in model.layers:
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NumericError("non-finite attack model parameters")
    return model


def attack_accuracy(model: AttackModel, data: AttackDataset) -> float:
    """Fraction of records whose In/Out prediction matches the label."""
    if len(data) == 0:
        raise InputError("cannot score an empty attack dataset")
    return float((model.predict(data.features) == (data.labels == 1)).mean())


def evaluate_attack(
    model: AttackModel,
    target_query,
    member_pool: LabeledDataset,
    nonmember_pool: LabeledDataset,
    mode: AttackMode,
) -> float:
    """Attack accuracy against a target reachable only via target_query.

    target_query maps a feature matrix to class probabilities. Records
    are built from each pool exactly as on the shadow side (batch-wise
    batches never span pools). The evaluation set is balanced by
    truncating the larger side after batching, so 0.5 is the null
    accuracy. Ties at score 0.5 count as Out.
    """
    if len(member_pool) == 0 or len(nonmember_pool) == 0:
        raise InputError("evaluation pools must be nonempty")
    sides = []
    for pool in (member_pool, nonmember_pool):
        feats = attack_features(target_query(pool.features), pool.labels)
        if mode.kind == "batchwise":
            feats = _batch_means(feats, mode.batch_size)
        sides.append(feats)
    keep = min(len(sides[0]), len(sides[1]))
    member_hits = model.predict(sides[0][:keep])
    nonmember_hits = ~model.predict(sides[1][:keep])
    return float((member_hits.sum() + nonmember_hits.sum()) / (2 * keep))


def attacker_advantage(batchwise_acc: float, samplewise_acc: float) -> float:
    """Batch-wise minus sample-wise attack accuracy; may be negative."""
    for name, value in (("batchwise_acc", batchwise_acc), ("samplewise_acc", samplewise_acc)):
        if not 0.0 <= value <= 1.0:
            raise InputError(f"{name} must be in [0, 1], got {value}")
    return batchwise_acc - samplewise_acc
