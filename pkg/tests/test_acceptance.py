"""Acceptance suite: the package's exit criteria at desk scale.

Run `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL line
per criterion. The trend criteria (4-7) share one sweep over the
desk-scale configuration: synthetic 10-class Gaussian data, a
1000-sample target training set, an MLP with one hidden layer of 64,
200 effective training epochs, and 8 shadow models, averaged over 5
seeds.
"""

import math
from time import perf_counter

import numpy as np
import pytest

from fedmia import attack, experiment, federated, nn
from fedmia.data import DistributionSpec, LabeledDataset, ShadowDataset, synthesize_gaussian
from fedmia.seeding import derive_seed
from fedmia.shadow import ShadowEnsemble

ACCEPTANCE_CONFIG = """
# desk-scale acceptance sweep
dataset = synthetic
classes = 10
dim = 16
means_seed = 2024
spread = 0.5
target_train_size = 1000
nonmember_size = 1000
shadow_master_size = 2000
training_modes = centralized,federated:5
rounds = 5
local_epochs = 40
train_batch_size = 32
learning_rate = 0.5
hidden_dims = 64
shadow_count = 8
shadow_size = 1000
shadow_train_fraction = 0.5
attack_modes = samplewise,batchwise:8,batchwise:16,batchwise:32,batchwise:64
attack_epochs = 100
attack_learning_rate = 0.5
attack_batch_size = 128
seeds = 1,2,3,4,5
output = results.csv
"""


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"\n[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def sweep():
    """One full run of the acceptance configuration, shared by 4-7."""
    cfg = experiment.parse_config_text(ACCEPTANCE_CONFIG)
    start = perf_counter()
    rows = experiment.run_experiment(cfg)
    elapsed = perf_counter() - start
    return cfg, rows, elapsed


def mean_accuracy(rows, training_mode, attack_mode, batch_size=None):
    values = [
        r.attack_accuracy for r in rows
        if r.training_mode == training_mode and r.attack_mode == attack_mode
        and (batch_size is None or r.batch_size == batch_size)
    ]
    assert values, f"no rows for {training_mode}/{attack_mode}/{batch_size}"
    return float(np.mean(values))


def fd_gradients(params, batch, labels, h=1e-5):
    grads = []
    for w, b in params.layers:
        pair = []
        for arr in (w, b):
            d = np.zeros_like(arr)
            flat, dflat = arr.ravel(), d.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                _, up = nn.cross_entropy(nn.forward(params, batch), labels)
                flat[j] = orig - h
                _, down = nn.cross_entropy(nn.forward(params, batch), labels)
                flat[j] = orig
                dflat[j] = (up - down) / (2 * h)
            pair.append(d)
        grads.append(tuple(pair))
    return grads


def test_criterion_1_numeric_core_oracles():
    """Backprop matches finite differences; softmax rows normalize."""
    start = perf_counter()
    rng = np.random.default_rng(2024)
    worst_rel = 0.0
    for _ in range(20):
        d_in = int(rng.integers(2, 7))
        hidden = int(rng.integers(2, 9))
        classes = int(rng.integers(2, 6))
        spec = nn.ModelSpec(d_in, (hidden,), classes)
        assert sum(w.size + b.size for w, b in nn.init_params(spec, 0).layers) <= 500
        params = nn.init_params(spec, int(rng.integers(0, 2**32)))
        batch = rng.uniform(-1, 1, (int(rng.integers(1, 8)), d_in))
        labels = rng.integers(0, classes, batch.shape[0])

        probs = nn.forward(params, batch)
        assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9

        analytic = nn.backward(params, batch, labels)
        numeric = fd_gradients(params, batch, labels)
        for (aw, ab), (fw, fb) in zip(analytic, numeric):
            for a, f in ((aw, fw), (ab, fb)):
                mag = np.maximum(np.abs(a), np.abs(f))
                big = mag > 1e-6
                if big.any():
                    worst_rel = max(worst_rel, float((np.abs(a - f)[big] / mag[big]).max()))
                assert np.abs(a - f)[~big].max(initial=0.0) <= 1e-8
    elapsed = perf_counter() - start
    report(1, worst_rel <= 1e-5 and elapsed < 10.0,
           f"20 gradient checks, worst relative error {worst_rel:.2e} "
           f"(limit 1e-5), softmax rows sum to 1 within 1e-9, {elapsed:.1f}s (limit 10s)")


def test_criterion_2_protocol_collapse():
    """Single-client federated training equals the centralized baseline."""
    start = perf_counter()
    dist = DistributionSpec("synthetic_gaussian", class_count=10, dim=16,
                            means_seed=2024, spread=0.5)
    dataset = synthesize_gaussian(dist, 1000, seed=41)
    cfg = federated.FLConfig(
        n_clients=1,
        rounds=5,
        local=nn.TrainConfig(epochs=2, batch_size=32, learning_rate=0.5, seed=0),
        model=nn.ModelSpec(16, (64,), 10),
        seed=31337,
    )
    fed = federated.train_federated(dataset, cfg)
    central = federated.train_centralized(dataset, cfg)
    identical = all(
        np.array_equal(fw, cw) and np.array_equal(fb, cb)
        for (fw, fb), (cw, cb) in zip(fed.layers, central.layers)
    )
    elapsed = perf_counter() - start
    report(2, identical and elapsed < 60.0,
           f"train_federated(n=1, r=5, e=2) bitwise-equal to "
           f"train_centralized(10 epochs), {elapsed:.1f}s (limit 60s)")


def test_criterion_3_cardinality_exactness():
    """Attack-dataset sizes follow the ceil formulas; B=1 = sample-wise."""
    rng = np.random.default_rng(99)
    spec = nn.ModelSpec(3, (), 2)
    checked = 0
    for _ in range(50):
        k = int(rng.integers(1, 5))
        train_n = int(rng.integers(1, 41))
        test_n = int(rng.integers(1, 41))
        batch = int(rng.integers(1, 51))
        models, datasets = [], []
        for _ in range(k):
            models.append(nn.init_params(spec, int(rng.integers(0, 2**32))))
            datasets.append(ShadowDataset(
                train=LabeledDataset(rng.uniform(0, 1, (train_n, 3)),
                                     rng.integers(0, 2, train_n), 2),
                test=LabeledDataset(rng.uniform(0, 1, (test_n, 3)),
                                    rng.integers(0, 2, test_n), 2),
            ))
        ensemble = ShadowEnsemble(models=models, datasets=datasets, spec=spec)

        sample = attack.build_attack_dataset_samplewise(ensemble)
        assert len(sample) == k * (train_n + test_n)
        assert int(sample.labels.sum()) == k * train_n

        batched = attack.build_attack_dataset_batchwise(ensemble, batch)
        assert len(batched) == k * (math.ceil(train_n / batch) + math.ceil(test_n / batch))

        unit = attack.build_attack_dataset_batchwise(ensemble, 1)
        rows_s = sorted(map(tuple, np.column_stack([sample.features, sample.labels]).tolist()))
        rows_u = sorted(map(tuple, np.column_stack([unit.features, unit.labels]).tolist()))
        assert rows_s == rows_u
        checked += 1
    report(3, checked == 50,
           "50 random (k, train, test, B) tuples match the ceil cardinality "
           "formulas exactly; B=1 output equals the sample-wise multiset")


def test_criterion_4_attack_works(sweep):
    """Sample-wise attack beats chance on the overfit centralized target."""
    _, rows, elapsed = sweep
    acc = mean_accuracy(rows, "centralized", "samplewise")
    report(4, acc >= 0.60 and elapsed < 300.0,
           f"centralized sample-wise attack accuracy {acc:.4f} over 5 seeds "
           f"(threshold 0.60), sweep took {elapsed:.0f}s (limit 300s)")


def test_criterion_5_federated_mitigation(sweep):
    """Five-client federated training blunts the attack."""
    _, rows, elapsed = sweep
    central = mean_accuracy(rows, "centralized", "samplewise")
    fed = mean_accuracy(rows, "federated", "samplewise")
    report(5, central - fed >= 0.02 and elapsed < 900.0,
           f"sample-wise attack accuracy centralized {central:.4f} vs "
           f"5-client federated {fed:.4f}; reduction {central - fed:.4f} "
           f"(threshold 0.02), sweep took {elapsed:.0f}s (limit 900s)")


def test_criterion_6_batchwise_advantage(sweep):
    """Batch-wise generation improves the attack on the centralized target."""
    _, rows, elapsed = sweep
    advantages = [r.advantage for r in rows
                  if r.training_mode == "centralized" and r.batch_size == 32]
    assert len(advantages) == 5 and all(a is not None for a in advantages)
    mean_adv = float(np.mean(advantages))
    report(6, mean_adv > 0.0 and elapsed < 600.0,
           f"mean advantage of batch-wise (B=32) over sample-wise "
           f"{mean_adv:+.4f} over 5 seeds (threshold > 0), sweep took "
           f"{elapsed:.0f}s (limit 600s)")


def test_criterion_7_batch_size_insensitivity(sweep):
    """Batch-wise accuracy barely moves across generation batch sizes."""
    _, rows, _ = sweep
    means = {b: mean_accuracy(rows, "centralized", "batchwise", b)
             for b in (8, 16, 32, 64)}
    spread = max(means.values()) - min(means.values())
    detail = ", ".join(f"B={b}: {v:.4f}" for b, v in means.items())
    report(7, spread <= 0.05,
           f"batch-wise accuracy {detail}; max-min {spread:.4f} (limit 0.05)")


def test_criterion_8_null_attack():
    """Label-shuffled training on same-distribution pools stays at chance."""
    cfg = experiment.parse_config_text(ACCEPTANCE_CONFIG)
    accs = []
    for seed in range(101, 111):
        source = experiment.materialize_source(cfg, seed)
        slices = experiment.carve_slices(source, cfg, seed)
        spec = experiment.model_spec_for(cfg, source)
        target = experiment.train_target(cfg, experiment.CENTRALIZED,
                                         slices.target_train, spec, seed)
        ensemble = experiment.build_shadow_ensemble(cfg, slices.shadow_master, spec, seed)
        data = attack.build_attack_dataset_samplewise(ensemble)
        rng = np.random.default_rng(derive_seed(seed, "null-shuffle"))
        shuffled = attack.AttackDataset(data.features, rng.permutation(data.labels), data.mode)
        train_cfg = nn.TrainConfig(epochs=cfg.attack_epochs, batch_size=cfg.attack_batch_size,
                                   learning_rate=cfg.attack_learning_rate,
                                   seed=derive_seed(seed, "null-train"))
        model = attack.train_attack_model(shuffled, train_cfg)
        # both evaluation pools come from the same distribution: two
        # disjoint halves of the non-member slice
        half = len(slices.nonmembers) // 2
        acc = attack.evaluate_attack(
            model, experiment.make_query(target),
            slices.nonmembers.subset(range(half)),
            slices.nonmembers.subset(range(half, 2 * half)),
            attack.SAMPLEWISE,
        )
        accs.append(acc)
    mean_acc = float(np.mean(accs))
    worst = max(abs(a - 0.5) for a in accs)
    report(8, abs(mean_acc - 0.5) <= 0.05 and worst <= 0.05,
           f"null-attack accuracy mean {mean_acc:.4f} over 10 seeds, worst "
           f"per-seed deviation {worst:.4f} (limit 0.05)")


def test_criterion_9_sweep_determinism(sweep, tmp_path):
    """Re-running the full sweep reproduces the results CSV byte for byte."""
    cfg, rows, _ = sweep
    first = experiment.results_to_csv_text(rows)
    second = experiment.results_to_csv_text(experiment.run_experiment(cfg))
    path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
    path_a.write_text(first)
    path_b.write_text(second)
    identical = path_a.read_bytes() == path_b.read_bytes()
    report(9, identical,
           f"two executions produced byte-identical CSV outputs "
           f"({len(first.splitlines()) - 1} rows)")
