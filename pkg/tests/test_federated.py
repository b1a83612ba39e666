"""Tests for federated averaging, rounds, and the centralized baseline."""

import numpy as np
import pytest

from fedmia import federated, nn
from fedmia.data import DistributionSpec, LabeledDataset, synthesize_gaussian
from fedmia.errors import InputError, ShapeError


def scalar_params(value):
    return nn.ModelParams([(np.array([[value]]), np.array([[value]]))])


def assert_params_equal(a, b):
    for (aw, ab), (bw, bb) in zip(a.layers, b.layers):
        np.testing.assert_array_equal(aw, bw)
        np.testing.assert_array_equal(ab, bb)


def small_dataset(n=60, classes=3, dim=4, seed=0, spread=0.2):
    spec = DistributionSpec("synthetic_gaussian", class_count=classes, dim=dim,
                            means_seed=29, spread=spread)
    return synthesize_gaussian(spec, n, seed)


def fl_config(n_clients=2, rounds=2, epochs=2, dim=4, classes=3, hidden=(6,),
              lr=0.3, seed=99, batch_size=8):
    return federated.FLConfig(
        n_clients=n_clients,
        rounds=rounds,
        local=nn.TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=lr, seed=0),
        model=nn.ModelSpec(dim, hidden, classes),
        seed=seed,
    )


class TestFederatedAverage:
    def test_single_update_identity(self):
        params = nn.init_params(nn.ModelSpec(3, (4,), 2), 5)
        out = federated.federated_average([federated.RoundUpdate(0, params, 10)])
        assert_params_equal(out, params)

    def test_equal_counts_arithmetic_mean(self):
        updates = [federated.RoundUpdate(0, scalar_params(2.0), 50),
                   federated.RoundUpdate(1, scalar_params(4.0), 50)]
        out = federated.federated_average(updates)
        np.testing.assert_allclose(out.layers[0][0], 3.0, rtol=1e-15)

    def test_sample_count_weighting(self):
        updates = [federated.RoundUpdate(0, scalar_params(0.0), 100),
                   federated.RoundUpdate(1, scalar_params(3.0), 200)]
        out = federated.federated_average(updates)
        np.testing.assert_allclose(out.layers[0][0], 2.0, rtol=1e-12)

    def test_identical_params_exact(self):
        """Averaging identical parameters returns them exactly."""
        base = nn.init_params(nn.ModelSpec(4, (5,), 3), 7)
        updates = [federated.RoundUpdate(i, base.copy(), c)
                   for i, c in enumerate((34, 33, 33))]
        out = federated.federated_average(updates)
        assert_params_equal(out, base)

    def test_order_independence(self):
        rng = np.random.default_rng(3)
        updates = [
            federated.RoundUpdate(i, nn.init_params(nn.ModelSpec(3, (4,), 2), i), int(c))
            for i, c in enumerate(rng.integers(10, 100, 5))
        ]
        out = federated.federated_average(updates)
        shuffled = [updates[i] for i in rng.permutation(5)]
        assert_params_equal(out, federated.federated_average(shuffled))

    def test_weights_normalized(self):
        updates = [federated.RoundUpdate(i, scalar_params(float(i)), c)
                   for i, c in enumerate((17, 19, 23, 91))]
        weights = federated.aggregation_weights(updates)
        assert abs(sum(weights) - 1.0) <= 1e-12

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            federated.federated_average([])

    def test_shape_mismatch_rejected(self):
        updates = [federated.RoundUpdate(0, scalar_params(1.0), 5),
                   federated.RoundUpdate(1, nn.init_params(nn.ModelSpec(2, (), 2), 0), 5)]
        with pytest.raises(ShapeError):
            federated.federated_average(updates)


class TestRunRound:
    def test_zero_learning_rate_keeps_global(self):
        ds = small_dataset()
        cfg = fl_config(n_clients=3, lr=0.0)
        shards = [ds.subset(range(0, 20)), ds.subset(range(20, 40)), ds.subset(range(40, 60))]
        start = nn.init_params(cfg.model, 1)
        out = federated.run_round(start, shards, cfg, round_index=0)
        assert_params_equal(out, start)

    def test_single_client_matches_local_training(self):
        ds = small_dataset()
        cfg = fl_config(n_clients=1)
        start = nn.init_params(cfg.model, 2)
        out = federated.run_round(start, [ds], cfg, round_index=4)
        from dataclasses import replace
        expected = nn.train(start, ds, replace(cfg.local, seed=federated.client_seed(cfg.seed, 4, 0)))
        assert_params_equal(out, expected)

    def test_identical_shards_forced_seeds_collapse(self, monkeypatch):
        """With one shared shard and equal per-client seeds, the average
        equals any single client's result."""
        monkeypatch.setattr(federated, "client_seed",
                            lambda master, r, cid: federated.derive_seed(master, "forced", r))
        ds = small_dataset()
        cfg = fl_config(n_clients=3)
        start = nn.init_params(cfg.model, 3)
        out = federated.run_round(start, [ds, ds, ds], cfg, round_index=1)
        from dataclasses import replace
        single = nn.train(start, ds, replace(cfg.local, seed=federated.client_seed(cfg.seed, 1, 0)))
        assert_params_equal(out, single)

    def test_shard_count_mismatch(self):
        cfg = fl_config(n_clients=2)
        with pytest.raises(InputError):
            federated.run_round(nn.init_params(cfg.model, 0), [small_dataset()], cfg)


class TestTrainFederated:
    def test_deterministic(self):
        ds = small_dataset()
        cfg = fl_config(n_clients=3, rounds=2)
        assert_params_equal(federated.train_federated(ds, cfg),
                            federated.train_federated(ds, cfg))

    def test_protocol_collapse_bitwise(self):
        ds = small_dataset(n=80)
        cfg = fl_config(n_clients=1, rounds=2, epochs=1)
        assert_params_equal(federated.train_federated(ds, cfg),
                            federated.train_centralized(ds, cfg))

    def test_overfit_gap_exists(self):
        """Federated training on small noisy data overfits its shards."""
        train = small_dataset(n=100, classes=10, dim=8, seed=1, spread=0.5)
        held_out = small_dataset(n=200, classes=10, dim=8, seed=2, spread=0.5)
        cfg = fl_config(n_clients=5, rounds=10, epochs=2, dim=8, classes=10,
                        hidden=(32,), lr=0.4, seed=12)
        model = federated.train_federated(train, cfg)
        train_acc, _ = nn.evaluate(model, train)
        test_acc, _ = nn.evaluate(model, held_out)
        assert train_acc > test_acc

    def test_too_few_samples(self):
        with pytest.raises(InputError):
            federated.train_federated(small_dataset(n=3), fl_config(n_clients=4))

    def test_round_checkpoints(self, tmp_path):
        ds = small_dataset()
        cfg = fl_config(n_clients=2, rounds=3)
        final = federated.train_federated(ds, cfg, checkpoint_dir=tmp_path)
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == ["round_0000.params", "round_0001.params", "round_0002.params"]
        assert_params_equal(nn.load_params(tmp_path / "round_0002.params"), final)


class TestTrainCentralized:
    def test_single_round_single_epoch(self):
        ds = small_dataset()
        cfg = fl_config(n_clients=1, rounds=1, epochs=1)
        out = federated.train_centralized(ds, cfg)
        from dataclasses import replace
        from fedmia.data import partition_disjoint
        from fedmia.seeding import derive_seed
        whole = partition_disjoint(ds, 1, derive_seed(cfg.seed, "partition"))[0]
        expected = nn.train(federated.initial_params(cfg), whole,
                            replace(cfg.local, seed=federated.client_seed(cfg.seed, 0, 0)))
        assert_params_equal(out, expected)

    def test_overfit_regime_gap(self):
        """Small data + many effective epochs leaves a wide overfit gap."""
        train = small_dataset(n=100, classes=10, dim=8, seed=3, spread=0.5)
        held_out = small_dataset(n=300, classes=10, dim=8, seed=4, spread=0.5)
        cfg = fl_config(n_clients=1, rounds=10, epochs=6, dim=8, classes=10,
                        hidden=(32,), lr=0.4, seed=13)
        model = federated.train_centralized(train, cfg)
        train_acc, _ = nn.evaluate(model, train)
        test_acc, _ = nn.evaluate(model, held_out)
        assert train_acc - test_acc >= 0.15
