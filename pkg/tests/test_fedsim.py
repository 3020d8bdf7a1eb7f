"""Simulator internals: data, model, federation, retraining game, archive.

The model's loss is checked against scipy's log_softmax and the gradient
against central finite differences; the federation is mostly pinned down
by determinism and by the aggregate identity m = m0 + sum of deltas.
"""

import numpy as np
import pytest
import scipy.special

from fedscore import Coalition, GameError
from fedscore.fedsim import (
    ArchiveError,
    DataError,
    FederationConfig,
    FederationError,
    HIDDEN_UNITS,
    LabeledDataset,
    MlpArch,
    ModelError,
    ModelEvaluator,
    ModelParams,
    RetrainingGame,
    RoundTranscript,
    SyntheticSpec,
    TrainingDiverged,
    accuracy,
    dirichlet_partition,
    flip_labels,
    forward_logits,
    generate_synthetic,
    iid_partition,
    init_params,
    load_transcripts,
    loss_and_grad,
    mean_loss,
    model_eval_oracle,
    round_oracle,
    run_federation,
    save_transcripts,
    sgd_train,
    unpack,
)
from fedscore.fedsim import test_set_for as config_test_set

from conftest import TINY_SPEC, tiny_config


class TestSyntheticData:
    def test_shapes_and_balance(self):
        spec = SyntheticSpec(n_classes=3, dim=5, samples_per_client=10,
                             test_samples_per_class=8)
        train, test = generate_synthetic(spec, n_clients=4, seed=1)
        assert train.n_samples == 40 and train.dim == 5
        assert test.n_samples == 24
        # test set is exactly balanced, train as even as divisibility allows
        assert all(np.sum(test.labels == c) == 8 for c in range(3))
        counts = [int(np.sum(train.labels == c)) for c in range(3)]
        assert max(counts) - min(counts) <= 1

    def test_deterministic(self):
        spec = SyntheticSpec()
        a, _ = generate_synthetic(spec, 3, seed=5)
        b, _ = generate_synthetic(spec, 3, seed=5)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
        c, _ = generate_synthetic(spec, 3, seed=6)
        assert not np.array_equal(a.features, c.features)

    def test_needs_a_client(self):
        with pytest.raises(DataError):
            generate_synthetic(SyntheticSpec(), 0, seed=1)


class TestPartitions:
    def _pool(self, n=60):
        rng = np.random.default_rng(2)
        return LabeledDataset(rng.normal(size=(n, 4)),
                              rng.integers(0, 3, size=n), 3)

    def test_iid_sizes_near_equal(self):
        pool = self._pool(61)
        shards = iid_partition(pool, 4, seed=3)
        sizes = [s.n_samples for s in shards]
        assert sum(sizes) == 61
        assert max(sizes) - min(sizes) <= 1

    def test_iid_deterministic(self):
        pool = self._pool()
        a = iid_partition(pool, 3, seed=3)
        b = iid_partition(pool, 3, seed=3)
        for x, y in zip(a, b):
            assert np.array_equal(x.features, y.features)

    def test_dirichlet_covers_pool_and_no_empty_shard(self):
        pool = self._pool(50)
        for mu in (0.05, 0.5, 10.0):
            shards = dirichlet_partition(pool, 5, mu=mu, seed=4)
            assert sum(s.n_samples for s in shards) == 50
            assert all(s.n_samples >= 1 for s in shards)

    def test_dirichlet_skew_grows_as_mu_shrinks(self):
        pool = self._pool(300)
        def spread(mu):
            shards = dirichlet_partition(pool, 5, mu=mu, seed=11)
            sizes = np.array([s.n_samples for s in shards])
            return sizes.max() - sizes.min()
        assert spread(0.05) > spread(100.0)

    def test_dirichlet_validation(self):
        pool = self._pool(4)
        with pytest.raises(DataError):
            dirichlet_partition(pool, 5, mu=0.5, seed=0)  # more clients than rows
        with pytest.raises(DataError):
            dirichlet_partition(pool, 2, mu=0.0, seed=0)
        with pytest.raises(DataError):
            dirichlet_partition(pool, 2, mu=np.inf, seed=0)


class TestLabelFlips:
    def _data(self):
        rng = np.random.default_rng(5)
        return LabeledDataset(rng.normal(size=(200, 3)),
                              rng.integers(0, 4, size=200), 4)

    def test_rate_zero_is_identity(self):
        data = self._data()
        assert flip_labels(data, 0.0, seed=1) is data

    def test_rate_one_changes_every_label(self):
        data = self._data()
        flipped = flip_labels(data, 1.0, seed=1)
        assert np.all(flipped.labels != data.labels)
        assert np.array_equal(flipped.features, data.features)

    def test_targeted_flip_only_relabels_to_target(self):
        data = self._data()
        flipped = flip_labels(data, 1.0, seed=1, target=2)
        already = data.labels == 2
        assert np.all(flipped.labels[~already] == 2)
        assert np.array_equal(flipped.labels[already], data.labels[already])

    def test_partial_rate_flips_roughly_that_fraction(self):
        data = self._data()
        flipped = flip_labels(data, 0.3, seed=7)
        frac = np.mean(flipped.labels != data.labels)
        assert 0.15 < frac < 0.45

    def test_validation(self):
        data = self._data()
        with pytest.raises(DataError):
            flip_labels(data, 1.5, seed=0)
        with pytest.raises(DataError):
            flip_labels(data, 0.5, seed=0, target=4)


class TestModelParams:
    def test_arithmetic(self):
        a = ModelParams(np.array([1.0, 2.0]))
        b = ModelParams(np.array([0.5, -1.0]))
        assert np.array_equal((a + b).values, [1.5, 1.0])
        assert np.array_equal((a - b).values, [0.5, 3.0])
        assert np.array_equal(a.scale(2.0).values, [2.0, 4.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ModelError):
            ModelParams(np.array([1.0, np.nan]))

    def test_read_only(self):
        p = ModelParams(np.array([1.0]))
        with pytest.raises(ValueError):
            p.values[0] = 2.0


class TestMlp:
    ARCH = MlpArch(in_dim=4, n_classes=3)

    def test_param_count(self):
        d, h, k = 4, HIDDEN_UNITS, 3
        assert self.ARCH.n_params == (d + 1) * h + (h + 1) * k
        assert init_params(self.ARCH, seed=0).dim == self.ARCH.n_params

    def test_init_deterministic(self):
        a = init_params(self.ARCH, seed=3)
        b = init_params(self.ARCH, seed=3)
        assert np.array_equal(a.values, b.values)

    def test_unpack_shapes(self):
        w1, b1, w2, b2 = unpack(self.ARCH, init_params(self.ARCH, seed=0))
        assert w1.shape == (4, HIDDEN_UNITS) and b1.shape == (HIDDEN_UNITS,)
        assert w2.shape == (HIDDEN_UNITS, 3) and b2.shape == (3,)

    def test_loss_matches_scipy_log_softmax(self):
        rng = np.random.default_rng(6)
        params = init_params(self.ARCH, seed=6)
        feats = rng.normal(size=(10, 4))
        labels = rng.integers(0, 3, size=10)
        data = LabeledDataset(feats, labels, 3)
        logits = forward_logits(self.ARCH, params, feats)
        logp = scipy.special.log_softmax(logits, axis=1)
        expect = float(-logp[np.arange(10), labels].mean())
        assert abs(mean_loss(self.ARCH, params, data) - expect) < 1e-12

    def test_loss_and_grad_loss_agrees_with_mean_loss(self):
        rng = np.random.default_rng(16)
        params = init_params(self.ARCH, seed=16)
        feats = rng.normal(size=(8, 4))
        labels = rng.integers(0, 3, size=8)
        data = LabeledDataset(feats, labels, 3)
        loss, _ = loss_and_grad(self.ARCH, params, feats, labels)
        assert abs(loss - mean_loss(self.ARCH, params, data)) < 1e-12

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(17)
        params = init_params(self.ARCH, seed=17)
        feats = rng.normal(size=(12, 4))
        labels = rng.integers(0, 3, size=12)
        _, grad = loss_and_grad(self.ARCH, params, feats, labels)
        h = 1e-6
        for idx in rng.choice(params.dim, size=20, replace=False):
            e = np.zeros(params.dim)
            e[idx] = h
            up, _ = loss_and_grad(self.ARCH, ModelParams(params.values + e), feats, labels)
            dn, _ = loss_and_grad(self.ARCH, ModelParams(params.values - e), feats, labels)
            fd = (up - dn) / (2 * h)
            assert abs(grad[idx] - fd) < 1e-5 * max(1.0, abs(fd))

    def test_accuracy_counts_argmax_hits(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        labels = np.array([0, 1, 0])
        data = LabeledDataset(feats, labels, 2)
        arch = MlpArch(in_dim=2, n_classes=2)
        params = init_params(arch, seed=1)
        logits = forward_logits(arch, params, feats)
        expect = float(np.mean(np.argmax(logits, axis=1) == labels))
        assert accuracy(arch, params, data) == expect

    def test_sgd_zero_epochs_is_identity(self):
        data = LabeledDataset(np.zeros((4, 4)), np.zeros(4, dtype=np.int64), 3)
        params = init_params(self.ARCH, seed=2)
        out = sgd_train(self.ARCH, params, data, epochs=0, lr=0.1, batch_size=2, seed=0)
        assert np.array_equal(out.values, params.values)

    def test_sgd_deterministic_and_learns(self):
        spec = SyntheticSpec(n_classes=3, dim=4, samples_per_client=40,
                             test_samples_per_class=10, separation=2.0)
        train, _ = generate_synthetic(spec, 1, seed=9)
        params = init_params(self.ARCH, seed=9)
        kw = dict(epochs=5, lr=0.2, batch_size=8, seed=13)
        a = sgd_train(self.ARCH, params, train, **kw)
        b = sgd_train(self.ARCH, params, train, **kw)
        assert np.array_equal(a.values, b.values)
        assert mean_loss(self.ARCH, a, train) < mean_loss(self.ARCH, params, train)

    def test_sgd_divergence_raises(self):
        # a model already at the overflow edge: every output weight is huge
        # and positive, so the logits overflow and the loss goes non-finite
        rng = np.random.default_rng(3)
        train = LabeledDataset(rng.normal(size=(16, 4)),
                               rng.integers(0, 3, size=16), 3)
        d, h, k = 4, HIDDEN_UNITS, 3
        vec = np.zeros(self.ARCH.n_params)
        vec[d * h : d * h + h] = 1.0  # b1: hidden saturates positive
        vec[(d + 1) * h : (d + 1) * h + h * k] = 1e307  # w2
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDiverged):
                sgd_train(self.ARCH, ModelParams(vec), train, epochs=1, lr=0.1,
                          batch_size=4, seed=0)


class TestFederation:
    def test_transcripts_per_round(self, tiny_run):
        config, transcripts, _ = tiny_run
        assert [t.round for t in transcripts] == list(range(1, config.rounds + 1))
        for t in transcripts:
            assert [u.client for u in t.updates] == list(range(config.n_clients))

    def test_aggregate_identity(self, tiny_run):
        _, transcripts, _ = tiny_run
        for t in transcripts:
            total = t.m0.values + np.sum([u.delta.values for u in t.updates], axis=0)
            np.testing.assert_allclose(t.m.values, total, atol=1e-9)

    def test_rounds_chain(self, tiny_run):
        _, transcripts, _ = tiny_run
        for prev, cur in zip(transcripts, transcripts[1:]):
            assert np.array_equal(cur.m0.values, prev.m.values)

    def test_bit_identical_reruns(self):
        config = tiny_config()
        a, _ = run_federation(config)
        b, _ = run_federation(config)
        for x, y in zip(a, b):
            assert np.array_equal(x.m.values, y.m.values)
            for ux, uy in zip(x.updates, y.updates):
                assert np.array_equal(ux.delta.values, uy.delta.values)

    def test_seed_changes_run(self):
        a, _ = run_federation(tiny_config())
        b, _ = run_federation(tiny_config(seed=8))
        assert not np.array_equal(a[-1].m.values, b[-1].m.values)

    def test_noise_rates_change_training(self):
        noisy = tiny_config(noise_rates=(0.0, 0.0, 1.0))
        a, _ = run_federation(tiny_config())
        b, _ = run_federation(noisy)
        assert not np.array_equal(a[-1].m.values, b[-1].m.values)
        # the clean clients still start from the same data
        assert np.array_equal(a[0].m0.values, b[0].m0.values)

    def test_transcript_validates_aggregate(self, tiny_run):
        _, transcripts, _ = tiny_run
        t = transcripts[0]
        broken = ModelParams(t.m.values + 1.0)
        with pytest.raises(FederationError):
            RoundTranscript(round=t.round, m0=t.m0, updates=t.updates, m=broken)

    def test_update_for(self, tiny_run):
        _, transcripts, _ = tiny_run
        t = transcripts[0]
        assert t.update_for(1) is t.updates[1]
        with pytest.raises(FederationError):
            t.update_for(99)

    def test_config_validation(self):
        with pytest.raises(FederationError):
            tiny_config(n_clients=0)
        with pytest.raises(FederationError):
            tiny_config(noise_rates=(0.5,))  # wrong length
        with pytest.raises(FederationError):
            tiny_config(noise_rates=(0.0, 0.0, 1.5))
        with pytest.raises(FederationError):
            tiny_config(flip_target=3)
        with pytest.raises(FederationError):
            tiny_config(utility_kind="f1")


class TestEvaluatorAndOracles:
    def test_evaluator_counts_calls(self, tiny_run):
        config, transcripts, test = tiny_run
        ev = model_eval_oracle(test, "neg_loss")
        assert ev.call_count == 0
        ev(transcripts[0].m0)
        ev(transcripts[0].m)
        assert ev.call_count == 2

    def test_utility_kinds(self, tiny_run):
        config, transcripts, test = tiny_run
        arch = MlpArch.for_data(test)
        m = transcripts[-1].m
        neg = model_eval_oracle(test, "neg_loss")(m)
        acc = model_eval_oracle(test, "accuracy")(m)
        assert abs(neg - (-mean_loss(arch, m, test))) < 1e-12
        assert abs(acc - accuracy(arch, m, test)) < 1e-12
        with pytest.raises(FederationError):
            ModelEvaluator(arch, test, "auc")

    def test_round_oracle_endpoints(self, tiny_run):
        config, transcripts, test = tiny_run
        ev = model_eval_oracle(test, config.utility_kind)
        t = transcripts[0]
        oracle = round_oracle(t, ev)
        assert oracle.evaluate(Coalition(0)) == ev(t.m0)
        grand = oracle.evaluate(Coalition.grand(config.n_clients))
        assert abs(grand - ev(t.m)) < 1e-9

    def test_test_set_matches_run(self, tiny_run):
        config, _, test = tiny_run
        again = config_test_set(config)
        assert np.array_equal(again.features, test.features)
        assert np.array_equal(again.labels, test.labels)


class TestRetrainingGame:
    def test_memoises_values(self):
        game = RetrainingGame(tiny_config(rounds=1))
        coalition = Coalition.of([0, 2])
        first = game.value(coalition)
        calls_after_first = game._evaluator.call_count
        second = game.value(coalition)
        assert first == second
        assert game._evaluator.call_count == calls_after_first

    def test_empty_coalition_scores_initial_model(self):
        game = RetrainingGame(tiny_config(rounds=1))
        v0 = game.value(Coalition(0))
        assert np.isfinite(v0)
        assert game.value(Coalition(0)) == v0

    def test_grand_matches_full_run(self):
        config = tiny_config(rounds=1)
        game = RetrainingGame(config)
        transcripts, test = run_federation(config)
        ev = model_eval_oracle(test, config.utility_kind)
        got = game.value(Coalition.grand(config.n_clients))
        assert abs(got - ev(transcripts[-1].m)) < 1e-12

    def test_out_of_range_coalition_rejected(self):
        game = RetrainingGame(tiny_config(rounds=1))
        with pytest.raises(GameError):
            game.value(Coalition.of([5]))

    def test_oracle_audits_over_memoised_game(self):
        game = RetrainingGame(tiny_config(rounds=1))
        oracle = game.oracle()
        oracle.evaluate(Coalition.of([1]))
        oracle.evaluate(Coalition.of([1]))
        assert oracle.call_count == 2  # the audit counts, the training does not


class TestArchive:
    def test_roundtrip(self, tiny_run, tmp_path):
        config, transcripts, _ = tiny_run
        save_transcripts(tmp_path / "arc", config, transcripts)
        config2, loaded = load_transcripts(tmp_path / "arc")
        assert config2 == config
        assert len(loaded) == len(transcripts)
        for a, b in zip(transcripts, loaded):
            assert a.round == b.round
            assert np.array_equal(a.m.values, b.m.values)
            assert np.array_equal(a.m0.values, b.m0.values)
            for ua, ub in zip(a.updates, b.updates):
                assert ua.client == ub.client
                assert np.array_equal(ua.delta.values, ub.delta.values)

    def test_tampered_round_detected(self, tiny_run, tmp_path):
        config, transcripts, _ = tiny_run
        save_transcripts(tmp_path / "arc", config, transcripts)
        victim = next((tmp_path / "arc" / "rounds").iterdir())
        blob = bytearray(victim.read_bytes())
        blob[-1] ^= 0xFF
        victim.write_bytes(bytes(blob))
        with pytest.raises(ArchiveError):
            load_transcripts(tmp_path / "arc")

    def test_empty_archive_rejected(self, tiny_run, tmp_path):
        config, _, _ = tiny_run
        with pytest.raises(ArchiveError):
            save_transcripts(tmp_path / "arc", config, [])

    def test_out_of_order_rounds_rejected(self, tiny_run, tmp_path):
        config, transcripts, _ = tiny_run
        with pytest.raises(ArchiveError):
            save_transcripts(tmp_path / "arc", config, transcripts[::-1])
