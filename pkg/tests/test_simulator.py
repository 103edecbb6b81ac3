"""Experiment orchestration: determinism, evaluation, scheduling, sweeps."""

import numpy as np
import pytest

from fedpbs import (
    ModelSpec,
    evaluate,
    init_params,
    loss_and_grad,
    resolve_config,
    run_experiment,
    sweep,
    synth_clusters,
    Dataset,
)
from fedpbs.cli import result_json
from fedpbs.errors import ConfigError, DataError, NumericError
from fedpbs.rng import substream
from fedpbs.simulator import load_dataset


BASE = {
    "synth_features": "6",
    "synth_classes": "3",
    "synth_per_class": "40",
    "synth_spread": "0.8",
    "alpha": "0.5",
    "clients": "4",
    "rounds": "4",
    "epochs": "2",
    "eta": "0.05",
    "batch_size": "8",
    "seed": "11",
}


def make_cfg(**overrides):
    raw = dict(BASE)
    raw.update({k: str(v) for k, v in overrides.items()})
    return resolve_config(raw)


class TestRunExperiment:
    def test_single_round_zero_eta_keeps_init(self):
        cfg = make_cfg(rounds=1, clients=1, eta=0.0)
        result = run_experiment(cfg)
        train, test = load_dataset(cfg.data, cfg.seed)
        spec = ModelSpec(train.n_features, train.num_classes, cfg.hidden)
        w0 = init_params(spec, substream(cfg.seed, "init"))
        assert np.array_equal(result.final_model, w0)
        loss0, acc0 = evaluate(spec, w0, test)
        assert result.records[-1].global_accuracy == acc0
        assert result.records[-1].global_loss == loss0

    def test_rerun_serializes_byte_identically(self):
        cfg = make_cfg(strategy="fedpbs")
        first = result_json(run_experiment(cfg))
        second = result_json(run_experiment(cfg))
        assert first == second

    def test_fedavg_tracks_centralized_oracle_on_separable_blobs(self):
        cfg = make_cfg(
            synth_features=8,
            synth_classes=4,
            synth_per_class=80,
            synth_spread=0.2,
            alpha=100,
            clients=5,
            rounds=30,
            epochs=3,
            eta=0.1,
            batch_size=16,
            strategy="fedavg",
            seed=5,
        )
        fed_acc = run_experiment(cfg).records[-1].global_accuracy

        # Centralized oracle: plain minibatch SGD on the pooled train set
        # with the same pass budget.
        train, test = load_dataset(cfg.data, cfg.seed)
        spec = ModelSpec(train.n_features, train.num_classes, 0)
        w = init_params(spec, substream(cfg.seed, "init"))
        rng = np.random.default_rng(0)
        for _ in range(cfg.rounds * cfg.local.epochs):
            perm = rng.permutation(train.n_samples)
            for start in range(0, train.n_samples, 16):
                batch = perm[start : start + 16]
                _, grad = loss_and_grad(spec, w, train.features[batch], train.labels[batch])
                w -= 0.1 * grad
        _, oracle_acc = evaluate(spec, w, test)
        assert oracle_acc > 0.99
        assert fed_acc > 0.95
        assert fed_acc >= oracle_acc - 0.05

    @pytest.mark.parametrize("kind", ["fedavg", "fedprox", "fedbs", "fedpbs"])
    def test_loss_drops_for_every_strategy(self, kind):
        cfg = make_cfg(strategy=kind, rounds=6, synth_spread=0.5)
        records = run_experiment(cfg).records
        assert records[-1].global_loss < records[0].global_loss
        for rec in records:
            assert 0.0 <= rec.global_accuracy <= 1.0
            assert np.isfinite(rec.global_loss)

    def test_worker_count_does_not_change_results(self):
        cfg = make_cfg(strategy="fedpbs", clients=5)
        lone = run_experiment(cfg, threads=1)
        pooled = run_experiment(cfg, threads=4)
        assert np.array_equal(lone.final_model, pooled.final_model)
        for a, b in zip(lone.records, pooled.records):
            assert (a.global_loss, a.global_accuracy, a.selected, a.hgv) == (
                b.global_loss,
                b.global_accuracy,
                b.selected,
                b.hgv,
            )
            assert a.per_client_variance == b.per_client_variance

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_blowup_names_round_and_client(self):
        cfg = make_cfg(eta=1e308, rounds=2)
        with pytest.raises(NumericError, match=r"round \d+ from client \d+"):
            run_experiment(cfg)

    def test_eval_schedule(self):
        records = run_experiment(make_cfg(rounds=10, eval_every=3)).records
        assert [r.round for r in records] == [0, 3, 6, 9, 10]
        records = run_experiment(make_cfg(rounds=9, eval_every=3)).records
        assert [r.round for r in records] == [0, 3, 6, 9]

    def test_round_zero_record_has_no_selection(self):
        records = run_experiment(make_cfg(rounds=2)).records
        assert records[0].selected == () and records[0].hgv == ()
        assert len(records[1].selected) == 4

    def test_hgv_subset_of_selected(self):
        cfg = make_cfg(strategy="fedpbs", rounds=5, batch_threshold=16)
        for rec in run_experiment(cfg).records:
            assert set(rec.hgv) <= set(rec.selected)

    def test_calibrated_threshold_splits_clients(self):
        # With the default "calibrate" rule half the clients sit at or
        # below the median round-0 variance, so round 1 mixes paths
        # unless the batch screen interferes.
        cfg = make_cfg(strategy="fedpbs", clients=6, rounds=1, batch_threshold=1)
        rec = run_experiment(cfg).records[-1]
        assert 0 < len(rec.hgv) < 6

    def test_synth_train_test_are_distinct_draws(self):
        cfg = make_cfg()
        train, test = load_dataset(cfg.data, cfg.seed)
        assert train.n_samples != test.n_samples or not np.array_equal(
            train.features[: test.n_samples], test.features
        )


class TestEvaluate:
    def test_zero_model_balanced_binary(self):
        # All-equal logits: argmax tie-break picks class 1, so accuracy is
        # the class-1 share and loss is ln 2.
        spec = ModelSpec(3, 2)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(10, 3))
        y = np.array([1, 2] * 5)
        test = Dataset(x, y, 2)
        loss, acc = evaluate(spec, np.zeros(spec.param_count), test)
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)
        assert acc == 0.5

    def test_duplicated_test_set_same_metrics(self):
        ds = synth_clusters(4, 3, 20, 0.8, seed=2)
        doubled = Dataset(
            np.concatenate([ds.features, ds.features]),
            np.concatenate([ds.labels, ds.labels]),
            3,
        )
        spec = ModelSpec(4, 3)
        w = init_params(spec, substream(1, "init"))
        assert evaluate(spec, w, ds) == evaluate(spec, w, doubled)

    def test_converged_model_on_separable_data(self):
        ds = synth_clusters(4, 3, 30, 0.05, seed=4)
        spec = ModelSpec(4, 3)
        w = np.zeros(spec.param_count)
        for _ in range(300):
            _, grad = loss_and_grad(spec, w, ds.features, ds.labels)
            w -= 0.5 * grad
        _, acc = evaluate(spec, w, ds)
        assert acc == 1.0


class TestSweep:
    def test_single_cell_matches_run_experiment(self):
        rows = sweep(BASE, alphas=[0.5], strategies=["fedavg"], seeds=[11]).rows
        assert len(rows) == 1
        direct = run_experiment(make_cfg(strategy="fedavg")).records[-1]
        assert rows[0].final_accuracy == direct.global_accuracy
        assert rows[0].final_loss == direct.global_loss

    def test_cross_product_counts_and_summary(self):
        result = sweep(BASE, alphas=[0.5], strategies=["fedavg", "fedprox"], seeds=[1, 2, 3])
        assert len(result.rows) == 6
        assert len(result.summary) == 2
        for summary in result.summary:
            cell = [r for r in result.rows if r.strategy == summary.strategy]
            accs = np.array([r.final_accuracy for r in cell])
            assert summary.mean_accuracy == pytest.approx(accs.mean(), abs=1e-15)
            assert summary.std_accuracy == pytest.approx(accs.std(), abs=1e-15)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_failing_cell_is_tagged(self):
        bad = dict(BASE)
        bad["eta"] = "1e308"
        with pytest.raises(NumericError, match="sweep cell"):
            sweep(bad, alphas=[0.5], strategies=["fedavg"], seeds=[1])

    def test_empty_lists_rejected(self):
        with pytest.raises(ConfigError):
            sweep(BASE, alphas=[], strategies=["fedavg"], seeds=[1])


class TestLoadDataset:
    def test_csv_source_roundtrip(self, tmp_path):
        for name, n in (("train.csv", 30), ("test.csv", 10)):
            rng = np.random.default_rng(len(name))
            lines = ["f1,f2,label"]
            for i in range(n):
                vals = rng.normal(size=2)
                lines.append(f"{vals[0]:.5f},{vals[1]:.5f},{(i % 2) + 1}")
            (tmp_path / name).write_text("\n".join(lines) + "\n")
        cfg = make_cfg(
            data="csv",
            csv_path=str(tmp_path / "train.csv"),
            csv_test_path=str(tmp_path / "test.csv"),
            clients=2,
            rounds=2,
        )
        result = run_experiment(cfg)
        assert len(result.records) == 3

    def test_csv_label_mismatch(self, tmp_path):
        (tmp_path / "train.csv").write_text("a,label\n1.0,1\n2.0,2\n")
        (tmp_path / "test.csv").write_text("a,label\n1.0,3\n2.0,4\n")
        cfg = make_cfg(
            data="csv",
            csv_path=str(tmp_path / "train.csv"),
            csv_test_path=str(tmp_path / "test.csv"),
            clients=1,
        )
        with pytest.raises(DataError, match="label values"):
            load_dataset(cfg.data, cfg.seed)

    def test_standardize_flag(self):
        cfg = make_cfg(standardize="true")
        train, _ = load_dataset(cfg.data, cfg.seed)
        np.testing.assert_allclose(train.features.mean(axis=0), 0.0, atol=1e-12)
