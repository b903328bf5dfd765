import json

import numpy as np
import pytest

from certmetric import Dataset, ToySpec, generate, knn_accuracy, preprocess
from certmetric.cli import main
from certmetric.datasets import load_dataset, save_dataset
from certmetric.model_io import load_model, save_model


def write_toy(tmp_path, name="toy.csv", which="two_gaussians", n=15, seed=3):
    data = generate(ToySpec(which=which, n_per_class=n, seed=seed))
    path = tmp_path / name
    save_dataset(str(path), data)
    return path


def loader_flags():
    return ["--header", "--label-col", "label"]


class TestTrainCommand:
    def test_writes_model_and_trace(self, tmp_path):
        data = write_toy(tmp_path)
        model = tmp_path / "model.json"
        trace = tmp_path / "trace.csv"
        code = main([
            "train", str(data), "--method", "lmnn-cr", "--tau", "0.3",
            "--lambda", "1.0", "--max-iter", "150", "--out", str(model),
            "--trace", str(trace), *loader_flags(),
        ])
        assert code == 0
        assert model.exists() and trace.exists()
        assert (tmp_path / "trace.png").exists()
        rows = trace.read_text().strip().splitlines()
        assert rows[0] == "iteration,J,J_lmnn,J_p,lr"
        assert len(rows) - 1 <= 150

    def test_lambda_zero_equals_plain_lmnn_byte_for_byte(self, tmp_path):
        data = write_toy(tmp_path)
        a = tmp_path / "plain.json"
        b = tmp_path / "cr0.json"
        args = [str(data), "--max-iter", "100", "--seed", "5", *loader_flags()]
        assert main(["train", *args, "--method", "lmnn", "--out", str(a)]) == 0
        assert main([
            "train", *args, "--method", "lmnn-cr", "--lambda", "0", "--out", str(b),
        ]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_mu_is_usage_error_without_output(self, tmp_path):
        data = write_toy(tmp_path)
        out = tmp_path / "never.json"
        code = main([
            "train", str(data), "--method", "lmnn", "--mu", "1.5",
            "--out", str(out), *loader_flags(),
        ])
        assert code == 1
        assert not out.exists()

    def test_mu_conflicts_with_scml(self, tmp_path):
        data = write_toy(tmp_path)
        code = main([
            "train", str(data), "--method", "scml", "--mu", "0.4",
            "--out", str(tmp_path / "m.json"), *loader_flags(),
        ])
        assert code == 1

    def test_tau_conflicts_with_plain_methods(self, tmp_path):
        data = write_toy(tmp_path)
        code = main([
            "train", str(data), "--method", "lmnn", "--tau", "0.5",
            "--out", str(tmp_path / "m.json"), *loader_flags(),
        ])
        assert code == 1

    def test_scml_cr_training(self, tmp_path):
        data = write_toy(tmp_path, n=20)
        model = tmp_path / "scml.json"
        code = main([
            "train", str(data), "--method", "scml-cr", "--tau", "0.2",
            "--lambda", "0.5", "--eta", "0.01", "--k-bases", "8",
            "--regions", "2", "--max-iter", "150", "--out", str(model),
            *loader_flags(),
        ])
        assert code == 0
        doc = json.loads(model.read_text())
        assert doc["kind"] == "sparse_compositional"
        assert len(doc["weights"]) == 8

    def test_scml_model_eval_and_margin(self, tmp_path):
        data = write_toy(tmp_path, n=20)
        model = tmp_path / "scml.json"
        main([
            "train", str(data), "--method", "scml-cr", "--tau", "0.2",
            "--lambda", "0.5", "--k-bases", "6", "--regions", "2",
            "--max-iter", "120", "--out", str(model), *loader_flags(),
        ])
        report = tmp_path / "eval.csv"
        code = main([
            "eval", "--model", str(model), "--train", str(data),
            "--test", str(data), "--k", "1", "--out", str(report),
            *loader_flags(),
        ])
        assert code == 0
        acc = float(report.read_text().strip().splitlines()[1].split(",")[2])
        assert acc == 1.0  # resubstitution with k=1 self-matches
        code = main([
            "margin", "--model", str(model), "--data", str(data),
            "--out-prefix", str(tmp_path / "sm"), *loader_flags(),
        ])
        assert code == 0
        assert (tmp_path / "sm.summary.json").exists()

    def test_pca_training(self, tmp_path):
        data = write_toy(tmp_path, which="multicollinear", n=40)
        model = tmp_path / "pca.json"
        code = main([
            "train", str(data), "--method", "lmnn-cr", "--tau", "0.2",
            "--lambda", "1.0", "--pca-variance", "0.99", "--max-iter", "100",
            "--out", str(model), *loader_flags(),
        ])
        assert code == 0
        doc = json.loads(model.read_text())
        assert doc["kind"] == "mahalanobis_pca"
        assert doc["pca"] is not None

    def test_missing_file_is_data_error(self, tmp_path):
        code = main([
            "train", str(tmp_path / "nope.csv"), "--method", "lmnn",
            "--out", str(tmp_path / "m.json"),
        ])
        assert code == 2

    def test_numerical_failure_exit_code(self, tmp_path):
        # an overflowing penalty weight makes the objective non-finite
        data = write_toy(tmp_path)
        out = tmp_path / "nf.json"
        code = main([
            "train", str(data), "--method", "lmnn-cr", "--tau", "10",
            "--lambda", "1e308", "--max-iter", "10", "--out", str(out),
            *loader_flags(),
        ])
        assert code == 3
        assert not out.exists()


class TestModelRoundTrip:
    def test_save_load_save_is_bit_exact(self, tmp_path):
        data = write_toy(tmp_path)
        model_path = tmp_path / "model.json"
        main([
            "train", str(data), "--method", "lmnn-cr", "--tau", "0.25",
            "--lambda", "2.0", "--max-iter", "120", "--out", str(model_path),
            *loader_flags(),
        ])
        model = load_model(str(model_path))
        second = tmp_path / "copy.json"
        save_model(str(second), model)
        assert model_path.read_bytes() == second.read_bytes()

    def test_metric_payload_roundtrip_exact(self, tmp_path):
        data = write_toy(tmp_path)
        model_path = tmp_path / "model.json"
        main([
            "train", str(data), "--method", "lmnn", "--max-iter", "80",
            "--out", str(model_path), *loader_flags(),
        ])
        first = load_model(str(model_path))
        second_path = tmp_path / "again.json"
        save_model(str(second_path), first)
        second = load_model(str(second_path))
        assert np.array_equal(first.metric, second.metric)
        assert np.array_equal(first.preprocess.mean, second.preprocess.mean)


class TestEvalCommand:
    def test_resubstitution_accuracy_is_one(self, tmp_path):
        data = write_toy(tmp_path)
        model = tmp_path / "model.json"
        main([
            "train", str(data), "--method", "lmnn", "--max-iter", "80",
            "--out", str(model), *loader_flags(),
        ])
        report = tmp_path / "eval.csv"
        code = main([
            "eval", "--model", str(model), "--train", str(data),
            "--test", str(data), "--k", "1", "--out", str(report),
            *loader_flags(),
        ])
        assert code == 0
        line = report.read_text().strip().splitlines()[1]
        assert float(line.split(",")[2]) == 1.0

    def test_pca_model_matches_manual_composition(self, tmp_path):
        raw = generate(ToySpec(which="multicollinear", n_per_class=40, seed=2))
        data_path = tmp_path / "mc.csv"
        save_dataset(str(data_path), raw)
        model_path = tmp_path / "pca.json"
        main([
            "train", str(data_path), "--method", "lmnn-cr", "--tau", "0.2",
            "--lambda", "1.0", "--pca-variance", "0.99", "--max-iter", "100",
            "--out", str(model_path), *loader_flags(),
        ])
        report = tmp_path / "eval.csv"
        main([
            "eval", "--model", str(model_path), "--train", str(data_path),
            "--test", str(data_path), "--k", "3", "--out", str(report),
            *loader_flags(),
        ])
        cli_acc = float(report.read_text().strip().splitlines()[1].split(",")[2])

        # manual composition: preprocess -> project -> metric
        model = load_model(str(model_path))
        from certmetric.evaluation import mahalanobis_metric

        train_t = Dataset(model.transform(raw.instances), raw.labels)
        manual = knn_accuracy(mahalanobis_metric(model.metric), train_t, train_t, 3)
        assert cli_acc == pytest.approx(manual)

    def test_dimension_mismatch_is_data_error(self, tmp_path):
        data = write_toy(tmp_path)
        other = write_toy(tmp_path, name="mc.csv", which="multicollinear", n=20)
        model = tmp_path / "model.json"
        main([
            "train", str(data), "--method", "lmnn", "--max-iter", "50",
            "--out", str(model), *loader_flags(),
        ])
        code = main([
            "eval", "--model", str(model), "--train", str(other),
            "--test", str(other), *loader_flags(),
        ])
        assert code == 2


class TestMarginCommand:
    def test_report_artifacts(self, tmp_path):
        data = write_toy(tmp_path)
        model = tmp_path / "model.json"
        main([
            "train", str(data), "--method", "lmnn-cr", "--tau", "0.3",
            "--lambda", "1.0", "--max-iter", "100", "--out", str(model),
            *loader_flags(),
        ])
        prefix = tmp_path / "marg"
        code = main([
            "margin", "--model", str(model), "--data", str(data),
            "--out-prefix", str(prefix), "--b-const", "2.0", "--delta", "0.05",
            *loader_flags(),
        ])
        assert code == 0
        summary = json.loads((tmp_path / "marg.summary.json").read_text())
        assert summary["n_triplets"] > 0
        assert "bound" in summary
        hist_rows = (tmp_path / "marg.hist.csv").read_text().strip().splitlines()
        counts = sum(int(r.split(",")[2]) for r in hist_rows[1:])
        assert counts == summary["n_triplets"]
        assert (tmp_path / "marg.hist.png").exists()

    def test_margins_csv_matches_triplet_count(self, tmp_path):
        data = write_toy(tmp_path)
        model = tmp_path / "model.json"
        main([
            "train", str(data), "--method", "lmnn", "--max-iter", "60",
            "--out", str(model), *loader_flags(),
        ])
        prefix = tmp_path / "m"
        main([
            "margin", "--model", str(model), "--data", str(data),
            "--out-prefix", str(prefix), *loader_flags(),
        ])
        rows = (tmp_path / "m.margins.csv").read_text().strip().splitlines()
        summary = json.loads((tmp_path / "m.summary.json").read_text())
        assert len(rows) - 1 == summary["n_triplets"]


class TestNoiseBenchCommand:
    def test_vanishing_noise_matches_clean_accuracy(self, tmp_path):
        # widely separated blobs classify perfectly, so the resampled
        # 300 dB run must exactly match the clean accuracy of 1.0
        from certmetric.datasets import save_dataset

        raw = generate(ToySpec(
            which="blobs", n_per_class=15, seed=4,
            means=[[0.0, 0.0], [30.0, 30.0]], covariances=[np.eye(2), np.eye(2)],
        ))
        data = tmp_path / "blobs.csv"
        save_dataset(str(data), raw)
        model = tmp_path / "model.json"
        main([
            "train", str(data), "--method", "lmnn", "--max-iter", "80",
            "--out", str(model), *loader_flags(),
        ])
        prefix = tmp_path / "nb"
        code = main([
            "noise-bench", "--model", str(model), "--train", str(data),
            "--test", str(data), "--snr", "300", "--kind", "spherical",
            "--augment-to", "200", "--seed", "0", "--out-prefix", str(prefix),
            *loader_flags(),
        ])
        assert code == 0
        row = (tmp_path / "nb.csv").read_text().strip().splitlines()[1]
        noisy_acc = float(row.split(",")[3])

        report = tmp_path / "clean.csv"
        main([
            "eval", "--model", str(model), "--train", str(data),
            "--test", str(data), "--k", "3", "--out", str(report),
            *loader_flags(),
        ])
        clean_acc = float(report.read_text().strip().splitlines()[1].split(",")[2])
        assert clean_acc == 1.0
        assert noisy_acc == clean_acc
        assert (tmp_path / "nb.png").exists()

    def test_bad_snr_list_is_usage_error(self, tmp_path):
        data = write_toy(tmp_path)
        model = tmp_path / "model.json"
        main([
            "train", str(data), "--method", "lmnn", "--max-iter", "40",
            "--out", str(model), *loader_flags(),
        ])
        code = main([
            "noise-bench", "--model", str(model), "--train", str(data),
            "--test", str(data), "--snr", "20,abc", "--out-prefix",
            str(tmp_path / "x"), *loader_flags(),
        ])
        assert code == 1


class TestSearchCommand:
    def test_trial_table_and_best(self, tmp_path):
        data = write_toy(tmp_path, n=25, seed=8)
        prefix = tmp_path / "search"
        code = main([
            "search", str(data), "--method", "lmnn-cr", "--trials", "3",
            "--folds", "3", "--max-iter", "40", "--seed", "1",
            "--out-prefix", str(prefix), *loader_flags(),
        ])
        assert code == 0
        rows = (tmp_path / "search.trials.csv").read_text().strip().splitlines()
        assert len(rows) - 1 == 3
        best = json.loads((tmp_path / "search.best.json").read_text())
        assert 0.1 <= best["mu"] <= 0.9
        assert (tmp_path / "search.png").exists()


class TestToyCommand:
    def test_writes_dataset(self, tmp_path):
        out = tmp_path / "bands.csv"
        code = main([
            "toy", "--which", "two_bands", "--seed", "2", "--out", str(out),
        ])
        assert code == 0
        data = load_dataset(str(out), label_col="label", header=True)
        assert data.instances.shape == (220, 2)

    def test_preprocess_flag(self, tmp_path):
        out = tmp_path / "g.csv"
        main([
            "toy", "--which", "two_gaussians", "--preprocess", "full",
            "--seed", "1", "--out", str(out),
        ])
        data = load_dataset(str(out), label_col="label", header=True)
        norms = np.linalg.norm(data.instances, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-9

    def test_matches_library_output(self, tmp_path):
        out = tmp_path / "toy.csv"
        main(["toy", "--which", "multicollinear", "--seed", "4", "--out", str(out)])
        data = load_dataset(str(out), label_col="label", header=True)
        direct = generate(ToySpec(which="multicollinear", seed=4))
        assert np.array_equal(data.instances, direct.instances)


class TestEndToEndWorkflow:
    def test_libsvm_pca_pipeline(self, tmp_path):
        # full chain: sparse input format -> projected training -> margin
        # report with bound -> noise bench, all through the public surface
        rng = np.random.default_rng(31)
        lines = []
        for k in range(40):
            label = 1 if k < 20 else 2
            center = 1.5 if label == 1 else -1.5
            x = [float(v) for v in rng.normal(loc=center, scale=0.8, size=3)]
            lines.append(f"{label} 1:{x[0]!r} 2:{x[1]!r} 3:{x[2]!r}")
        data = tmp_path / "data.svm"
        data.write_text("\n".join(lines) + "\n")

        model = tmp_path / "model.json"
        code = main([
            "train", str(data), "--format", "libsvm", "--method", "lmnn-cr",
            "--tau", "0.3", "--lambda", "1.0", "--pca-variance", "0.95",
            "--max-iter", "150", "--out", str(model),
        ])
        assert code == 0

        code = main([
            "margin", "--model", str(model), "--data", str(data),
            "--format", "libsvm", "--out-prefix", str(tmp_path / "marg"),
            "--b-const", "2.0", "--delta", "0.1",
        ])
        assert code == 0
        summary = json.loads((tmp_path / "marg.summary.json").read_text())
        assert summary["bound"]["log_k"] > 0

        code = main([
            "noise-bench", "--model", str(model), "--train", str(data),
            "--test", str(data), "--format", "libsvm", "--snr", "20,5",
            "--kind", "diagonal", "--augment-to", "500",
            "--out-prefix", str(tmp_path / "nb"),
        ])
        assert code == 0
        rows = (tmp_path / "nb.csv").read_text().strip().splitlines()
        assert len(rows) == 3  # header + two SNR cells


class TestUsageErrors:
    def test_unknown_method(self, tmp_path):
        data = write_toy(tmp_path)
        code = main([
            "train", str(data), "--method", "svm", "--out", str(tmp_path / "m.json"),
        ])
        assert code == 1

    def test_missing_subcommand(self):
        assert main([]) == 1
