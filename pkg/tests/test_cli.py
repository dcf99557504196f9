import csv
import json

import numpy as np
import pytest

from redline import (
    BatchNormStats,
    LayerSpec,
    NetworkGraph,
    Tensor4,
    forward,
    load_bundle,
    save_bundle,
    save_dataset,
)
from redline.cli import EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_OK, main

from conftest import dense_layer, mixture_weights, random_mlp


def run(*argv):
    return main([str(a) for a in argv])


def make_mixture_net(rng, widths=(8, 16, 8, 4)):
    layers = []
    for i in range(len(widths) - 1):
        c_in, c_out = widths[i], widths[i + 1]
        w = mixture_weights(rng, c_in * c_out, [0.0, 1.0], 0.01)
        layers.append(
            LayerSpec(
                "dense",
                Tensor4(w.reshape(1, 1, c_in, c_out)),
                np.zeros(c_out, dtype=np.float32),
                activation="relu" if i < len(widths) - 2 else "identity",
                bn=BatchNormStats(
                    mean=rng.normal(0, 1, c_out).astype(np.float32),
                    std=rng.uniform(1, 2, c_out).astype(np.float32),
                )
                if i < len(widths) - 2
                else None,
            )
        )
    return NetworkGraph(tuple(layers))


@pytest.fixture
def mixture_bundle(tmp_path, rng):
    net = make_mixture_net(rng)
    save_bundle(net, tmp_path / "in")
    return tmp_path / "in", net


class TestPipeline:
    def test_unhashed_alpha_zero_reports_zero_pruning(self, tmp_path, rng):
        net = random_mlp([6, 10, 4], rng)
        save_bundle(net, tmp_path / "in")
        code = run(
            "pipeline",
            "--input", tmp_path / "in",
            "--output", tmp_path / "out",
            "--report", tmp_path / "report.json",
            "--no-hash",
            "--alpha", 0,
            "--no-figures",
        )
        assert code == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["metrics"]["params_removed_pct"] == 0.0
        assert report["metrics"]["flops_removed_pct"] == 0.0
        assert all(r["pruning_ratio"] == 0.0 for r in report["stages"]["split"])

    def test_mixture_net_split_matches_op_reports(self, tmp_path, rng, mixture_bundle):
        bundle, _ = mixture_bundle
        code = run(
            "pipeline",
            "--input", bundle,
            "--output", tmp_path / "out",
            "--report", tmp_path / "report.json",
            "--bandwidth", 0.01,
            "--no-figures",
        )
        assert code == EXIT_OK
        report = json.loads((tmp_path / "report.json").read_text())
        assert any(r["pruning_ratio"] > 0 for r in report["stages"]["split"])
        out = load_bundle(tmp_path / "out")
        for layer, row in zip(out.layers, report["stages"]["split"]):
            if row["split"]:
                assert layer.remaining_ops() == row["remaining_ops"]

    def test_pipeline_preserves_function_at_alpha_zero(self, tmp_path, rng, mixture_bundle):
        bundle, net = mixture_bundle
        run(
            "pipeline",
            "--input", bundle,
            "--output", tmp_path / "out",
            "--no-hash",
            "--alpha", 0,
            "--no-figures",
        )
        out = load_bundle(tmp_path / "out")
        x = rng.normal(size=(32, 8)).astype(np.float32)
        assert np.abs(forward(net, x) - forward(out, x)).max() <= 1e-5

    def test_deterministic_reports(self, tmp_path, mixture_bundle):
        bundle, _ = mixture_bundle
        snapshots = []
        for _ in range(2):
            code = run(
                "pipeline",
                "--input", bundle,
                "--output", tmp_path / "out",
                "--report", tmp_path / "rep.json",
                "--seed", 7,
                "--no-figures",
            )
            assert code == EXIT_OK
            snapshots.append(
                (
                    (tmp_path / "rep.json").read_bytes(),
                    (tmp_path / "out" / "weights.bin").read_bytes(),
                )
            )
        assert snapshots[0] == snapshots[1]

    def test_figures_rendered_on_report_path(self, tmp_path, mixture_bundle):
        bundle, _ = mixture_bundle
        code = run(
            "pipeline",
            "--input", bundle,
            "--output", tmp_path / "out",
            "--report", tmp_path / "rep.json",
        )
        assert code == EXIT_OK
        assert (tmp_path / "rep_summary.png").is_file()
        assert (tmp_path / "rep_layers.png").is_file()

    def test_missing_bundle_is_error(self, tmp_path):
        assert run("pipeline", "--input", tmp_path / "nope", "--output", tmp_path / "o") == EXIT_ERROR


class TestStageCommands:
    def test_hash_report_schema(self, tmp_path, mixture_bundle):
        bundle, _ = mixture_bundle
        code = run(
            "hash",
            "--input", bundle,
            "--output", tmp_path / "hashed",
            "--report", tmp_path / "hash.json",
            "--bandwidth", 0.01,
        )
        assert code == EXIT_OK
        rows = json.loads((tmp_path / "hash.json").read_text())["layers"]
        assert {"layer", "bandwidth", "n_modes", "distinct_before", "distinct_after"} <= set(
            rows[0]
        )
        assert all(r["distinct_after"] <= r["n_modes"] for r in rows)

    def test_merge_then_split_commands(self, tmp_path, rng):
        w = rng.normal(size=(1, 1, 3, 4)).astype(np.float32)
        w[:, :, :, 2] = w[:, :, :, 0]
        net = NetworkGraph(
            (
                LayerSpec("dense", Tensor4(w), np.zeros(4, dtype=np.float32)),
                dense_layer(4, 3, rng, activation="identity"),
            )
        )
        save_bundle(net, tmp_path / "in")
        assert (
            run(
                "merge",
                "--input", tmp_path / "in",
                "--output", tmp_path / "merged",
                "--report", tmp_path / "merge.json",
                "--alpha", 0,
            )
            == EXIT_OK
        )
        merged = load_bundle(tmp_path / "merged")
        assert merged.layers[0].c_out == 3
        rows = json.loads((tmp_path / "merge.json").read_text())["layers"]
        assert rows[0]["neurons_before"] == 4
        assert rows[0]["neurons_after"] == 3
        assert (
            run(
                "split",
                "--input", tmp_path / "merged",
                "--output", tmp_path / "split",
                "--report", tmp_path / "split.json",
            )
            == EXIT_OK
        )
        srows = json.loads((tmp_path / "split.json").read_text())["layers"]
        assert all("pruning_ratio" in r for r in srows)

    def test_report_merges_stages(self, tmp_path, rng, mixture_bundle):
        bundle, _ = mixture_bundle
        run("hash", "--input", bundle, "--output", tmp_path / "h",
            "--report", tmp_path / "hash.json", "--bandwidth", 0.01)
        run("merge", "--input", tmp_path / "h", "--output", tmp_path / "m",
            "--report", tmp_path / "merge.json", "--alpha", 0)
        run("split", "--input", tmp_path / "m", "--output", tmp_path / "s",
            "--report", tmp_path / "split.json")
        code = run(
            "report",
            "--hash-report", tmp_path / "hash.json",
            "--merge-report", tmp_path / "merge.json",
            "--split-report", tmp_path / "split.json",
            "--output", tmp_path / "summary.json",
            "--no-figures",
        )
        assert code == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert "hash" in summary and "layer_ratios" in summary
        assert (tmp_path / "summary.csv").is_file()


class TestBoundCommand:
    def test_constant_net_safe(self, tmp_path):
        const = LayerSpec(
            "dense",
            Tensor4(np.full((1, 1, 4, 4), 0.5, dtype=np.float32)),
            np.zeros(4, dtype=np.float32),
            bn=BatchNormStats(mean=np.full(4, 2.0), std=np.ones(4)),
        )
        final = LayerSpec(
            "dense",
            Tensor4(np.full((1, 1, 4, 2), 0.25, dtype=np.float32)),
            np.zeros(2, dtype=np.float32),
            activation="identity",
        )
        save_bundle(NetworkGraph((const, final)), tmp_path / "in")
        code = run("bound", "--input", tmp_path / "in", "--report", tmp_path / "b.json")
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "b.json").read_text())
        assert payload["U"] == 0.0
        assert payload["verdict"] == "safe"
        assert {"A", "B", "u", "layer_bound"} <= set(payload["per_layer"][0])

    def test_inconclusive_exit_code(self, tmp_path, rng, mixture_bundle):
        bundle, _ = mixture_bundle
        code = run(
            "bound",
            "--input", bundle,
            "--report", tmp_path / "b.json",
            "--bandwidth", 5.0,
        )
        assert code == EXIT_INCONCLUSIVE
        payload = json.loads((tmp_path / "b.json").read_text())
        assert payload["verdict"] == "inconclusive"


class TestBirthdayCommand:
    def test_fig5_csv_split_beats_merge(self, tmp_path):
        code = run(
            "birthday",
            "--fig5",
            "--output", tmp_path / "sweep.csv",
            "--samples", 400,
            "--no-figures",
        )
        assert code == EXIT_OK
        with open(tmp_path / "sweep.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        at64 = [r for r in rows if r["c_in"] == "64" and r["method"] != "monte_carlo"]
        by_prior = {}
        for r in at64:
            by_prior.setdefault(r["prior"], {})[r["level"]] = float(r["ratio"])
        assert by_prior
        for levels in by_prior.values():
            assert levels["split"] > levels["merge"]

    def test_fig4_figure_rendered(self, tmp_path):
        code = run("birthday", "--fig4", "--output", tmp_path / "modes.csv", "--samples", 0)
        assert code == EXIT_OK
        assert (tmp_path / "modes.csv").is_file()
        assert (tmp_path / "modes.png").is_file()

    def test_deterministic_csv(self, tmp_path):
        for name in ("x.csv", "y.csv"):
            run("birthday", "--fig5", "--output", tmp_path / name,
                "--samples", 200, "--seed", 3, "--no-figures")
        assert (tmp_path / "x.csv").read_bytes() == (tmp_path / "y.csv").read_bytes()


class TestEvalCommand:
    def test_self_comparison(self, tmp_path, rng):
        net = random_mlp([4, 8, 3], rng)
        save_bundle(net, tmp_path / "in")
        x = rng.normal(size=(40, 4)).astype(np.float32)
        y = forward(net, x).argmax(axis=1)
        save_dataset(x, y, tmp_path / "data")
        code = run(
            "eval",
            "--input", tmp_path / "in",
            "--reference", tmp_path / "in",
            "--dataset", tmp_path / "data",
            "--report", tmp_path / "eval.json",
        )
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "eval.json").read_text())
        assert payload["accuracy"] == 1.0
        assert payload["mean_divergence"] == 0.0

    def test_eval_requires_dataset(self, tmp_path, rng):
        net = random_mlp([4, 8, 3], rng)
        save_bundle(net, tmp_path / "in")
        assert run("eval", "--input", tmp_path / "in") == EXIT_ERROR

    def test_calibrate_full_tolerance(self, tmp_path, rng):
        net = random_mlp([4, 8, 3], rng)
        save_bundle(net, tmp_path / "in")
        x = rng.normal(size=(24, 4)).astype(np.float32)
        y = forward(net, x).argmax(axis=1)
        save_dataset(x, y, tmp_path / "data")
        code = run(
            "calibrate",
            "--input", tmp_path / "in",
            "--dataset", tmp_path / "data",
            "--tolerance", 1.0,
            "--report", tmp_path / "cal.json",
        )
        assert code == EXIT_OK
        assert json.loads((tmp_path / "cal.json").read_text())["alpha_star"] == 1.0


class TestReportSchemas:
    def test_valid_payloads_pass(self):
        from redline.report import validate_report

        validate_report(
            "hash",
            {
                "config": {},
                "layers": [
                    {
                        "layer": 0,
                        "bandwidth": 0.1,
                        "n_modes": 2,
                        "distinct_before": 10,
                        "distinct_after": 2,
                    }
                ],
            },
        )

    def test_malformed_payload_rejected(self):
        import jsonschema

        from redline.report import validate_report

        with pytest.raises(jsonschema.ValidationError):
            validate_report("hash", {"layers": [{"layer": 0}]})
        with pytest.raises(jsonschema.ValidationError):
            validate_report(
                "bound",
                {
                    "config": {},
                    "per_layer": [],
                    "U": 0.0,
                    "E_norm": 0.0,
                    "V_norm": 0.0,
                    "criterion_ratio": 0.0,
                    "verdict": "maybe",
                },
            )
