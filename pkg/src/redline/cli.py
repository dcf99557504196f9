"""Command-line surface for the compression pipeline and its analyses.

Exit codes: 0 on success, 2 when the data-free accuracy criterion is
inconclusive (so CI can gate on it), 1 on any error. Every command is
deterministic given its inputs and seed; reports embed the configuration
they were produced with. Commands never touch a dataset unless one is
passed explicitly.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bounds as bounds_mod
from . import birthday as birthday_mod
from . import hashing as hashing_mod
from . import merge as merge_mod
from . import report as report_mod
from . import split as split_mod
from .bundle import load_bundle, load_dataset, save_bundle
from .model import NetworkGraph, count_distinct, count_flops, count_params

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INCONCLUSIVE = 2

_STRATEGY_ALIASES = {
    "constant": "constant",
    "asc": "linear_asc",
    "desc": "linear_desc",
    "block": "block",
}


def minimal_input_shape(net) -> tuple[int, ...]:
    """Smallest spatial input the network accepts, for FLOPs accounting."""
    hh = ww = 1
    for layer in reversed(net.layers):
        s = layer.stride
        if layer.padding == "same":
            hh = (hh - 1) * s + 1
            ww = (ww - 1) * s + 1
        else:
            hh = (hh - 1) * s + layer.kernel_h
            ww = (ww - 1) * s + layer.kernel_w
    c = net.layers[0].c_in
    if hh == 1 and ww == 1:
        return (c,)
    return (hh, ww, c)


def _parse_shape(text: str | None, net) -> tuple[int, ...]:
    if not text:
        return minimal_input_shape(net)
    parts = tuple(int(p) for p in text.split(",") if p)
    if len(parts) not in (1, 3):
        raise ValueError("--input-shape must be C or H,W,C")
    return parts


def _metrics(net, input_shape, baseline: dict | None = None) -> dict:
    _, params = count_params(net)
    _, distinct = count_distinct(net)
    _, flops = count_flops(net, input_shape)
    out = {"params": params, "distinct": distinct, "flops": flops}
    if baseline:
        for key in ("params", "distinct", "flops"):
            before = baseline[key]
            out[f"{key}_removed_pct"] = 100.0 * (1.0 - out[key] / before)
    return out


def _hash_config(args) -> hashing_mod.HashConfig:
    return hashing_mod.HashConfig(
        grid_size=args.grid_size,
        tau=args.tau,
        bandwidth=args.bandwidth,
        subsample_threshold=args.subsample_threshold,
        seed=args.seed,
    )


def _hash_report_rows(results) -> list[dict]:
    rows = []
    for i, res in enumerate(results):
        if res is None:
            continue
        rows.append(
            {
                "layer": i,
                "bandwidth": res.bandwidth,
                "n_modes": res.mode_count,
                "distinct_before": res.distinct_before,
                "distinct_after": res.distinct_after,
            }
        )
    return rows


def _merge_report_rows(net, plans) -> list[dict]:
    rows = []
    for i, plan in enumerate(plans):
        if plan is None:
            continue
        before = net.layers[i].c_out
        rows.append(
            {
                "layer": i,
                "alpha_l": None,
                "threshold": plan.threshold_distance,
                "clusters_count": plan.merged_count,
                "neurons_before": before,
                "neurons_after": plan.merged_count,
            }
        )
    return rows


def _split_report_rows(net, reports) -> list[dict]:
    rows = []
    for entry in reports:
        row = dict(entry)
        row["c_in"] = net.layers[entry["layer"]].c_in
        rows.append(row)
    return rows


def _config_echo(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def _write_outputs(writes) -> None:
    """Run deferred writes; on failure remove everything already written."""
    written: list[Path] = []
    try:
        for fn in writes:
            out = fn()
            if out is None:
                continue
            if isinstance(out, (list, tuple)):
                written.extend(Path(p) for p in out)
            else:
                written.append(Path(out))
    except BaseException:
        for p in written:
            if p.is_file():
                p.unlink(missing_ok=True)
        raise


def _bundle_writer(net, path):
    def write():
        out = save_bundle(net, path)
        return [out / "manifest.json", out / "weights.bin"]

    return write


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_pipeline(args) -> int:
    net = load_bundle(args.input)
    if not isinstance(net, NetworkGraph):
        raise ValueError("pipeline expects a dense (unsplit) bundle")
    input_shape = _parse_shape(args.input_shape, net)
    baseline = _metrics(net, input_shape)
    stage_metrics = {"original": dict(baseline)}
    stages: dict = {}

    current = net
    if not args.no_hash:
        current, results = hashing_mod.hash_network(current, _hash_config(args))
        stages["hash"] = _hash_report_rows(results)
        stage_metrics["hash"] = _metrics(current, input_shape, baseline)
    merge_plans = None
    if not args.no_merge:
        strategy = _STRATEGY_ALIASES[args.strategy]
        pre_merge = current
        current, merge_plans, notes = merge_mod.merge_network(
            current, args.alpha, strategy
        )
        alphas = merge_mod.alpha_schedule(args.alpha, len(pre_merge.layers), strategy)
        rows = _merge_report_rows(pre_merge, merge_plans)
        for row in rows:
            row["alpha_l"] = float(alphas[row["layer"]])
        stages["merge"] = {"layers": rows, "notes": notes}
        stage_metrics["merge"] = _metrics(current, input_shape, baseline)
    split_rows = None
    merged_net = current
    if not args.no_split:
        current, split_reports = split_mod.split_network(current)
        split_rows = _split_report_rows(merged_net, split_reports)
        stages["split"] = split_rows
        stage_metrics["split"] = _metrics(current, input_shape, baseline)

    final_key = [k for k in ("split", "merge", "hash") if k in stage_metrics]
    summary_metrics = dict(
        stage_metrics[final_key[0]] if final_key else baseline
    )
    for key in ("params", "distinct", "flops"):
        summary_metrics.setdefault(f"{key}_removed_pct", 0.0)
    ratio_records = birthday_mod.empirical_ratio_curves(
        net, merge_plans, split_rows
    )
    payload = {
        "config": _config_echo(
            args,
            [
                "input",
                "output",
                "grid_size",
                "tau",
                "alpha",
                "strategy",
                "seed",
                "no_hash",
                "no_merge",
                "no_split",
                "bandwidth",
                "input_shape",
            ],
        ),
        "input_shape": list(input_shape),
        "stages": stages,
        "stage_metrics": stage_metrics,
        "metrics": summary_metrics,
        "layer_ratios": ratio_records,
    }

    report_path = Path(args.report) if args.report else Path(args.output) / "report.json"
    writes = [
        _bundle_writer(current, args.output),
        lambda: report_mod.write_json(report_path, payload, kind="pipeline"),
    ]
    if not args.no_figures:
        base = report_path.with_suffix("")
        writes.append(
            lambda: report_mod.render_stage_summary(
                payload, base.parent / (base.name + "_summary.png")
            )
        )
        writes.append(
            lambda: report_mod.render_layer_ratios(
                ratio_records, base.parent / (base.name + "_layers.png")
            )
        )
    _write_outputs(writes)
    return EXIT_OK


def cmd_hash(args) -> int:
    net = load_bundle(args.input)
    hashed, results = hashing_mod.hash_network(net, _hash_config(args))
    payload = {
        "config": _config_echo(
            args, ["input", "output", "grid_size", "tau", "seed", "bandwidth"]
        ),
        "layers": _hash_report_rows(results),
    }
    report_path = Path(args.report) if args.report else Path(args.output) / "hash_report.json"
    _write_outputs(
        [
            _bundle_writer(hashed, args.output),
            lambda: report_mod.write_json(report_path, payload, kind="hash"),
        ]
    )
    return EXIT_OK


def cmd_merge(args) -> int:
    net = load_bundle(args.input)
    strategy = _STRATEGY_ALIASES[args.strategy]
    merged, plans, notes = merge_mod.merge_network(net, args.alpha, strategy)
    alphas = merge_mod.alpha_schedule(args.alpha, len(net.layers), strategy)
    rows = _merge_report_rows(net, plans)
    for row in rows:
        row["alpha_l"] = float(alphas[row["layer"]])
    payload = {
        "config": _config_echo(args, ["input", "output", "alpha", "strategy"]),
        "layers": rows,
        "notes": notes,
    }
    report_path = Path(args.report) if args.report else Path(args.output) / "merge_report.json"
    _write_outputs(
        [
            _bundle_writer(merged, args.output),
            lambda: report_mod.write_json(report_path, payload, kind="merge"),
        ]
    )
    return EXIT_OK


def cmd_split(args) -> int:
    net = load_bundle(args.input)
    if not isinstance(net, NetworkGraph):
        raise ValueError("bundle is already split")
    split_net, reports = split_mod.split_network(net)
    payload = {
        "config": _config_echo(args, ["input", "output"]),
        "layers": _split_report_rows(net, reports),
    }
    report_path = Path(args.report) if args.report else Path(args.output) / "split_report.json"
    _write_outputs(
        [
            _bundle_writer(split_net, args.output),
            lambda: report_mod.write_json(report_path, payload, kind="split"),
        ]
    )
    return EXIT_OK


def cmd_bound(args) -> int:
    net = load_bundle(args.input)
    nb, verdict = bounds_mod.analyze_network(
        net, _hash_config(args), threshold=args.threshold
    )
    payload = {
        "config": _config_echo(
            args, ["input", "grid_size", "tau", "seed", "bandwidth", "threshold"]
        ),
        "per_layer": [
            {
                "A": lb.segment_bound,
                "B": lb.smoothing_bound,
                "u": lb.per_weight,
                "layer_bound": lb.layer_bound,
            }
            for lb in nb.per_layer
        ],
        "U": nb.total,
        "E_norm": nb.e_norm,
        "V_norm": nb.v_norm,
        "criterion_ratio": nb.criterion_ratio,
        "verdict": verdict,
    }
    report_path = Path(args.report) if args.report else Path("bound_report.json")
    _write_outputs([lambda: report_mod.write_json(report_path, payload, kind="bound")])
    print(f"U={nb.total:.6g} criterion_ratio={nb.criterion_ratio:.6g} verdict={verdict}")
    return EXIT_OK if verdict == "safe" else EXIT_INCONCLUSIVE


def cmd_birthday(args) -> int:
    if args.fig4:
        grid = birthday_mod.mode_sweep_grid()
        priors = ["uniform"]
        kind = "modes"
    elif args.fig5:
        grid = birthday_mod.dimension_sweep_grid()
        priors = ["uniform", "gaussian", "exponential"]
        kind = "dims"
    else:
        if not args.dims or args.modes is None:
            raise ValueError("need --fig4, --fig5, or explicit --dims and --modes")
        w, h, c_in, c_out = (int(v) for v in args.dims.split(","))
        grid = [(w, h, c_in, c_out, args.modes)]
        priors = args.priors.split(",")
        kind = "dims"
    rows = birthday_mod.sweep_expectations(
        grid, priors, samples=args.samples, seed=args.seed
    )
    out_path = Path(args.output) if args.output else Path("sweep.csv")
    writes = [lambda: report_mod.write_sweep_csv(out_path, rows)]
    if not args.no_figures:
        fig_path = out_path.with_suffix(".png")
        if kind == "modes":
            writes.append(lambda: report_mod.render_mode_sweep(rows, fig_path))
        else:
            writes.append(lambda: report_mod.render_dimension_sweep(rows, fig_path))
    _write_outputs(writes)
    return EXIT_OK


def cmd_report(args) -> int:
    payload: dict = {"config": _config_echo(args, ["hash_report", "merge_report", "split_report"])}
    merge_rows = split_rows = None
    if args.hash_report:
        payload["hash"] = report_mod.read_json(args.hash_report)
    if args.merge_report:
        payload["merge"] = report_mod.read_json(args.merge_report)
        merge_rows = payload["merge"].get("layers", [])
    if args.split_report:
        payload["split"] = report_mod.read_json(args.split_report)
        split_rows = payload["split"].get("layers", [])
    records = []
    if split_rows is not None:
        merged_by_layer = {r["layer"]: r for r in (merge_rows or [])}
        for row in split_rows:
            m = merged_by_layer.get(row["layer"])
            merge_ratio = (
                1.0 - m["neurons_after"] / m["neurons_before"] if m else 0.0
            )
            records.append(
                {
                    "layer": row["layer"],
                    "c_in": row.get("c_in", 0),
                    "merge_ratio": merge_ratio,
                    "split_ratio": row["pruning_ratio"],
                }
            )
        payload["layer_ratios"] = records
    out_path = Path(args.output) if args.output else Path("summary.json")
    writes = [lambda: report_mod.write_json(out_path, payload, kind="summary")]
    if records:
        csv_path = out_path.with_suffix(".csv")
        writes.append(lambda: report_mod.write_ratio_csv(csv_path, records))
        if not args.no_figures:
            fig_path = out_path.with_name(out_path.stem + "_layers.png")
            writes.append(lambda: report_mod.render_layer_ratios(records, fig_path))
    _write_outputs(writes)
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.dataset:
        raise ValueError("eval is data-driven; pass --dataset")
    net = load_bundle(args.input)
    samples, labels = load_dataset(args.dataset)
    acc = merge_mod.accuracy(net, samples, labels)
    payload = {
        "config": _config_echo(args, ["input", "reference", "dataset"]),
        "accuracy": acc,
    }
    if args.reference:
        ref = load_bundle(args.reference)
        payload["reference_accuracy"] = merge_mod.accuracy(ref, samples, labels)
        payload["mean_divergence"] = bounds_mod.measure_divergence(net, ref, samples)
    report_path = Path(args.report) if args.report else Path("eval_report.json")
    _write_outputs([lambda: report_mod.write_json(report_path, payload, kind="eval")])
    print(
        " ".join(
            f"{k}={payload[k]:.6g}"
            for k in ("accuracy", "reference_accuracy", "mean_divergence")
            if k in payload
        )
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    if not args.dataset:
        raise ValueError("calibration is data-driven; pass --dataset")
    net = load_bundle(args.input)
    samples, labels = load_dataset(args.dataset)
    strategy = _STRATEGY_ALIASES[args.strategy]
    alpha_star = merge_mod.calibrate_alpha(
        net, samples, labels, args.tolerance, strategy
    )
    payload = {
        "config": _config_echo(args, ["input", "dataset", "tolerance", "strategy"]),
        "alpha_star": alpha_star,
    }
    report_path = Path(args.report) if args.report else Path("calibration.json")
    _write_outputs([lambda: report_mod.write_json(report_path, payload, kind="calibration")])
    print(f"alpha_star={alpha_star}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_hash_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-size", type=int, default=hashing_mod.DEFAULT_GRID_SIZE)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument(
        "--bandwidth",
        type=float,
        default=None,
        help="explicit kernel bandwidth (default: per-layer median gap)",
    )
    p.add_argument(
        "--subsample-threshold",
        type=int,
        default=hashing_mod.DEFAULT_SUBSAMPLE_THRESHOLD,
    )
    p.add_argument("--seed", type=int, default=0)


def _add_merge_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument(
        "--strategy", choices=sorted(_STRATEGY_ALIASES), default="block"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="redline",
        description="Data-free network compression pipeline and analyses",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="hash, merge, split in sequence")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--input-shape", default=None, help="C or H,W,C for FLOPs")
    p.add_argument("--no-hash", action="store_true")
    p.add_argument("--no-merge", action="store_true")
    p.add_argument("--no-split", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    _add_hash_flags(p)
    _add_merge_flags(p)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("hash", help="density hashing only")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    _add_hash_flags(p)
    p.set_defaults(fn=cmd_hash)

    p = sub.add_parser("merge", help="output-wise neuron merging only")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    _add_merge_flags(p)
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("split", help="input-wise splitting only")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("bound", help="hashing-error bound and safety verdict")
    p.add_argument("--input", required=True)
    p.add_argument("--report", default=None)
    p.add_argument(
        "--threshold", type=float, default=bounds_mod.DEFAULT_CRITERION_THRESHOLD
    )
    _add_hash_flags(p)
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("birthday", help="expected-pruning sweeps")
    p.add_argument("--output", default=None, help="CSV path")
    p.add_argument("--fig4", action="store_true", help="mode-count sweep preset")
    p.add_argument("--fig5", action="store_true", help="input-width sweep preset")
    p.add_argument("--dims", default=None, help="w,h,c_in,c_out")
    p.add_argument("--modes", type=int, default=None)
    p.add_argument("--priors", default="uniform")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_birthday)

    p = sub.add_parser("report", help="merge stage reports into one summary")
    p.add_argument("--hash-report", default=None)
    p.add_argument("--merge-report", default=None)
    p.add_argument("--split-report", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("eval", help="dataset accuracy and divergence")
    p.add_argument("--input", required=True)
    p.add_argument("--reference", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("calibrate", help="largest safe merge fraction")
    p.add_argument("--input", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--report", default=None)
    _add_merge_flags(p)
    p.set_defaults(fn=cmd_calibrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
