"""Report serialization and figure rendering.

JSON and CSV outputs are deterministic byte for byte for a given run
configuration: keys are sorted, floats use a fixed shortest-repr format, and
nothing records wall-clock state. Figures are rendered to files next to the
delimited outputs and are a convenience view of the same data.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SWEEP_HEADER = [
    "c_in",
    "c_out",
    "w",
    "h",
    "modes",
    "prior",
    "level",
    "expected_distinct",
    "ratio",
    "stderr",
    "method",
]

RATIO_HEADER = ["layer", "c_in", "merge_ratio", "split_ratio"]

_NUM = {"type": "number"}
_INT = {"type": "integer"}

_HASH_ROWS = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["layer", "bandwidth", "n_modes", "distinct_before", "distinct_after"],
        "properties": {
            "layer": _INT,
            "bandwidth": _NUM,
            "n_modes": _INT,
            "distinct_before": _INT,
            "distinct_after": _INT,
        },
    },
}

_MERGE_ROWS = {
    "type": "array",
    "items": {
        "type": "object",
        "required": [
            "layer",
            "alpha_l",
            "threshold",
            "clusters_count",
            "neurons_before",
            "neurons_after",
        ],
    },
}

_SPLIT_ROWS = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["layer", "split", "remaining_ops", "original_ops", "pruning_ratio"],
    },
}

_RATIO_ROWS = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["layer", "c_in", "merge_ratio", "split_ratio"],
    },
}

_METRICS = {
    "type": "object",
    "required": ["params", "distinct", "flops"],
    "properties": {"params": _INT, "distinct": _INT, "flops": _INT},
}

SCHEMAS: dict[str, dict] = {
    "pipeline": {
        "type": "object",
        "required": ["config", "stages", "stage_metrics", "metrics", "layer_ratios"],
        "properties": {
            "stages": {
                "type": "object",
                "properties": {
                    "hash": _HASH_ROWS,
                    "merge": {
                        "type": "object",
                        "required": ["layers", "notes"],
                        "properties": {"layers": _MERGE_ROWS},
                    },
                    "split": _SPLIT_ROWS,
                },
            },
            "metrics": _METRICS,
            "layer_ratios": _RATIO_ROWS,
        },
    },
    "hash": {
        "type": "object",
        "required": ["config", "layers"],
        "properties": {"layers": _HASH_ROWS},
    },
    "merge": {
        "type": "object",
        "required": ["config", "layers", "notes"],
        "properties": {"layers": _MERGE_ROWS},
    },
    "split": {
        "type": "object",
        "required": ["config", "layers"],
        "properties": {"layers": _SPLIT_ROWS},
    },
    "bound": {
        "type": "object",
        "required": [
            "config",
            "per_layer",
            "U",
            "E_norm",
            "V_norm",
            "criterion_ratio",
            "verdict",
        ],
        "properties": {
            "per_layer": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["A", "B", "u", "layer_bound"],
                    "properties": {
                        "A": _NUM,
                        "B": _NUM,
                        "u": _NUM,
                        "layer_bound": _NUM,
                    },
                },
            },
            "U": _NUM,
            "E_norm": _NUM,
            "V_norm": _NUM,
            "criterion_ratio": _NUM,
            "verdict": {"enum": ["safe", "inconclusive"]},
        },
    },
    "eval": {
        "type": "object",
        "required": ["config", "accuracy"],
        "properties": {"accuracy": _NUM},
    },
    "calibration": {
        "type": "object",
        "required": ["config", "alpha_star"],
        "properties": {"alpha_star": _NUM},
    },
    "summary": {"type": "object", "required": ["config"]},
}


def validate_report(kind: str, payload: dict) -> None:
    """Check a report payload against its schema before it is written."""
    jsonschema.validate(payload, SCHEMAS[kind])


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_json(path, payload, kind: str | None = None) -> Path:
    if kind is not None:
        validate_report(kind, payload)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return p


def read_json(path):
    with Path(path).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path, header: list[str], rows: list[dict]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])
    return p


def write_sweep_csv(path, rows: list[dict]) -> Path:
    return write_csv(path, SWEEP_HEADER, rows)


def write_ratio_csv(path, records: list[dict]) -> Path:
    return write_csv(path, RATIO_HEADER, records)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

_LEVEL_COLORS = {"merge": "tab:blue", "split": "tab:orange"}


def render_mode_sweep(rows: list[dict], path) -> Path:
    """Expected pruning ratio against the representative count, per level."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for level in ("merge", "split"):
        pts = sorted(
            (r["modes"], r["ratio"])
            for r in rows
            if r["level"] == level and r["method"] != "monte_carlo"
        )
        if pts:
            ax.plot(*zip(*pts), marker="o", color=_LEVEL_COLORS[level], label=level)
    ax.set_xscale("log")
    ax.set_xlabel("representative values per layer")
    ax.set_ylabel("expected pruning ratio")
    ax.legend()
    fig.tight_layout()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return p


def render_dimension_sweep(rows: list[dict], path) -> Path:
    """Expected pruning ratio against the input width, per prior and level."""
    fig, ax = plt.subplots(figsize=(6, 4))
    priors = sorted({r["prior"] for r in rows})
    styles = ["-", "--", ":", "-."]
    for level in ("merge", "split"):
        for prior, style in zip(priors, styles):
            pts = sorted(
                (r["c_in"], r["ratio"])
                for r in rows
                if r["level"] == level
                and r["prior"] == prior
                and r["method"] != "monte_carlo"
            )
            if pts:
                ax.plot(
                    *zip(*pts),
                    style,
                    marker=".",
                    color=_LEVEL_COLORS[level],
                    label=f"{level}/{prior}",
                )
    ax.set_xscale("log", base=2)
    ax.set_xlabel("input channels")
    ax.set_ylabel("expected pruning ratio")
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return p


def render_layer_ratios(records: list[dict], path) -> Path:
    """Per-layer realized merge and split ratios against the input width."""
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r["c_in"] for r in records]
    ax.scatter(
        xs,
        [r["merge_ratio"] for r in records],
        color=_LEVEL_COLORS["merge"],
        label="merge",
        alpha=0.7,
    )
    ax.scatter(
        xs,
        [r["split_ratio"] for r in records],
        color=_LEVEL_COLORS["split"],
        label="split",
        alpha=0.7,
        marker="^",
    )
    ax.set_xlabel("input channels")
    ax.set_ylabel("realized pruning ratio")
    ax.legend()
    fig.tight_layout()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return p


def render_stage_summary(summary: dict, path) -> Path:
    """Bar chart of the headline percentages from a pipeline summary."""
    metrics = summary.get("metrics", {})
    keys = [k for k in ("distinct_removed_pct", "params_removed_pct", "flops_removed_pct") if k in metrics]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(range(len(keys)), [metrics[k] for k in keys], color="tab:green")
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels([k.replace("_pct", "").replace("_", " ") for k in keys])
    ax.set_ylabel("% removed")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return p
