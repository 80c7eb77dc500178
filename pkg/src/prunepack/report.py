"""Plan reports: per-layer channel accounting as text, JSON, CSV, and figures.

The per-layer table lists, for every weighted layer, its original and kept
output channels and the resulting pruning ratio, mirroring the channel bar
charts customarily used to present pruning outcomes. All renderings are
deterministic byte for byte given the same plan and graph.
"""

from __future__ import annotations

import csv
import io
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import ValidationError
from .graph import COMPUTE_KINDS, NetworkGraph, apply_prune_plan, layer_flops, network_flops
from .planner import PrunePlan

CSV_COLUMNS = (
    "layer", "kind", "out_channels", "kept_out", "pruned_out",
    "prune_ratio_pct", "flops_before", "flops_after",
)

_PNG_METADATA = {"Software": "prunepack"}


def emit_report(plan: PrunePlan, graph: NetworkGraph) -> dict:
    """Assemble the report structure; totals are recomputed from the plan.

    Raises if the plan's recorded totals disagree with an independent
    recomputation on this graph (plan/graph mismatch).
    """
    pruned = apply_prune_plan(graph, plan)
    achieved = network_flops(pruned)
    if achieved != plan.achieved_flops:
        raise ValidationError(
            f"plan records achieved_flops={plan.achieved_flops} but applying it to this "
            f"graph yields {achieved}; plan and graph do not match"
        )
    original = network_flops(graph)
    pruned_by_id = pruned.by_id

    layers = []
    for layer in graph.layers:
        if layer.kind not in COMPUTE_KINDS:
            continue
        after = pruned_by_id[layer.id]
        kept = after.c_out
        layers.append({
            "layer": layer.id,
            "kind": layer.kind,
            "out_channels": layer.c_out,
            "kept_out": kept,
            "pruned_out": layer.c_out - kept,
            "prune_ratio_pct": 100.0 * (layer.c_out - kept) / layer.c_out,
            "flops_before": layer_flops(layer),
            "flops_after": layer_flops(after),
        })

    totals = {
        "original_flops": original,
        "achieved_flops": achieved,
        "achieved_ratio": plan.achieved_ratio,
        "budget_kind": plan.budget.kind,
        "budget_value": plan.budget.value,
    }
    if plan.budget.kind == "flops_absolute":
        totals["budget_residual_flops"] = int(round(plan.budget.value)) - achieved
    elif plan.budget.kind == "flops_fraction":
        totals["budget_residual_flops"] = int(round(plan.budget.value * original)) - achieved

    solver = {"solver": plan.solver, "importance_mode": plan.importance_mode}
    if plan.stats:
        solver.update({k: plan.stats[k] for k in sorted(plan.stats)})
    return {"layers": layers, "totals": totals, "solver": solver}


def render_csv(report: dict) -> str:
    """The per-layer table as a comma-delimited document."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report["layers"]:
        writer.writerow([
            row["layer"], row["kind"], row["out_channels"], row["kept_out"],
            row["pruned_out"], f"{row['prune_ratio_pct']:.6f}",
            row["flops_before"], row["flops_after"],
        ])
    return buf.getvalue()


def render_text(report: dict) -> str:
    lines = []
    header = f"{'layer':<28} {'kind':<16} {'out':>6} {'kept':>6} {'pruned':>6} {'ratio%':>9} {'flops_after':>14}"
    lines.append(header)
    lines.append("-" * len(header))
    for row in report["layers"]:
        lines.append(
            f"{row['layer']:<28} {row['kind']:<16} {row['out_channels']:>6} {row['kept_out']:>6} "
            f"{row['pruned_out']:>6} {row['prune_ratio_pct']:>9.4f} {row['flops_after']:>14}"
        )
    totals = report["totals"]
    lines.append("")
    lines.append(f"original FLOPs : {totals['original_flops']}")
    lines.append(f"achieved FLOPs : {totals['achieved_flops']}")
    lines.append(f"prune ratio    : {100.0 * totals['achieved_ratio']:.4f}%")
    lines.append(f"budget         : {totals['budget_kind']} = {totals['budget_value']}")
    if "budget_residual_flops" in totals:
        lines.append(f"budget residual: {totals['budget_residual_flops']} FLOPs")
    solver = report["solver"]
    lines.append(f"solver         : {solver['solver']} (importance: {solver['importance_mode']})")
    for key in sorted(solver):
        if key in ("solver", "importance_mode"):
            continue
        lines.append(f"  {key}: {solver[key]}")
    return "\n".join(lines) + "\n"


def render_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def render_figures(report: dict, out_dir, stem: str) -> list[str]:
    """Write the channel-count and prune-ratio bar charts as PNG files."""
    rows = report["layers"]
    names = [r["layer"] for r in rows]
    kept = [r["kept_out"] for r in rows]
    pruned = [r["pruned_out"] for r in rows]
    ratios = [r["prune_ratio_pct"] for r in rows]
    x = range(len(rows))
    written = []

    fig, ax = plt.subplots(figsize=(max(6.0, 0.22 * len(rows) + 1.5), 4.0))
    ax.bar(x, kept, label="kept", color="#4878d0")
    ax.bar(x, pruned, bottom=kept, label="pruned", color="#d65f5f")
    ax.set_ylabel("output channels")
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=90, fontsize=5)
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}.channels.png")
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(max(6.0, 0.22 * len(rows) + 1.5), 4.0))
    ax.bar(x, ratios, color="#6acc64")
    ax.set_ylabel("pruning ratio (%)")
    ax.set_ylim(0, 100)
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=90, fontsize=5)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{stem}.ratios.png")
    fig.savefig(path, dpi=150, metadata=_PNG_METADATA)
    plt.close(fig)
    written.append(path)
    return written


def write_report(report: dict, out_dir, stem: str, figures: bool = True) -> dict[str, str]:
    """Write .txt/.json/.csv renderings (and figures) under ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for suffix, renderer in (("txt", render_text), ("json", render_json), ("csv", render_csv)):
        path = os.path.join(out_dir, f"{stem}.report.{suffix}")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(renderer(report))
        paths[suffix] = path
    if figures:
        for path in render_figures(report, out_dir, stem):
            paths[os.path.splitext(path)[0].rsplit(".", 1)[-1]] = path
    return paths
