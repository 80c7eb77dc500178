"""Command-line driver.

Subcommands: ``plan`` (solve and write plan + report), ``flops``, ``groups``,
``losses``, ``report``. Machine-readable results go to stdout, diagnostics to
stderr. Exit codes: 0 success, 1 validation or format error, 2 infeasible
budget.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import InfeasibleBudgetError, PrunepackError
from .distill import FeatureMapBatch, ReconstructionMatrix, fit_reconstruction, ikd_loss, kd_loss
from .graph import build_coupling_groups, load_graph, network_flops
from .importance import ChannelImportance, ScoreSample, compute_channel_importance
from .planner import Budget, PlanOptions, load_plan, plan_prune, plan_to_json
from .report import emit_report, write_report
from .tensorio import load_tensor_dir


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; 2 is reserved for
    # infeasible budgets here, so remap usage problems to a normal failure.
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="prunepack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="compute a prune plan and its report")
    p.add_argument("--graph", required=True, help="graph document (JSON)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scores", help="precomputed scores file {layer_id: [float, ...]}")
    src.add_argument("--tensors", help="tensor dump dir with weights/<id> and grads/<id>/<i>")
    bud = p.add_mutually_exclusive_group(required=True)
    bud.add_argument("--budget-fraction", type=float, help="keep fraction of original FLOPs, in (0, 1]")
    bud.add_argument("--budget-flops", type=int, help="absolute FLOPs target")
    bud.add_argument("--budget-latency-us", type=float, help="absolute latency target, microseconds")
    p.add_argument("--latency-table", help="latency measurements {layer_id: microseconds}")
    p.add_argument("--solver", choices=("dp", "greedy"), default="dp")
    p.add_argument("--importance-mode", choices=("abs_product", "abs_taylor", "signed_taylor"),
                   default="abs_product")
    p.add_argument("--min-keep", type=int, default=1)
    p.add_argument("--clamp-negative", action="store_true",
                   help="clamp negative channel values to zero instead of erroring")
    p.add_argument("--no-fallback", action="store_true",
                   help="fail instead of switching to greedy when the DP tables exceed the memory cap")
    p.add_argument("--out", required=True, help="output plan path")
    p.add_argument("--report-dir", help="report directory (default: the plan's directory)")
    p.add_argument("--no-figures", action="store_true", help="skip the report PNG figures")

    p = sub.add_parser("flops", help="print total network FLOPs")
    p.add_argument("--graph", required=True)

    p = sub.add_parser("groups", help="print the coupling-group partition")
    p.add_argument("--graph", required=True)

    p = sub.add_parser("losses", help="print distillation losses from tensor dumps")
    p.add_argument("--tensors", required=True,
                   help="directory containing teacher/ and student/ tensor dumps")
    p.add_argument("--fit-ridge", type=float, default=None,
                   help="fit reconstruction matrices with this ridge strength")

    p = sub.add_parser("report", help="re-derive the report for an existing plan")
    p.add_argument("--graph", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    return parser


def run_cli(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleBudgetError as exc:
        print(f"infeasible budget: {exc}", file=sys.stderr)
        return 2
    except (PrunepackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "plan":
        return _cmd_plan(args)
    if args.command == "flops":
        print(network_flops(load_graph(args.graph)))
        return 0
    if args.command == "groups":
        return _cmd_groups(args)
    if args.command == "losses":
        return _cmd_losses(args)
    if args.command == "report":
        return _cmd_report(args)
    raise _UsageError(f"unknown command {args.command!r}")


def _cmd_plan(args) -> int:
    graph = load_graph(args.graph)

    if args.scores:
        with open(args.scores, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        importances = [
            ChannelImportance(layer_id=lid, scores=np.asarray(vals, dtype=np.float64),
                              mode=args.importance_mode)
            for lid, vals in raw.items()
        ]
    else:
        importances = _importances_from_dump(args.tensors, args.importance_mode)

    if args.budget_fraction is not None:
        budget = Budget(kind="flops_fraction", value=args.budget_fraction)
    elif args.budget_flops is not None:
        budget = Budget(kind="flops_absolute", value=float(args.budget_flops))
    else:
        budget = Budget(kind="latency_absolute", value=args.budget_latency_us)

    latency_table = None
    if budget.kind == "latency_absolute":
        if not args.latency_table:
            raise _UsageError("--budget-latency-us requires --latency-table")
        with open(args.latency_table, "r", encoding="utf-8") as fh:
            latency_table = json.load(fh)

    options = PlanOptions(
        solver=args.solver,
        importance_mode=args.importance_mode,
        min_keep=args.min_keep,
        clamp_negative=args.clamp_negative,
        allow_greedy_fallback=not args.no_fallback,
        latency_table=latency_table,
    )
    plan = plan_prune(graph, importances, budget, options)

    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(plan_to_json(plan))

    stem = os.path.basename(args.out)
    if stem.endswith(".json"):
        stem = stem[: -len(".json")]
    report = emit_report(plan, graph)
    report_paths = write_report(
        report, args.report_dir or out_dir, stem, figures=not args.no_figures
    )
    print(json.dumps({
        "plan": os.path.abspath(args.out),
        "achieved_flops": plan.achieved_flops,
        "achieved_ratio": plan.achieved_ratio,
        "solver": plan.solver,
        "report_files": {k: os.path.abspath(v) for k, v in sorted(report_paths.items())},
    }, indent=2, sort_keys=True))
    return 0


def _importances_from_dump(path, mode):
    blobs = load_tensor_dir(path)
    weights = {}
    grads = {}
    for key, blob in blobs.items():
        parts = key.split("/")
        if parts[0] == "weights" and len(parts) == 2:
            weights[parts[1]] = blob.data.reshape(blob.data.shape[0], -1)
        elif parts[0] == "grads" and len(parts) == 3:
            grads.setdefault(parts[1], []).append((int(parts[2]), blob.data))
    importances = []
    for lid in sorted(weights):
        if lid not in grads:
            continue
        stacked = np.stack([
            g.reshape(g.shape[0], -1) for _, g in sorted(grads[lid], key=lambda kv: kv[0])
        ])
        sample = ScoreSample(layer_id=lid, weights=weights[lid], grads=stacked)
        importances.append(compute_channel_importance(sample, mode))
    return importances


def _cmd_groups(args) -> int:
    graph = load_graph(args.graph)
    groups = build_coupling_groups(graph)
    print(json.dumps([
        {
            "group_id": g.group_id,
            "name": g.name,
            "channels": g.channel_count,
            "prunable": g.prunable,
            "members": [list(m) for m in sorted(g.members)],
        }
        for g in groups
    ], indent=2))
    return 0


def _cmd_losses(args) -> int:
    teacher = load_tensor_dir(os.path.join(args.tensors, "teacher"))
    student = load_tensor_dir(os.path.join(args.tensors, "student"))
    if "logits" not in teacher or "logits" not in student:
        raise PrunepackError("both teacher and student dumps must contain a 'logits' tensor")
    kd = kd_loss(teacher["logits"].data, student["logits"].data)

    feature_ids = sorted(
        key.split("/", 1)[1] for key in teacher
        if key.startswith("features/") and key in student
    )
    pairs = []
    for lid in feature_ids:
        t = FeatureMapBatch(layer_id=lid, data=_as_feature_array(teacher[f"features/{lid}"].data))
        s = FeatureMapBatch(layer_id=lid, data=_as_feature_array(student[f"features/{lid}"].data))
        if args.fit_ridge is not None:
            m = fit_reconstruction(t, s, args.fit_ridge)
        elif t.data.shape[1] == s.data.shape[1]:
            m = ReconstructionMatrix(layer_id=lid, m=np.eye(t.data.shape[1]))
        else:
            raise PrunepackError(
                f"features/{lid}: teacher has {t.data.shape[1]} channels, student "
                f"{s.data.shape[1]}; pass --fit-ridge to fit reconstruction matrices"
            )
        pairs.append((t, s, m))
    ikd = ikd_loss(pairs) if pairs else 0.0
    print(json.dumps({"kd": kd, "ikd": ikd, "ikd_layers": len(pairs)}, indent=2, sort_keys=True))
    return 0


def _as_feature_array(data: np.ndarray) -> np.ndarray:
    # Accept [batch, channels, *spatial]; flatten spatial dims into positions.
    if data.ndim < 2:
        raise PrunepackError(f"feature tensors need at least [batch, channels], got shape {data.shape}")
    if data.ndim == 2:
        return data.reshape(*data.shape, 1)
    return data.reshape(data.shape[0], data.shape[1], -1)


def _cmd_report(args) -> int:
    graph = load_graph(args.graph)
    plan = load_plan(args.plan)
    report = emit_report(plan, graph)
    stem = os.path.basename(args.plan)
    if stem.endswith(".json"):
        stem = stem[: -len(".json")]
    write_report(report, args.out_dir, stem, figures=not args.no_figures)
    print(json.dumps(report["totals"], indent=2, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
