"""Exporter command line: ``export`` a model, ``apply-plan`` onto a checkpoint."""

from __future__ import annotations

import argparse
import json
import sys

import torch

from .dump import ExportSession, export_graph_and_tensors
from .models import DEFAULT_RESOLUTION, build_model
from .surgery import PlanMismatchError, apply_plan_to_model, load_plan_document
from .trace import UnsupportedLayerError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prunepack-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="trace a model and dump graph/tensors/latency")
    p.add_argument("--model", required=True)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--samples", type=int, default=2, help="gradient samples to dump")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--latency", action="store_true", help="also measure per-layer latency")
    p.add_argument("--checkpoint", help="optional state_dict to load before exporting")

    p = sub.add_parser("apply-plan", help="slice a checkpoint per an emitted plan")
    p.add_argument("--model", required=True)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--plan", required=True)
    p.add_argument("--checkpoint", help="optional state_dict to load before pruning")
    p.add_argument("--out", required=True, help="output path for the pruned state_dict")
    return parser


def run_cli(argv) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "export":
            return _cmd_export(args)
        return _cmd_apply(args)
    except (UnsupportedLayerError, PlanMismatchError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _prepare_model(args):
    torch.manual_seed(args.seed if hasattr(args, "seed") else 0)
    model = build_model(args.model)
    if args.checkpoint:
        model.load_state_dict(torch.load(args.checkpoint, weights_only=True))
    resolution = args.resolution or DEFAULT_RESOLUTION.get(args.model, 224)
    return model, resolution


def _cmd_export(args) -> int:
    model, resolution = _prepare_model(args)
    session = ExportSession(
        model=model,
        resolution=resolution,
        sample_count=args.samples,
        out_dir=args.out,
        seed=args.seed,
        measure_latency=args.latency,
    )
    paths = export_graph_and_tensors(session)
    print(json.dumps(paths, indent=2, sort_keys=True))
    return 0


def _cmd_apply(args) -> int:
    model, resolution = _prepare_model(args)
    plan_doc = load_plan_document(args.plan)
    pruned = apply_plan_to_model(model, plan_doc, resolution)
    torch.save(pruned.state_dict(), args.out)
    with torch.no_grad():
        out = pruned(torch.randn(1, 3, resolution, resolution))
    print(json.dumps({"out": args.out, "forward_output_shape": list(out.shape)}))
    return 0


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
