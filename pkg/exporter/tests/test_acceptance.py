"""Exporter acceptance: round-trips against the planner through its CLI and formats."""

import json

import torch
from torch.utils.flop_counter import FlopCounterMode

from prunepack_exporter.dump import ExportSession, export_graph_and_tensors
from prunepack_exporter.formats import write_graph_document
from prunepack_exporter.models import build_model
from prunepack_exporter.surgery import apply_plan_to_model, load_plan_document
from prunepack_exporter.trace import trace_model


def _state_dicts_bit_identical(a, b):
    if set(a) != set(b):
        return False
    return all(
        a[k].shape == b[k].shape and a[k].numpy().tobytes() == b[k].numpy().tobytes()
        for k in a
    )


def test_resnet50_flops_matches_ecosystem_profiler(tmp_path, prunepack_cli):
    model = build_model("resnet50").eval()
    traced = trace_model(model, (224, 224))
    graph_path = tmp_path / "graph.json"
    write_graph_document(traced.document(), graph_path)

    result = prunepack_cli("flops", "--graph", str(graph_path))
    assert result.returncode == 0, result.stderr
    ours = int(result.stdout.strip())

    with FlopCounterMode(display=False) as counter:
        with torch.no_grad():
            model(torch.randn(1, 3, 224, 224))
    profiler_macs = counter.get_total_flops() / 2  # counter reports 2 FLOPs per MAC

    assert abs(ours - profiler_macs) / profiler_macs < 0.03
    assert abs(ours - 4.14e9) / 4.14e9 < 0.03
    print(f"PASS: exported ResNet-50 FLOPs {ours} vs profiler MACs {profiler_macs:.0f}")


def test_identity_plan_leaves_resnet50_bit_identical(tmp_path, prunepack_cli,
                                                     uniform_scores_for_graph):
    model = build_model("resnet50").eval()
    original = {k: v.clone() for k, v in model.state_dict().items()}
    traced = trace_model(model, (224, 224))
    graph_path = tmp_path / "graph.json"
    write_graph_document(traced.document(), graph_path)
    scores_path = uniform_scores_for_graph(graph_path, tmp_path / "scores.json")

    plan_path = tmp_path / "plan.json"
    result = prunepack_cli(
        "plan", "--graph", str(graph_path), "--scores", str(scores_path),
        "--budget-fraction", "1.0", "--out", str(plan_path), "--no-figures",
    )
    assert result.returncode == 0, result.stderr

    pruned = apply_plan_to_model(model, load_plan_document(plan_path), resolution=224)
    assert _state_dicts_bit_identical(original, pruned.state_dict())
    print("PASS: identity plan leaves every ResNet-50 weight bit-identical")


def test_pruned_resnet50_forward_pass_runs(tmp_path, prunepack_cli, uniform_scores_for_graph):
    model = build_model("resnet50").eval()
    traced = trace_model(model, (224, 224))
    graph_path = tmp_path / "graph.json"
    write_graph_document(traced.document(), graph_path)
    scores_path = uniform_scores_for_graph(graph_path, tmp_path / "scores.json")

    plan_path = tmp_path / "plan.json"
    result = prunepack_cli(
        "plan", "--graph", str(graph_path), "--scores", str(scores_path),
        "--budget-fraction", "0.6", "--out", str(plan_path), "--no-figures",
    )
    assert result.returncode == 0, result.stderr
    plan_doc = load_plan_document(plan_path)
    assert plan_doc["achieved_ratio"] > 0.3

    pruned = apply_plan_to_model(model, plan_doc, resolution=224)
    with torch.no_grad():
        out = pruned(torch.randn(1, 3, 224, 224))
    assert tuple(out.shape) == (1, 1000)  # classifier width untouched
    print(f"PASS: pruned ResNet-50 (ratio {plan_doc['achieved_ratio']:.3f}) runs forward")


def test_toy_mbconv_gradient_dump_roundtrip(tmp_path, prunepack_cli):
    model = build_model("toy_mbconv").eval()
    session = ExportSession(model=model, resolution=16, sample_count=2,
                            out_dir=str(tmp_path / "export"))
    paths = export_graph_and_tensors(session)

    plan_path = tmp_path / "plan.json"
    result = prunepack_cli(
        "plan", "--graph", paths["graph"], "--tensors", paths["tensors"],
        "--budget-fraction", "0.7", "--out", str(plan_path), "--no-figures",
    )
    assert result.returncode == 0, result.stderr

    pruned = apply_plan_to_model(model, load_plan_document(plan_path), resolution=16)
    with torch.no_grad():
        out = pruned(torch.randn(1, 3, 16, 16))
    assert tuple(out.shape) == (1, 10)
    # The depthwise block must have shrunk consistently.
    assert pruned.dw.groups == pruned.dw.in_channels == pruned.dw.out_channels
    assert pruned.pw_expand.out_channels == pruned.dw.in_channels
    assert pruned.se_expand.out_channels == pruned.dw.out_channels
    print("PASS: toy MBConv round-trips dumps -> plan -> surgery -> forward")


def test_apply_plan_cli(tmp_path, prunepack_cli, uniform_scores_for_graph):
    from prunepack_exporter.cli import run_cli as exporter_cli

    assert exporter_cli([
        "export", "--model", "toy_resnet", "--resolution", "16",
        "--samples", "1", "--out", str(tmp_path / "export"),
    ]) == 0
    graph_path = tmp_path / "export" / "graph.json"
    scores_path = uniform_scores_for_graph(graph_path, tmp_path / "scores.json")
    plan_path = tmp_path / "plan.json"
    result = prunepack_cli(
        "plan", "--graph", str(graph_path), "--scores", str(scores_path),
        "--budget-fraction", "0.8", "--out", str(plan_path), "--no-figures",
    )
    assert result.returncode == 0, result.stderr
    assert exporter_cli([
        "apply-plan", "--model", "toy_resnet", "--resolution", "16",
        "--plan", str(plan_path), "--out", str(tmp_path / "pruned.pt"),
    ]) == 0
    state = torch.load(tmp_path / "pruned.pt", weights_only=True)
    assert any(v.ndim == 4 for v in state.values())
