import json

import pytest
import torch
from torch import nn

from prunepack_exporter.dump import ExportSession, export_graph_and_tensors
from prunepack_exporter.formats import write_graph_document
from prunepack_exporter.models import ToyConv, build_model
from prunepack_exporter.trace import UnsupportedLayerError, trace_model


def test_toy_conv_flops_via_planner_cli(tmp_path, prunepack_cli):
    traced = trace_model(ToyConv(), (16, 16))
    path = tmp_path / "graph.json"
    write_graph_document(traced.document(), path)
    result = prunepack_cli("flops", "--graph", str(path))
    assert result.returncode == 0, result.stderr
    # conv 3->8 k3 on 16x16 plus linear 8->4.
    assert int(result.stdout.strip()) == 8 * 3 * 16 * 16 * 9 + 8 * 4


def test_reexport_is_byte_identical(tmp_path):
    model = build_model("toy_mbconv")
    doc_a = trace_model(model, (16, 16)).document()
    doc_b = trace_model(model, (16, 16)).document()
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_graph_document(doc_a, a)
    write_graph_document(doc_b, b)
    assert a.read_bytes() == b.read_bytes()


def test_toy_mbconv_groups_via_planner_cli(tmp_path, prunepack_cli):
    traced = trace_model(build_model("toy_mbconv"), (16, 16))
    path = tmp_path / "graph.json"
    write_graph_document(traced.document(), path)
    result = prunepack_cli("groups", "--graph", str(path))
    assert result.returncode == 0, result.stderr
    groups = json.loads(result.stdout)
    prunable = {g["name"]: g for g in groups if g["prunable"]}
    # The block's three roles (projection/skip, expansion/depthwise/SE-expansion,
    # SE reduction) plus the head conv feeding the classifier.
    assert set(prunable) == {"pw_project", "dw", "se_reduce", "head"}
    members = {tuple(m) for m in prunable["dw"]["members"]}
    assert {("pw_expand", "output"), ("se_expand", "output"),
            ("pw_project", "input")} <= members


def test_depthwise_and_junctions_mapped(tmp_path):
    doc = trace_model(build_model("toy_mbconv"), (16, 16)).document()
    kinds = {l["id"]: l["kind"] for l in doc["layers"]}
    assert kinds["dw"] == "depthwise_conv"
    assert kinds["mul"] == "elementwise_mul"
    assert kinds["add"] == "elementwise_add"
    assert kinds["se_pool"] == "global_avg_pool"


def test_unsupported_module_rejected():
    class Weird(nn.Module):
        def __init__(self):
            super().__init__()
            self.up = nn.ConvTranspose2d(3, 8, 2)

        def forward(self, x):
            return self.up(x)

    with pytest.raises(UnsupportedLayerError, match="ConvTranspose2d"):
        trace_model(Weird(), (8, 8))


def test_channel_mixing_flatten_rejected():
    class Mixer(nn.Module):
        def __init__(self):
            super().__init__()
            self.fc = nn.Linear(3 * 8 * 8, 4)

        def forward(self, x):
            return self.fc(torch.flatten(x, 1))

    with pytest.raises(UnsupportedLayerError, match="flatten"):
        trace_model(Mixer(), (8, 8))


def test_export_session_dumps_weights_and_grads(tmp_path):
    session = ExportSession(model=ToyConv(), resolution=16, sample_count=3,
                            out_dir=str(tmp_path / "export"))
    paths = export_graph_and_tensors(session)
    with open(tmp_path / "export" / "tensors" / "manifest.json") as fh:
        manifest = json.load(fh)
    keys = {entry["key"] for entry in manifest["tensors"]}
    assert "weights/conv" in keys
    assert {f"grads/conv/{i}" for i in range(3)} <= keys
    assert {f"grads/fc/{i}" for i in range(3)} <= keys
    assert paths["graph"].endswith("graph.json")


def test_export_latency_table(tmp_path, prunepack_cli, uniform_scores_for_graph):
    session = ExportSession(model=ToyConv(), resolution=16, sample_count=1,
                            out_dir=str(tmp_path / "export"), measure_latency=True)
    paths = export_graph_and_tensors(session)
    with open(paths["latency"]) as fh:
        table = json.load(fh)
    assert set(table) == {"conv", "fc"}
    assert all(v > 0 for v in table.values())
    # The table feeds a latency-budget plan end to end.
    result = prunepack_cli(
        "plan", "--graph", paths["graph"], "--tensors", paths["tensors"],
        "--budget-latency-us", "1000000", "--latency-table", paths["latency"],
        "--out", str(tmp_path / "plan.json"), "--no-figures",
    )
    assert result.returncode == 0, result.stderr
