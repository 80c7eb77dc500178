"""Apply an emitted plan back onto a live torch model.

The plan's per-layer kept-index lists (``kept_out``/``kept_in``) are keyed by
the exported layer ids, which are fx node names; re-tracing the same model
recovers the id-to-module mapping, so no sidecar metadata is needed. Channel
slices use ``index_select``, which copies values bit-exactly -- an identity
plan leaves every parameter numerically unchanged.
"""

from __future__ import annotations

import json

import torch
from torch import nn

from .trace import trace_model


class PlanMismatchError(ValueError):
    """The plan does not correspond to this model's exported graph."""


def load_plan_document(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise PlanMismatchError(f"unsupported plan version {doc.get('version')!r}")
    if "layers" not in doc:
        raise PlanMismatchError("plan document has no per-layer kept-index map")
    return doc


def _kept(plan_layers: dict, layer_id: str, field: str, full: int) -> torch.Tensor:
    entry = plan_layers.get(layer_id)
    if entry is None:
        raise PlanMismatchError(f"plan has no entry for exported layer {layer_id!r}")
    indices = entry.get(field)
    if indices is None:
        raise PlanMismatchError(f"plan entry for {layer_id!r} lacks {field!r}")
    if any(i < 0 or i >= full for i in indices):
        raise PlanMismatchError(
            f"{layer_id!r}: {field} indices out of range for {full} channels"
        )
    return torch.as_tensor(sorted(indices), dtype=torch.int64)


def apply_plan_to_model(model: nn.Module, plan_doc: dict, resolution: int) -> nn.Module:
    """Slice every weighted module (and its normalization) per the plan, in place."""
    traced = trace_model(model, (resolution, resolution))
    plan_layers = plan_doc["layers"]

    for t in traced.layers:
        if t.module_target is None:
            continue
        module = model.get_submodule(t.module_target)
        layer_id = t.spec["id"]
        if isinstance(module, nn.Conv2d):
            _slice_conv(module, layer_id, plan_layers)
        elif isinstance(module, nn.Linear):
            _slice_linear(module, layer_id, plan_layers)
        elif isinstance(module, nn.BatchNorm2d):
            _slice_batchnorm(module, layer_id, plan_layers)
        # Parameter-free modules follow their inputs automatically.
    return model


def _slice_conv(conv: nn.Conv2d, layer_id: str, plan_layers: dict) -> None:
    kept_out = _kept(plan_layers, layer_id, "kept_out", conv.out_channels)
    kept_in = _kept(plan_layers, layer_id, "kept_in", conv.in_channels)
    depthwise = conv.groups == conv.in_channels == conv.out_channels
    if depthwise:
        if not torch.equal(kept_out, kept_in):
            raise PlanMismatchError(f"{layer_id!r}: depthwise conv must keep equal in/out sets")
        weight = conv.weight.data.index_select(0, kept_out)
        conv.groups = len(kept_out)
    elif conv.groups == 1:
        weight = conv.weight.data.index_select(0, kept_out).index_select(1, kept_in)
    else:
        if len(kept_out) != conv.out_channels or len(kept_in) != conv.in_channels:
            raise PlanMismatchError(
                f"{layer_id!r}: grouped conv (groups={conv.groups}) only supports identity plans"
            )
        weight = conv.weight.data
    conv.weight = nn.Parameter(weight)
    if conv.bias is not None:
        conv.bias = nn.Parameter(conv.bias.data.index_select(0, kept_out))
    conv.out_channels = len(kept_out)
    conv.in_channels = len(kept_in)


def _slice_linear(linear: nn.Linear, layer_id: str, plan_layers: dict) -> None:
    kept_out = _kept(plan_layers, layer_id, "kept_out", linear.out_features)
    kept_in = _kept(plan_layers, layer_id, "kept_in", linear.in_features)
    linear.weight = nn.Parameter(
        linear.weight.data.index_select(0, kept_out).index_select(1, kept_in)
    )
    if linear.bias is not None:
        linear.bias = nn.Parameter(linear.bias.data.index_select(0, kept_out))
    linear.out_features = len(kept_out)
    linear.in_features = len(kept_in)


def _slice_batchnorm(bn: nn.BatchNorm2d, layer_id: str, plan_layers: dict) -> None:
    kept = _kept(plan_layers, layer_id, "kept_in", bn.num_features)
    if bn.affine:
        bn.weight = nn.Parameter(bn.weight.data.index_select(0, kept))
        bn.bias = nn.Parameter(bn.bias.data.index_select(0, kept))
    if bn.track_running_stats:
        bn.running_mean = bn.running_mean.index_select(0, kept)
        bn.running_var = bn.running_var.index_select(0, kept)
    bn.num_features = len(kept)
