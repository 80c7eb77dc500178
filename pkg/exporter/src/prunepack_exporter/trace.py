"""Symbolic tracing of a torch model into the version-1 graph document.

Every fx node becomes one layer entry; layer ids are the (unique) fx node
names, so re-tracing the same model reproduces the same ids. Module reuse
(e.g. a shared ReLU) is fine for parameter-free layers; reusing a weighted
module would make channel bookkeeping ambiguous and is rejected.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass

import torch
from torch import nn
from torch.fx import symbolic_trace
from torch.fx.passes.shape_prop import ShapeProp


class UnsupportedLayerError(ValueError):
    """The traced model contains an operation the graph format cannot express."""


_ACTIVATION_MODULES = (
    nn.BatchNorm2d, nn.ReLU, nn.ReLU6, nn.SiLU, nn.Sigmoid, nn.Hardswish,
    nn.Hardsigmoid, nn.GELU, nn.Dropout, nn.Identity, nn.MaxPool2d, nn.AvgPool2d,
)

_ACTIVATION_FUNCTIONS = {
    torch.nn.functional.relu, torch.nn.functional.relu6, torch.nn.functional.silu,
    torch.nn.functional.hardswish, torch.nn.functional.hardsigmoid,
    torch.nn.functional.gelu, torch.nn.functional.dropout,
    torch.sigmoid, torch.relu,
}


@dataclass
class TracedLayer:
    """One graph layer plus its link back to the torch module (if any)."""

    spec: dict
    module_target: str | None  # qualified module name for call_module nodes


@dataclass
class TracedModel:
    layers: list[TracedLayer]
    edges: list[tuple[str, str]]
    input_resolution: tuple[int, int]

    def document(self) -> dict:
        return {
            "version": 1,
            "input_resolution": list(self.input_resolution),
            "layers": [dict(t.spec) for t in self.layers],
            "edges": [list(e) for e in self.edges],
        }

    def weighted_layers(self) -> list[TracedLayer]:
        return [t for t in self.layers
                if t.spec["kind"] in ("conv", "pointwise_conv", "depthwise_conv", "linear")]

    def layer_by_id(self) -> dict[str, TracedLayer]:
        return {t.spec["id"]: t for t in self.layers}


def _tensor_dims(node) -> tuple[int, int, int]:
    meta = node.meta.get("tensor_meta")
    if meta is None or not hasattr(meta, "shape"):
        raise UnsupportedLayerError(f"node {node.name!r} has no tensor shape metadata")
    shape = tuple(meta.shape)
    if len(shape) == 4:
        return shape[1], shape[2], shape[3]
    if len(shape) == 2:
        return shape[1], 1, 1
    raise UnsupportedLayerError(f"node {node.name!r} has unsupported tensor rank {len(shape)}")


def _tensor_inputs(node):
    seen = []
    for arg in node.all_input_nodes:
        if arg.meta.get("tensor_meta") is not None and arg not in seen:
            seen.append(arg)
    return seen


def trace_model(model: nn.Module, resolution: tuple[int, int]) -> TracedModel:
    """Trace ``model`` at the given input resolution into graph-document form."""
    model = model.eval()
    gm = symbolic_trace(model)
    ShapeProp(gm).propagate(torch.randn(1, 3, resolution[0], resolution[1]))

    layers: list[TracedLayer] = []
    edges: list[tuple[str, str]] = []
    node_to_layer: dict = {}
    used_weighted_targets: set[str] = set()

    def add_layer(node, kind, c_in, c_out, h, w, kernel=1, stride=1, groups=1,
                  prunable=True, module_target=None):
        spec = {
            "id": node.name, "kind": kind, "c_in": int(c_in), "c_out": int(c_out),
            "h_out": int(h), "w_out": int(w), "kernel": int(kernel), "stride": int(stride),
            "groups": int(groups), "prunable": bool(prunable),
        }
        layers.append(TracedLayer(spec=spec, module_target=module_target))
        node_to_layer[node] = node.name
        for pred in _tensor_inputs(node):
            if pred in node_to_layer:
                edge = (node_to_layer[pred], node.name)
                if edge not in edges:
                    edges.append(edge)

    for node in gm.graph.nodes:
        if node.op == "placeholder":
            c, h, w = _tensor_dims(node)
            add_layer(node, "input", c, c, h, w, prunable=False)
        elif node.op == "call_module":
            _trace_module(gm, node, add_layer, used_weighted_targets)
        elif node.op == "call_function":
            _trace_function(node, add_layer)
        elif node.op == "call_method":
            _trace_method(node, add_layer)
        elif node.op == "output":
            inputs = _tensor_inputs(node)
            if len(inputs) != 1:
                raise UnsupportedLayerError("model must return a single tensor")
            c, h, w = _tensor_dims(inputs[0])
            add_layer(node, "output", c, c, h, w, prunable=False)
        elif node.op == "get_attr":
            raise UnsupportedLayerError(f"free tensor attribute {node.target!r} is not supported")
        else:
            raise UnsupportedLayerError(f"unsupported fx op {node.op!r} at node {node.name!r}")

    n_inputs = sum(1 for t in layers if t.spec["kind"] == "input")
    if n_inputs != 1:
        raise UnsupportedLayerError(f"expected exactly one model input, found {n_inputs}")
    return TracedModel(layers=layers, edges=edges, input_resolution=resolution)


def _trace_module(gm, node, add_layer, used_weighted_targets):
    module = gm.get_submodule(node.target)
    c, h, w = _tensor_dims(node)
    if isinstance(module, nn.Conv2d):
        if node.target in used_weighted_targets:
            raise UnsupportedLayerError(f"weighted module {node.target!r} is used more than once")
        used_weighted_targets.add(node.target)
        kh, kw = module.kernel_size
        if kh != kw:
            raise UnsupportedLayerError(f"{node.target!r}: only square kernels are supported, got {module.kernel_size}")
        if module.groups == 1:
            kind = "pointwise_conv" if kh == 1 else "conv"
        elif module.groups == module.in_channels == module.out_channels:
            kind = "depthwise_conv"
        else:
            kind = "conv"
        add_layer(node, kind, module.in_channels, module.out_channels, h, w,
                  kernel=kh, stride=module.stride[0], groups=module.groups,
                  module_target=node.target)
    elif isinstance(module, nn.Linear):
        if node.target in used_weighted_targets:
            raise UnsupportedLayerError(f"weighted module {node.target!r} is used more than once")
        used_weighted_targets.add(node.target)
        add_layer(node, "linear", module.in_features, module.out_features, 1, 1,
                  module_target=node.target)
    elif isinstance(module, nn.AdaptiveAvgPool2d):
        size = module.output_size
        size = (size, size) if isinstance(size, int) else tuple(size)
        kind = "global_avg_pool" if size == (1, 1) else "activation"
        add_layer(node, kind, c, c, h, w, module_target=node.target)
    elif isinstance(module, _ACTIVATION_MODULES):
        add_layer(node, "activation", c, c, h, w, module_target=node.target)
    else:
        raise UnsupportedLayerError(
            f"unsupported module {type(module).__name__!r} at {node.target!r}"
        )


def _trace_function(node, add_layer):
    c, h, w = _tensor_dims(node)
    tensor_args = _tensor_inputs(node)
    target = node.target
    if target in (operator.add, torch.add, operator.iadd):
        kind = "elementwise_add" if len(tensor_args) >= 2 else "activation"
        add_layer(node, kind, c, c, h, w)
    elif target in (operator.mul, torch.mul, operator.imul):
        kind = "elementwise_mul" if len(tensor_args) >= 2 else "activation"
        add_layer(node, kind, c, c, h, w)
    elif target is torch.flatten:
        in_c, in_h, in_w = _tensor_dims(tensor_args[0])
        if c != in_c:
            raise UnsupportedLayerError(
                f"flatten at {node.name!r} mixes channels with spatial dims "
                f"({in_c}x{in_h}x{in_w} -> {c}); pool to 1x1 first"
            )
        add_layer(node, "activation", c, c, h, w)
    elif target in (torch.nn.functional.adaptive_avg_pool2d,):
        add_layer(node, "global_avg_pool" if (h, w) == (1, 1) else "activation", c, c, h, w)
    elif target in _ACTIVATION_FUNCTIONS:
        add_layer(node, "activation", c, c, h, w)
    else:
        name = getattr(target, "__name__", repr(target))
        raise UnsupportedLayerError(f"unsupported function {name!r} at node {node.name!r}")


def _trace_method(node, add_layer):
    c, h, w = _tensor_dims(node)
    tensor_args = _tensor_inputs(node)
    if node.target in ("add", "add_"):
        add_layer(node, "elementwise_add" if len(tensor_args) >= 2 else "activation", c, c, h, w)
    elif node.target in ("mul", "mul_"):
        add_layer(node, "elementwise_mul" if len(tensor_args) >= 2 else "activation", c, c, h, w)
    elif node.target in ("view", "reshape", "flatten", "contiguous", "relu", "sigmoid", "mean"):
        in_c, _, _ = _tensor_dims(tensor_args[0])
        if c != in_c:
            raise UnsupportedLayerError(
                f"method {node.target!r} at {node.name!r} changes the channel count "
                f"({in_c} -> {c})"
            )
        kind = "global_avg_pool" if node.target == "mean" and (h, w) == (1, 1) else "activation"
        add_layer(node, kind, c, c, h, w)
    else:
        raise UnsupportedLayerError(f"unsupported method {node.target!r} at node {node.name!r}")
