"""Network intermediate representation: layers, DAG validation, FLOPs, coupling groups.

The graph is the pruning substrate. Layers carry exporter-computed output
shapes, so no padding or stride arithmetic happens here; a conv's cost is
``c_out * c_in * h_out * w_out * k^2 / groups`` multiply-accumulates, which for
post-stride output dims is the same count as the classical pre-stride
``H*W/s^2`` convention.

Channel axes (one input axis and one output axis per layer) are partitioned
into coupling groups: sets of axes that must keep identical channel counts and
are therefore pruned as one unit. Merging is a union-find over dataflow edges,
elementwise junctions, and channel-preserving layers.
"""

from __future__ import annotations

import json
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from functools import cached_property

from .errors import GraphFormatError, ValidationError

LAYER_KINDS = frozenset({
    "conv",
    "depthwise_conv",
    "pointwise_conv",
    "linear",
    "global_avg_pool",
    "elementwise_add",
    "elementwise_mul",
    "activation",
    "input",
    "output",
})

# Kinds with a multiply-accumulate cost model.
COMPUTE_KINDS = frozenset({"conv", "depthwise_conv", "pointwise_conv", "linear"})

JUNCTION_KINDS = frozenset({"elementwise_add", "elementwise_mul"})

# Kinds whose output channels are the (unchanged) input channels. Their input
# and output axes always live in the same coupling group.
CHANNEL_PRESERVING_KINDS = frozenset({
    "depthwise_conv",
    "global_avg_pool",
    "elementwise_add",
    "elementwise_mul",
    "activation",
    "input",
    "output",
})

_ID_RE = re.compile(r"[A-Za-z0-9._-]+\Z")

_LAYER_FIELDS = (
    "id", "kind", "c_in", "c_out", "h_out", "w_out",
    "kernel", "stride", "groups", "prunable",
)


@dataclass(frozen=True)
class LayerSpec:
    """One node of the network graph.

    ``kernel``/``stride``/``groups`` are meaningful for conv kinds only;
    non-compute layers carry the neutral value 1.
    """

    id: str
    kind: str
    c_in: int
    c_out: int
    h_out: int
    w_out: int
    kernel: int = 1
    stride: int = 1
    groups: int = 1
    prunable: bool = True

    def validate(self) -> None:
        if not _ID_RE.match(self.id or ""):
            raise ValidationError(f"layer id {self.id!r} does not match [A-Za-z0-9._-]+")
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"layer {self.id!r}: unknown kind {self.kind!r}")
        for name in ("c_in", "c_out", "h_out", "w_out", "kernel", "stride", "groups"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValidationError(f"layer {self.id!r}: {name} must be a positive integer, got {value!r}")
        if not isinstance(self.prunable, bool):
            raise ValidationError(f"layer {self.id!r}: prunable must be a boolean")
        if self.kind == "depthwise_conv":
            if self.c_in != self.c_out or self.groups != self.c_in:
                raise ValidationError(
                    f"layer {self.id!r}: depthwise conv requires c_in == c_out == groups "
                    f"(got c_in={self.c_in}, c_out={self.c_out}, groups={self.groups})"
                )
        if self.c_in % self.groups or self.c_out % self.groups:
            raise ValidationError(
                f"layer {self.id!r}: groups={self.groups} must divide c_in={self.c_in} and c_out={self.c_out}"
            )
        if self.kind == "pointwise_conv" and self.kernel != 1:
            raise ValidationError(f"layer {self.id!r}: pointwise conv requires kernel == 1")
        if self.kind in CHANNEL_PRESERVING_KINDS and self.c_in != self.c_out:
            raise ValidationError(
                f"layer {self.id!r}: kind {self.kind!r} preserves channels but c_in={self.c_in} != c_out={self.c_out}"
            )
        if self.kind in ("input", "output") and self.prunable:
            raise ValidationError(f"layer {self.id!r}: {self.kind} layers must have prunable == false")


@dataclass(frozen=True)
class NetworkGraph:
    """Directed acyclic graph of :class:`LayerSpec` nodes."""

    layers: tuple[LayerSpec, ...]
    edges: tuple[tuple[str, str], ...]
    input_resolution: tuple[int, int]

    @cached_property
    def by_id(self) -> dict[str, LayerSpec]:
        return {layer.id: layer for layer in self.layers}

    @cached_property
    def predecessors(self) -> dict[str, tuple[str, ...]]:
        preds: dict[str, list[str]] = {layer.id: [] for layer in self.layers}
        for src, dst in self.edges:
            preds[dst].append(src)
        return {k: tuple(v) for k, v in preds.items()}

    @cached_property
    def successors(self) -> dict[str, tuple[str, ...]]:
        succs: dict[str, list[str]] = {layer.id: [] for layer in self.layers}
        for src, dst in self.edges:
            succs[src].append(dst)
        return {k: tuple(v) for k, v in succs.items()}

    @property
    def input_layer(self) -> LayerSpec:
        return next(l for l in self.layers if l.kind == "input")

    @property
    def output_layer(self) -> LayerSpec:
        return next(l for l in self.layers if l.kind == "output")


@dataclass(frozen=True)
class CouplingGroup:
    """Channel axes constrained to be pruned together.

    Members are ``(layer_id, axis)`` pairs with axis ``"output"`` or
    ``"input"``. ``name`` is the id of the representative weighted layer whose
    output axis the group contains (the smallest such id), falling back to the
    smallest member layer id.
    """

    group_id: int
    members: frozenset[tuple[str, str]]
    channel_count: int
    prunable: bool
    name: str

    def output_members(self) -> list[tuple[str, str]]:
        return sorted(m for m in self.members if m[1] == "output")

    def input_members(self) -> list[tuple[str, str]]:
        return sorted(m for m in self.members if m[1] == "input")


def validate_graph(graph: NetworkGraph) -> None:
    """Check all layer and graph invariants; raise ValidationError on the first failure."""
    if not graph.layers:
        raise ValidationError("graph has no layers")
    seen: set[str] = set()
    for layer in graph.layers:
        layer.validate()
        if layer.id in seen:
            raise ValidationError(f"duplicate layer id {layer.id!r}")
        seen.add(layer.id)

    h, w = graph.input_resolution
    if h <= 0 or w <= 0:
        raise ValidationError(f"input_resolution must be positive, got {graph.input_resolution}")

    inputs = [l for l in graph.layers if l.kind == "input"]
    outputs = [l for l in graph.layers if l.kind == "output"]
    if len(inputs) != 1:
        raise ValidationError(f"graph must have exactly one input layer, found {len(inputs)}")
    if len(outputs) != 1:
        raise ValidationError(f"graph must have exactly one output layer, found {len(outputs)}")

    for src, dst in graph.edges:
        if src not in graph.by_id:
            raise ValidationError(f"edge references unknown layer {src!r}")
        if dst not in graph.by_id:
            raise ValidationError(f"edge references unknown layer {dst!r}")
        if src == dst:
            raise ValidationError(f"self-loop on layer {src!r}")
    if len(set(graph.edges)) != len(graph.edges):
        raise ValidationError("duplicate edges present")

    for layer in graph.layers:
        n_pred = len(graph.predecessors[layer.id])
        if layer.kind == "input":
            if n_pred:
                raise ValidationError(f"input layer {layer.id!r} has predecessors")
        elif layer.kind in JUNCTION_KINDS:
            if n_pred < 2:
                raise ValidationError(f"junction {layer.id!r} needs >= 2 predecessors, has {n_pred}")
        elif n_pred != 1:
            raise ValidationError(
                f"layer {layer.id!r} ({layer.kind}) must have exactly one predecessor, has {n_pred}"
            )
        if layer.kind == "output" and graph.successors[layer.id]:
            raise ValidationError(f"output layer {layer.id!r} has successors")

    for src, dst in graph.edges:
        producer = graph.by_id[src]
        consumer = graph.by_id[dst]
        if producer.c_out != consumer.c_in:
            raise ValidationError(
                f"edge {src!r} -> {dst!r}: producer c_out={producer.c_out} != consumer c_in={consumer.c_in}"
            )

    _check_dag_connectivity(graph)


def _check_dag_connectivity(graph: NetworkGraph) -> None:
    # Kahn's algorithm: leftovers mean a cycle.
    indeg = {l.id: len(graph.predecessors[l.id]) for l in graph.layers}
    ready = [lid for lid, d in indeg.items() if d == 0]
    visited = 0
    while ready:
        lid = ready.pop()
        visited += 1
        for nxt in graph.successors[lid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if visited != len(graph.layers):
        raise ValidationError("graph contains a cycle")

    reach_fwd = _reachable(graph.input_layer.id, graph.successors)
    missing = [l.id for l in graph.layers if l.id not in reach_fwd]
    if missing:
        raise ValidationError(f"layers not reachable from input: {missing}")
    reach_bwd = _reachable(graph.output_layer.id, graph.predecessors)
    dead = [l.id for l in graph.layers if l.id not in reach_bwd]
    if dead:
        raise ValidationError(f"output not reachable from layers: {dead}")


def _reachable(start: str, adjacency: Mapping[str, tuple[str, ...]]) -> set[str]:
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


# ---------------------------------------------------------------------------
# FLOPs (multiply-accumulates; 1 MAC == 1 FLOP)
# ---------------------------------------------------------------------------

def layer_flops(layer: LayerSpec) -> int:
    """Exact MAC count of a compute layer at its current channel counts."""
    if layer.kind not in COMPUTE_KINDS:
        raise ValidationError(f"layer {layer.id!r}: no FLOPs model for kind {layer.kind!r}")
    return layer.c_out * output_channel_flops(layer)


def output_channel_flops(layer: LayerSpec) -> int:
    """MACs attributable to one output channel of a compute layer."""
    if layer.kind not in COMPUTE_KINDS:
        raise ValidationError(f"layer {layer.id!r}: no FLOPs model for kind {layer.kind!r}")
    return (layer.c_in // layer.groups) * layer.h_out * layer.w_out * layer.kernel ** 2


def input_channel_flops(layer: LayerSpec) -> int:
    """MACs attributable to one input channel of a compute layer."""
    if layer.kind not in COMPUTE_KINDS:
        raise ValidationError(f"layer {layer.id!r}: no FLOPs model for kind {layer.kind!r}")
    return (layer.c_out // layer.groups) * layer.h_out * layer.w_out * layer.kernel ** 2


def network_flops(graph: NetworkGraph) -> int:
    """Sum of layer_flops over all compute layers."""
    return sum(layer_flops(l) for l in graph.layers if l.kind in COMPUTE_KINDS)


# ---------------------------------------------------------------------------
# Coupling groups
# ---------------------------------------------------------------------------

class _UnionFind:
    """Union-find with path compression over hashable keys."""

    def __init__(self) -> None:
        self._parent: dict = {}

    def find(self, x):
        parent = self._parent
        root = x
        while parent.get(root, root) != root:
            root = parent[root]
        while x != root:
            x, parent[x] = parent.get(x, root), root
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # Deterministic orientation: smaller key becomes the root.
            if rb < ra:
                ra, rb = rb, ra
            self._parent[rb] = ra


def _layer_axes(layer: LayerSpec) -> list[tuple[str, str]]:
    if layer.kind == "input":
        return [(layer.id, "output")]
    if layer.kind == "output":
        return [(layer.id, "input")]
    return [(layer.id, "input"), (layer.id, "output")]


def build_coupling_groups(graph: NetworkGraph) -> list[CouplingGroup]:
    """Partition every channel axis into coupling groups.

    Merge rules: producer output <-> consumer input along every edge;
    channel-preserving layers (junctions, depthwise, activations, global
    pooling) couple their own input and output axes. A group is non-prunable
    when it touches the graph input or output, a layer flagged non-prunable,
    or a grouped conv that is neither dense nor depthwise (pruning arbitrary
    channels of those would break the group structure).
    """
    validate_graph(graph)
    uf = _UnionFind()
    axes: list[tuple[str, str]] = []
    for layer in graph.layers:
        axes.extend(_layer_axes(layer))
    for axis in axes:
        uf.find(axis)

    for src, dst in graph.edges:
        uf.union((src, "output"), (dst, "input"))
    for layer in graph.layers:
        if layer.kind in CHANNEL_PRESERVING_KINDS and layer.kind not in ("input", "output"):
            uf.union((layer.id, "input"), (layer.id, "output"))

    clusters: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for axis in axes:
        clusters.setdefault(uf.find(axis), []).append(axis)

    groups: list[CouplingGroup] = []
    for members in sorted(clusters.values(), key=min):
        group = _finalize_group(graph, len(groups), members)
        groups.append(group)

    _check_partition(graph, groups)
    return groups


def _finalize_group(graph: NetworkGraph, group_id: int, members: list[tuple[str, str]]) -> CouplingGroup:
    counts = set()
    prunable = True
    for layer_id, axis in members:
        layer = graph.by_id[layer_id]
        counts.add(layer.c_in if axis == "input" else layer.c_out)
        if layer.kind in ("input", "output") or not layer.prunable:
            prunable = False
        if layer.kind in COMPUTE_KINDS and 1 < layer.groups < layer.c_in:
            prunable = False
    if len(counts) != 1:
        raise ValidationError(
            f"coupling group {sorted(members)} has inconsistent channel counts {sorted(counts)}"
        )
    weighted_outputs = sorted(
        lid for lid, axis in members
        if axis == "output" and graph.by_id[lid].kind in COMPUTE_KINDS
    )
    name = weighted_outputs[0] if weighted_outputs else min(m[0] for m in members)
    return CouplingGroup(
        group_id=group_id,
        members=frozenset(members),
        channel_count=counts.pop(),
        prunable=prunable,
        name=name,
    )


def _check_partition(graph: NetworkGraph, groups: list[CouplingGroup]) -> None:
    expected = sum(len(_layer_axes(l)) for l in graph.layers)
    total = sum(len(g.members) for g in groups)
    if total != expected:
        raise ValidationError(f"coupling groups cover {total} axes, expected {expected}")


def group_of_axis(groups: Sequence[CouplingGroup], layer_id: str, axis: str) -> CouplingGroup:
    """The unique group owning ``(layer_id, axis)``."""
    for group in groups:
        if (layer_id, axis) in group.members:
            return group
    raise KeyError((layer_id, axis))


# ---------------------------------------------------------------------------
# Plan application
# ---------------------------------------------------------------------------

def apply_prune_plan(graph: NetworkGraph, plan) -> NetworkGraph:
    """Return a new graph with channel counts reduced per plan.

    ``plan`` is either a mapping ``{group_id: kept channel indices}`` or an
    object with a ``groups`` attribute holding one (a PrunePlan). All members
    of a coupling group shrink identically; non-prunable groups must keep
    every channel. The input graph is left untouched.
    """
    kept_by_group = getattr(plan, "groups", plan)
    groups = build_coupling_groups(graph)
    by_gid = {g.group_id: g for g in groups}

    for gid in kept_by_group:
        if gid not in by_gid:
            raise ValidationError(f"plan references unknown group id {gid}")

    new_counts: dict[tuple[str, str], int] = {}
    for group in groups:
        kept = kept_by_group.get(group.group_id)
        if kept is None:
            n_keep = group.channel_count
        else:
            kept = sorted(set(int(i) for i in kept))
            if kept and (kept[0] < 0 or kept[-1] >= group.channel_count):
                raise ValidationError(
                    f"group {group.group_id} ({group.name}): kept indices out of range 0..{group.channel_count - 1}"
                )
            if not group.prunable and len(kept) != group.channel_count:
                raise ValidationError(
                    f"group {group.group_id} ({group.name}) is not prunable but plan keeps "
                    f"{len(kept)}/{group.channel_count} channels"
                )
            if not kept:
                raise ValidationError(f"plan empties group {group.group_id} ({group.name})")
            n_keep = len(kept)
        for member in group.members:
            new_counts[member] = n_keep

    new_layers = []
    for layer in graph.layers:
        c_in = new_counts.get((layer.id, "input"), layer.c_in)
        c_out = new_counts.get((layer.id, "output"), layer.c_out)
        if layer.kind == "input":
            c_in = c_out
        elif layer.kind == "output":
            c_out = c_in
        updates = {"c_in": c_in, "c_out": c_out}
        if layer.kind == "depthwise_conv":
            updates["groups"] = c_in
        new_layers.append(replace(layer, **updates))

    pruned = NetworkGraph(
        layers=tuple(new_layers),
        edges=graph.edges,
        input_resolution=graph.input_resolution,
    )
    validate_graph(pruned)
    return pruned


# ---------------------------------------------------------------------------
# Graph document format (JSON, version 1)
# ---------------------------------------------------------------------------

def parse_graph(document: str) -> NetworkGraph:
    """Parse and validate a version-1 graph document."""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc

    if not isinstance(raw, dict):
        raise GraphFormatError("graph document must be a JSON object")
    expected_top = {"version", "input_resolution", "layers", "edges"}
    unknown = set(raw) - expected_top
    if unknown:
        raise GraphFormatError(f"unknown top-level fields: {sorted(unknown)}")
    missing = expected_top - set(raw)
    if missing:
        raise GraphFormatError(f"missing top-level fields: {sorted(missing)}")
    if raw["version"] != 1:
        raise GraphFormatError(f"unsupported version {raw['version']!r}, expected 1")

    resolution = raw["input_resolution"]
    if (not isinstance(resolution, list) or len(resolution) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in resolution)):
        raise GraphFormatError(f"input_resolution must be [H, W] integers, got {resolution!r}")

    if not isinstance(raw["layers"], list):
        raise GraphFormatError("layers must be a list")
    layers = []
    for index, entry in enumerate(raw["layers"]):
        if not isinstance(entry, dict):
            raise GraphFormatError(f"layers[{index}] must be an object")
        unknown = set(entry) - set(_LAYER_FIELDS)
        if unknown:
            raise GraphFormatError(f"layers[{index}]: unknown fields {sorted(unknown)}")
        missing = set(_LAYER_FIELDS) - set(entry)
        if missing:
            raise GraphFormatError(f"layers[{index}]: missing fields {sorted(missing)}")
        layers.append(LayerSpec(**entry))

    if not isinstance(raw["edges"], list):
        raise GraphFormatError("edges must be a list")
    edges = []
    for index, pair in enumerate(raw["edges"]):
        if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(p, str) for p in pair):
            raise GraphFormatError(f"edges[{index}] must be a [src, dst] pair of layer ids")
        edges.append((pair[0], pair[1]))

    graph = NetworkGraph(
        layers=tuple(layers),
        edges=tuple(edges),
        input_resolution=(resolution[0], resolution[1]),
    )
    validate_graph(graph)
    return graph


def serialize_graph(graph: NetworkGraph) -> str:
    """Render a graph back to its canonical document form."""
    doc = {
        "version": 1,
        "input_resolution": list(graph.input_resolution),
        "layers": [
            {field: getattr(layer, field) for field in _LAYER_FIELDS}
            for layer in graph.layers
        ],
        "edges": [list(edge) for edge in graph.edges],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_graph(path) -> NetworkGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())
