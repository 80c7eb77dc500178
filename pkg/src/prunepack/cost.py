"""Compute cost of one coupled channel: FLOPs saved, or a latency proxy.

Deleting one channel of a coupling group removes one output channel from every
producing layer in the group and one input channel from every consuming layer.
The per-channel cost sums each member's per-axis MACs once per (layer, axis).
These item weights intentionally overlap between neighbouring groups (an
interior layer's cost appears under its output group and again under its
consumer's input group), so knapsack capacities are in item-weight units, not
true network FLOPs; the planner reconciles the two by calibration.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .errors import ValidationError
from .graph import (
    COMPUTE_KINDS,
    CouplingGroup,
    NetworkGraph,
    input_channel_flops,
    output_channel_flops,
)


@dataclass(frozen=True)
class ChannelCost:
    """Integer cost of one channel of a group; identical for all its channels."""

    group_id: int
    per_channel_cost: int
    unit: str  # "flops" or "latency_us" (stored as integer nanosecond quanta)


def channel_flops_saving(graph: NetworkGraph, group: CouplingGroup) -> int:
    """FLOPs saved by deleting one channel of ``group``.

    Output-axis members contribute their per-output-channel MACs, input-axis
    members their per-input-channel MACs; non-compute members contribute 0.
    Groups at the graph boundary simply lack one side.
    """
    if not group.prunable:
        raise ValidationError(f"group {group.group_id} ({group.name}) is not prunable")
    total = 0
    for layer_id, axis in sorted(group.members):
        layer = graph.by_id[layer_id]
        if layer.kind not in COMPUTE_KINDS:
            continue
        if axis == "output":
            total += output_channel_flops(layer)
        else:
            total += input_channel_flops(layer)
    if total <= 0:
        raise ValidationError(
            f"group {group.group_id} ({group.name}) has no compute members; channel cost undefined"
        )
    return total


def build_flops_costs(graph: NetworkGraph, groups: Sequence[CouplingGroup]) -> list[ChannelCost]:
    """FLOPs cost for every prunable group."""
    return [
        ChannelCost(group_id=g.group_id, per_channel_cost=channel_flops_saving(graph, g), unit="flops")
        for g in groups
        if g.prunable
    ]


def build_latency_costs(
    graph: NetworkGraph,
    groups: Sequence[CouplingGroup],
    latency_table: Mapping[str, float],
) -> list[ChannelCost]:
    """Latency cost for every prunable group, in integer nanosecond quanta.

    A layer's measured microseconds are attributed uniformly across its
    channels on each axis: an output-axis member contributes
    ``round(us * 1000 / c_out)`` quanta, an input-axis member
    ``round(us * 1000 / c_in)`` (round-to-nearest, ties to even). Contributions
    sum across members exactly like the FLOPs costs. Sub-quantum group totals
    clamp to 1 so the integer solver stays applicable.
    """
    for layer in graph.layers:
        if layer.kind not in COMPUTE_KINDS:
            continue
        if layer.id not in latency_table:
            raise ValidationError(f"latency table missing measurement for layer {layer.id!r}")
        us = latency_table[layer.id]
        if not math.isfinite(us) or us <= 0:
            raise ValidationError(f"latency for layer {layer.id!r} must be positive, got {us!r}")

    costs = []
    for group in groups:
        if not group.prunable:
            continue
        total = 0
        for layer_id, axis in sorted(group.members):
            layer = graph.by_id[layer_id]
            if layer.kind not in COMPUTE_KINDS:
                continue
            channels = layer.c_out if axis == "output" else layer.c_in
            total += round(latency_table[layer_id] * 1000.0 / channels)
        costs.append(ChannelCost(group_id=group.group_id, per_channel_cost=max(total, 1), unit="latency_us"))
    return costs


def gcd_reduce(weights: Sequence[int], capacity: int) -> tuple[list[int], int, int]:
    """Divide weights and capacity by their collective GCD.

    Every achievable total weight is a multiple of ``g``, so the feasible sets
    (and therefore the optimum) are unchanged; only the solver's table shrinks.
    Returns ``(reduced weights, floor(capacity / g), g)``.
    """
    if not weights:
        raise ValidationError("cannot GCD-reduce an empty weight list")
    for w in weights:
        if not isinstance(w, (int,)) or isinstance(w, bool) or w <= 0:
            raise ValidationError(f"weights must be positive integers, got {w!r}")
    if capacity < 0:
        raise ValidationError(f"capacity must be nonnegative, got {capacity}")
    g = math.gcd(*weights)
    return [w // g for w in weights], capacity // g, g
