"""End-to-end pruning planner.

Pipeline: build coupling groups, aggregate channel scores onto them, attach
integer per-channel costs, reserve the top-scoring ``min_keep`` channels of
every prunable group as mandatory, and hand the remaining channels to the
knapsack solver. Because item weights are in overlapping item-weight units
rather than true network FLOPs, the knapsack capacity for a FLOPs budget is
found by bisecting on capacity against the true FLOPs of the assembled plan.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import cost as cost_model
from .errors import (
    GraphFormatError,
    InfeasibleBudgetError,
    KnapsackMemoryError,
    ValidationError,
)
from .graph import (
    CouplingGroup,
    NetworkGraph,
    apply_prune_plan,
    build_coupling_groups,
    network_flops,
)
from .importance import IMPORTANCE_MODES, ChannelImportance, aggregate_group_importance
from .knapsack import KnapsackInstance, check_dp_memory, solve_dp, solve_greedy

BUDGET_KINDS = ("flops_absolute", "flops_fraction", "latency_absolute")

# Bisection on capacity stops once achieved FLOPs lands this close under the
# target, or after this many solver calls.
CALIBRATION_REL_TOL = 0.005
CALIBRATION_MAX_CALLS = 20

PLAN_VERSION = 1


@dataclass(frozen=True)
class Budget:
    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in BUDGET_KINDS:
            raise ValidationError(f"unknown budget kind {self.kind!r}, expected one of {BUDGET_KINDS}")
        if not math.isfinite(self.value) or self.value <= 0:
            raise ValidationError(f"budget value must be positive, got {self.value!r}")
        if self.kind == "flops_fraction" and self.value > 1:
            raise ValidationError(f"flops_fraction must be in (0, 1], got {self.value}")


@dataclass(frozen=True)
class PlanOptions:
    solver: str = "dp"
    importance_mode: str = "abs_product"
    min_keep: int = 1
    clamp_negative: bool = False
    allow_greedy_fallback: bool = True
    latency_table: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.solver not in ("dp", "greedy"):
            raise ValidationError(f"solver must be 'dp' or 'greedy', got {self.solver!r}")
        if self.importance_mode not in IMPORTANCE_MODES:
            raise ValidationError(f"unknown importance mode {self.importance_mode!r}")
        if self.min_keep < 1:
            raise ValidationError(f"min_keep must be >= 1, got {self.min_keep}")


@dataclass(frozen=True)
class PrunePlan:
    """Kept-channel sets per coupling group plus budget/outcome metadata.

    ``layers`` is derived bookkeeping (kept output/input indices per layer) so
    plan consumers never need to rebuild the coupling groups.
    """

    groups: Mapping[int, tuple[int, ...]]
    layers: Mapping[str, Mapping[str, tuple[int, ...]]]
    budget: Budget
    achieved_flops: int
    achieved_ratio: float
    solver: str
    importance_mode: str
    stats: Mapping | None = field(default=None, compare=False)


@dataclass(frozen=True)
class _Items:
    """Knapsack items for the non-mandatory channels of all prunable groups."""

    group_ids: tuple[int, ...]
    channels: tuple[int, ...]
    values: tuple[float, ...]
    weights: tuple[int, ...]
    mandatory: Mapping[int, tuple[int, ...]]
    group_channel_counts: Mapping[int, int]

    @property
    def total_weight(self) -> int:
        return sum(self.weights)


def prepare_items(
    graph: NetworkGraph,
    groups: Sequence[CouplingGroup],
    group_values: Mapping[int, np.ndarray],
    group_costs: Mapping[int, int],
    min_keep: int = 1,
    clamp_negative: bool = False,
) -> _Items:
    """Split prunable channels into mandatory keeps and knapsack items.

    Mandatory channels are the ``min_keep`` top-scoring ones of each group
    (ties to the lower index), keeping the floor aligned with the objective.
    """
    mandatory: dict[int, tuple[int, ...]] = {}
    gids: list[int] = []
    channels: list[int] = []
    values: list[float] = []
    weights: list[int] = []
    counts: dict[int, int] = {}
    negatives = 0

    for group in sorted(groups, key=lambda g: g.group_id):
        if not group.prunable:
            continue
        gid = group.group_id
        if gid not in group_values:
            raise ValidationError(f"missing importance values for group {gid} ({group.name})")
        if gid not in group_costs:
            raise ValidationError(f"missing channel cost for group {gid} ({group.name})")
        vals = np.asarray(group_values[gid], dtype=np.float64)
        n = group.channel_count
        if vals.shape != (n,):
            raise ValidationError(
                f"group {gid} ({group.name}): {vals.shape} values for {n} channels"
            )
        counts[gid] = n
        order = sorted(range(n), key=lambda j: (-vals[j], j))
        keep = min(min_keep, n)
        mand = frozenset(order[:keep])
        mandatory[gid] = tuple(sorted(mand))
        for j in range(n):
            if j in mand:
                continue
            value = float(vals[j])
            if value < 0:
                negatives += 1
                if clamp_negative:
                    value = 0.0
            gids.append(gid)
            channels.append(j)
            values.append(value)
            weights.append(group_costs[gid])

    if negatives and not clamp_negative:
        raise ValidationError(
            f"{negatives} channel values are negative (signed importance mode); pass a clamp "
            "policy (clamp_negative=True) or use a nonnegative mode"
        )
    return _Items(
        group_ids=tuple(gids),
        channels=tuple(channels),
        values=tuple(values),
        weights=tuple(weights),
        mandatory=mandatory,
        group_channel_counts=counts,
    )


class _CapacitySolver:
    """Solves the remainder instance at varying capacities with one fixed solver.

    The solver choice is made once, against the largest capacity the
    calibration can probe, so every probe and the final solve agree.
    """

    def __init__(self, items: _Items, requested: str, allow_fallback: bool):
        self.items = items
        reduced, _, g = cost_model.gcd_reduce(list(items.weights), 0) if items.weights else ([], 0, 1)
        self.reduced_weights = reduced
        self.gcd = g
        self.solver_name = requested
        self.calls = 0
        if requested == "dp" and items.weights:
            # Fix the solver against the largest capacity any probe may use,
            # so calibration probes and the final solve agree.
            try:
                check_dp_memory(len(reduced), items.total_weight // g)
            except KnapsackMemoryError:
                if not allow_fallback:
                    raise
                self.solver_name = "greedy"

    def solve(self, capacity: int):
        self.calls += 1
        if not self.items.weights:
            return None
        instance = KnapsackInstance(
            values=self.items.values,
            weights=tuple(self.reduced_weights),
            capacity=capacity // self.gcd,
        )
        return solve_dp(instance) if self.solver_name == "dp" else solve_greedy(instance)

    def kept_groups(self, solution) -> dict[int, tuple[int, ...]]:
        chosen: dict[int, list[int]] = {gid: list(m) for gid, m in self.items.mandatory.items()}
        if solution is not None:
            for idx in solution.selected:
                chosen[self.items.group_ids[idx]].append(self.items.channels[idx])
        return {gid: tuple(sorted(ch)) for gid, ch in chosen.items()}


def calibrate_budget(
    graph: NetworkGraph,
    items: _Items,
    budget: Budget,
    solver: str = "dp",
    allow_greedy_fallback: bool = True,
) -> int:
    """Find the item-weight capacity whose plan lands on the true-FLOPs target.

    Bisects capacity against the true FLOPs of the assembled plan (the
    item-weight scale double-counts interior layers, so no closed form maps a
    budget to a capacity). Stops once achieved FLOPs is within 0.5% under the
    target or after 20 solver calls, and returns the largest probed capacity
    that does not overshoot.
    """
    capacity, _, _, _, _ = _calibrate(graph, items, budget, solver, allow_greedy_fallback)
    return capacity


def _calibrate(graph, items, budget, solver, allow_greedy_fallback):
    if budget.kind not in ("flops_absolute", "flops_fraction"):
        raise ValidationError(f"calibration applies to FLOPs budgets, not {budget.kind!r}")
    original = network_flops(graph)
    if budget.kind == "flops_absolute":
        target = int(round(budget.value))
    else:
        target = int(round(budget.value * original))

    solver_state = _CapacitySolver(items, solver, allow_greedy_fallback)

    def achieved_at(capacity: int):
        solution = solver_state.solve(capacity)
        kept = solver_state.kept_groups(solution)
        flops = network_flops(apply_prune_plan(graph, kept))
        return flops, solution, kept

    floor_flops, floor_sol, floor_kept = achieved_at(0)
    if target < floor_flops:
        raise InfeasibleBudgetError(
            f"budget target {target} FLOPs is below the minimum achievable {floor_flops} "
            f"(mandatory channels alone)"
        )

    hi = items.total_weight
    hi_flops, hi_sol, hi_kept = achieved_at(hi)
    if hi_flops <= target:
        return hi, hi_sol, hi_kept, hi_flops, solver_state

    lo, best = 0, (0, floor_sol, floor_kept, floor_flops)
    while solver_state.calls < CALIBRATION_MAX_CALLS and hi - lo > 1:
        mid = (lo + hi) // 2
        flops, solution, kept = achieved_at(mid)
        if flops <= target:
            lo, best = mid, (mid, solution, kept, flops)
            if flops >= target * (1 - CALIBRATION_REL_TOL):
                break
        else:
            hi = mid
    capacity, solution, kept, flops = best
    return capacity, solution, kept, flops, solver_state


def plan_prune(
    graph: NetworkGraph,
    importances: Sequence[ChannelImportance] | Mapping[str, Sequence[float]],
    budget: Budget,
    options: PlanOptions = PlanOptions(),
) -> PrunePlan:
    """Produce the kept-channel plan meeting ``budget`` with maximal retained importance."""
    original = network_flops(graph)
    if original == 0:
        raise ValidationError("graph has no compute layers; nothing to plan")
    groups = build_coupling_groups(graph)
    importances = _normalize_importances(importances, options.importance_mode)
    group_values = aggregate_group_importance(graph, groups, importances)

    if budget.kind == "latency_absolute":
        if options.latency_table is None:
            raise ValidationError("latency_absolute budget requires a latency table")
        costs = cost_model.build_latency_costs(graph, groups, options.latency_table)
    else:
        costs = cost_model.build_flops_costs(graph, groups)
    group_costs = {c.group_id: c.per_channel_cost for c in costs}

    items = prepare_items(
        graph, groups, group_values, group_costs,
        min_keep=options.min_keep, clamp_negative=options.clamp_negative,
    )

    if budget.kind == "latency_absolute":
        total_quanta = int(round(budget.value * 1000.0))
        mandatory_weight = sum(
            len(m) * group_costs[gid] for gid, m in items.mandatory.items()
        )
        capacity = total_quanta - mandatory_weight
        if capacity < 0:
            raise InfeasibleBudgetError(
                f"latency budget {budget.value} us is below the mandatory floor "
                f"({mandatory_weight} quanta)"
            )
        solver_state = _CapacitySolver(items, options.solver, options.allow_greedy_fallback)
        solution = solver_state.solve(capacity)
        kept = solver_state.kept_groups(solution)
    else:
        capacity, solution, kept, _, solver_state = _calibrate(
            graph, items, budget, options.solver, options.allow_greedy_fallback,
        )

    for group in groups:
        if not group.prunable:
            kept[group.group_id] = tuple(range(group.channel_count))
    kept = dict(sorted(kept.items()))

    pruned = apply_prune_plan(graph, kept)
    achieved_flops = network_flops(pruned)
    stats = {
        "solver_calls": solver_state.calls,
        "gcd": solver_state.gcd,
        "item_count": len(items.weights),
        "total_item_weight": items.total_weight,
        "capacity": capacity,
        "selected_items": 0 if solution is None else len(solution.selected),
        "original_flops": original,
    }
    return PrunePlan(
        groups=kept,
        layers=_layer_kept_map(graph, groups, kept),
        budget=budget,
        achieved_flops=achieved_flops,
        achieved_ratio=1.0 - achieved_flops / original,
        solver=solver_state.solver_name,
        importance_mode=options.importance_mode,
        stats=stats,
    )


def _normalize_importances(importances, mode: str) -> list[ChannelImportance]:
    if isinstance(importances, Mapping):
        return [
            ChannelImportance(layer_id=lid, scores=np.asarray(scores, dtype=np.float64), mode=mode)
            for lid, scores in importances.items()
        ]
    return list(importances)


def _layer_kept_map(graph, groups, kept_by_group):
    axis_group = {}
    for group in groups:
        for member in group.members:
            axis_group[member] = group
    layers = {}
    for layer in graph.layers:
        entry = {}
        for axis, field_name in (("output", "kept_out"), ("input", "kept_in")):
            group = axis_group.get((layer.id, axis))
            if group is None:
                continue
            kept = kept_by_group.get(group.group_id)
            entry[field_name] = tuple(kept) if kept is not None else tuple(range(group.channel_count))
        if "kept_out" not in entry:
            entry["kept_out"] = entry["kept_in"]
        if "kept_in" not in entry:
            entry["kept_in"] = entry["kept_out"]
        layers[layer.id] = entry
    return layers


# ---------------------------------------------------------------------------
# Plan document format (JSON, version 1)
# ---------------------------------------------------------------------------

def plan_to_json(plan: PrunePlan) -> str:
    doc = {
        "version": PLAN_VERSION,
        "budget": {"kind": plan.budget.kind, "value": plan.budget.value},
        "solver": plan.solver,
        "importance_mode": plan.importance_mode,
        "groups": {str(gid): list(kept) for gid, kept in sorted(plan.groups.items())},
        "layers": {
            lid: {name: list(indices) for name, indices in sorted(entry.items())}
            for lid, entry in sorted(plan.layers.items())
        },
        "achieved_flops": plan.achieved_flops,
        "achieved_ratio": plan.achieved_ratio,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def parse_plan(document: str) -> PrunePlan:
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise GraphFormatError("plan document must be a JSON object")
    required = {"version", "budget", "solver", "importance_mode", "groups", "layers",
                "achieved_flops", "achieved_ratio"}
    missing = required - set(raw)
    if missing:
        raise GraphFormatError(f"plan missing fields: {sorted(missing)}")
    if raw["version"] != PLAN_VERSION:
        raise GraphFormatError(f"unsupported plan version {raw['version']!r}")
    budget = Budget(kind=raw["budget"]["kind"], value=raw["budget"]["value"])
    groups = {int(gid): tuple(kept) for gid, kept in raw["groups"].items()}
    layers = {
        lid: {name: tuple(indices) for name, indices in entry.items()}
        for lid, entry in raw["layers"].items()
    }
    return PrunePlan(
        groups=groups,
        layers=layers,
        budget=budget,
        achieved_flops=raw["achieved_flops"],
        achieved_ratio=raw["achieved_ratio"],
        solver=raw["solver"],
        importance_mode=raw["importance_mode"],
    )


def load_plan(path) -> PrunePlan:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_plan(fh.read())
