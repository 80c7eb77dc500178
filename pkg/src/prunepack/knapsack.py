"""0/1 knapsack: exact dynamic programming, greedy relaxation, brute-force oracle.

Values are floats (importance scores), weights are positive integers (FLOPs or
latency quanta) -- the DP indexes on weight only, so float values are safe.
All three solvers are deterministic: ties are broken by fixed rules, never by
hash or iteration order.
"""

from __future__ import annotations

import os
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import KnapsackMemoryError, ValidationError

# Cap on the DP working set (backtracking bitmatrix + value rows), in bytes.
DEFAULT_MEM_CAP_BYTES = 2 * 1024 ** 3
MEM_CAP_ENV_VAR = "PRUNEPACK_MEM_CAP_BYTES"

BRUTE_FORCE_MAX_ITEMS = 24


@dataclass(frozen=True)
class KnapsackInstance:
    values: tuple[float, ...]
    weights: tuple[int, ...]
    capacity: int

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "weights", tuple(self.weights))
        if len(self.values) != len(self.weights):
            raise ValidationError(
                f"values/weights length mismatch: {len(self.values)} != {len(self.weights)}"
            )
        for w in self.weights:
            if not isinstance(w, int) or isinstance(w, bool) or w <= 0:
                raise ValidationError(f"weights must be positive integers, got {w!r}")
        if not isinstance(self.capacity, int) or isinstance(self.capacity, bool) or self.capacity < 0:
            raise ValidationError(f"capacity must be a nonnegative integer, got {self.capacity!r}")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class KnapsackSolution:
    selected: tuple[int, ...]
    total_value: float
    total_weight: int
    exact: bool

    def verify(self, instance: KnapsackInstance, rel_tol: float = 1e-9) -> None:
        if self.total_weight > instance.capacity:
            raise ValidationError(
                f"solution weight {self.total_weight} exceeds capacity {instance.capacity}"
            )
        value = sum(instance.values[i] for i in self.selected)
        if abs(value - self.total_value) > rel_tol * max(1.0, abs(value)):
            raise ValidationError(f"solution value {self.total_value} != recomputed {value}")


def _solution(instance: KnapsackInstance, selected: Sequence[int], exact: bool) -> KnapsackSolution:
    selected = tuple(sorted(selected))
    return KnapsackSolution(
        selected=selected,
        total_value=float(sum(instance.values[i] for i in selected)),
        total_weight=sum(instance.weights[i] for i in selected),
        exact=exact,
    )


def _mem_cap_bytes() -> int:
    raw = os.environ.get(MEM_CAP_ENV_VAR)
    if raw is None:
        return DEFAULT_MEM_CAP_BYTES
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValidationError(f"{MEM_CAP_ENV_VAR} must be an integer, got {raw!r}") from exc
    if cap <= 0:
        raise ValidationError(f"{MEM_CAP_ENV_VAR} must be positive, got {cap}")
    return cap


def dp_table_bytes(n: int, capacity: int) -> int:
    """Bytes the exact solver's tables would occupy for an n-item instance."""
    return n * ((capacity + 1 + 7) // 8) + 2 * (capacity + 1) * 8


def check_dp_memory(n: int, capacity: int) -> None:
    """Raise :class:`KnapsackMemoryError` if the DP tables would exceed the cap."""
    needed = dp_table_bytes(n, capacity)
    cap = _mem_cap_bytes()
    if needed > cap:
        raise KnapsackMemoryError(
            f"DP tables need {needed} bytes for n={n}, capacity={capacity}, above the "
            f"{cap}-byte cap; apply gcd_reduce, raise {MEM_CAP_ENV_VAR}, or use solve_greedy"
        )


def solve_dp(instance: KnapsackInstance) -> KnapsackSolution:
    """Optimal solution by weight-indexed dynamic programming.

    Two rolling float64 value rows of size capacity+1, plus an n x (capacity+1)
    bit matrix recording, for every item and remaining capacity, whether the
    item is kept; on equal value the keep branch wins. Backtracking walks items
    from last to first, decrementing the remaining capacity by each kept
    item's weight.

    Raises :class:`KnapsackMemoryError` when the tables would exceed the
    memory cap (override with ``PRUNEPACK_MEM_CAP_BYTES``); reduce weights via
    ``gcd_reduce`` or fall back to :func:`solve_greedy` in that case.
    """
    negative = [i for i, v in enumerate(instance.values) if v < 0]
    if negative:
        raise ValidationError(
            f"items {negative[:5]} have negative values; the exact solver would never select them, "
            "silently forcing those channels to be pruned -- clamp them to zero or choose a "
            "signed-score policy first"
        )

    n = len(instance)
    capacity = instance.capacity
    check_dp_memory(n, capacity)

    weights = instance.weights
    values = instance.values
    prev = np.zeros(capacity + 1, dtype=np.float64)
    keep_rows: list[np.ndarray] = []
    keep_buf = np.zeros(capacity + 1, dtype=bool)
    for i in range(n):
        w = weights[i]
        keep_buf[:] = False
        if w <= capacity:
            cand = prev[: capacity + 1 - w] + values[i]
            keep_slice = prev[w:] <= cand
            keep_buf[w:] = keep_slice
            cur = prev.copy()
            cur[w:][keep_slice] = cand[keep_slice]
            prev = cur
        keep_rows.append(np.packbits(keep_buf))

    selected = []
    f = capacity
    for i in range(n - 1, -1, -1):
        if (keep_rows[i][f >> 3] >> (7 - (f & 7))) & 1:
            selected.append(i)
            f -= weights[i]
    return _solution(instance, selected, exact=True)


def solve_greedy(instance: KnapsackInstance) -> KnapsackSolution:
    """Greedy relaxation: pack by value/weight ratio, keep the better of the
    greedy pack and the single best-value feasible item.

    Sort ties go to the smaller weight, then the lower index. The result is
    within a factor 2 of the optimum (classical bound for this combination).
    """
    n = len(instance)
    values = instance.values
    weights = instance.weights
    order = sorted(range(n), key=lambda i: (-values[i] / weights[i], weights[i], i))

    remaining = instance.capacity
    packed = []
    for i in order:
        if weights[i] <= remaining:
            packed.append(i)
            remaining -= weights[i]

    best_single = None
    for i in range(n):
        if weights[i] <= instance.capacity:
            if best_single is None or values[i] > values[best_single]:
                best_single = i

    pack_sol = _solution(instance, packed, exact=False)
    if best_single is not None and instance.values[best_single] > pack_sol.total_value:
        return _solution(instance, [best_single], exact=False)
    return pack_sol


def brute_force_oracle(instance: KnapsackInstance) -> KnapsackSolution:
    """Exact optimum by enumerating all 2^n subsets (test oracle, n <= 24).

    Ties: higher value, then lower weight, then smallest subset bitmask.
    """
    n = len(instance)
    if n > BRUTE_FORCE_MAX_ITEMS:
        raise ValidationError(f"brute force supports n <= {BRUTE_FORCE_MAX_ITEMS}, got {n}")

    values = np.asarray(instance.values, dtype=np.float64)
    weights = np.asarray(instance.weights, dtype=np.int64)
    shifts = np.arange(n, dtype=np.uint32)

    best_mask = 0
    best_value = 0.0
    best_weight = 0
    chunk = 1 << 16
    for start in range(0, 1 << n, chunk):
        masks = np.arange(start, min(start + chunk, 1 << n), dtype=np.uint32)
        bits = ((masks[:, None] >> shifts) & 1).astype(np.float64)
        v_tot = bits @ values
        w_tot = (bits @ weights.astype(np.float64)).astype(np.int64)
        feasible = w_tot <= instance.capacity
        if not feasible.any():
            continue
        idx = np.flatnonzero(feasible)
        # Best in chunk: value desc, weight asc, mask asc.
        order = np.lexsort((masks[idx], w_tot[idx], -v_tot[idx]))
        j = idx[order[0]]
        v, wt, m = float(v_tot[j]), int(w_tot[j]), int(masks[j])
        if v > best_value or (v == best_value and (wt < best_weight or (wt == best_weight and m < best_mask))):
            best_mask, best_value, best_weight = m, v, wt

    selected = [i for i in range(n) if (best_mask >> i) & 1]
    return _solution(instance, selected, exact=True)
