"""Channel-pruning planner: knapsack channel selection over coupled groups,
FLOPs/latency cost models, and distillation loss kernels."""

from .errors import (
    GraphFormatError,
    InfeasibleBudgetError,
    KnapsackMemoryError,
    PrunepackError,
    ValidationError,
)
from .graph import (
    CouplingGroup,
    LayerSpec,
    NetworkGraph,
    apply_prune_plan,
    build_coupling_groups,
    layer_flops,
    load_graph,
    network_flops,
    parse_graph,
    serialize_graph,
    validate_graph,
)
from .importance import (
    ChannelImportance,
    ScoreSample,
    aggregate_group_importance,
    compute_channel_importance,
)
from .cost import (
    ChannelCost,
    build_flops_costs,
    build_latency_costs,
    channel_flops_saving,
    gcd_reduce,
)
from .knapsack import (
    KnapsackInstance,
    KnapsackSolution,
    brute_force_oracle,
    solve_dp,
    solve_greedy,
)
from .planner import (
    Budget,
    PlanOptions,
    PrunePlan,
    calibrate_budget,
    load_plan,
    parse_plan,
    plan_prune,
    plan_to_json,
)
from .distill import (
    FeatureMapBatch,
    LossWeights,
    ReconstructionMatrix,
    combined_loss,
    fit_reconstruction,
    ikd_loss,
    kd_loss,
)
from .report import emit_report, render_csv, render_figures, render_json, render_text, write_report
from .tensorio import TensorBlob, load_tensor_dir, save_tensor_dir

__version__ = "0.1.0"
