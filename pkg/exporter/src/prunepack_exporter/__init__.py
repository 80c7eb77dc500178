"""PyTorch-side companion to the pruning planner: model tracing, tensor dumps,
latency measurement, and checkpoint surgery. Talks to the planner exclusively
through its published file formats and CLI."""

from .dump import ExportSession, export_graph_and_tensors, measure_latency
from .models import build_model
from .surgery import PlanMismatchError, apply_plan_to_model, load_plan_document
from .trace import TracedModel, UnsupportedLayerError, trace_model

__version__ = "0.1.0"
