"""Export sessions: graph document, weight/gradient dumps, latency measurements."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .formats import write_graph_document, write_latency_table, write_tensor_dir
from .trace import TracedModel, trace_model


@dataclass
class ExportSession:
    model: nn.Module
    resolution: int = 224
    sample_count: int = 2
    out_dir: str = "export"
    seed: int = 0
    batch: torch.Tensor | None = None
    labels: torch.Tensor | None = None
    measure_latency: bool = False
    latency_repeats: int = 3

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


def _validation_batch(session: ExportSession, n_classes: int):
    if session.batch is not None:
        batch = session.batch
        if batch.shape[0] < session.sample_count:
            raise ValueError(
                f"provided batch has {batch.shape[0]} samples, need {session.sample_count}"
            )
        labels = session.labels
        if labels is None:
            raise ValueError("a user batch requires labels")
        return batch[: session.sample_count], labels[: session.sample_count]
    gen = torch.Generator().manual_seed(session.seed)
    batch = torch.randn(session.sample_count, 3, session.resolution, session.resolution,
                        generator=gen)
    labels = torch.randint(0, n_classes, (session.sample_count,), generator=gen)
    return batch, labels


def export_graph_and_tensors(session: ExportSession) -> dict:
    """Write graph.json, tensors/ (weights + per-sample grads), optional latency.json.

    Returns the paths of everything written.
    """
    model = session.model.eval()
    traced = trace_model(model, (session.resolution, session.resolution))
    os.makedirs(session.out_dir, exist_ok=True)
    graph_path = os.path.join(session.out_dir, "graph.json")
    write_graph_document(traced.document(), graph_path)

    weighted = [(t.spec["id"], model.get_submodule(t.module_target))
                for t in traced.weighted_layers()]
    n_classes = traced.layers[-1].spec["c_out"]
    batch, labels = _validation_batch(session, n_classes)

    arrays: dict[str, np.ndarray] = {}
    for layer_id, module in weighted:
        weight = module.weight.detach()
        arrays[f"weights/{layer_id}"] = weight.reshape(weight.shape[0], -1).numpy()

    for i in range(session.sample_count):
        model.zero_grad(set_to_none=True)
        out = model(batch[i : i + 1])
        loss = F.cross_entropy(out, labels[i : i + 1])
        loss.backward()
        for layer_id, module in weighted:
            grad = module.weight.grad
            if grad is None:
                raise RuntimeError(f"no gradient reached {layer_id}; check the model graph")
            arrays[f"grads/{layer_id}/{i}"] = grad.detach().reshape(grad.shape[0], -1).numpy()
    model.zero_grad(set_to_none=True)

    tensors_dir = os.path.join(session.out_dir, "tensors")
    write_tensor_dir(tensors_dir, arrays, dtype="f32")

    paths = {"graph": graph_path, "tensors": tensors_dir}
    if session.measure_latency:
        latency_path = os.path.join(session.out_dir, "latency.json")
        write_latency_table(measure_latency(model, traced, batch[:1],
                                            repeats=session.latency_repeats), latency_path)
        paths["latency"] = latency_path
    return paths


def measure_latency(model: nn.Module, traced: TracedModel, example: torch.Tensor,
                    repeats: int = 3) -> dict[str, float]:
    """Per-layer forward time in microseconds, averaged over ``repeats`` runs."""
    weighted = traced.weighted_layers()
    totals = {t.spec["id"]: 0.0 for t in weighted}
    starts: dict[str, float] = {}
    handles = []

    def make_pre(layer_id):
        def pre_hook(_module, _inputs):
            starts[layer_id] = time.perf_counter()
        return pre_hook

    def make_post(layer_id):
        def post_hook(_module, _inputs, _output):
            totals[layer_id] += time.perf_counter() - starts[layer_id]
        return post_hook

    for t in weighted:
        module = model.get_submodule(t.module_target)
        handles.append(module.register_forward_pre_hook(make_pre(t.spec["id"])))
        handles.append(module.register_forward_hook(make_post(t.spec["id"])))
    try:
        with torch.no_grad():
            model(example)  # warmup
            for lid in totals:
                totals[lid] = 0.0
            for _ in range(repeats):
                model(example)
    finally:
        for h in handles:
            h.remove()
    # Clamp away timer jitter: the planner requires strictly positive entries.
    return {lid: max(total / repeats * 1e6, 1e-3) for lid, total in totals.items()}
