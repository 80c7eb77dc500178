"""Per-channel importance from first-order loss sensitivity.

A channel's score estimates the loss change caused by zeroing it, computed
from the channel's flattened weight vector and per-sample gradient vectors.
Three modes:

* ``signed_taylor``: ``-mean_s(w . g_s)`` -- the raw first-order term. Can be
  negative and averages toward zero near convergence.
* ``abs_taylor``: ``mean_s(|w . g_s|)`` -- magnitude of the per-sample term.
* ``abs_product``: ``mean_s(|w| . |g_s|)`` -- elementwise magnitudes, the
  default (empirically the strongest criterion of the three).

Scores are accumulated in float64 regardless of input precision. The
expectation is the arithmetic mean over samples, taken in sample-index order.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graph import COMPUTE_KINDS, CouplingGroup, NetworkGraph

IMPORTANCE_MODES = ("abs_product", "abs_taylor", "signed_taylor")


@dataclass(frozen=True)
class ScoreSample:
    """Weights and per-sample gradients for one layer.

    ``weights`` has shape [c_out, d] (flattened per-channel weight vectors);
    ``grads`` has shape [n_samples, c_out, d], one gradient set per validation
    sample.
    """

    layer_id: str
    weights: np.ndarray
    grads: np.ndarray

    def validate(self) -> None:
        w = np.asarray(self.weights)
        g = np.asarray(self.grads)
        if w.ndim != 2:
            raise ValidationError(f"{self.layer_id}: weights must be [c_out, d], got shape {w.shape}")
        if g.ndim != 3:
            raise ValidationError(f"{self.layer_id}: grads must be [samples, c_out, d], got shape {g.shape}")
        if g.shape[0] < 1:
            raise ValidationError(f"{self.layer_id}: need at least one gradient sample")
        if g.shape[1:] != w.shape:
            raise ValidationError(
                f"{self.layer_id}: gradient shape {g.shape[1:]} does not match weight shape {w.shape}"
            )


@dataclass(frozen=True)
class ChannelImportance:
    """Per-output-channel scores for one layer."""

    layer_id: str
    scores: np.ndarray
    mode: str


def compute_channel_importance(sample: ScoreSample, mode: str = "abs_product") -> ChannelImportance:
    """Score every output channel of one layer."""
    if mode not in IMPORTANCE_MODES:
        raise ValidationError(f"unknown importance mode {mode!r}, expected one of {IMPORTANCE_MODES}")
    sample.validate()
    w = np.asarray(sample.weights, dtype=np.float64)
    g = np.asarray(sample.grads, dtype=np.float64)

    if mode == "abs_product":
        # mean over samples of |w| . |g|
        per_sample = np.einsum("od,sod->so", np.abs(w), np.abs(g))
    else:
        z = np.einsum("od,sod->so", w, g)  # per-sample w . g
        per_sample = np.abs(z) if mode == "abs_taylor" else -z
    scores = per_sample.mean(axis=0)
    return ChannelImportance(layer_id=sample.layer_id, scores=scores, mode=mode)


def aggregate_group_importance(
    graph: NetworkGraph,
    groups: Sequence[CouplingGroup],
    importances: Sequence[ChannelImportance],
) -> dict[int, np.ndarray]:
    """Sum member scores onto each prunable group, channelwise.

    A group's value vector is the elementwise sum of the score vectors of its
    weighted output-axis members (first-order loss deltas add). Every such
    member must come with an importance vector of the group's channel count.
    """
    by_layer = {}
    for imp in importances:
        if imp.layer_id in by_layer:
            raise ValidationError(f"duplicate importance for layer {imp.layer_id!r}")
        by_layer[imp.layer_id] = imp

    values: dict[int, np.ndarray] = {}
    for group in groups:
        if not group.prunable:
            continue
        total = np.zeros(group.channel_count, dtype=np.float64)
        for layer_id, _axis in group.output_members():
            layer = graph.by_id[layer_id]
            if layer.kind not in COMPUTE_KINDS:
                continue
            imp = by_layer.get(layer_id)
            if imp is None:
                raise ValidationError(
                    f"group {group.group_id} ({group.name}): missing importance for layer {layer_id!r}"
                )
            scores = np.asarray(imp.scores, dtype=np.float64)
            if scores.shape != (group.channel_count,):
                raise ValidationError(
                    f"layer {layer_id!r}: {scores.shape[0] if scores.ndim == 1 else scores.shape} scores "
                    f"for a group of {group.channel_count} channels"
                )
            total += scores
        values[group.group_id] = total
    return values
