"""Loss kernels for fine-tuning a pruned network under its parent's supervision.

Three pieces: the output-logit distillation loss (teacher-weighted student
cross-entropy), the inner feature-map loss through per-layer linear
reconstruction matrices, and the combined objective. All reductions are sums
over the batch (callers rescale through the loss weights), accumulated in
float64 in a fixed order.

The reconstruction matrices are learned by gradient descent during actual
fine-tuning; :func:`fit_reconstruction` provides the closed-form ridge optimum
for fixed features, which doubles as an initializer and a test oracle.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class FeatureMapBatch:
    """Feature maps of one layer: [batch, channels, positions], spatial dims flattened."""

    layer_id: str
    data: np.ndarray

    def validate(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValidationError(
                f"{self.layer_id}: feature maps must be [batch, channels, positions], got shape {data.shape}"
            )
        if data.shape[0] < 1:
            raise ValidationError(f"{self.layer_id}: batch must be >= 1")
        if not np.all(np.isfinite(data)):
            raise ValidationError(f"{self.layer_id}: feature maps contain non-finite entries")


@dataclass(frozen=True)
class ReconstructionMatrix:
    """Linear map [c_teacher x c_student] reconstructing teacher maps from student maps."""

    layer_id: str
    m: np.ndarray
    ridge_lambda: float = 0.0


@dataclass(frozen=True)
class LossWeights:
    lambda_ikd: float = 1.0
    lambda_kd: float = 1.0

    def __post_init__(self):
        if self.lambda_ikd < 0 or self.lambda_kd < 0:
            raise ValidationError("loss weights must be nonnegative")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def kd_loss(teacher_logits: np.ndarray, student_logits: np.ndarray) -> float:
    """Teacher-softmax-weighted negative student log-softmax, summed over the batch.

    Equals cross-entropy between the two output distributions; minimal exactly
    when the softmaxes coincide, where it reduces to the teacher's entropy.
    """
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.ndim != 2 or s.ndim != 2:
        raise ValidationError(f"logits must be [batch, classes], got {t.shape} and {s.shape}")
    if t.shape != s.shape:
        raise ValidationError(f"teacher/student logit shapes differ: {t.shape} vs {s.shape}")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
        raise ValidationError("logits contain non-finite entries")
    t_shifted = t - t.max(axis=1, keepdims=True)
    t_prob = np.exp(t_shifted)
    t_prob /= t_prob.sum(axis=1, keepdims=True)
    return float(-(t_prob * _log_softmax(s)).sum())


def ikd_loss(
    pairs: Sequence[tuple[FeatureMapBatch, FeatureMapBatch, ReconstructionMatrix]],
) -> float:
    """Squared reconstruction error summed over batch, layers, and positions."""
    total = 0.0
    for teacher, student, recon in pairs:
        teacher.validate()
        student.validate()
        t = np.asarray(teacher.data, dtype=np.float64)
        s = np.asarray(student.data, dtype=np.float64)
        m = np.asarray(recon.m, dtype=np.float64)
        if t.shape[0] != s.shape[0] or t.shape[2] != s.shape[2]:
            raise ValidationError(
                f"{teacher.layer_id}: teacher {t.shape} and student {s.shape} disagree on batch/positions"
            )
        if m.shape != (t.shape[1], s.shape[1]):
            raise ValidationError(
                f"{recon.layer_id}: matrix shape {m.shape} does not match "
                f"(c_teacher={t.shape[1]}, c_student={s.shape[1]})"
            )
        residual = t - np.einsum("ts,bsp->btp", m, s)
        total += float((residual ** 2).sum())
    return total


def fit_reconstruction(
    teacher: FeatureMapBatch,
    student: FeatureMapBatch,
    ridge_lambda: float = 0.0,
) -> ReconstructionMatrix:
    """Closed-form ridge-regression optimum of the reconstruction matrix.

    Stacking maps over batch*positions into S [c_s, N] and T [c_t, N], the
    loss-minimizing matrix for fixed features is ``T S^T (S S^T + lambda I)^-1``.
    ``ridge_lambda`` must be positive when ``S S^T`` is singular.
    """
    teacher.validate()
    student.validate()
    if ridge_lambda < 0:
        raise ValidationError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    t = np.asarray(teacher.data, dtype=np.float64)
    s = np.asarray(student.data, dtype=np.float64)
    if t.shape[0] != s.shape[0] or t.shape[2] != s.shape[2]:
        raise ValidationError(
            f"{teacher.layer_id}: teacher {t.shape} and student {s.shape} disagree on batch/positions"
        )
    c_t, c_s = t.shape[1], s.shape[1]
    t_flat = np.moveaxis(t, 1, 0).reshape(c_t, -1)
    s_flat = np.moveaxis(s, 1, 0).reshape(c_s, -1)
    gram = s_flat @ s_flat.T + ridge_lambda * np.eye(c_s)
    cross = s_flat @ t_flat.T  # [c_s, c_t]
    try:
        solution = np.linalg.solve(gram, cross)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(
            f"{student.layer_id}: student Gram matrix is singular; use ridge_lambda > 0"
        ) from exc
    return ReconstructionMatrix(layer_id=teacher.layer_id, m=solution.T, ridge_lambda=float(ridge_lambda))


def combined_loss(ce: float, ikd: float, kd: float, weights: LossWeights) -> float:
    """Cross-entropy plus weighted distillation terms."""
    for name, value in (("ce", ce), ("ikd", ikd), ("kd", kd)):
        if not np.isfinite(value):
            raise ValidationError(f"{name} loss must be finite, got {value!r}")
    return float(ce + weights.lambda_ikd * ikd + weights.lambda_kd * kd)
