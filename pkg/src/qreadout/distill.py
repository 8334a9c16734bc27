"""Knowledge distillation of a frozen teacher into a compact student.

The student minimises ``alpha * BCE(student, label) + (1 - alpha) * (s/T - t/T)**2``
where ``s`` and ``t`` are the student and teacher logits.
"""

from dataclasses import dataclass

import numpy as np

from qreadout import nn


@dataclass
class DistillConfig(nn.TrainConfig):
    alpha: float = 0.5
    temperature: float = 2.0

    def __post_init__(self):
        super().__post_init__()
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


@dataclass(frozen=True)
class DistillBatchView:
    """Two views of the same records: student features and the teacher's raw traces."""

    features: np.ndarray
    raw: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not len(self.features) == len(self.raw) == len(self.labels):
            raise ValueError(f"view lengths differ: features {len(self.features)}, "
                             f"raw {len(self.raw)}, labels {len(self.labels)}")


def distill_loss(student_logit, teacher_logit, label, alpha, temperature):
    """Elementwise composite loss (numpy broadcasting)."""
    s = np.asarray(student_logit, dtype=np.float64)
    kd = (s / temperature - np.asarray(teacher_logit, dtype=np.float64) / temperature) ** 2
    return alpha * nn.bce_with_logits(s, label) + (1 - alpha) * kd


def distill_loss_grad(student_logit, teacher_logit, label, alpha, temperature):
    """``d distill_loss / d student_logit``."""
    s = np.asarray(student_logit, dtype=np.float64)
    d_kd = 2 * (s - np.asarray(teacher_logit, dtype=np.float64)) / temperature ** 2
    return alpha * (nn.sigmoid(s) - label) + (1 - alpha) * d_kd


def distill_objective(teacher_logits, labels, alpha, temperature):
    """Loss function for :func:`qreadout.nn.fit` over precomputed teacher logits."""
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)

    def loss(z, idx):
        t, y = teacher_logits[idx], labels[idx]
        value = distill_loss(z, t, y, alpha, temperature).mean()
        return value, distill_loss_grad(z, t, y, alpha, temperature) / len(idx)

    return loss


def teacher_logits(teacher: nn.Network, raw, batch=4096) -> np.ndarray:
    raw = np.asarray(raw)
    return np.concatenate([nn.forward(teacher, raw[k:k + batch])
                           for k in range(0, len(raw), batch)]) if len(raw) else np.empty(0)


def train_student(teacher: nn.Network, view: DistillBatchView, spec: nn.NetworkSpec,
                  cfg: DistillConfig, cached_logits=None, callback=None):
    """Train a student on ``view.features`` against the frozen teacher.

    Teacher logits are evaluated once on ``view.raw`` unless ``cached_logits``
    is given.  Returns ``(student, history)``.
    """
    if view.features.shape[1] != spec.input_dim:
        raise ValueError(f"feature width {view.features.shape[1]} != student input {spec.input_dim}")
    if cached_logits is None:
        t = teacher_logits(teacher, view.raw)
    else:
        t = np.asarray(cached_logits, dtype=np.float64)
        if len(t) != len(view.labels):
            raise ValueError("cached teacher logits do not match the view length")
    init = nn.init_network(spec, cfg.seed)
    return nn.fit(init, view.features,
                  distill_objective(t, view.labels, cfg.alpha, cfg.temperature), cfg, callback)
