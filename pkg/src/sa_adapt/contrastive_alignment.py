"""Cross-domain contrastive loss over class queries, with analytic gradients.

Writing S and A for the source- and augmented-domain query matrices and P
for the set of present categories, the loss is

    L = -(1 / |P|) * sum_{i in P} log( exp(s_i . a_i)
                                       / sum_{j in P} exp(s_j . a_i) )

i.e. a softmax cross-entropy per augmented query a_i whose logits are its
dot products with every present source query. Similarities are raw dot
products; no temperature and no normalization by default (an optional L2
normalization is available for experimentation). Absent categories take
no part in numerator or denominator and receive exactly zero gradient.

The loss is asymmetric in (S, A) as written: the softmax normalizes over
the source index j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StateError
from .tensor_core import DTYPE, require_finite


@dataclass
class ContrastiveBatch:
    """Paired (C, d) query matrices plus the shared present-category flags."""

    q_source: np.ndarray
    q_augmented: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        self.q_source = np.asarray(self.q_source, dtype=DTYPE)
        self.q_augmented = np.asarray(self.q_augmented, dtype=DTYPE)
        self.present = np.asarray(self.present, dtype=bool)
        if self.q_source.shape != self.q_augmented.shape or self.q_source.ndim != 2:
            raise ValueError(
                f"query matrices must share a (C, d) shape, got "
                f"{self.q_source.shape} and {self.q_augmented.shape}"
            )
        if self.present.shape != (self.q_source.shape[0],):
            raise ValueError("present must be a length-C boolean vector")
        require_finite(self.q_source, "source queries")
        require_finite(self.q_augmented, "augmented queries")


@dataclass
class LossReport:
    l_contra: float
    grad_q_source: np.ndarray  # (C, d), zero rows for absent categories
    grad_q_augmented: np.ndarray  # (C, d)
    l_total: float | None = None


def contrastive_loss(batch: ContrastiveBatch, normalize: bool = False) -> LossReport:
    """Loss and analytic gradients for one batch of paired query sets.

    Stabilized by per-column max subtraction. With ``normalize`` the
    queries are L2-normalized first and the gradients are chained through
    the normalization.
    """
    idx = np.flatnonzero(batch.present)
    if idx.size == 0:
        raise StateError("contrastive loss needs at least one present category")
    n = idx.size
    s = batch.q_source[idx]
    a = batch.q_augmented[idx]
    if normalize:
        s_norm = np.linalg.norm(s, axis=1, keepdims=True)
        a_norm = np.linalg.norm(a, axis=1, keepdims=True)
        if np.any(s_norm == 0.0) or np.any(a_norm == 0.0):
            raise ValueError("cannot normalize a zero query vector")
        s_unit, a_unit = s / s_norm, a / a_norm
    else:
        s_unit, a_unit = s, a

    logits = s_unit @ a_unit.T  # logits[j, i] = s_j . a_i
    shifted = logits - logits.max(axis=0, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=0)
    log_prob_diag = np.diag(shifted) - np.log(z)
    loss = float(-np.mean(log_prob_diag))

    # d loss / d logits[j, i] = (softmax_j - delta_ji) / n
    g_logits = (exp / z - np.eye(n)) / n
    g_s_unit = g_logits @ a_unit
    g_a_unit = g_logits.T @ s_unit
    if normalize:
        g_s = (g_s_unit - (g_s_unit * s_unit).sum(axis=1, keepdims=True) * s_unit) / s_norm
        g_a = (g_a_unit - (g_a_unit * a_unit).sum(axis=1, keepdims=True) * a_unit) / a_norm
    else:
        g_s, g_a = g_s_unit, g_a_unit

    grad_source = np.zeros_like(batch.q_source)
    grad_augmented = np.zeros_like(batch.q_augmented)
    grad_source[idx] = g_s
    grad_augmented[idx] = g_a
    return LossReport(loss, grad_source, grad_augmented)


def total_loss(l_det: float, l_contra: float, lambda_c: float) -> float:
    """Combined objective: detection loss plus weighted contrastive term.

    The detection loss is an opaque caller-supplied scalar.
    """
    for name, value in (("l_det", l_det), ("l_contra", l_contra), ("lambda_c", lambda_c)):
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")
    if lambda_c < 0.0:
        raise ValueError(f"lambda_c must be >= 0, got {lambda_c}")
    return float(l_det + lambda_c * l_contra)
