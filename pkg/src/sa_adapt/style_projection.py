"""Rectify feature-map styles toward the bank's prototype manifold.

For each sample the bank distances are turned into softmax weights, the
weighted prototype statistics (mu', sigma') are formed by a 1xK times KxC
matrix product, and the map is remapped per channel by the instance
renormalization ``((f - mu) / sigma) * sigma' + mu'``. All K prototypes
participate; there is no KNN pruning.

Weighting modes:
  * ``neg-distance`` (default): weights = softmax(-d / temperature), so the
    nearest prototypes dominate.
  * ``raw-distance``: weights = softmax(d / temperature), kept selectable
    for A/B comparison; it weights the farthest prototypes most and is
    rarely what you want.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StateError
from .style_memory_bank import StyleMemoryBank
from .style_statistics import ChannelStats, compute_stats
from .tensor_core import check_feature_map, matmul, softmax

WEIGHTINGS = ("neg-distance", "raw-distance")


@dataclass
class ProjectionResult:
    """Rectified sample plus the target statistics and weights that produced it."""

    rectified: np.ndarray  # (1, C, H, W)
    target_mean: np.ndarray  # (C,)
    target_std: np.ndarray  # (C,)
    weights: np.ndarray  # (K,)


def prototype_matrices(bank: StyleMemoryBank) -> tuple[np.ndarray, np.ndarray]:
    """Stack the bank's prototypes into (K, C) mean and std matrices."""
    if not bank.prototypes:
        raise StateError("bank holds no prototypes")
    p_mu = np.stack([p.p_mean for p in bank.prototypes])
    p_sigma = np.stack([p.p_std for p in bank.prototypes])
    return p_mu, p_sigma


def projection_weights(
    distances: np.ndarray,
    weighting: str = "neg-distance",
    temperature: float = 1.0,
) -> np.ndarray:
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    if not temperature > 0.0:
        raise ValueError("softmax temperature must be positive")
    logits = np.asarray(distances, dtype=float) / temperature
    if weighting == "neg-distance":
        logits = -logits
    return softmax(logits)


def project(
    bank: StyleMemoryBank,
    f: np.ndarray,
    weighting: str = "neg-distance",
    temperature: float = 1.0,
    epsilon: float | None = None,
) -> list[ProjectionResult]:
    """Project every sample of a (B, C, H, W) map onto the bank's style manifold.

    Returns one ProjectionResult per batch sample; ``rectified`` keeps the
    (1, C, H, W) layout. The division uses the epsilon-floored std from the
    statistics pass, so it is always well defined.
    """
    f = check_feature_map(f)
    if not bank.prototypes:
        raise StateError("cannot project against an empty bank")
    kwargs = {} if epsilon is None else {"epsilon": epsilon}
    stats = compute_stats(f, **kwargs)
    p_mu, p_sigma = prototype_matrices(bank)
    results = []
    for b, s in enumerate(stats):
        w = projection_weights(bank.distances(s), weighting, temperature)
        target_mean = matmul(w[None, :], p_mu)[0]
        target_std = matmul(w[None, :], p_sigma)[0]
        sample = f[b : b + 1]
        normalized = (sample - s.mean[None, :, None, None]) / s.std[None, :, None, None]
        rectified = normalized * target_std[None, :, None, None] + target_mean[None, :, None, None]
        results.append(ProjectionResult(rectified, target_mean, target_std, w))
    return results


def project_pyramid(
    banks: list[StyleMemoryBank],
    pyramid: list[np.ndarray],
    weighting: str = "neg-distance",
    temperature: float = 1.0,
    epsilon: float | None = None,
) -> list[list[ProjectionResult]]:
    """Independently project every pyramid level with its own bank.

    Returns a list over levels (order preserved) of per-sample results.
    """
    if len(banks) != len(pyramid):
        raise ValueError(f"{len(banks)} banks for {len(pyramid)} pyramid levels")
    if not pyramid:
        raise ValueError("empty pyramid")
    return [
        project(bank, level, weighting, temperature, epsilon)
        for bank, level in zip(banks, pyramid)
    ]


def rectified_stats(result: ProjectionResult) -> ChannelStats:
    """Re-measure the output statistics of a projection (convenience)."""
    return compute_stats(result.rectified)[0]
