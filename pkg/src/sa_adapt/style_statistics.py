"""Channel-wise style statistics of feature maps and the distance between styles.

The "style" of one sample is the pair of per-channel first and second
moments (mean, std) of its feature map, computed over the spatial extent.
The distance between two styles is the squared 2-Wasserstein distance
between diagonal Gaussians with those moments, which reduces to
``sum((mu - p_mu)^2) + sum((sigma - p_sigma)^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import DTYPE, check_feature_map, require_finite

# Variance floor added under the square root; keeps std >= sqrt(EPSILON)
# so later divisions never hit zero.
EPSILON = 1e-6


@dataclass
class ChannelStats:
    """Per-channel (mean, std) pair for one sample; std is strictly positive."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=DTYPE)
        self.std = np.asarray(self.std, dtype=DTYPE)
        if self.mean.ndim != 1 or self.std.ndim != 1:
            raise ValueError("mean and std must be 1-D per-channel vectors")
        if self.mean.shape != self.std.shape:
            raise ValueError(
                f"mean/std channel counts disagree: {self.mean.shape} vs {self.std.shape}"
            )
        require_finite(self.mean, "channel means")
        require_finite(self.std, "channel stds")
        if np.any(self.std <= 0.0):
            raise ValueError("channel stds must be strictly positive")

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


def compute_stats(f: np.ndarray, epsilon: float = EPSILON) -> list[ChannelStats]:
    """Per-sample channel statistics of a (B, C, H, W) feature map.

    mean[b, c] is the spatial average; std[b, c] = sqrt(spatial variance
    + epsilon), so a constant channel yields std = sqrt(epsilon).

    Returns one ChannelStats per batch sample.
    """
    f = check_feature_map(f)
    mean = f.mean(axis=(2, 3))
    var = np.mean((f - mean[:, :, None, None]) ** 2, axis=(2, 3))
    std = np.sqrt(var + epsilon)
    return [ChannelStats(mean[b], std[b]) for b in range(f.shape[0])]


def style_distance(s: ChannelStats, p) -> float:
    """Squared 2-Wasserstein distance between two diagonal-Gaussian styles.

    ``p`` may be another ChannelStats or any object with per-channel
    ``p_mean``/``p_std`` vectors (a stored prototype). Non-negative,
    symmetric, and zero exactly when the statistics coincide.
    """
    p_mean, p_std = _style_vectors(p)
    if p_mean.shape != s.mean.shape:
        raise ValueError(
            f"channel counts disagree: {s.mean.shape[0]} vs {p_mean.shape[0]}"
        )
    mean_term = np.sum((s.mean - p_mean) ** 2)
    std_term = np.sum(s.std**2 + p_std**2 - 2.0 * s.std * p_std)
    return float(mean_term + std_term)


def _style_vectors(p) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, ChannelStats):
        return p.mean, p.std
    return np.asarray(p.p_mean, dtype=DTYPE), np.asarray(p.p_std, dtype=DTYPE)
