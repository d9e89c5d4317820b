"""Inverse-exponential temporal frame sampling.

Frames near the end of a clip (just before the interaction) get
exponentially more selection weight. The final frame is always kept and
the remaining ``n - 1`` frames are drawn without replacement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SamplingConfig",
    "SamplingPlan",
    "compute_weights",
    "draw_order",
    "draw_plan",
    "plan_to_timestamps",
]

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SamplingConfig:
    """Sampler hyperparameters.

    Attributes
    ----------
    lam : float
        Temporal bias strength in [0, 1]. ``0`` is uniform.
    sample_size : int
        Number of frames ``n`` to select, final frame included.
    seed : int
        Unsigned 64-bit seed for the weighted draw.
    """

    lam: float = 0.1
    sample_size: int = 15
    seed: int = 0

    def __post_init__(self):
        _check_lambda(self.lam)
        if int(self.sample_size) < 1:
            raise ValueError(f"sample_size must be >= 1, got {self.sample_size}")
        if not 0 <= int(self.seed) <= _SEED_MASK:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class SamplingPlan:
    frame_indices: tuple[int, ...]
    probabilities: np.ndarray = field(repr=False)
    config_used: SamplingConfig
    sequence_length: int

    def to_dict(self) -> dict:
        return {
            "indices": list(self.frame_indices),
            "probabilities": [float(p) for p in self.probabilities],
            "lambda": self.config_used.lam,
            "n": self.config_used.sample_size,
            "seed": self.config_used.seed,
        }


def _check_lambda(lam):
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")


def compute_weights(sequence_length: int, lam: float) -> np.ndarray:
    """Selection probability of each non-final frame.

    Parameters
    ----------
    sequence_length : int
        Number of frames ``N_v`` in the clip, at least 2.
    lam : float
        Bias strength in [0, 1].

    Returns
    -------
    numpy.ndarray
        Length ``N_v - 1`` vector over indices ``0 .. N_v - 2``; element ``i``
        is proportional to ``exp(-lam * (N_v - 2 - i))``.
    """
    _check_lambda(lam)
    if sequence_length < 2:
        raise ValueError(
            f"need at least 2 frames to build a distribution, got {sequence_length}"
        )
    m = sequence_length - 1
    if lam == 0:
        return np.full(m, 1.0 / m)
    distance = np.arange(m - 1, -1, -1, dtype=np.float64)
    # last entry is exp(0) == 1 exactly, so the sum never underflows to zero
    w = np.exp(-lam * distance)
    return w / w.sum()


def draw_order(sequence_length: int, config: SamplingConfig) -> list[int]:
    """Non-final frame picks in the order they were drawn.

    Uses Efraimidis-Spirakis exponential keys ``u ** (1 / w)``, evaluated in
    log space so tiny weights never underflow to a tied key. The first
    element is distributed exactly as :func:`compute_weights`.
    """
    if sequence_length < 1:
        raise ValueError(f"sequence_length must be >= 1, got {sequence_length}")
    k = min(config.sample_size - 1, sequence_length - 1)
    if k <= 0:
        return []
    m = sequence_length - 1
    rng = np.random.Generator(np.random.PCG64(int(config.seed)))
    u = rng.random(m)
    # argmax u**(1/w)  <=>  argmin log(-log u) - log w, with log w = -lam * d
    log_w = -config.lam * np.arange(m - 1, -1, -1, dtype=np.float64)
    with np.errstate(divide="ignore"):
        score = np.log(-np.log(u)) - log_w
    order = np.argsort(score, kind="stable")[:k]
    return [int(i) for i in order]


def draw_plan(sequence_length: int, config: SamplingConfig) -> SamplingPlan:
    """Select ``min(n, N_v)`` sorted frame indices, always including ``N_v - 1``."""
    if sequence_length < 1:
        raise ValueError(f"sequence_length must be >= 1, got {sequence_length}")
    if sequence_length == 1:
        probs = np.zeros(0)
        return SamplingPlan((0,), probs, config, 1)
    probs = compute_weights(sequence_length, config.lam)
    picks = draw_order(sequence_length, config)
    indices = tuple(sorted(picks + [sequence_length - 1]))
    return SamplingPlan(indices, probs, config, sequence_length)


def plan_to_timestamps(plan: SamplingPlan, fps: float) -> list[float]:
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps}")
    return [i / fps for i in plan.frame_indices]
