"""Version age tracking driven by feature-space model change.

A client's age counts how many rounds its local data would have changed the
global model without being heard. Each round the server measures M, the
distance between the current model's features on a probe batch and the
feature summary the client reported last time it trained; the age grows only
when M clears the threshold mu, and resets when the client participates.
"""

from __future__ import annotations

import math

import numpy as np

from .learner import Minibatch, MLPParams, forward


def feature_distance(v: np.ndarray, h: np.ndarray) -> float:
    """Euclidean distance between a batch-mean feature vector and a summary."""
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if v.shape != h.shape:
        raise ValueError(f"feature shapes differ: {v.shape} vs {h.shape}")
    return float(np.linalg.norm(v - h))


def probe_change(
    params: MLPParams,
    probe: Minibatch,
    history: np.ndarray | None,
    feature_layer: int = -1,
) -> float:
    """One forward pass on the probe batch; distance of its mean features to history.

    A client with no stored summary has never been heard, so its change is
    unbounded: returns inf, which clears any finite threshold. No backward
    pass runs and nothing is mutated.
    """
    if history is None:
        return math.inf
    _, feature_sum = forward(params, probe.inputs, feature_layer)
    return feature_distance(feature_sum / len(probe), history)


def update_age(age: int, q: int, m: float | None, mu: float) -> int:
    """One round of the age recurrence for a single client.

    Participation (q=1) resets the age to zero no matter what M says.
    Otherwise the age grows by one when M clears mu and holds when it does
    not; a missing M (the client has never trained, so there is no summary
    to compare against) counts as cleared.
    """
    if mu <= 0:
        raise ValueError(f"threshold must be positive, got {mu}")
    if age < 0:
        raise ValueError(f"age must be non-negative, got {age}")
    if q not in (0, 1):
        raise ValueError(f"q must be 0 or 1, got {q}")
    if q == 1:
        return 0
    if m is None or m >= mu:
        return age + 1
    return age


def advance_ages(
    ages: np.ndarray, informative: np.ndarray, reset: np.ndarray
) -> np.ndarray:
    """Vectorized age recurrence over all clients at once.

    informative[i] is the precomputed M_i >= mu test (missing summaries count
    as informative); reset[i] is q_i. Reset wins over growth.
    """
    ages = np.asarray(ages)
    if ages.shape != np.shape(informative) or ages.shape != np.shape(reset):
        raise ValueError("ages, informative, reset must share one shape")
    grown = np.where(informative, ages + 1, ages)
    return np.where(reset, 0, grown)
