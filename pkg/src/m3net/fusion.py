"""Turn branch distances into probabilities, fuse them, and score the multi-view loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelOutOfRange, NonPositiveTemperature
from .matching import BranchScores

LOG_FLOOR = 1e-30


@dataclass
class FusedPrediction:
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    y: np.ndarray
    predicted_class: int


@dataclass
class LossReport:
    l1: float
    l2: float
    l3: float
    total: float


def distances_to_probs(d, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {temperature}")
    logits = -np.asarray(d, dtype=np.float64) / temperature
    e = np.exp(logits - logits.max())
    return e / e.sum()


def fuse(scores: BranchScores, temperature: float = 1.0) -> FusedPrediction:
    y1, y2, y3 = (distances_to_probs(d, temperature) for d in scores.as_tuple())
    y = y1 + y2 + y3
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return FusedPrediction(y1, y2, y3, y, int(np.argmax(y)))


def multiview_loss(scores: BranchScores, label: int, temperature: float = 1.0,
                   branches=(True, True, True)) -> LossReport:
    """Cross-entropy per branch and their sum.

    A disabled branch reports 0 and contributes nothing to ``total``.
    """
    return multiview_loss_vjp(scores, label, temperature, branches)[0]


def multiview_loss_vjp(scores: BranchScores, label: int, temperature: float = 1.0,
                       branches=(True, True, True)):
    n = len(scores.d1)
    if not 0 <= label < n:
        raise LabelOutOfRange(f"label {label} outside [0, {n})")
    losses, grads = [], []
    for d, on in zip(scores.as_tuple(), branches):
        if not on:
            losses.append(0.0)
            grads.append(np.zeros(n))
            continue
        p = distances_to_probs(d, temperature)
        losses.append(float(-np.log(max(p[label], LOG_FLOOR))))
        onehot = np.zeros(n)
        onehot[label] = 1.0
        # d(-log p_label)/d(distance) with logits = -distance / temperature
        g = -(p - onehot) / temperature if p[label] >= LOG_FLOOR else np.zeros(n)
        grads.append(g)
    report = LossReport(losses[0], losses[1], losses[2], losses[0] + losses[1] + losses[2])
    return report, BranchScores(*grads)
