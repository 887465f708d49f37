"""Sobolev-weighted norms and phase-invariant distance to the ground-state orbit."""

from __future__ import annotations

import numpy as np

__all__ = ["sobolev_weights", "hs_norm", "dist_to_target", "h2_gap"]


def sobolev_weights(eigenvalues: np.ndarray, s: float) -> np.ndarray:
    """Mode weights lambda_k^s; requires a positive spectrum."""
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam <= 0.0):
        raise ValueError("Sobolev weights need strictly positive eigenvalues")
    return lam ** s


def hs_norm(x: np.ndarray, weights: np.ndarray) -> float:
    """sqrt(sum_k w_k |x_k|^2)."""
    x = np.asarray(x)
    if x.shape != np.shape(weights):
        raise ValueError("state and weight lengths differ")
    return float(np.sqrt(np.sum(weights * np.abs(x) ** 2)))


def dist_to_target(x: np.ndarray, weights: np.ndarray) -> float:
    """Weighted distance from x to the circle {c * e_1 : |c| = 1}.

    The optimal phase is c = x_1/|x_1| (any phase when x_1 = 0), giving
    sqrt(|x|_w^2 + w_1 - 2 w_1 |x_1|); evaluated as the cancellation-free
    rearrangement w_1 (|x_1| - 1)^2 + sum_{k>=2} w_k |x_k|^2 so the result
    stays accurate near the target set.
    """
    x = np.asarray(x)
    if x.shape != np.shape(weights):
        raise ValueError("state and weight lengths differ")
    sq = weights[0] * (abs(x[0]) - 1.0) ** 2 + np.sum(weights[1:] * np.abs(x[1:]) ** 2)
    return float(np.sqrt(sq))


def h2_gap(xa: np.ndarray, xb: np.ndarray, eigenvalues: np.ndarray) -> float:
    """Raw (no phase minimization) H2-weighted distance between two states."""
    return hs_norm(np.asarray(xa) - np.asarray(xb), sobolev_weights(eigenvalues, 2.0))
