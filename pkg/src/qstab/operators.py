"""Truncated control operators and the stabilizing feedback laws.

States are complex coefficient vectors of length M on the unit sphere,
expressed in the eigenbasis of -d2/dx2 + V.  The drift H0 is diagonal there;
H1 and H2 are the moment matrices of the two coupling functions.  The
Lyapunov function penalizes excited-mode energy plus the defect of ground
state population, and the feedback laws damp it along averaged trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import GridFunction, SpectralBasis, _sine_values, _start_panels_for, quadrature_vec

__all__ = [
    "ControlOperators",
    "FeedbackParams",
    "build_operators",
    "normalize_state",
    "lyapunov",
    "feedback_terms",
    "feedback_I",
    "feedback_alpha",
    "feedback_beta",
    "damping",
    "gamma_for_target",
]

G_KINDS = ("clip", "smooth")


@dataclass(frozen=True)
class ControlOperators:
    """Drift eigenvalues and symmetric coupling matrices in the eigenbasis."""

    h0_diag: np.ndarray
    h1: np.ndarray
    h2: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.h0_diag.shape[0]


@dataclass(frozen=True)
class FeedbackParams:
    """Feedback gain ``k``, Lyapunov weight ``gamma`` and damping selector."""

    k: float
    gamma: float
    g_kind: str = "clip"

    def __post_init__(self):
        if self.k <= 0.0:
            raise ValueError("gain k must be positive")
        if self.gamma <= 0.0:
            raise ValueError("Lyapunov weight gamma must be positive")
        if self.g_kind not in G_KINDS:
            raise ValueError(f"g_kind must be one of {G_KINDS}")


def build_operators(basis: SpectralBasis, q1: GridFunction, q2: GridFunction) -> ControlOperators:
    """Moment matrices of the coupling functions over the retained eigenmodes.

    Each entry is the integral of Q_n times a product of two expanded
    eigenfunctions, evaluated with the same panel-doubling quadrature used to
    build the potential matrix.  Upper triangles are mirrored, so the results
    are exactly symmetric.
    """
    m = basis.n_modes
    a = basis.eigenvectors
    iu, ju = np.triu_indices(m)

    def moments_for(q: GridFunction) -> np.ndarray:
        def pair_products(x: np.ndarray) -> np.ndarray:
            phi = _sine_values(x, basis.n_sine) @ a
            return q(x)[:, None] * phi[:, iu] * phi[:, ju]

        vals = quadrature_vec(pair_products, start_panels=_start_panels_for(basis.n_sine))
        h = np.zeros((m, m))
        h[iu, ju] = vals
        h[ju, iu] = vals
        return h

    return ControlOperators(
        h0_diag=basis.eigenvalues.copy(),
        h1=moments_for(q1),
        h2=moments_for(q2),
    )


def normalize_state(x) -> np.ndarray:
    """Project a coefficient vector onto the unit sphere."""
    x = np.asarray(x, dtype=complex)
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise ValueError("cannot normalize the zero state")
    return x / norm


def lyapunov(x: np.ndarray, ops: ControlOperators, params: FeedbackParams) -> float:
    """gamma * sum_{k>=2} lambda_k^2 |x_k|^2 + 1 - |x_1|^2 (nonnegative on the sphere)."""
    lam2 = ops.h0_diag ** 2
    tail = float(np.sum(lam2[1:] * np.abs(x[1:]) ** 2))
    return params.gamma * tail + 1.0 - abs(x[0]) ** 2


def feedback_terms(x: np.ndarray, ops: ControlOperators, params: FeedbackParams) -> tuple[float, float]:
    """Both damping terms I_1, I_2 at the given state."""
    lam2 = ops.h0_diag ** 2
    xbar = np.conj(x)
    out = []
    for h in (ops.h1, ops.h2):
        y = h @ x
        s = params.gamma * np.sum(lam2[1:] * y[1:] * xbar[1:]) - y[0] * xbar[0]
        out.append(float(s.imag))
    return out[0], out[1]


def feedback_I(j: int, x: np.ndarray, ops: ControlOperators, params: FeedbackParams) -> float:
    """Damping term I_j, j in {1, 2}.

    Im( gamma * sum_{k>=2} lambda_k^2 (H_j x)_k conj(x_k) - (H_j x)_1 conj(x_1) ),
    the derivative of the Lyapunov function along the flow generated by H_j
    alone (up to a factor 2).
    """
    if j not in (1, 2):
        raise ValueError("j must be 1 or 2")
    i1, i2 = feedback_terms(x, ops, params)
    return i1 if j == 1 else i2


def damping(y: float, g_kind: str = "clip") -> float:
    """Damping function g: zero on [0, inf), positive on (-inf, 0).

    ``clip`` is -min(y, 0).  ``smooth`` is y^2/(1+y^2) for y < 0, a C^1
    bounded-derivative alternative for when a merely Lipschitz g is not
    acceptable.
    """
    if g_kind == "clip":
        return max(-y, 0.0)
    if g_kind == "smooth":
        return y * y / (1.0 + y * y) if y < 0.0 else 0.0
    raise ValueError(f"g_kind must be one of {G_KINDS}")


def feedback_alpha(x: np.ndarray, ops: ControlOperators, params: FeedbackParams) -> float:
    """alpha = -k * I_1."""
    i1, _ = feedback_terms(x, ops, params)
    return -params.k * i1


def feedback_beta(x: np.ndarray, ops: ControlOperators, params: FeedbackParams) -> float:
    """beta = g(I_2) >= 0."""
    _, i2 = feedback_terms(x, ops, params)
    return damping(i2, params.g_kind)


def gamma_for_target(x0: np.ndarray, eigenvalues: np.ndarray, target: float = 0.75) -> float:
    """Solve L(x0) = target for the Lyapunov weight gamma.

    gamma = (target - 1 + |x_1|^2) / sum_{k>=2} lambda_k^2 |x_k|^2.  Fails for
    states with no excited content (the ground state needs no stabilizing) and
    for targets at or below 1 - |x_1|^2, which would need gamma <= 0.
    """
    x0 = np.asarray(x0, dtype=complex)
    lam2 = np.asarray(eigenvalues, dtype=float) ** 2
    denom = float(np.sum(lam2[1:] * np.abs(x0[1:]) ** 2))
    if denom <= 0.0:
        raise ValueError("initial state has no excited-mode content; gamma is undefined")
    numer = target - 1.0 + abs(x0[0]) ** 2
    if numer <= 0.0:
        raise ValueError(
            f"target {target} is not reachable: need target > {1.0 - abs(x0[0]) ** 2:.6g}"
        )
    return numer / denom
