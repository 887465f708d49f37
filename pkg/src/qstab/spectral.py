"""Sine-basis discretization of the Dirichlet operator -d2/dx2 + V(x) on [0,1].

The free modes sqrt(2)*sin(k*pi*x) diagonalize the Laplacian with eigenvalues
(k*pi)**2, so the potential is the only thing that needs quadrature.  The
eigenpairs of the dressed operator are obtained by diagonalizing the dense
matrix of -d2/dx2 + V in the first N sine modes and keeping the lowest M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "QuadratureError",
    "EigensolverError",
    "GridFunction",
    "grid_function",
    "SineBasisSpec",
    "SpectralBasis",
    "quadrature",
    "quadrature_vec",
    "potential_matrix",
    "solve_eigenbasis",
    "eigenfunction_values",
]


class QuadratureError(RuntimeError):
    """Panel refinement did not converge (non-smooth or pathological integrand)."""


class EigensolverError(RuntimeError):
    """Dense symmetric eigensolver failed or produced an inaccurate basis."""


@dataclass(frozen=True)
class GridFunction:
    """Real-valued function on [0,1] with vectorized evaluation.

    ``name`` is the config spelling that produced the function, so resolved
    configurations echo back something parseable.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.fn(x), dtype=float)


_BUILTINS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": lambda x: np.zeros_like(x),
    "harmonic_centered": lambda x: (x - 0.5) ** 2,
    "x": lambda x: x,
    "x2": lambda x: x ** 2,
    "cosx": lambda x: np.cos(x),
    "cos2x": lambda x: np.cos(2.0 * x),
}


def grid_function(spec: str) -> GridFunction:
    """Build a GridFunction from a config selector.

    Accepts the built-in names (``zero``, ``harmonic_centered``, ``x``, ``x2``,
    ``cosx``, ``cos2x``), polynomial coefficient lists ``poly:c0,c1,...``
    meaning c0 + c1*x + c2*x^2 + ..., and cosine coefficient lists
    ``cos:a0,a1,...`` meaning a0 + a1*cos(x) + a2*cos(2x) + ...
    """
    spec = spec.strip()
    if spec in _BUILTINS:
        return GridFunction(spec, _BUILTINS[spec])
    if spec.startswith("poly:"):
        coeffs = _parse_coeffs(spec[len("poly:"):], spec)
        return GridFunction(spec, lambda x, c=coeffs: np.polynomial.polynomial.polyval(x, c))
    if spec.startswith("cos:"):
        coeffs = _parse_coeffs(spec[len("cos:"):], spec)

        def _cosine_sum(x, c=coeffs):
            out = np.full_like(x, c[0])
            for n, a in enumerate(c[1:], start=1):
                out = out + a * np.cos(n * x)
            return out

        return GridFunction(spec, _cosine_sum)
    raise ValueError(
        f"unknown function selector {spec!r}; expected one of {sorted(_BUILTINS)} "
        "or 'poly:...'/'cos:...' coefficient lists"
    )


def _parse_coeffs(text: str, spec: str) -> np.ndarray:
    try:
        coeffs = np.array([float(tok) for tok in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ValueError(f"bad coefficient list in {spec!r}") from exc
    if coeffs.size == 0:
        raise ValueError(f"empty coefficient list in {spec!r}")
    return coeffs


@dataclass(frozen=True)
class SineBasisSpec:
    """Number of free sine modes sqrt(2)*sin(k*pi*x), k = 1..n_modes."""

    n_modes: int

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("need at least one sine mode")


@dataclass(frozen=True)
class SpectralBasis:
    """Lowest eigenpairs of -d2/dx2 + V expanded in the sine basis.

    ``eigenvectors[:, k]`` holds the sine coefficients of the (k+1)-th
    eigenfunction; columns are orthonormal, sorted by eigenvalue, and
    sign-fixed so the first coefficient of magnitude > 1e-8 is positive.
    ``degenerate`` flags eigenvalue gaps below 1e-10 near the retained block
    (relevant to the coupling/resonance checker, not to time integration).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    n_sine: int
    degenerate: bool = False

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]


# 16-point Gauss-Legendre panel rule; panel doubling supplies the adaptivity.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _panel_rule(panels: int) -> tuple[np.ndarray, np.ndarray]:
    h = 1.0 / panels
    left = np.arange(panels) * h
    x = (left[:, None] + (_GL_NODES[None, :] + 1.0) * (h / 2.0)).ravel()
    w = np.tile(_GL_WEIGHTS * (h / 2.0), panels)
    return x, w


def quadrature_vec(
    f: Callable[[np.ndarray], np.ndarray],
    tol: float = 1e-12,
    start_panels: int = 1,
    max_panels: int = 4096,
) -> np.ndarray:
    """Integrate a vector-valued integrand over [0,1].

    ``f`` maps sample points of shape (P,) to values of shape (P,) or (P, K);
    all components are refined jointly.  Panels double until the worst
    component moves by less than ``tol`` between levels.
    """
    panels = 1
    while panels < max(1, start_panels):
        panels *= 2
    prev = None
    while panels <= max_panels:
        x, w = _panel_rule(panels)
        vals = np.asarray(f(x), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("integrand produced non-finite values")
        est = np.tensordot(w, vals, axes=(0, 0))
        if prev is not None and np.max(np.abs(est - prev)) < tol:
            return est
        prev = est
        panels *= 2
    raise QuadratureError(
        f"quadrature did not converge below {tol:g} within {max_panels} panels"
    )


def quadrature(
    f: Callable[[np.ndarray], np.ndarray],
    tol: float = 1e-12,
    start_panels: int = 1,
    max_panels: int = 4096,
) -> float:
    """Integral of a scalar function over [0,1] (vectorized evaluator)."""
    return float(quadrature_vec(f, tol=tol, start_panels=start_panels, max_panels=max_panels))


def _sine_values(x: np.ndarray, n: int) -> np.ndarray:
    # (P, n) table of sqrt(2)*sin(k*pi*x), k = 1..n
    return math.sqrt(2.0) * np.sin(np.pi * np.outer(x, np.arange(1, n + 1)))


def _start_panels_for(n: int) -> int:
    # sine products oscillate with up to 2n half-waves; start fine enough that
    # the first doubling comparison is already meaningful
    return max(1, n // 8)


def potential_matrix(v: GridFunction, spec: SineBasisSpec) -> np.ndarray:
    """Matrix of -d2/dx2 + V in the free sine modes.

    Entry (i, j) is delta_ij*(i*pi)**2 plus the V-moment of the (i, j) sine
    pair; only the upper triangle is integrated and mirrored, so the result is
    exactly symmetric.
    """
    n = spec.n_modes
    iu, ju = np.triu_indices(n)

    def pair_products(x: np.ndarray) -> np.ndarray:
        s = _sine_values(x, n)
        return v(x)[:, None] * s[:, iu] * s[:, ju]

    moments = quadrature_vec(pair_products, start_panels=_start_panels_for(n))
    b = np.zeros((n, n))
    b[iu, ju] = moments
    b[ju, iu] = moments
    b[np.diag_indices(n)] += (np.arange(1, n + 1) * np.pi) ** 2
    return b


def solve_eigenbasis(b: np.ndarray, m: int) -> SpectralBasis:
    """Lowest ``m`` eigenpairs of the symmetric sine-mode matrix ``b``."""
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if b.shape != (n, n):
        raise ValueError("matrix must be square")
    if not 1 <= m <= n:
        raise ValueError(f"mode count m={m} must satisfy 1 <= m <= N={n}")
    scale = max(1.0, float(np.max(np.abs(b))))
    if np.max(np.abs(b - b.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")

    try:
        eigvals, eigvecs = np.linalg.eigh(b)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"symmetric eigensolver failed: {exc}") from exc

    lam = eigvals[:m].copy()
    a = eigvecs[:, :m].copy()
    for k in range(m):
        col = a[:, k]
        significant = np.nonzero(np.abs(col) > 1e-8)[0]
        lead = significant[0] if significant.size else int(np.argmax(np.abs(col)))
        if col[lead] < 0.0:
            a[:, k] = -col

    residual = np.linalg.norm(b @ a - a * lam[None, :], axis=0)
    if np.max(residual) > 1e-9 * np.linalg.norm(b):
        raise EigensolverError(
            f"eigenpair residual {np.max(residual):.3e} exceeds tolerance"
        )

    upper = min(m + 1, n)
    gaps = np.diff(eigvals[:upper])
    degenerate = bool(gaps.size and np.min(np.abs(gaps)) < 1e-10)
    return SpectralBasis(eigenvalues=lam, eigenvectors=a, n_sine=n, degenerate=degenerate)


def eigenfunction_values(basis: SpectralBasis, k: int, x):
    """Evaluate the k-th eigenfunction (1-based) at points ``x`` in [0,1].

    The sine expansion vanishes identically at the endpoints, which is
    enforced exactly rather than left to sin(j*pi) rounding.
    """
    if not 1 <= k <= basis.n_modes:
        raise ValueError(f"mode index k={k} out of range 1..{basis.n_modes}")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    vals = _sine_values(xs, basis.n_sine) @ basis.eigenvectors[:, k - 1]
    vals[(xs == 0.0) | (xs == 1.0)] = 0.0
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(vals[0])
    return vals
