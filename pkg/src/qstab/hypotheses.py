"""Computational check of the coupling and non-resonance conditions.

The stabilization argument needs (i) every excited mode coupled to the ground
state by at least one of the two moment functions, (ii) only finitely many
modes missed by the first moment, and (iii) no spectral gap coincidences
lambda_1 - lambda_k = lambda_p - lambda_q apart from the trivial ones.  At
truncation level M this is a necessary-condition scan, not a statement about
the full operator; "nonzero" necessarily means "beyond a tolerance".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import ControlOperators

__all__ = ["CouplingReport", "coupling_coefficients", "check_hypotheses"]

COUPLING_TOL = 1e-8
RESONANCE_TOL = 1e-6


@dataclass(frozen=True)
class CouplingReport:
    """Ground-state couplings, the missed-mode sets, and resonance scan results.

    ``c1``/``c2`` hold the couplings of modes 2..M to the ground state
    (index i corresponds to mode i+2).  ``j_zero`` lists the modes missed by
    the first moment; ``coupling_violations`` the subset also missed by the
    second (condition (i) fails there).  ``resonance_violations`` holds
    quadruple entries (k, p, q, gap) where the spectral gap condition fails.
    """

    c1: np.ndarray
    c2: np.ndarray
    j_zero: tuple[int, ...]
    j_nonzero: tuple[int, ...]
    coupling_violations: tuple[int, ...]
    resonance_violations: tuple[tuple[int, int, int, float], ...]
    coupling_tol: float
    resonance_tol: float
    degenerate_spectrum: bool

    @property
    def card_j_zero(self) -> int:
        return len(self.j_zero)

    @property
    def passed(self) -> bool:
        return not self.coupling_violations and not self.resonance_violations


def coupling_coefficients(ops: ControlOperators) -> tuple[np.ndarray, np.ndarray]:
    """First-row moment entries <Q_n phi_1, phi_k> for k = 2..M."""
    return ops.h1[0, 1:].copy(), ops.h2[0, 1:].copy()


def check_hypotheses(
    ops: ControlOperators,
    coupling_tol: float = COUPLING_TOL,
    resonance_tol: float = RESONANCE_TOL,
) -> CouplingReport:
    """Scan the truncated operators for coupling and resonance violations.

    Deterministic in all inputs.  Resonance quadruples (k, p, q) run over
    k = 2..M and p, q = 1..M with {1, k} != {p, q}; each is reported with the
    offending gap |(lambda_1 - lambda_k) - (lambda_p - lambda_q)|.
    """
    if coupling_tol <= 0.0 or resonance_tol <= 0.0:
        raise ValueError("tolerances must be positive")
    c1, c2 = coupling_coefficients(ops)
    m = ops.n_modes
    modes = range(2, m + 1)
    j_zero = tuple(k for k in modes if abs(c1[k - 2]) < coupling_tol)
    j_nonzero = tuple(k for k in modes if abs(c1[k - 2]) >= coupling_tol)
    coupling_violations = tuple(k for k in j_zero if abs(c2[k - 2]) < coupling_tol)

    lam = ops.h0_diag
    resonance = []
    for k in modes:
        base = lam[0] - lam[k - 1]
        for p in range(1, m + 1):
            for q in range(1, m + 1):
                if {1, k} == {p, q}:
                    continue
                gap = abs(base - (lam[p - 1] - lam[q - 1]))
                if gap < resonance_tol:
                    resonance.append((k, p, q, float(gap)))

    gaps = np.diff(lam)
    degenerate = bool(gaps.size and np.min(np.abs(gaps)) < 1e-10)
    return CouplingReport(
        c1=c1,
        c2=c2,
        j_zero=j_zero,
        j_nonzero=j_nonzero,
        coupling_violations=coupling_violations,
        resonance_violations=tuple(resonance),
        coupling_tol=coupling_tol,
        resonance_tol=resonance_tol,
        degenerate_spectrum=degenerate,
    )
