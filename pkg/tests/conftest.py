"""Shared fixtures: the validation setup is expensive enough to build once."""

from __future__ import annotations

import numpy as np
import pytest

from qstab import harness
from qstab.operators import build_operators
from qstab.spectral import SineBasisSpec, grid_function, potential_matrix, solve_eigenbasis


@pytest.fixture(scope="session")
def validation_setup():
    """Centered quadratic well, Q1 = x^2, Q2 = x, N = 50, M = 5, L(x0) = 3/4."""
    return harness.build_setup(harness.load_config("fig1"))


@pytest.fixture(scope="session")
def free_basis_m8():
    """Zero potential, N = 50, M = 8 (exact eigenpairs (k*pi)^2, e_k)."""
    b = potential_matrix(grid_function("zero"), SineBasisSpec(50))
    return solve_eigenbasis(b, 8)


@pytest.fixture(scope="session")
def free_ops_m8(free_basis_m8):
    return build_operators(free_basis_m8, grid_function("x2"), grid_function("x"))


def pseudo_states(m: int, count: int) -> list[np.ndarray]:
    """Deterministic unit-sphere states from an enumerated trigonometric grid."""
    states = []
    modes = np.arange(1, m + 1, dtype=float)
    for idx in range(count):
        re = np.cos(0.7 + 1.3 * idx + 0.9 * modes * (idx % 7 + 1))
        im = np.sin(0.4 + 2.1 * idx + 1.7 * modes * (idx % 5 + 1))
        vec = re + 1j * im
        states.append(vec / np.linalg.norm(vec))
    return states
