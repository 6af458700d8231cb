"""Independent dense-matrix and analytic oracles shared by the test modules.

Everything here recomputes expected values by a route different from the
library code under test: explicit matrix iterations for the simulators,
per-mode polynomial roots for spectral radii, and dense inverses for the
closed-form gains.
"""

import numpy as np


def iterate_estimator(matrices, initial_positions, excitation, steps):
    """Reference iteration s(t+1) = A s(t) + b e(t), e alternating.

    Returns the list of states after each of ``steps`` steps, one
    (2d x 2) array per step: positions stacked over velocities.
    Initial velocities are zero.
    """
    d = matrices.order
    A = matrices.dense
    b = matrices.input_matrix[:, 0]
    s = np.zeros((2 * d, 2))
    if initial_positions is not None:
        s[:d] = initial_positions
    e = np.asarray(excitation, dtype=float).copy()
    out = []
    for _ in range(steps):
        s = A @ s + np.outer(b, e)
        e = -e
        out.append(s.copy())
    return out


def iterate_lagged_estimator(matrices, initial_positions, excitation, steps):
    """Reference iteration for the 3d x 3d lagged chain, layout [q, v_old, v]."""
    d = matrices.order
    A = matrices.dense
    b = matrices.input_matrix[:, 0]
    s = np.zeros((3 * d, 2))
    if initial_positions is not None:
        s[:d] = initial_positions
    e = np.asarray(excitation, dtype=float).copy()
    out = []
    for _ in range(steps):
        s = A @ s + np.outer(b, e)
        e = -e
        out.append(s.copy())
    return out


def iterate_formation_chain(matrices, initial_positions, initial_velocities,
                            anchor_position, anchor_velocity, l_star, steps):
    """Reference iteration s(t+1) = A_f s(t) + B_f u_f for one chain."""
    n = matrices.order
    A = matrices.dense
    B = matrices.input_matrix
    s = np.zeros((2 * n, 2))
    s[:n] = initial_positions
    s[n:] = initial_velocities
    u = np.column_stack([anchor_position, anchor_velocity, l_star]).T  # (3, 2)
    out = []
    for _ in range(steps):
        s = A @ s + B @ u
        out.append(s.copy())
    return out


def chain_mode_cosines(d):
    return np.cos(np.arange(1, d + 1) * np.pi / (d + 1))


def analytic_estimator_radius(d, alpha, dt):
    """Spectral radius of the 2d x 2d chain matrix from per-mode quadratics.

    The two tridiagonal blocks share the sine eigenbasis, so the matrix
    splits into d two-by-two companions with characteristic polynomial
    z^2 - (1 + c) z + c + alpha dt (1 - c).
    """
    worst = 0.0
    for c in chain_mode_cosines(d):
        roots = np.roots([1.0, -(1.0 + c), c + alpha * dt * (1.0 - c)])
        worst = max(worst, max(abs(roots)))
    return worst


def analytic_lagged_radius(d, alpha, dt):
    """Same decomposition for the 3d x 3d lagged matrix (cubic per mode)."""
    worst = 0.0
    for c in chain_mode_cosines(d):
        roots = np.roots([1.0, -1.0, alpha * dt * (1.0 - c) - c, c])
        worst = max(worst, max(abs(roots)))
    return worst


def dense_gain(d, beta, strategy):
    """Last diagonal entry of the inverse of the steady-state matrix."""
    m = readout_matrix_dense(d, beta, strategy)
    return np.linalg.inv(m)[-1, -1]


def readout_matrix_dense(d, beta, strategy):
    off = (1.0 - beta) / 2.0 if strategy == "S1" else -(1.0 + beta) / 2.0
    m = np.zeros((d, d))
    np.fill_diagonal(m, 1.0 + beta)
    idx = np.arange(d - 1)
    m[idx, idx + 1] = off
    m[idx + 1, idx] = off
    return m


def lu_determinant(matrix):
    return float(np.linalg.det(matrix))
