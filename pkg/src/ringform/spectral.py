"""State matrices, stability bounds, and closed-form steady-state algebra.

Conventions used throughout:

* A chain of order d stacks positions above velocities, one column per
  planar axis.  The estimator state matrix is 2d x 2d; the lagged variant
  inserts a layer of one-step-old velocities and is 3d x 3d.
* ``beta = alpha * dt / 2`` is the single dimensionless parameter all the
  closed forms depend on.  The readout algebra needs beta in (0, 1): at 0
  the geometric-recursion roots collide, at 1 denominators vanish.
* ``steady_gain(d, beta, strategy)`` is the last diagonal entry of the
  inverse of ``readout_matrix(d, beta, strategy)``; half of it is the
  steady-state velocity-magnitude ratio between the chain tail and the
  excitation, which is what the integer readout inverts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STRATEGIES = ("S1", "S2")


def _require_strategy(strategy: str) -> None:
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")


def _require_beta(beta: float) -> None:
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")


@dataclass(frozen=True)
class EstimationParams:
    """Gain alpha (1/s^2 scale) and sampling interval dt (s)."""

    alpha: float
    dt: float

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        _require_beta(self.alpha * self.dt / 2.0)

    @property
    def beta(self) -> float:
        return self.alpha * self.dt / 2.0


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    """A dense state matrix together with its input map.

    ``kind`` is one of "estimator", "lagged_estimator", "formation",
    "cascade".  ``order`` is the chain order the blocks were built for;
    ``input_matrix`` is the excitation column for the estimators and the
    anchor/spacing input map for the formation chain (None for cascades).
    """

    kind: str
    order: int
    dense: np.ndarray
    params: EstimationParams
    input_matrix: np.ndarray | None = None


def _sym_tridiagonal(n: int, diag: float, off: float) -> np.ndarray:
    m = np.zeros((n, n))
    np.fill_diagonal(m, diag)
    idx = np.arange(n - 1)
    m[idx, idx + 1] = off
    m[idx + 1, idx] = off
    return m


def position_coupling(n: int) -> np.ndarray:
    """Chain Laplacian-like block: -1 on the diagonal, 0.5 on the off-diagonals.

    Scaled by alpha it maps stacked positions to the midpoint-seeking part
    of the velocity update (fixed anchor and origin-pinned virtual robot
    absorb the boundary terms).
    """
    return _sym_tridiagonal(n, -1.0, 0.5)


def velocity_coupling(n: int) -> np.ndarray:
    """Neighbour velocity averaging block: zero diagonal, 0.5 off-diagonals."""
    return _sym_tridiagonal(n, 0.0, 0.5)


def excitation_column(size: int) -> np.ndarray:
    """Input column: the excitation feeds only the last velocity row, halved."""
    b = np.zeros((size, 1))
    b[-1, 0] = 0.5
    return b


def build_estimator_matrix(n_prime: int, params: EstimationParams) -> SystemMatrices:
    """State matrix of the latest-measurement estimator chain.

    Layout [q_1..q_d, v_1..v_d]; top row integrates positions explicitly,
    bottom row applies alpha-scaled position coupling plus velocity
    averaging of the current step.
    """
    if n_prime < 1:
        raise ValueError(f"chain order must be >= 1, got {n_prime}")
    d = n_prime
    eye = np.eye(d)
    dense = np.block(
        [
            [eye, params.dt * eye],
            [params.alpha * position_coupling(d), velocity_coupling(d)],
        ]
    )
    return SystemMatrices(
        kind="estimator",
        order=d,
        dense=dense,
        params=params,
        input_matrix=excitation_column(2 * d),
    )


def build_lagged_estimator_matrix(n_prime: int, params: EstimationParams) -> SystemMatrices:
    """State matrix of the two-instant estimator chain.

    Layout [q(k), v(k-1), v(k)]: the middle block just shifts the current
    velocities into the stale layer, and the velocity update reads the
    stale layer instead of the fresh one.
    """
    if n_prime < 1:
        raise ValueError(f"chain order must be >= 1, got {n_prime}")
    d = n_prime
    eye = np.eye(d)
    zero = np.zeros((d, d))
    dense = np.block(
        [
            [eye, zero, params.dt * eye],
            [zero, zero, eye],
            [params.alpha * position_coupling(d), velocity_coupling(d), zero],
        ]
    )
    return SystemMatrices(
        kind="lagged_estimator",
        order=d,
        dense=dense,
        params=params,
        input_matrix=excitation_column(3 * d),
    )


def build_formation_matrix(n: int, params: EstimationParams) -> SystemMatrices:
    """State matrix of one formation chain (n movable robots, vertex last).

    Equals the estimator matrix plus two entries in the last velocity row:
    the terminal vertex abandons midpoint-seeking for full-gain tracking of
    its predecessor, alpha * (q_{n-1} - q_n) + v_{n-1}.  The input map
    carries the anchor position, anchor velocity, and the desired spacing
    into the first and last velocity rows.
    """
    if n < 2:
        raise ValueError(f"formation chain needs n >= 2 robots, got {n}")
    base = build_estimator_matrix(n, params)
    dense = base.dense.copy()
    dense[2 * n - 1, n - 2] += 0.5 * params.alpha
    dense[2 * n - 1, 2 * n - 2] += 0.5
    input_matrix = np.zeros((2 * n, 3))
    input_matrix[n, 0] = 0.5 * params.alpha  # anchor position -> first robot
    input_matrix[n, 1] = 0.5                 # anchor velocity -> first robot
    input_matrix[2 * n - 1, 2] = -params.alpha  # spacing target -> vertex
    return SystemMatrices(
        kind="formation",
        order=n,
        dense=dense,
        params=params,
        input_matrix=input_matrix,
    )


def build_cascade_matrix(n: int, chains: int, params: EstimationParams) -> SystemMatrices:
    """Block lower-triangular matrix of ``chains`` equal formation chains.

    Each diagonal block is the single-chain formation matrix; the
    sub-diagonal block couples a chain's first robot to the previous
    chain's terminal vertex (position with gain alpha/2, velocity with 1/2).
    Being block triangular, its eigenvalues are those of the diagonal
    block, repeated once per chain.
    """
    if chains < 1:
        raise ValueError(f"need at least one chain, got {chains}")
    chain = build_formation_matrix(n, params)
    size = 2 * n
    dense = np.zeros((chains * size, chains * size))
    coupling = np.zeros((size, size))
    coupling[n, n - 1] = 0.5 * params.alpha
    coupling[n, 2 * n - 1] = 0.5
    for c in range(chains):
        lo = c * size
        dense[lo:lo + size, lo:lo + size] = chain.dense
        if c > 0:
            dense[lo:lo + size, lo - size:lo] = coupling
    return SystemMatrices(
        kind="cascade", order=n, dense=dense, params=params, input_matrix=None
    )


def spectral_radius(matrix: np.ndarray) -> float:
    """max |lambda| over the (complex) eigenvalues of a square real matrix.

    Dense LAPACK Hessenberg/QR iteration; adequate at the desk scale this
    package targets (orders up to a few hundred).  Non-convergence raises
    numpy's LinAlgError rather than returning garbage.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"matrix must be square, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix contains non-finite entries")
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def stability_bound(n_prime: int, strategy: str) -> float:
    """Sufficient upper bound on alpha*dt for a Schur chain of order n_prime.

    S1: (1 - c^2) / (3 - c^2), S2: (1 - c^2) / (5 + c^2), c = cos(pi/(d+1)).
    Monotone decreasing in the chain order; both are sufficient only, so
    parameters above the bound may still be stable.
    """
    _require_strategy(strategy)
    if n_prime < 1:
        raise ValueError(f"chain order must be >= 1, got {n_prime}")
    c2 = math.cos(math.pi / (n_prime + 1)) ** 2
    if strategy == "S1":
        return (1.0 - c2) / (3.0 - c2)
    return (1.0 - c2) / (5.0 + c2)


@dataclass(frozen=True)
class StabilityBound:
    n_prime: int
    s1: float
    s2: float


def stability_bounds(n_prime: int) -> StabilityBound:
    return StabilityBound(
        n_prime=n_prime,
        s1=stability_bound(n_prime, "S1"),
        s2=stability_bound(n_prime, "S2"),
    )


# --- steady-state readout algebra ---------------------------------------
#
# At steady state the chain oscillates with period two and the stacked
# velocities solve a tridiagonal Toeplitz system whose order-d leading
# principal submatrix we call the readout matrix: diagonal 1+beta with
# off-diagonals (1-beta)/2 for S1 and -(1+beta)/2 for S2.  The gain below
# is the last diagonal entry of its inverse.


def s1_recursion_roots(beta: float) -> tuple[float, float]:
    """Fixed points of the S1 gain recursion, (2(1+beta) +- 4 sqrt(beta)) / (1-beta)^2.

    The smaller root is the d -> infinity limit of the gain; the ratio of
    the distances to the two roots evolves geometrically in d, which is
    what makes the logarithmic readout work.
    """
    _require_beta(beta)
    sb = math.sqrt(beta)
    return 2.0 / (1.0 - sb) ** 2, 2.0 / (1.0 + sb) ** 2


def readout_matrix(d: int, beta: float, strategy: str) -> np.ndarray:
    """Order-d steady-state system matrix for the given strategy."""
    _require_strategy(strategy)
    _require_beta(beta)
    if d < 1:
        raise ValueError(f"order must be >= 1, got {d}")
    if strategy == "S1":
        return _sym_tridiagonal(d, 1.0 + beta, (1.0 - beta) / 2.0)
    return _sym_tridiagonal(d, 1.0 + beta, -(1.0 + beta) / 2.0)


def readout_determinant(d: int, beta: float, strategy: str) -> float:
    """Closed-form determinant of ``readout_matrix(d, beta, strategy)``.

    S1 is the two-geometric-terms solution of the second order determinant
    recursion; S2 collapses to (d+1) ((1+beta)/2)^d because its matrix is
    a scalar multiple of the unit tridiagonal Toeplitz pattern.
    """
    _require_strategy(strategy)
    _require_beta(beta)
    if d < 1:
        raise ValueError(f"order must be >= 1, got {d}")
    if strategy == "S2":
        return (d + 1) * (1.0 + beta) ** d / 2.0 ** d
    sb = math.sqrt(beta)
    plus = (1.0 + beta) / 2.0 + sb
    minus = (1.0 + beta) / 2.0 - sb
    m1 = (2.0 * sb + beta + 1.0) / (4.0 * sb) * plus ** d
    m2 = (2.0 * sb - beta - 1.0) / (4.0 * sb) * minus ** d
    return m1 + m2


def steady_gain_recursive(d: int, beta: float, strategy: str) -> float:
    """Gain by iterating the bordered-inverse recursion from order 1.

    g(1) = 1/(1+beta); each extra robot updates g to 1 / (1+beta - c^2 g)
    with c the off-diagonal of the readout matrix.
    """
    _require_strategy(strategy)
    _require_beta(beta)
    if d < 1:
        raise ValueError(f"order must be >= 1, got {d}")
    if strategy == "S1":
        csq = (1.0 - beta) ** 2 / 4.0
    else:
        csq = (1.0 + beta) ** 2 / 4.0
    g = 1.0 / (1.0 + beta)
    for _ in range(d - 1):
        g = 1.0 / (1.0 + beta - csq * g)
    return g


def steady_gain(d: int, beta: float, strategy: str) -> float:
    """Closed-form gain: last diagonal entry of the readout matrix inverse.

    S2 has the rational form 2d / ((d+1)(1+beta)).  S1 follows the
    geometric evolution of the root-distance ratio; once that ratio
    overflows the float range the gain has converged to the smaller
    recursion root to machine precision, so the limit is returned.
    """
    _require_strategy(strategy)
    _require_beta(beta)
    if d < 1:
        raise ValueError(f"order must be >= 1, got {d}")
    if strategy == "S2":
        return 2.0 * d / ((d + 1) * (1.0 + beta))
    rho1, rho2 = s1_recursion_roots(beta)
    f1 = 1.0 / (1.0 + beta)
    f2 = (1.0 + beta) / ((1.0 + beta) ** 2 - (1.0 - beta) ** 2 / 4.0)
    fb1 = (f1 - rho1) / (f1 - rho2)
    fb2 = (f2 - rho1) / (f2 - rho2)
    try:
        fbar = fb1 * (fb2 / fb1) ** (d - 1)
    except OverflowError:
        return rho2
    if not math.isfinite(fbar):
        return rho2
    return (rho1 - rho2 * fbar) / (1.0 - fbar)


def steady_ratio_closed(n_prime: int, beta: float, strategy: str) -> float:
    """Analytic steady velocity-magnitude ratio tail / excitation."""
    return steady_gain(n_prime, beta, strategy) / 2.0


def chain_equilibrium(
    matrices: SystemMatrices,
    anchor_position: np.ndarray,
    anchor_velocity: np.ndarray,
    l_star: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Limit state of one formation chain under a constant anchor input.

    Solves (I - A) x = B u per planar axis.  With a resting anchor the
    positions land at anchor - j * l_star for j = 1..n and the velocities
    vanish.  Raises if the chain matrix is not Schur, because then no
    limit exists.
    """
    if matrices.kind != "formation":
        raise ValueError(f"need a formation chain matrix, got kind={matrices.kind!r}")
    rho = spectral_radius(matrices.dense)
    if rho >= 1.0:
        raise ValueError(
            f"chain matrix is not Schur (spectral radius {rho:.6f} >= 1); "
            "no equilibrium to report"
        )
    n = matrices.order
    anchor_position = np.asarray(anchor_position, dtype=float)
    anchor_velocity = np.asarray(anchor_velocity, dtype=float)
    l_star = np.asarray(l_star, dtype=float)
    eye = np.eye(2 * n)
    positions = np.empty((n, 2))
    velocities = np.empty((n, 2))
    for axis in range(2):
        u = np.array([anchor_position[axis], anchor_velocity[axis], l_star[axis]])
        x = np.linalg.solve(eye - matrices.dense, matrices.input_matrix @ u)
        positions[:, axis] = x[:n]
        velocities[:, axis] = x[n:]
    return positions, velocities


def spectral_report(n_prime: int, params: EstimationParams) -> dict:
    """Stability summary for one chain order and parameter pair."""
    alpha_dt = params.alpha * params.dt
    bounds = stability_bounds(n_prime)
    report = {
        "n_prime": n_prime,
        "alpha": params.alpha,
        "dt": params.dt,
        "beta": params.beta,
        "bound_s1": bounds.s1,
        "bound_s2": bounds.s2,
        "rho_A": spectral_radius(build_estimator_matrix(n_prime, params).dense),
        "rho_Ar": spectral_radius(build_lagged_estimator_matrix(n_prime, params).dense),
        "rho_Af": (
            spectral_radius(build_formation_matrix(n_prime, params).dense)
            if n_prime >= 2
            else None
        ),
        "satisfies_s1": alpha_dt < bounds.s1,
        "satisfies_s2": alpha_dt < bounds.s2,
    }
    return report
