"""Distributed chain-cardinality estimation on a cut segment.

One chain: a pinned anchor at the origin, n' movable robots, and a virtual
robot at the far end whose position is identically the origin and whose
velocity flips sign each step with constant magnitude.  Driven this way the
chain settles into a period-two oscillation; the magnitude ratio between
the last real robot's velocity and the excitation encodes n', which the
readout formulas invert.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import DivergenceError, StabilityWarning, check_finite, make_generator, uniform_box
from .spectral import (
    EstimationParams,
    s1_recursion_roots,
    stability_bound,
)


@dataclass(frozen=True)
class EstimatorConfig:
    """Strategy, gains, excitation, and stop-rule parameters for one run."""

    params: EstimationParams
    strategy: str = "S1"
    excitation_init: tuple[float, float] = (1.0, 0.0)
    stop_window: int = 50
    max_steps: int = 20000

    def __post_init__(self):
        if self.strategy not in ("S1", "S2"):
            raise ValueError(f"strategy must be 'S1' or 'S2', got {self.strategy!r}")
        if self.stop_window < 2:
            raise ValueError("stop_window must be at least 2")
        if self.max_steps <= self.stop_window:
            raise ValueError("max_steps must exceed stop_window")
        if not np.any(np.asarray(self.excitation_init, dtype=float)):
            raise ValueError("excitation must be non-zero")


@dataclass
class ChainSimState:
    """Chain state at one step.

    Index 0 is the anchor, pinned at the origin; rows 1..n' are the movable
    robots.  ``excitation`` is the virtual robot's velocity at the current
    step; its position never leaves the origin.
    """

    positions: np.ndarray
    velocities: np.ndarray
    velocities_prev: np.ndarray
    excitation: np.ndarray
    step: int = 0

    @property
    def n_prime(self) -> int:
        return self.positions.shape[0] - 1

    @classmethod
    def initial(cls, n_prime, initial_positions=None, excitation=(1.0, 0.0)):
        positions = np.zeros((n_prime + 1, 2))
        if initial_positions is not None:
            initial_positions = np.asarray(initial_positions, dtype=float)
            if initial_positions.shape != (n_prime, 2):
                raise ValueError(
                    f"initial_positions must have shape ({n_prime}, 2), "
                    f"got {initial_positions.shape}"
                )
            positions[1:] = initial_positions
        return cls(
            positions=positions,
            velocities=np.zeros((n_prime + 1, 2)),
            velocities_prev=np.zeros((n_prime + 1, 2)),
            excitation=np.asarray(excitation, dtype=float).copy(),
        )


def step_estimator(state: ChainSimState, config: EstimatorConfig) -> ChainSimState:
    """One synchronous estimator step; returns the successor state.

    All new velocities are computed from the step-k snapshot (S1 reads the
    current neighbour velocities, S2 the one-step-old layer; the excitation
    always enters at its current value), then positions integrate the old
    velocities and the excitation flips sign.
    """
    alpha = config.params.alpha
    dt = config.params.dt
    q = state.positions
    v = state.velocities
    n_prime = state.n_prime
    vlag = v if config.strategy == "S1" else state.velocities_prev

    # Neighbour stacks for movable robots 1..n'; the far end sees the
    # origin-pinned virtual robot and its excitation velocity.
    q_next = np.vstack([q[2:], np.zeros((1, 2))])
    q_prev = q[:-1]
    v_next = np.vstack([vlag[2:], state.excitation[None, :]])
    v_prev = vlag[:-1]

    new_v = np.zeros_like(v)
    new_v[1:] = 0.5 * alpha * (q_next + q_prev - 2.0 * q[1:]) + 0.5 * (v_next + v_prev)

    new_q = q.copy()
    new_q[1:] += dt * v[1:]

    check_finite(new_q, state.step + 1, "chain positions")
    check_finite(new_v, state.step + 1, "chain velocities")

    return ChainSimState(
        positions=new_q,
        velocities=new_v,
        velocities_prev=v,
        excitation=-state.excitation,
        step=state.step + 1,
    )


def readout(ratio: float, beta: float, strategy: str) -> float:
    """Invert a steady velocity-magnitude ratio into a real-valued chain order.

    Returns NaN while the ratio is outside the formula's domain (log of a
    non-positive quantity for S1, non-positive denominator for S2), which
    simply means the oscillation has not settled yet.
    """
    if strategy == "S1":
        rho1, rho2 = s1_recursion_roots(beta)
        f1 = 1.0 / (1.0 + beta)
        f2 = (1.0 + beta) / ((1.0 + beta) ** 2 - (1.0 - beta) ** 2 / 4.0)
        fb1 = (f1 - rho1) / (f1 - rho2)
        fb2 = (f2 - rho1) / (f2 - rho2)
        f = 2.0 * ratio
        den = f - rho2
        if den == 0.0:
            return math.nan
        fbar = (f - rho1) / den
        if fbar <= 0.0:
            return math.nan
        return (math.log(fbar) - math.log(fb1)) / (math.log(fb2) - math.log(fb1)) + 1.0
    if strategy == "S2":
        scaled = (1.0 + beta) * ratio
        den = 1.0 - scaled
        if den <= 0.0:
            return math.nan
        return scaled / den
    raise ValueError(f"strategy must be 'S1' or 'S2', got {strategy!r}")


def _round_half_up(x: float) -> float:
    return math.floor(x + 0.5)


@dataclass
class EstimateTrace:
    """Per-step readout record of one estimation run."""

    strategy: str
    n_prime_true: int
    steps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    ratios: np.ndarray = field(default_factory=lambda: np.empty(0))
    raw: np.ndarray = field(default_factory=lambda: np.empty(0))
    rounded: np.ndarray = field(default_factory=lambda: np.empty(0))
    converged: bool = False
    estimate: int | None = None
    steps_to_convergence: int | None = None
    first_correct_step: int | None = None


def run_estimation(
    n_prime_true: int,
    config: EstimatorConfig,
    initial_positions: np.ndarray | None = None,
    *,
    seed: int = 0,
    seed_stream: int = 0,
    initial_box: float = 5.0,
) -> EstimateTrace:
    """Run one chain until the stop rule fires or ``max_steps`` is hit.

    The stop rule realises the finite-time rounding idea: once the last
    ``stop_window`` raw readouts are all finite, span less than one, and
    round to the same positive integer, that integer is the estimate.
    Initial positions default to a seeded uniform draw in a square box;
    initial velocities are zero.
    """
    if n_prime_true < 1:
        raise ValueError("chain must contain at least one movable robot")
    alpha_dt = config.params.alpha * config.params.dt
    bound = stability_bound(n_prime_true, config.strategy)
    if alpha_dt >= bound:
        warnings.warn(
            f"alpha*dt = {alpha_dt:.6g} >= sufficient bound {bound:.6g} for "
            f"{config.strategy} at chain order {n_prime_true}; convergence "
            "is not guaranteed",
            StabilityWarning,
            stacklevel=2,
        )
    if initial_positions is None:
        rng = make_generator(seed, seed_stream)
        initial_positions = uniform_box(rng, n_prime_true, initial_box)
    else:
        initial_positions = np.asarray(initial_positions, dtype=float)
        if initial_positions.shape != (n_prime_true, 2):
            raise ValueError(
                f"initial_positions must have shape ({n_prime_true}, 2), "
                f"got {initial_positions.shape}"
            )

    # Hot loop on extended buffers (row 0 anchor, rows 1..n' movable, last
    # row scratch for the virtual robot); arithmetic is expression-for-
    # expression the one in step_estimator, so the two paths agree bitwise.
    n = n_prime_true
    alpha = config.params.alpha
    dt = config.params.dt
    beta = config.params.beta
    s1 = config.strategy == "S1"
    W = config.stop_window

    q = np.zeros((n + 2, 2))
    q[1:n + 1] = initial_positions
    v = np.zeros((n + 2, 2))
    v_prev = np.zeros((n + 2, 2))
    exc = np.asarray(config.excitation_init, dtype=float).copy()
    exc_norm = math.sqrt(exc[0] * exc[0] + exc[1] * exc[1])

    steps, ratios, raws, roundeds = [], [], [], []
    trace = EstimateTrace(strategy=config.strategy, n_prime_true=n_prime_true)

    # O(1) sliding-window stop rule: monotonic deques carry the window
    # extremes, a streak counter tracks the run of equal rounded values,
    # and any non-finite readout poisons the next W steps.
    max_dq: deque[tuple[int, float]] = deque()
    min_dq: deque[tuple[int, float]] = deque()
    last_invalid = 0
    streak_value = None
    streak_length = 0

    try:
        for step in range(1, config.max_steps + 1):
            vlag = v if s1 else v_prev
            vlag[n + 1] = exc
            new_movable = (
                0.5 * alpha * (q[2:] + q[:-2] - 2.0 * q[1:-1])
                + 0.5 * (vlag[2:] + vlag[:-2])
            )
            q[1:n + 1] += dt * v[1:n + 1]
            v_prev, v = v, v_prev
            v[0] = 0.0
            v[1:n + 1] = new_movable
            v[n + 1] = 0.0
            exc = -exc

            tail_x = v[n, 0]
            tail_y = v[n, 1]
            ratio = math.sqrt(tail_x * tail_x + tail_y * tail_y) / exc_norm
            if not math.isfinite(ratio):
                check_finite(q[:n + 1], step, "chain positions")
                check_finite(v[:n + 1], step, "chain velocities")
            if step % 64 == 0:
                check_finite(q[:n + 1], step, "chain positions")
            raw = readout(ratio, beta, config.strategy)
            finite = math.isfinite(raw)
            rounded = _round_half_up(raw) if finite else math.nan
            steps.append(step)
            ratios.append(ratio)
            raws.append(raw)
            roundeds.append(rounded)
            if trace.first_correct_step is None and rounded == n_prime_true:
                trace.first_correct_step = step

            if finite:
                if rounded == streak_value:
                    streak_length += 1
                else:
                    streak_value = rounded
                    streak_length = 1
                while max_dq and max_dq[-1][1] <= raw:
                    max_dq.pop()
                max_dq.append((step, raw))
                while min_dq and min_dq[-1][1] >= raw:
                    min_dq.pop()
                min_dq.append((step, raw))
            else:
                last_invalid = step
                streak_length = 0
            while max_dq and max_dq[0][0] <= step - W:
                max_dq.popleft()
            while min_dq and min_dq[0][0] <= step - W:
                min_dq.popleft()

            if (
                step - last_invalid >= W
                and streak_length >= W
                and streak_value is not None
                and streak_value >= 1
                and max_dq[0][1] - min_dq[0][1] < 1.0
            ):
                trace.converged = True
                trace.estimate = int(streak_value)
                trace.steps_to_convergence = step
                break
    except DivergenceError as err:
        trace.steps = np.array(steps, dtype=int)
        trace.ratios = np.array(ratios)
        trace.raw = np.array(raws)
        trace.rounded = np.array(roundeds)
        err.partial = trace
        raise

    trace.steps = np.array(steps, dtype=int)
    trace.ratios = np.array(ratios)
    trace.raw = np.array(raws)
    trace.rounded = np.array(roundeds)
    return trace


def steady_velocity_ratio(
    n_prime: int,
    config: EstimatorConfig,
    *,
    settle_tol: float = 1e-12,
    settle_steps: int = 25,
    max_steps: int = 200000,
) -> float:
    """Simulated steady ratio from a zero initial state.

    Starting at rest isolates the forced response; the run stops once the
    per-step ratio change stays below ``settle_tol`` for ``settle_steps``
    consecutive steps.
    """
    state = ChainSimState.initial(n_prime, None, config.excitation_init)
    excitation_norm = float(np.linalg.norm(state.excitation))
    previous = math.inf
    quiet = 0
    for _ in range(max_steps):
        state = step_estimator(state, config)
        ratio = float(np.linalg.norm(state.velocities[-1])) / excitation_norm
        if abs(ratio - previous) < settle_tol:
            quiet += 1
            if quiet >= settle_steps:
                return ratio
        else:
            quiet = 0
        previous = ratio
    return previous
