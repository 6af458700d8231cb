"""Self-organized polygon formation on the full ring.

Non-vertex robots chase the midpoint of their two ring neighbours and
average their (possibly lagged) velocities; each vertex robot except the
pinned one tracks its ring predecessor at the prescribed per-link spacing.
The pinned vertex never moves and anchors the whole pattern in the plane.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DivergenceError,
    StabilityWarning,
    SwarmState,
    check_finite,
    make_generator,
    uniform_box,
)
from .estimation import EstimatorConfig, EstimateTrace, run_estimation
from .spectral import EstimationParams, stability_bound
from .topology import (
    ChainSegment,
    PolygonSpec,
    RingTopology,
    cut_ring,
    validate_polygon_closure,
)


class PipelineEstimationError(RuntimeError):
    """Phase 1 failed: some chain estimate missing or wrong."""

    def __init__(self, message, traces=None):
        super().__init__(message)
        self.traces = traces or []


@dataclass(frozen=True, eq=False)
class FormationConfig:
    """Everything a formation run needs besides the initial state.

    ``n_s`` are the per-segment cardinalities (ground truth or estimated);
    they must reproduce the segment sizes the ring cut yields.  ``sigma``
    selects the velocity measurement lag: 1 reads current neighbour
    velocities, 2 reads the one-step-old layer.  ``anchor_position`` is
    where the pinned vertex sits, used by the equilibrium predictor.
    """

    ring: RingTopology
    spec: PolygonSpec
    params: EstimationParams
    sigma: int = 1
    n_s: tuple[int, ...] | None = None
    anchor_position: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.sigma not in (1, 2):
            raise ValueError(f"sigma must be 1 or 2, got {self.sigma}")
        if not validate_polygon_closure(self.spec):
            raise ValueError("polygon does not close: desired displacements must sum to 0")
        segments = cut_ring(self.ring, self.spec)
        cardinalities = tuple(seg.cardinality for seg in segments)
        if self.n_s is None:
            object.__setattr__(self, "n_s", cardinalities)
        else:
            given = tuple(int(x) for x in self.n_s)
            if given != cardinalities:
                raise ValueError(
                    f"n_s {given} does not match ring cut cardinalities {cardinalities}"
                )
            object.__setattr__(self, "n_s", given)
        object.__setattr__(self, "_segments", segments)
        l_star = self.spec.r_star / np.array(self.n_s, dtype=float)[:, None]
        l_star.setflags(write=False)
        object.__setattr__(self, "_l_star", l_star)
        anchor = np.asarray(self.anchor_position, dtype=float)
        object.__setattr__(self, "anchor_position", (float(anchor[0]), float(anchor[1])))

    @property
    def segments(self) -> list[ChainSegment]:
        return list(self._segments)

    @property
    def l_star(self) -> np.ndarray:
        """Per-link spacing targets, one row per segment (r*_i / n^s_i)."""
        return self._l_star


def step_formation(state: SwarmState, config: FormationConfig) -> SwarmState:
    """One synchronous ring step; returns the successor state.

    Every robot computes its next velocity from the same snapshot, then
    positions integrate the pre-update velocities.  The pinned vertex keeps
    zero velocity, so its position never changes.
    """
    alpha = config.params.alpha
    dt = config.params.dt
    q = state.positions
    v = state.velocities
    vlag = v if config.sigma == 1 else state.velocities_prev

    q_prev = np.roll(q, 1, axis=0)
    q_next = np.roll(q, -1, axis=0)
    v_prev = np.roll(vlag, 1, axis=0)
    v_next = np.roll(vlag, -1, axis=0)

    new_v = 0.5 * alpha * (q_next + q_prev - 2.0 * q) + 0.5 * (v_next + v_prev)

    vertices = config.spec.vertex_set
    for j in range(1, config.spec.m):
        i = vertices[j]
        new_v[i] = alpha * (q_prev[i] - q[i] - config.l_star[j - 1]) + v_prev[i]
    new_v[vertices[0]] = 0.0

    new_q = q + dt * v

    check_finite(new_q, state.step + 1, "ring positions")
    check_finite(new_v, state.step + 1, "ring velocities")

    return SwarmState(
        positions=new_q,
        velocities=new_v,
        velocities_prev=v,
        step=state.step + 1,
    )


def relative_distance_errors(state: SwarmState, spec: PolygonSpec) -> np.ndarray:
    """Per-edge formation error: ||(q_vertex_i - q_vertex_{i+1}) - r*_i||."""
    q = state.positions
    vertices = spec.vertex_set
    m = spec.m
    diffs = np.array(
        [q[vertices[i]] - q[vertices[(i + 1) % m]] for i in range(m)]
    )
    return np.linalg.norm(diffs - spec.r_star, axis=1)


def predicted_equilibrium(config: FormationConfig) -> SwarmState:
    """Cascade fixed point: segment i robots at anchor_i - j * l*_i.

    Segment anchors accumulate the desired displacements, so the terminal
    of the last segment lands back on the pinned vertex (closure makes the
    cascade consistent with the ring).  All velocities are zero.
    """
    positions = np.zeros((config.ring.n_total, 2))
    anchor = np.asarray(config.anchor_position, dtype=float)
    positions[config.spec.vertex_set[0]] = anchor
    for seg in config.segments:
        spacing = config.l_star[seg.segment_id]
        base = positions[seg.anchor]
        for j, member in enumerate(seg.members, start=1):
            positions[member] = base - j * spacing
    return SwarmState.at_rest(positions)


@dataclass
class FormationTrace:
    """Recorded snapshots, per-step errors, and the convergence verdict."""

    dt: float
    tolerance: float
    snapshot_steps: list[int] = field(default_factory=list)
    snapshots: list[SwarmState] = field(default_factory=list)
    error_steps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    errors: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    final_state: SwarmState | None = None
    converged: bool = False
    first_step_within_tol: int | None = None

    def times(self) -> np.ndarray:
        return self.error_steps * self.dt


def run_formation(
    initial: SwarmState,
    config: FormationConfig,
    horizon: int,
    *,
    error_tolerance: float = 1e-2,
    stride: int = 1,
) -> FormationTrace:
    """Run the ring for ``horizon`` steps, recording errors every step.

    Snapshots are kept every ``stride`` steps plus the final step.  The
    trace is flagged converged when the largest edge error at the final
    step is below ``error_tolerance``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least one step")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if initial.positions.shape != (config.ring.n_total, 2):
        raise ValueError(
            f"initial state has {initial.positions.shape[0]} robots, "
            f"ring expects {config.ring.n_total}"
        )
    alpha_dt = config.params.alpha * config.params.dt
    largest = max(config.n_s)
    bound = stability_bound(largest, "S1" if config.sigma == 1 else "S2")
    if alpha_dt >= bound:
        warnings.warn(
            f"alpha*dt = {alpha_dt:.6g} >= sufficient bound {bound:.6g} for the "
            f"largest segment ({largest} robots); convergence is not guaranteed",
            StabilityWarning,
            stacklevel=2,
        )

    trace = FormationTrace(dt=config.params.dt, tolerance=error_tolerance)
    state = initial.copy()
    error_steps = []
    errors = []

    def record(current: SwarmState):
        e = relative_distance_errors(current, config.spec)
        error_steps.append(current.step)
        errors.append(e)
        if current.step % stride == 0 or current.step == horizon:
            trace.snapshot_steps.append(current.step)
            trace.snapshots.append(current.copy())
        if trace.first_step_within_tol is None and e.max() < error_tolerance:
            trace.first_step_within_tol = current.step

    def finalize(last: SwarmState):
        trace.error_steps = np.array(error_steps, dtype=int)
        trace.errors = np.array(errors)
        trace.final_state = last
        trace.converged = bool(trace.errors[-1].max() < error_tolerance)

    record(state)
    try:
        for _ in range(horizon):
            state = step_formation(state, config)
            record(state)
    except DivergenceError as err:
        finalize(state)
        err.partial = trace
        raise

    finalize(state)
    return trace


@dataclass
class PipelineResult:
    estimates: list[int]
    estimate_traces: list[EstimateTrace]
    formation: FormationTrace
    initial_state: SwarmState


def run_pipeline(
    ring: RingTopology,
    spec: PolygonSpec,
    est_config: EstimatorConfig,
    form_params: EstimationParams,
    seed: int,
    *,
    sigma: int = 1,
    horizon: int = 2000,
    initial_box: float = 5.0,
    error_tolerance: float = 1e-2,
    stride: int = 1,
) -> PipelineResult:
    """Estimation phase followed by formation, from one seeded placement.

    Phase 1 runs one estimator chain per segment in its anchor's frame,
    starting from the actual relative positions of the segment members.
    Phase 2 refuses to start unless every estimate converged to its
    segment's true cardinality, then runs the ring from the same initial
    placement using the estimated sizes.
    """
    rng = make_generator(seed, 0)
    initial_positions = uniform_box(rng, ring.n_total, initial_box)
    initial = SwarmState.at_rest(initial_positions)

    segments = cut_ring(ring, spec)
    traces = []
    estimates = []
    for seg in segments:
        relative = initial_positions[list(seg.members)] - initial_positions[seg.anchor]
        trace = run_estimation(seg.cardinality, est_config, relative)
        traces.append(trace)
        estimates.append(trace.estimate)

    failures = [
        (seg.segment_id, est, seg.cardinality)
        for seg, est in zip(segments, estimates)
        if est != seg.cardinality
    ]
    if failures:
        detail = ", ".join(
            f"segment {sid}: got {est}, expected {true}" for sid, est, true in failures
        )
        raise PipelineEstimationError(
            f"estimation phase failed ({detail}); formation not started", traces
        )

    config = FormationConfig(
        ring=ring,
        spec=spec,
        params=form_params,
        sigma=sigma,
        n_s=tuple(estimates),
        anchor_position=tuple(initial_positions[spec.vertex_set[0]]),
    )
    formation = run_formation(
        initial, config, horizon, error_tolerance=error_tolerance, stride=stride
    )
    return PipelineResult(
        estimates=estimates,
        estimate_traces=traces,
        formation=formation,
        initial_state=initial,
    )
