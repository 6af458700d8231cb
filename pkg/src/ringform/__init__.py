"""ringform: deterministic ring-swarm simulation and analysis.

Distributed chain-cardinality estimation on cut ring segments, the
self-organized polygon formation law driven by those estimates, and the
dense spectral toolkit that verifies the stability conditions and
closed-form readouts both rest on.
"""

__version__ = "0.1.0"

from .core import DivergenceError, StabilityWarning, SwarmState, make_generator, uniform_box
from .estimation import (
    ChainSimState,
    EstimateTrace,
    EstimatorConfig,
    readout,
    run_estimation,
    steady_velocity_ratio,
    step_estimator,
)
from .formation import (
    FormationConfig,
    FormationTrace,
    PipelineEstimationError,
    PipelineResult,
    predicted_equilibrium,
    relative_distance_errors,
    run_formation,
    run_pipeline,
    step_formation,
)
from .harness import (
    ScenarioReport,
    SensitivityCurve,
    SweepResult,
    auto_stop_window,
    scaled_params,
    scenario_hexagon,
    scenario_triangle,
    sensitivity_curves,
    sweep_convergence,
)
from .spectral import (
    EstimationParams,
    StabilityBound,
    SystemMatrices,
    build_cascade_matrix,
    build_estimator_matrix,
    build_formation_matrix,
    build_lagged_estimator_matrix,
    chain_equilibrium,
    readout_determinant,
    readout_matrix,
    spectral_radius,
    spectral_report,
    stability_bound,
    stability_bounds,
    steady_gain,
    steady_gain_recursive,
    steady_ratio_closed,
)
from .topology import (
    ChainSegment,
    PolygonSpec,
    RingTopology,
    cut_ring,
    validate_polygon_closure,
)
