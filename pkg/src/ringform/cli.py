"""Config ingestion, run orchestration, and file export.

The only process entry point.  A run is described by a YAML mapping whose
keys mirror RunConfig; every value is validated before any simulation
starts and the resolved config is echoed next to the outputs together with
a manifest, so a run can be reproduced from its output directory alone.

Exit codes: 0 success, 2 config error, 3 divergence, 4 no convergence
within the horizon (or a failed estimation phase).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .core import DivergenceError, SwarmState, make_generator, uniform_box
from .estimation import EstimateTrace, EstimatorConfig, run_estimation
from .formation import (
    FormationConfig,
    FormationTrace,
    PipelineEstimationError,
    run_formation,
    run_pipeline,
)
from .harness import (
    auto_stop_window,
    sensitivity_curves,
    sweep_convergence,
    SweepError,
)
from .spectral import EstimationParams, spectral_report
from .topology import PolygonSpec, RingTopology, cut_ring, validate_polygon_closure

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_NOT_CONVERGED = 4

MODES = ("estimate", "form", "pipeline", "sweep", "spectral")


class ConfigError(ValueError):
    """Invalid or missing configuration; reported with its field path."""


@dataclass
class RunConfig:
    mode: str
    alpha: float = 0.5
    dt: float = 0.01
    sigma: int = 1
    strategy: str = "S1"
    seed: int = 0
    initial_box: float = 5.0
    output_dir: str = "out"
    stride: int = 1
    max_steps: int = 3000
    stop_window: int | None = None
    excitation: tuple[float, float] = (1.0, 0.0)
    n_total: int | None = None
    vertex_set: tuple[int, ...] | None = None
    r_star: list | None = None
    n_prime: int | None = None
    estimation: dict = field(default_factory=dict)
    closure_tolerance: float = 1e-9
    formation_tolerance: float = 1e-2
    sweep_n_min: int = 5
    sweep_n_max: int = 30
    sweep_reps: int = 5
    sweep_scale_per_n: bool = False

    @property
    def params(self) -> EstimationParams:
        return EstimationParams(alpha=self.alpha, dt=self.dt)


def _require(condition, path, message):
    if not condition:
        raise ConfigError(f"{path}: {message}")


def _reject_unknown(mapping, allowed, path):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown fields {sorted(unknown)}")


_TOP_LEVEL = {
    "mode", "alpha", "dt", "sigma", "strategy", "seed", "initial_box",
    "output_dir", "stride", "max_steps", "stop_window", "excitation",
    "topology", "r_star", "n_prime", "estimation", "tolerances", "sweep",
}
_ESTIMATION_KEYS = {"alpha", "dt", "strategy", "max_steps", "stop_window"}
_TOLERANCE_KEYS = {"closure", "formation_error"}
_SWEEP_KEYS = {"n_min", "n_max", "reps", "scale_per_n"}


def parse_config(raw: dict) -> RunConfig:
    """Validate a raw mapping into a RunConfig; unknown fields rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _reject_unknown(raw, _TOP_LEVEL, "config")
    mode = raw.get("mode")
    _require(mode in MODES, "mode", f"must be one of {MODES}, got {mode!r}")

    cfg = RunConfig(mode=mode)

    def take(key, cast, path, check=None, message=""):
        if key in raw and raw[key] is not None:
            try:
                value = cast(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            if check is not None and not check(value):
                raise ConfigError(f"{path}: {message}")
            setattr(cfg, key, value)

    take("alpha", float, "alpha", lambda x: x > 0, "must be positive")
    take("dt", float, "dt", lambda x: x > 0, "must be positive")
    take("sigma", int, "sigma", lambda x: x in (1, 2), "must be 1 or 2")
    take("strategy", str, "strategy", lambda x: x in ("S1", "S2"),
         "must be 'S1' or 'S2'")
    take("seed", int, "seed", lambda x: 0 <= x < 2 ** 64,
         "must be an unsigned 64-bit integer")
    take("initial_box", float, "initial_box", lambda x: x >= 0, "must be >= 0")
    take("output_dir", str, "output_dir")
    take("stride", int, "stride", lambda x: x >= 1, "must be >= 1")
    take("max_steps", int, "max_steps", lambda x: x >= 1, "must be >= 1")
    take("stop_window", int, "stop_window", lambda x: x >= 2, "must be >= 2")
    take("n_prime", int, "n_prime", lambda x: x >= 1, "must be >= 1")

    if "excitation" in raw and raw["excitation"] is not None:
        exc_value = raw["excitation"]
        _require(
            isinstance(exc_value, (list, tuple)) and len(exc_value) == 2,
            "excitation", "must be a pair [ex, ey]",
        )
        cfg.excitation = (float(exc_value[0]), float(exc_value[1]))
        _require(any(cfg.excitation), "excitation", "must be non-zero")

    if "topology" in raw and raw["topology"] is not None:
        topo = raw["topology"]
        _require(isinstance(topo, dict), "topology", "must be a mapping")
        _reject_unknown(topo, {"n_total", "vertex_set"}, "topology")
        if "n_total" in topo:
            cfg.n_total = int(topo["n_total"])
            _require(cfg.n_total >= 2, "topology.n_total", "must be >= 2")
        if "vertex_set" in topo and topo["vertex_set"] is not None:
            vs = topo["vertex_set"]
            _require(isinstance(vs, (list, tuple)), "topology.vertex_set",
                     "must be a list of indices")
            cfg.vertex_set = tuple(int(v) for v in vs)

    if "r_star" in raw and raw["r_star"] is not None:
        r = raw["r_star"]
        _require(
            isinstance(r, (list, tuple))
            and all(isinstance(row, (list, tuple)) and len(row) == 2 for row in r),
            "r_star", "must be a list of [x, y] pairs",
        )
        cfg.r_star = [[float(a), float(b)] for a, b in r]

    if "estimation" in raw and raw["estimation"] is not None:
        est = raw["estimation"]
        _require(isinstance(est, dict), "estimation", "must be a mapping")
        _reject_unknown(est, _ESTIMATION_KEYS, "estimation")
        if "alpha" in est and est["alpha"] is not None:
            _require(float(est["alpha"]) > 0, "estimation.alpha", "must be positive")
        if "dt" in est and est["dt"] is not None:
            _require(float(est["dt"]) > 0, "estimation.dt", "must be positive")
        if "strategy" in est and est["strategy"] is not None:
            _require(est["strategy"] in ("S1", "S2"), "estimation.strategy",
                     "must be 'S1' or 'S2'")
        cfg.estimation = dict(est)

    if "tolerances" in raw and raw["tolerances"] is not None:
        tol = raw["tolerances"]
        _require(isinstance(tol, dict), "tolerances", "must be a mapping")
        _reject_unknown(tol, _TOLERANCE_KEYS, "tolerances")
        if "closure" in tol:
            cfg.closure_tolerance = float(tol["closure"])
        if "formation_error" in tol:
            cfg.formation_tolerance = float(tol["formation_error"])

    if "sweep" in raw and raw["sweep"] is not None:
        sw = raw["sweep"]
        _require(isinstance(sw, dict), "sweep", "must be a mapping")
        _reject_unknown(sw, _SWEEP_KEYS, "sweep")
        if "n_min" in sw:
            cfg.sweep_n_min = int(sw["n_min"])
        if "n_max" in sw:
            cfg.sweep_n_max = int(sw["n_max"])
        if "reps" in sw:
            cfg.sweep_reps = int(sw["reps"])
        if "scale_per_n" in sw:
            cfg.sweep_scale_per_n = bool(sw["scale_per_n"])
        _require(cfg.sweep_n_min >= 2, "sweep.n_min", "must be >= 2")
        _require(cfg.sweep_n_max >= cfg.sweep_n_min, "sweep.n_max",
                 "must be >= sweep.n_min")
        _require(cfg.sweep_reps >= 1, "sweep.reps", "must be >= 1")

    _validate_mode_requirements(cfg)
    return cfg


def _validate_mode_requirements(cfg: RunConfig) -> None:
    if cfg.mode == "estimate":
        _require(cfg.n_total is not None and cfg.n_total >= 2,
                 "topology.n_total", "estimate mode needs a chain of >= 2 robots")
    elif cfg.mode in ("form", "pipeline"):
        _require(cfg.n_total is not None and cfg.n_total >= 3,
                 "topology.n_total", f"{cfg.mode} mode needs a ring of >= 3 robots")
        _require(cfg.vertex_set is not None, "topology.vertex_set",
                 f"{cfg.mode} mode needs the vertex robot indices")
        _require(cfg.r_star is not None, "r_star",
                 f"{cfg.mode} mode needs the desired displacements")
        try:
            spec = PolygonSpec(vertex_set=cfg.vertex_set, r_star=np.array(cfg.r_star))
            cut_ring(RingTopology(cfg.n_total), spec)
        except ValueError as exc:
            raise ConfigError(f"topology: {exc}") from exc
        if not validate_polygon_closure(spec, cfg.closure_tolerance):
            residual = spec.r_star.sum(axis=0)
            raise ConfigError(
                f"r_star: polygon does not close; sum of displacements is "
                f"({residual[0]:.3e}, {residual[1]:.3e})"
            )
    elif cfg.mode == "spectral":
        _require(cfg.n_prime is not None, "n_prime",
                 "spectral mode needs the chain order n_prime")
    # sweep mode has defaults for everything


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw if raw is not None else {})


# --- output writers -------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, float) and not np.isfinite(value):
        return "nan"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    """Rows are flushed per step-block; decimal point, comma, LF contract."""
    with open(path, "w", newline="\n") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(_fmt(v) for v in row) + "\n")
            handle.flush()


def estimate_rows(traces: list[EstimateTrace]):
    """One row per step per chain, ordered by step then chain id."""
    max_len = max((len(t.steps) for t in traces), default=0)
    for pos in range(max_len):
        for chain_id, trace in enumerate(traces):
            if pos < len(trace.steps):
                converged_here = (
                    trace.converged and trace.steps[pos] == trace.steps_to_convergence
                )
                rounded = trace.rounded[pos]
                if np.isfinite(rounded):
                    rounded = int(rounded)
                yield (
                    trace.steps[pos], chain_id, trace.ratios[pos],
                    trace.raw[pos], rounded, converged_here,
                )


def write_estimate_csv(path: Path, traces: list[EstimateTrace]) -> None:
    write_csv(
        path,
        ["step", "chain_id", "ratio", "estimate_raw", "estimate_rounded", "converged"],
        estimate_rows(traces),
    )


def write_trace_csv(path: Path, trace: FormationTrace) -> None:
    def rows():
        for step, state in zip(trace.snapshot_steps, trace.snapshots):
            t = step * trace.dt
            for robot_id in range(state.positions.shape[0]):
                px, py = state.positions[robot_id]
                vx, vy = state.velocities[robot_id]
                yield (step, t, robot_id, px, py, vx, vy)

    write_csv(path, ["step", "time", "robot_id", "px", "py", "vx", "vy"], rows())


def write_errors_csv(path: Path, trace: FormationTrace) -> None:
    def rows():
        for i, step in enumerate(trace.error_steps):
            t = step * trace.dt
            for edge_id in range(trace.errors.shape[1]):
                yield (step, t, edge_id, trace.errors[i, edge_id])

    write_csv(path, ["step", "time", "edge_id", "error"], rows())


def write_manifest(out_dir: Path, cfg: RunConfig, wall_time: float,
                   outputs: list[str], note: str = "") -> None:
    manifest = {
        "package": "ringform",
        "version": __version__,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config": _resolved_dict(cfg),
        "outputs": outputs,
        "wall_time_s": wall_time,
    }
    if note:
        manifest["note"] = note
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _resolved_dict(cfg: RunConfig) -> dict:
    resolved = {
        "mode": cfg.mode,
        "alpha": cfg.alpha,
        "dt": cfg.dt,
        "sigma": cfg.sigma,
        "strategy": cfg.strategy,
        "seed": cfg.seed,
        "initial_box": cfg.initial_box,
        "output_dir": cfg.output_dir,
        "stride": cfg.stride,
        "max_steps": cfg.max_steps,
        "stop_window": cfg.stop_window,
        "excitation": list(cfg.excitation),
        "tolerances": {
            "closure": cfg.closure_tolerance,
            "formation_error": cfg.formation_tolerance,
        },
    }
    if cfg.n_total is not None:
        resolved["topology"] = {
            "n_total": cfg.n_total,
            "vertex_set": list(cfg.vertex_set) if cfg.vertex_set else None,
        }
    if cfg.r_star is not None:
        resolved["r_star"] = cfg.r_star
    if cfg.n_prime is not None:
        resolved["n_prime"] = cfg.n_prime
    if cfg.estimation:
        resolved["estimation"] = cfg.estimation
    if cfg.mode == "sweep":
        resolved["sweep"] = {
            "n_min": cfg.sweep_n_min,
            "n_max": cfg.sweep_n_max,
            "reps": cfg.sweep_reps,
            "scale_per_n": cfg.sweep_scale_per_n,
        }
    return resolved


# --- mode runners ---------------------------------------------------------


def _estimator_config(cfg: RunConfig, n_prime: int) -> EstimatorConfig:
    est = cfg.estimation
    alpha = float(est.get("alpha", cfg.alpha))
    dt = float(est.get("dt", cfg.dt))
    strategy = est.get("strategy", cfg.strategy)
    params = EstimationParams(alpha=alpha, dt=dt)
    window = est.get("stop_window", cfg.stop_window)
    if window is None:
        window = auto_stop_window(n_prime, params, strategy)
    max_steps = int(est.get("max_steps", cfg.max_steps))
    max_steps = max(max_steps, window + 1)
    return EstimatorConfig(
        params=params, strategy=strategy, excitation_init=cfg.excitation,
        stop_window=int(window), max_steps=max_steps,
    )


def _run_estimate(cfg: RunConfig, out_dir: Path, outputs: list[str]) -> int:
    n_prime = cfg.n_total - 1
    config = _estimator_config(cfg, n_prime)
    try:
        trace = run_estimation(
            n_prime, config, seed=cfg.seed, initial_box=cfg.initial_box
        )
    except DivergenceError as err:
        if err.partial is not None:
            write_estimate_csv(out_dir / "estimate.csv", [err.partial])
            outputs.append("estimate.csv")
        print(f"ringform: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    write_estimate_csv(out_dir / "estimate.csv", [trace])
    outputs.append("estimate.csv")
    if not trace.converged:
        print("ringform: estimation did not converge within max_steps",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    print(f"estimate: {trace.estimate} (true {n_prime}), "
          f"{trace.steps_to_convergence} steps")
    return EXIT_OK


def _formation_pieces(cfg: RunConfig):
    ring = RingTopology(cfg.n_total)
    spec = PolygonSpec(vertex_set=cfg.vertex_set, r_star=np.array(cfg.r_star))
    return ring, spec


def _run_form(cfg: RunConfig, out_dir: Path, outputs: list[str]) -> int:
    ring, spec = _formation_pieces(cfg)
    rng = make_generator(cfg.seed, 0)
    initial = SwarmState.at_rest(uniform_box(rng, ring.n_total, cfg.initial_box))
    config = FormationConfig(
        ring=ring, spec=spec, params=cfg.params, sigma=cfg.sigma,
        anchor_position=tuple(initial.positions[spec.vertex_set[0]]),
    )
    try:
        trace = run_formation(
            initial, config, cfg.max_steps,
            error_tolerance=cfg.formation_tolerance, stride=cfg.stride,
        )
    except DivergenceError as err:
        if err.partial is not None:
            write_trace_csv(out_dir / "trace.csv", err.partial)
            write_errors_csv(out_dir / "errors.csv", err.partial)
            outputs.extend(["trace.csv", "errors.csv"])
        print(f"ringform: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    write_trace_csv(out_dir / "trace.csv", trace)
    write_errors_csv(out_dir / "errors.csv", trace)
    outputs.extend(["trace.csv", "errors.csv"])
    final_error = float(trace.errors[-1].max())
    print(f"formation: max edge error {final_error:.3e} after "
          f"{cfg.max_steps} steps (tolerance {cfg.formation_tolerance})")
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def _run_pipeline(cfg: RunConfig, out_dir: Path, outputs: list[str]) -> int:
    ring, spec = _formation_pieces(cfg)
    segments = cut_ring(ring, spec)
    largest = max(seg.cardinality for seg in segments)
    est_config = _estimator_config(cfg, largest)
    try:
        result = run_pipeline(
            ring, spec, est_config, cfg.params, cfg.seed,
            sigma=cfg.sigma, horizon=cfg.max_steps,
            initial_box=cfg.initial_box,
            error_tolerance=cfg.formation_tolerance, stride=cfg.stride,
        )
    except PipelineEstimationError as err:
        write_estimate_csv(out_dir / "estimate.csv", err.traces)
        outputs.append("estimate.csv")
        print(f"ringform: {err}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except DivergenceError as err:
        if err.partial is not None:
            write_trace_csv(out_dir / "trace.csv", err.partial)
            write_errors_csv(out_dir / "errors.csv", err.partial)
            outputs.extend(["trace.csv", "errors.csv"])
        print(f"ringform: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    write_estimate_csv(out_dir / "estimate.csv", result.estimate_traces)
    write_trace_csv(out_dir / "trace.csv", result.formation)
    write_errors_csv(out_dir / "errors.csv", result.formation)
    outputs.extend(["estimate.csv", "trace.csv", "errors.csv"])
    final_error = float(result.formation.errors[-1].max())
    print(f"pipeline: estimates {result.estimates}, final max edge error "
          f"{final_error:.3e}")
    return EXIT_OK if result.formation.converged else EXIT_NOT_CONVERGED


def _run_sweep(cfg: RunConfig, out_dir: Path, outputs: list[str]) -> int:
    try:
        sweep = sweep_convergence(
            (cfg.sweep_n_min, cfg.sweep_n_max), cfg.sweep_reps,
            dt=cfg.dt, scale_per_n=cfg.sweep_scale_per_n, seed=cfg.seed,
            initial_box=cfg.initial_box, strict=False,
        )
    except SweepError as err:
        print(f"ringform: {err}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    write_csv(
        out_dir / "sweep.csv",
        ["n", "strategy", "reps", "mean_steps", "all_correct"],
        ((r.n, r.strategy, r.reps, r.mean_steps, r.all_correct) for r in sweep.rows),
    )
    outputs.append("sweep.csv")
    curve = sensitivity_curves((max(cfg.sweep_n_min - 1, 1), cfg.sweep_n_max - 1),
                               dt=cfg.dt)
    write_csv(
        out_dir / "sensitivity.csv",
        ["n_prime", "ratio_s1_closed", "ratio_s2_closed", "ratio_s1_sim",
         "ratio_s2_sim"],
        ((r.n_prime, r.ratio_s1_closed, r.ratio_s2_closed, r.ratio_s1_sim,
          r.ratio_s2_sim) for r in curve.rows),
    )
    outputs.append("sensitivity.csv")
    bad = [r for r in sweep.rows if not r.all_correct]
    if bad:
        cells = ", ".join(f"n={r.n} {r.strategy}" for r in bad)
        print(f"ringform: incorrect estimates in cells: {cells}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    print(f"sweep: {len(sweep.rows)} cells, all estimates exact; "
          f"more sensitive readout: {curve.more_sensitive}")
    return EXIT_OK


def _run_spectral(cfg: RunConfig, out_dir: Path, outputs: list[str]) -> int:
    report = spectral_report(cfg.n_prime, cfg.params)
    (out_dir / "spectral.json").write_text(json.dumps(report, indent=2) + "\n")
    outputs.append("spectral.json")
    print(json.dumps(report, indent=2))
    return EXIT_OK


def execute(cfg: RunConfig) -> int:
    """Run one validated config; writes outputs plus a manifest."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.yaml").write_text(
        yaml.safe_dump(_resolved_dict(cfg), sort_keys=True)
    )
    outputs = ["resolved_config.yaml"]
    started = time.perf_counter()
    runner = {
        "estimate": _run_estimate,
        "form": _run_form,
        "pipeline": _run_pipeline,
        "sweep": _run_sweep,
        "spectral": _run_spectral,
    }[cfg.mode]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        code = runner(cfg, out_dir, outputs)
    for entry in caught:
        print(f"ringform: warning: {entry.message}", file=sys.stderr)
    write_manifest(out_dir, cfg, time.perf_counter() - started, outputs)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ringform",
        description="Ring-swarm estimation and polygon formation simulator",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--stride", type=int, default=None,
                       help="override trace decimation stride")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if cfg.mode != args.mode:
            raise ConfigError(
                f"mode: config says {cfg.mode!r} but subcommand is {args.mode!r}"
            )
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed: must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
        if args.stride is not None:
            if args.stride < 1:
                raise ConfigError("stride: must be >= 1")
            cfg.stride = args.stride
    except ConfigError as exc:
        print(f"ringform: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
