"""Shared state containers, seeded RNG plumbing, and failure types."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# A run is declared divergent once any coordinate magnitude passes this.
# Gain/step-size combinations outside the stability region blow up
# exponentially, so the exact cutoff is uncritical; it only has to trip
# before floats overflow.
POSITION_LIMIT = 1.0e6


class DivergenceError(RuntimeError):
    """A simulation left the sane-magnitude envelope (unstable parameters).

    ``partial`` may carry whatever trace object the runner had assembled
    before aborting, so callers can still flush a truncated output file.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class StabilityWarning(UserWarning):
    """Parameters violate a sufficient stability bound (run continues)."""


def make_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed on (seed, stream).

    Philox4x64-10 keyed with the two 64-bit words (seed, stream); doubles
    come from the top 53 bits of each 64-bit output.  Any implementation
    of Philox reproduces the same placements bit for bit.
    """
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform_box(rng: np.random.Generator, count: int, half_width: float) -> np.ndarray:
    """``count`` planar points uniform in [-half_width, half_width)^2."""
    return half_width * (2.0 * rng.random((count, 2)) - 1.0)


def check_finite(values: np.ndarray, step: int, label: str) -> None:
    """Abort loudly on non-finite or absurdly large state values."""
    finite = np.isfinite(values)
    if not finite.all():
        raise DivergenceError(f"{label} contains non-finite values at step {step}")
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak > POSITION_LIMIT:
        raise DivergenceError(
            f"{label} diverged at step {step}: max magnitude {peak:.3e} "
            f"exceeds {POSITION_LIMIT:.0e}"
        )


@dataclass
class SwarmState:
    """Positions and velocities of every robot at one synchronous step.

    ``velocities_prev`` is the one-step-old layer needed by the lagged
    (sigma = 2) update; it is all zeros at step 0.
    """

    positions: np.ndarray
    velocities: np.ndarray
    velocities_prev: np.ndarray = field(default=None)  # type: ignore[assignment]
    step: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.velocities_prev is None:
            self.velocities_prev = np.zeros_like(self.velocities)
        else:
            self.velocities_prev = np.asarray(self.velocities_prev, dtype=float)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have matching shape")

    @classmethod
    def at_rest(cls, positions: np.ndarray) -> "SwarmState":
        positions = np.asarray(positions, dtype=float)
        return cls(positions=positions, velocities=np.zeros_like(positions))

    def copy(self) -> "SwarmState":
        return SwarmState(
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            velocities_prev=self.velocities_prev.copy(),
            step=self.step,
        )
