"""Kinematic state estimation for the target agent.

Pipeline: quadratic least-squares filtering of the noisy observation, finite
difference velocity/acceleration, exponential forgetting-factor smoothing to
scalars, and the constant-acceleration travelled-distance model used to size
centerline priors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateDesign,
    EmptySequence,
    LambdaOutOfRange,
    NegativeHorizon,
    TooShort,
)
from .scenario import DT

MIN_TRAVELLED_DISTANCE = 25.0  # meters; floor for stopped/slow agents
DEFAULT_LAMBDA = 0.9


@dataclass(frozen=True)
class Poly2Fit:
    """Per-axis quadratic least-squares fit over time."""

    coeffs_x: np.ndarray  # (a0, a1, a2)
    coeffs_y: np.ndarray
    residual_rms: float

    def evaluate(self, timestamps: np.ndarray) -> np.ndarray:
        t = np.asarray(timestamps, dtype=np.float64)
        basis = np.stack([np.ones_like(t), t, t * t], axis=1)
        return np.stack([basis @ self.coeffs_x, basis @ self.coeffs_y], axis=1)


@dataclass(frozen=True)
class KinematicState:
    """Smoothed speed and signed acceleration at the last observed frame."""

    speed: float  # m/s, >= 0
    accel: float  # m/s^2, signed along the direction of travel
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not (np.isfinite(self.speed) and np.isfinite(self.accel)):
            raise ValueError("kinematic state must be finite")
        if self.speed < 0.0:
            raise ValueError("speed must be >= 0")

    def without_accel(self) -> "KinematicState":
        """Constant turn-rate-velocity view of the same state (a = 0)."""
        return replace(self, accel=0.0)


def fit_poly2(track: np.ndarray, timestamps: np.ndarray) -> Poly2Fit:
    """Least-squares quadratic per axis; the evaluated fit replaces the raw
    observation downstream."""
    pos = np.asarray(track, dtype=np.float64)
    t = np.asarray(timestamps, dtype=np.float64)
    if pos.shape[0] < 3:
        raise DegenerateDesign(f"need >= 3 points, got {pos.shape[0]}")
    if pos.shape[0] != t.shape[0]:
        raise DegenerateDesign("track and timestamps disagree in length")
    if np.any(np.diff(t) <= 0.0):
        raise DegenerateDesign("timestamps must be strictly increasing")

    basis = np.stack([np.ones_like(t), t, t * t], axis=1)
    sol, _, rank, _ = np.linalg.lstsq(basis, pos, rcond=None)
    if rank < 3:
        raise DegenerateDesign("rank-deficient quadratic design")
    resid = pos - basis @ sol
    rms = float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
    return Poly2Fit(coeffs_x=sol[:, 0].copy(), coeffs_y=sol[:, 1].copy(), residual_rms=rms)


def finite_difference_rates(
    filtered: np.ndarray, dt: float = DT
) -> tuple[np.ndarray, np.ndarray]:
    """First/second difference rate vectors: len n-1 velocities, n-2 accelerations."""
    pos = np.asarray(filtered, dtype=np.float64)
    if pos.shape[0] < 3:
        raise TooShort(f"need >= 3 positions, got {pos.shape[0]}")
    if dt <= 0.0:
        raise TooShort("dt must be positive")
    vel = np.diff(pos, axis=0) / dt
    acc = np.diff(vel, axis=0) / dt
    return vel, acc


def smooth_forgetting(values: np.ndarray, lam: float = DEFAULT_LAMBDA,
                      normalize: bool = True) -> float:
    """Exponentially weighted summary favouring recent entries.

    Weight of entry t is lam**(T - t). With ``normalize`` (default) the sum is
    divided by the total weight so a constant signal maps to itself; the raw
    weighted sum is kept behind the flag for fidelity experiments.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise EmptySequence("smooth_forgetting needs >= 1 value")
    if not 0.0 < lam < 1.0:
        raise LambdaOutOfRange(f"lambda must be in (0, 1), got {lam}")
    weights = lam ** np.arange(vals.size - 1, -1, -1, dtype=np.float64)
    total = float(weights @ vals)
    return total / float(weights.sum()) if normalize else total


def ctra_distance(state: KinematicState, t: float) -> float:
    """Travelled distance v*t + a*t^2/2 under constant acceleration, floored
    at MIN_TRAVELLED_DISTANCE so stopped agents still receive a prior."""
    if t < 0.0:
        raise NegativeHorizon(f"horizon must be >= 0, got {t}")
    return max(state.speed * t + 0.5 * state.accel * t * t, MIN_TRAVELLED_DISTANCE)


def estimate_state(
    track: np.ndarray,
    dt: float = DT,
    lam: float = DEFAULT_LAMBDA,
    use_filter: bool = True,
) -> KinematicState:
    """Kinematic state of an observed track at its last frame.

    ``use_filter=False`` computes the rates on the raw points (the ablation
    baseline); otherwise the quadratic least-squares fit is differentiated.
    """
    pos = np.asarray(track, dtype=np.float64)
    if pos.shape[0] < 4:
        raise TooShort(f"need >= 4 observations, got {pos.shape[0]}")
    timestamps = np.arange(pos.shape[0], dtype=np.float64) * dt
    source = fit_poly2(pos, timestamps).evaluate(timestamps) if use_filter else pos
    vel, acc = finite_difference_rates(source, dt)

    speeds = np.linalg.norm(vel, axis=1)
    # signed acceleration: projection onto the direction of travel so braking
    # shortens the prior; direction taken from the matching velocity sample
    v_dir = vel[1:]
    norms = np.linalg.norm(v_dir, axis=1)
    safe = np.where(norms > 1e-12, norms, 1.0)
    accel_signed = np.sum(acc * v_dir, axis=1) / safe
    accel_signed = np.where(norms > 1e-12, accel_signed, 0.0)

    speed = max(smooth_forgetting(speeds, lam), 0.0)
    accel = smooth_forgetting(accel_signed, lam)
    return KinematicState(speed=speed, accel=accel, lam=lam)
