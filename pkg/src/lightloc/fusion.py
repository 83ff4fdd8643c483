"""Position-only Kalman filter fusing drifting odometry with classifier cluster-center observations."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, LengthMismatch, SingularInnovation
from .seeds import rng as make_rng

MAX_CONDITION = 1e12


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.array(self.mean, dtype=np.float64).reshape(3)
        P = np.array(self.cov, dtype=np.float64).reshape(3, 3)
        m.flags.writeable = False
        P.flags.writeable = False
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)


@dataclass(frozen=True)
class OdometryStep:
    delta: np.ndarray
    process_noise: np.ndarray


@dataclass(frozen=True)
class Observation:
    z: np.ndarray
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def kf_predict(state: KalmanState, step: OdometryStep) -> KalmanState:
    """Identity transition with the odometry translation as additive control."""
    return KalmanState(state.mean + np.asarray(step.delta), state.cov + np.asarray(step.process_noise))


def measurement_noise(confidence: float, scale: float = 1.0) -> np.ndarray:
    return np.eye(3) * (1.0 - confidence) * scale


def kf_update(prior: KalmanState, obs: Observation, noise_scale: float = 1.0) -> KalmanState:
    """K = P(V + P)^-1, x = x + K(z - x), P = (I - K)P, then symmetrized."""
    P = prior.cov
    S = measurement_noise(obs.confidence, noise_scale) + P
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > MAX_CONDITION:
        raise SingularInnovation(f"innovation covariance condition {np.linalg.cond(S):.3g}")
    # K = P S^-1  <=>  S^T K^T = P^T
    K = np.linalg.solve(S.T, P.T).T
    x = prior.mean + K @ (np.asarray(obs.z, dtype=np.float64) - prior.mean)
    return KalmanState(x, _sym((np.eye(3) - K) @ P))


@dataclass(frozen=True)
class DriftSpec:
    """Per-meter bias (applied to each step's travelled distance) and per-step Gaussian noise."""

    bias_per_meter: tuple[float, float, float] = (0.05, 0.0, 0.0)
    noise_sigma: float = 0.0
    process_sigma: float = 0.1  # process noise std, m per sqrt(m)


def simulate_odometry(gt_positions, drift: DriftSpec = DriftSpec(), seed=0) -> list[OdometryStep]:
    """Relative steps between consecutive ground-truth positions, corrupted by bias and noise."""
    gt = np.asarray(gt_positions, dtype=np.float64)
    rng = make_rng(seed, "odometry")
    bias = np.asarray(drift.bias_per_meter, dtype=np.float64)
    steps = []
    for a, b in zip(gt[:-1], gt[1:]):
        d = b - a
        dist = float(np.linalg.norm(d))
        noisy = d + bias * dist + rng.normal(0.0, drift.noise_sigma, 3)
        steps.append(OdometryStep(noisy, np.eye(3) * drift.process_sigma ** 2 * dist))
    return steps


def integrate(start, steps) -> np.ndarray:
    out = [np.asarray(start, dtype=np.float64)]
    for s in steps:
        out.append(out[-1] + s.delta)
    return np.array(out)


@dataclass(frozen=True)
class FusionConfig:
    initial_sigma: float = 0.1
    confidence_floor: float = 0.0
    stride: int = 1
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.stride < 1 or self.noise_scale < 0 or not 0 <= self.confidence_floor <= 1:
            raise InvalidConfig("stride >= 1, noise_scale >= 0 and confidence_floor in [0, 1] required")


@dataclass
class FusionResult:
    gt: np.ndarray
    raw: np.ndarray
    fused: np.ndarray
    covariances: np.ndarray

    @property
    def raw_error(self) -> float:
        return float(np.linalg.norm(self.raw - self.gt, axis=1).mean())

    @property
    def fused_error(self) -> float:
        return float(np.linalg.norm(self.fused - self.gt, axis=1).mean())

    @property
    def improvement(self) -> float:
        """Relative reduction of mean position error, in percent."""
        return 100.0 * (1.0 - self.fused_error / self.raw_error) if self.raw_error > 0 else 0.0


def run_fusion(gt_positions, steps, observations, config: FusionConfig = FusionConfig()) -> FusionResult:
    """Predict with each odometry step, then update with that frame's observation.

    ``observations[t]`` belongs to frame ``t`` (``None`` skips the update);
    frame 0 is the known start.
    """
    gt = np.asarray(gt_positions, dtype=np.float64)
    if len(steps) != len(gt) - 1 or len(observations) != len(gt):
        raise LengthMismatch(f"{len(gt)} poses, {len(steps)} steps, {len(observations)} observations")
    state = KalmanState(gt[0], np.eye(3) * config.initial_sigma ** 2)
    fused, covs = [state.mean], [state.cov]
    for t, step in enumerate(steps, start=1):
        state = kf_predict(state, step)
        obs = observations[t]
        if obs is not None and t % config.stride == 0 and obs.confidence >= config.confidence_floor:
            state = kf_update(state, obs, config.noise_scale)
        fused.append(state.mean)
        covs.append(state.cov)
    return FusionResult(gt, integrate(gt[0], steps), np.array(fused), np.array(covs))


def write_trajectory(path, positions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "z"])
        for t, p in enumerate(np.asarray(positions)):
            w.writerow([t] + [repr(float(v)) for v in p])
