"""Redundant sample downsampling.

Tracks the per-sample median L1 loss over two sliding windows of epochs, drops
the lowest-variance (already converged) samples twice, and restores the full
training set for the final epochs.
"""
from __future__ import annotations

import csv
import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, UnknownSample, WindowNotFull, WrongEpoch

_ROUND_EPS = 1e-9


def _ceil(x: float) -> int:
    return math.ceil(x - _ROUND_EPS)


def _floor(x: float) -> int:
    return math.floor(x + _ROUND_EPS)


class Action(enum.Enum):
    NOOP = "noop"
    PRUNE = "prune"
    RESTORE_FULL = "restore_full"


def compute_stage_epochs(total_epochs: int, start_ratio: float, stop_ratio: float) -> tuple[int, int, int]:
    E = total_epochs
    return _ceil(E * start_ratio), _floor(E * (start_ratio + stop_ratio) / 2), _floor(E * stop_ratio)


@dataclass(frozen=True)
class RsdConfig:
    total_epochs: int = 25
    downsample_ratio: float = 0.25
    start_ratio: float = 0.25
    stop_ratio: float = 0.85
    window: int = 3

    def __post_init__(self):
        if self.total_epochs < 1:
            raise InvalidConfig("total_epochs must be >= 1")
        if not 0 < self.downsample_ratio < 1:
            raise InvalidConfig("downsample_ratio must lie in (0, 1)")
        if not 0 < self.start_ratio < self.stop_ratio < 1:
            raise InvalidConfig("need 0 < start_ratio < stop_ratio < 1")
        if self.window < 2:
            raise InvalidConfig("window must be >= 2")
        e1, e2, es = compute_stage_epochs(self.total_epochs, self.start_ratio, self.stop_ratio)
        if not (e1 + self.window <= e2 and e2 + self.window <= es):
            raise InvalidConfig(f"stage epochs ({e1}, {e2}, {es}) leave no room for window {self.window}")


def stage_epochs(config: RsdConfig) -> tuple[int, int, int]:
    """(E1, E2, Es): first prune window start, second window start, restore epoch."""
    return compute_stage_epochs(config.total_epochs, config.start_ratio, config.stop_ratio)


def survivors(n: int, downsample_ratio: float) -> int:
    return _floor((1.0 - downsample_ratio) * n)


def expected_sample_evaluations(config: RsdConfig, n: int) -> int:
    """Sum over epochs of the active-set size, in closed form."""
    e1, e2, es = stage_epochs(config)
    s = config.window
    n1 = survivors(n, config.downsample_ratio)
    n2 = survivors(n1, config.downsample_ratio)
    return n * (e1 + s) + n1 * (e2 - e1) + n2 * (es - e2 - s) + n * (config.total_epochs - es)


def median(values) -> float:
    # np.median's dispatch overhead dominates for per-frame sizes; sort directly
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    if n == 0:
        raise ValueError("median of empty loss set")
    # sorting puts -inf first and +inf / nan last
    if not (math.isfinite(v[0]) and math.isfinite(v[-1])):
        raise ValueError("non-finite loss")
    if n % 2:
        return float(v[n // 2])
    return float((v[n // 2 - 1] + v[n // 2]) / 2)


def window_variance(values, window: int | None = None) -> float:
    """Population variance of one full window of median losses."""
    v = np.asarray(values, dtype=np.float64)
    if window is not None and v.size != window:
        raise WindowNotFull(f"{v.size} of {window} values")
    if v.size == 0:
        raise WindowNotFull("empty window")
    return float(np.mean((v - v.mean()) ** 2))


@dataclass
class RsdState:
    config: RsdConfig
    full_set: list[int]
    active_set: list[int]
    stages: tuple[int, int, int]
    epoch: int = 0
    windows: dict[int, deque] = field(default_factory=dict)
    last_recorded: dict[int, int] = field(default_factory=dict)
    audit: list[dict] = field(default_factory=list)
    _lookup: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def window_starts(self) -> tuple[int, int]:
        return self.stages[0], self.stages[1]

    def in_window(self, e: int | None = None) -> bool:
        e = self.epoch if e is None else e
        s = self.config.window
        return any(start <= e < start + s for start in self.window_starts)

    def is_active(self, sample_id: int) -> bool:
        if self._lookup is None or self._lookup[0] is not self.active_set:
            self._lookup = (self.active_set, frozenset(self.active_set))
        return sample_id in self._lookup[1]

    def variances(self) -> dict[int, float]:
        s = self.config.window
        return {i: window_variance(w, s) for i, w in self.windows.items() if len(w) == s}


def new_state(config: RsdConfig, sample_ids) -> RsdState:
    ids = sorted(int(i) for i in sample_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids")
    return RsdState(config, ids, list(ids), stage_epochs(config))


def record_median_loss(state: RsdState, sample_id: int, per_point_losses) -> float:
    """Median of one sample's per-point losses; stored only inside a variance window.

    A second call for the same sample within one epoch replaces the first value.
    """
    if not state.is_active(sample_id):
        raise UnknownSample(f"sample {sample_id} is not in the active set")
    m = median(per_point_losses)
    if state.in_window():
        w = state.windows.setdefault(sample_id, deque(maxlen=state.config.window))
        if state.last_recorded.get(sample_id) == state.epoch and w:
            w[-1] = m
        else:
            w.append(m)
        state.last_recorded[sample_id] = state.epoch
    return m


def record_epoch_losses(state: RsdState, losses_by_id: dict) -> dict[int, float]:
    """Feed a whole epoch's per-point losses in ascending sample-id order."""
    return {i: record_median_loss(state, i, losses_by_id[i]) for i in sorted(losses_by_id)}


def prune(state: RsdState) -> list[int]:
    """Keep the front floor((1 - r_d) |T'|) samples by descending window variance.

    Ties go to the lower sample id. Windows are cleared afterwards.
    """
    s = state.config.window
    if state.epoch not in (state.stages[0] + s, state.stages[1] + s):
        raise WrongEpoch(f"prune at epoch {state.epoch}; allowed at {state.stages[0] + s} and {state.stages[1] + s}")
    var = {}
    for i in state.active_set:
        w = state.windows.get(i)
        if w is None or len(w) != s:
            raise WindowNotFull(f"sample {i} has {0 if w is None else len(w)} of {s} window values")
        var[i] = window_variance(w, s)
    ranked = sorted(state.active_set, key=lambda i: (-var[i], i))
    keep = ranked[: survivors(len(ranked), state.config.downsample_ratio)]
    state.active_set = sorted(keep)
    state.windows.clear()
    state.last_recorded.clear()
    return state.active_set


def transition_action(state: RsdState, e: int) -> Action:
    s = state.config.window
    e1, e2, es = state.stages
    if e in (e1 + s, e2 + s):
        return Action.PRUNE
    if e == es:
        return Action.RESTORE_FULL
    return Action.NOOP


def epoch_transition(state: RsdState, e: int) -> Action:
    """Enter epoch ``e``: apply the scheduled prune/restore and log an audit row."""
    if not 0 <= e < state.config.total_epochs:
        raise ValueError(f"epoch {e} outside [0, {state.config.total_epochs})")
    state.epoch = e
    action = transition_action(state, e)
    var = state.variances()
    if action is Action.PRUNE:
        prune(state)
    elif action is Action.RESTORE_FULL:
        state.active_set = list(state.full_set)
        state.windows.clear()
        state.last_recorded.clear()
    vals = list(var.values())
    state.audit.append({
        "epoch": e,
        "action": action.value,
        "active_size": len(state.active_set),
        "min_variance": min(vals) if vals else "",
        "max_variance": max(vals) if vals else "",
    })
    return action


AUDIT_FIELDS = ["epoch", "action", "active_size", "min_variance", "max_variance"]


def write_audit(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AUDIT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
