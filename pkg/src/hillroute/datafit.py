"""Two-state cost chains fitted from speed-band time series.

Speed bands are thresholded into low-cost (fast) and high-cost (slow)
states; the resulting chain is fully observed, so the maximum-likelihood
transition matrix is just the normalized transition counts.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .core import ContractViolation, PathModel

SMOOTHING = 1e-9
LOW, HIGH = 0, 1
STATE_LABELS = ("L", "H")
BIN_SECONDS = 300


@dataclass(frozen=True)
class SpeedSeries:
    road_id: str
    timestamps: tuple
    values: tuple

    def __post_init__(self):
        if len(self.timestamps) != len(self.values):
            raise ContractViolation("timestamps and values differ in length")
        ts = np.asarray(self.timestamps, dtype=float)
        if len(ts) > 1:
            gaps = np.diff(ts)
            if np.any(gaps <= 0):
                raise ContractViolation(f"timestamps for {self.road_id} are not strictly increasing")
            if not np.allclose(gaps, gaps[0]):
                raise ContractViolation(f"timestamps for {self.road_id} are not uniformly spaced")


@dataclass(frozen=True)
class FittedChain:
    threshold: Optional[float]
    matrix: np.ndarray
    counts: np.ndarray
    degenerate: bool = False
    labels: tuple = STATE_LABELS

    @property
    def q_LH(self) -> float:
        return float(self.matrix[LOW, HIGH])

    @property
    def q_HH(self) -> float:
        return float(self.matrix[HIGH, HIGH])

    def to_path(self, c_L: float, c_H: float, congestion: float = 1.0) -> PathModel:
        return PathModel.stochastic(c_L, c_H, self.q_LH, self.q_HH, congestion)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "labels": list(self.labels),
            "matrix": self.matrix.tolist(),
            "counts": self.counts.tolist(),
            "degenerate": self.degenerate,
        }


def discretize(series, threshold: float) -> np.ndarray:
    """1 (high cost) where the speed band is below ``threshold``, else 0."""
    values = np.asarray(series.values if isinstance(series, SpeedSeries) else series, dtype=float)
    if values.size == 0:
        raise ContractViolation("cannot discretize an empty series")
    if not values.min() <= threshold <= values.max():
        raise ContractViolation(f"threshold {threshold} outside observed range [{values.min()}, {values.max()}]")
    return (values < threshold).astype(np.int8)


def transition_counts(states: Sequence[int]) -> np.ndarray:
    s = np.asarray(states, dtype=np.int64)
    counts = np.zeros((2, 2))
    np.add.at(counts, (s[:-1], s[1:]), 1.0)
    return counts


def fit_transition_matrix(states: Sequence[int], threshold: Optional[float] = None,
                          smoothing: float = SMOOTHING) -> FittedChain:
    """Row-normalized transition counts with a small additive pseudo-count.

    A sequence that never leaves one state cannot identify the other row;
    the result is flagged degenerate and both states are taken as absorbing.
    """
    s = np.asarray(states)
    if s.size < 2:
        raise ContractViolation("need at least two observations")
    if not np.isin(s, (LOW, HIGH)).all():
        raise ContractViolation("states must be 0 (low cost) or 1 (high cost)")
    counts = transition_counts(s)
    if np.unique(s).size < 2:
        return FittedChain(threshold, np.eye(2), counts, degenerate=True)
    smoothed = counts + smoothing
    matrix = smoothed / smoothed.sum(axis=1, keepdims=True)
    return FittedChain(threshold, matrix, counts)


def sample_chain(matrix, T: int, rng: np.random.Generator, start: Optional[int] = None) -> np.ndarray:
    """Draw a T-step state sequence from a 2x2 transition matrix."""
    P = normalize_rows(matrix)
    states = np.empty(T, dtype=np.int8)
    state = int(rng.integers(2)) if start is None else int(start)
    u = rng.random(T)
    for t in range(T):
        states[t] = state
        state = HIGH if u[t] < P[state, HIGH] else LOW
    return states


def normalize_rows(matrix) -> np.ndarray:
    P = np.asarray(matrix, dtype=float)
    if P.shape != (2, 2) or (P < 0).any():
        raise ContractViolation("need a nonnegative 2x2 matrix")
    return P / P.sum(axis=1, keepdims=True)


def load_fixture() -> dict:
    """Published Shanghai fixture: raw matrices plus row-normalized copies."""
    text = resources.files("hillroute").joinpath("data/shanghai_fixture.json").read_text()
    data = json.loads(text)
    data["normalized"] = {k: normalize_rows(v) for k, v in data["matrices"].items()}
    return data


def read_speed_csv(path) -> Dict[str, SpeedSeries]:
    """Columns ``timestamp, road_id, speed_band``; timestamps in seconds."""
    rows: Dict[str, List[tuple]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"timestamp", "road_id", "speed_band"} - set(reader.fieldnames or ())
        if missing:
            raise ContractViolation(f"{path}: missing columns {sorted(missing)}")
        for line, rec in enumerate(reader, start=2):
            try:
                rows.setdefault(rec["road_id"], []).append((float(rec["timestamp"]), float(rec["speed_band"])))
            except (TypeError, ValueError) as exc:
                raise ContractViolation(f"{path}:{line}: {exc}") from None
    if not rows:
        raise ContractViolation(f"{path}: no data rows")
    out = {}
    for road, pts in rows.items():
        pts.sort()
        out[road] = SpeedSeries(road, tuple(p[0] for p in pts), tuple(p[1] for p in pts))
    return out


def write_speed_csv(path, series: Iterable[SpeedSeries]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "road_id", "speed_band"])
        for s in series:
            for t, v in zip(s.timestamps, s.values):
                w.writerow([repr(float(t)), s.road_id, repr(float(v))])


def synthetic_series(road_id: str, matrix, T: int, rng: np.random.Generator,
                     fast_band: float = 6.0, slow_band: float = 2.0) -> SpeedSeries:
    """Speed bands from a known chain: ``fast_band`` in L, ``slow_band`` in H."""
    states = sample_chain(matrix, T, rng)
    values = np.where(states == HIGH, slow_band, fast_band)
    ts = np.arange(T, dtype=float) * BIN_SECONDS
    return SpeedSeries(road_id, tuple(ts.tolist()), tuple(values.tolist()))


def fit_csv(path, threshold: float) -> Dict[str, FittedChain]:
    return {road: fit_transition_matrix(discretize(s, threshold), threshold)
            for road, s in sorted(read_speed_csv(path).items())}
