"""Event-driven simulation of risk-process paths and exact path queries.

A path is the full event record of one trajectory on [0, horizon]: the rate
that drove it, the jump times, and the jump sizes. Counts and aggregates at
arbitrary times are recovered exactly from that record, so every statistic
downstream is a deterministic function of (master_seed, path_index).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from .distributions import (
    ClaimLaw,
    MixingLaw,
    claim_mean,
    sample_claim,
    sample_mixing,
)

__all__ = [
    "MAX_EVENTS_DEFAULT",
    "EventCapExceeded",
    "PathStreams",
    "path_streams",
    "TimeGrid",
    "RiskPath",
    "PATH_KINDS",
    "simulate_cpp_path",
    "simulate_cmpp_path",
    "simulate_renewal_path",
    "simulate_ensemble",
    "count_at",
    "aggregate_at",
    "increments",
    "dump_paths_csv",
]

# A path that tries to generate more events than this before reaching its
# horizon is treated as numerically exploding rather than silently truncated.
MAX_EVENTS_DEFAULT = 10_000_000

PATH_KINDS = ("cpp", "cmpp", "renewal")

# Substream indices inside one path's key space.
_SUB_MIXING = 0
_SUB_INTERARRIVAL = 1
_SUB_CLAIM = 2

# Key packing: 64-bit word = namespace << 40 | path_index << 2 | substream.
_MAX_PATH_INDEX = (1 << 38) - 1
_MAX_NAMESPACE = (1 << 24) - 1
_MAX_SEED = (1 << 64) - 1


class EventCapExceeded(RuntimeError):
    """A single path needed more events than the configured cap allows."""


@dataclass(frozen=True)
class PathStreams:
    """Three disjoint random streams owned by one path.

    Claims never read from the mixing or interarrival streams, so the
    independence of the claim sequence from the driving count process is
    structural, not statistical.
    """

    mixing: np.random.Generator
    interarrival: np.random.Generator
    claim: np.random.Generator


def path_streams(master_seed: int, path_index: int, namespace: int = 0) -> PathStreams:
    """Derive the per-path substreams from (seed, index) with counter-based keys.

    Each (seed, namespace, path_index, substream) tuple maps to a distinct
    128-bit Philox key, so any path can be regenerated on its own, in any
    order, on any number of threads, with identical output.
    """
    if not (isinstance(master_seed, (int, np.integer)) and 0 <= master_seed <= _MAX_SEED):
        raise ValueError(f"master_seed must be an integer in [0, 2**64), got {master_seed!r}")
    if not (isinstance(path_index, (int, np.integer)) and 0 <= path_index <= _MAX_PATH_INDEX):
        raise ValueError(f"path_index must be an integer in [0, 2**38), got {path_index!r}")
    if not (isinstance(namespace, (int, np.integer)) and 0 <= namespace <= _MAX_NAMESPACE):
        raise ValueError(f"namespace must be an integer in [0, 2**24), got {namespace!r}")

    def gen(substream: int) -> np.random.Generator:
        word = (int(namespace) << 40) | (int(path_index) << 2) | substream
        key = np.array([int(master_seed), word], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    return PathStreams(gen(_SUB_MIXING), gen(_SUB_INTERARRIVAL), gen(_SUB_CLAIM))


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing observation times starting at 0."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size == 0:
            raise ValueError("grid must be a non-empty 1-d sequence of times")
        if pts[0] != 0.0:
            raise ValueError(f"grid must start at 0, got {pts[0]!r}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")

    def __len__(self) -> int:
        return int(self.points.size)

    def adjacent_pairs(self) -> tuple[tuple[float, float], ...]:
        pts = self.points
        return tuple((float(pts[i]), float(pts[i + 1])) for i in range(pts.size - 1))


@dataclass(frozen=True)
class RiskPath:
    """One trajectory: rate, ordered jump times in (0, horizon], jump sizes.

    For renewal paths the theta field carries 1 / mean(interarrival), the
    rate a Poisson process would need to match the mean event frequency.
    """

    theta: float
    arrivals: np.ndarray
    claims: np.ndarray
    horizon: float
    kind: str

    def __post_init__(self) -> None:
        arrivals = np.asarray(self.arrivals, dtype=float)
        claims = np.asarray(self.claims, dtype=float)
        object.__setattr__(self, "arrivals", arrivals)
        object.__setattr__(self, "claims", claims)
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise ValueError(f"theta must be positive and finite, got {self.theta!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon!r}")
        if arrivals.ndim != 1 or claims.ndim != 1:
            raise ValueError("arrivals and claims must be 1-d arrays")
        if arrivals.size != claims.size:
            raise ValueError(
                f"arrivals and claims must have equal length, got {arrivals.size} and {claims.size}"
            )
        if arrivals.size:
            if arrivals[0] <= 0.0:
                raise ValueError("arrival times must be strictly positive")
            if not np.all(np.diff(arrivals) > 0):
                raise ValueError("arrival times must be strictly increasing")
            if arrivals[-1] > self.horizon:
                raise ValueError("arrival times must not exceed the horizon")
            if not np.all(claims > 0):
                raise ValueError("claim sizes must be strictly positive")
        if self.kind not in PATH_KINDS:
            raise ValueError(f"kind must be one of {PATH_KINDS}, got {self.kind!r}")

    @cached_property
    def _claim_prefix(self) -> np.ndarray:
        # _claim_prefix[k] is the aggregate after k jumps; index 0 is 0.
        return np.concatenate(([0.0], np.cumsum(self.claims)))


def count_at(path: RiskPath, t: float) -> int:
    """Number of jumps in (0, t]."""
    if not (0.0 <= t <= path.horizon):
        raise ValueError(f"t must lie in [0, horizon], got {t!r}")
    return int(np.searchsorted(path.arrivals, t, side="right"))


def aggregate_at(path: RiskPath, t: float) -> float:
    """Sum of claim sizes arriving in (0, t]."""
    if not (0.0 <= t <= path.horizon):
        raise ValueError(f"t must lie in [0, horizon], got {t!r}")
    k = int(np.searchsorted(path.arrivals, t, side="right"))
    return float(path._claim_prefix[k])


def increments(path: RiskPath, grid: TimeGrid, which: str = "count") -> np.ndarray:
    """Per-interval increments of the count or the aggregate along the grid."""
    if which not in ("count", "aggregate"):
        raise ValueError(f"which must be 'count' or 'aggregate', got {which!r}")
    pts = grid.points
    if pts[-1] > path.horizon:
        raise ValueError("grid extends past the path horizon")
    counts = np.searchsorted(path.arrivals, pts, side="right")
    values = counts.astype(float) if which == "count" else path._claim_prefix[counts]
    return np.diff(values)


def _draw_arrivals(
    draw_gaps: Callable[[int], np.ndarray],
    horizon: float,
    max_events: int,
    expected_rate: float,
) -> np.ndarray:
    """Accumulate interarrival gaps until the running time passes the horizon."""
    # Block size targets one draw round in the common case without
    # overshooting the stream much on quiet paths.
    mean_count = max(expected_rate * horizon, 1.0)
    block = int(mean_count + 10.0 * math.sqrt(mean_count) + 16.0)
    gaps: list[np.ndarray] = []
    total_time = 0.0
    total_events = 0
    while total_time <= horizon:
        if total_events >= max_events:
            raise EventCapExceeded(
                f"path exceeded {max_events} events before reaching horizon {horizon}"
            )
        chunk = np.asarray(draw_gaps(min(block, max_events - total_events)), dtype=float)
        if chunk.size == 0 or not np.all(chunk > 0):
            raise ValueError("interarrival draws must be strictly positive")
        gaps.append(chunk)
        total_time += float(np.sum(chunk))
        total_events += chunk.size
    times = np.cumsum(np.concatenate(gaps))
    arrivals = times[times <= horizon]
    if arrivals.size > max_events:
        raise EventCapExceeded(
            f"path exceeded {max_events} events before reaching horizon {horizon}"
        )
    return arrivals


def _poisson_path(
    theta: float,
    claims: ClaimLaw,
    horizon: float,
    streams: PathStreams,
    max_events: int,
    kind: str,
) -> RiskPath:
    if not (math.isfinite(theta) and theta > 0):
        raise ValueError(f"theta must be positive and finite, got {theta!r}")
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValueError(f"horizon must be positive and finite, got {horizon!r}")
    arrivals = _draw_arrivals(
        lambda size: streams.interarrival.exponential(1.0 / theta, size=size),
        horizon,
        max_events,
        expected_rate=theta,
    )
    sizes = sample_claim(claims, streams.claim, size=arrivals.size)
    return RiskPath(theta, arrivals, sizes, horizon, kind)


def simulate_cpp_path(
    theta: float,
    claims: ClaimLaw,
    horizon: float,
    streams: PathStreams,
    max_events: int = MAX_EVENTS_DEFAULT,
) -> RiskPath:
    """Compound Poisson path at a fixed rate."""
    return _poisson_path(theta, claims, horizon, streams, max_events, "cpp")


def simulate_cmpp_path(
    mixing: MixingLaw,
    claims: ClaimLaw,
    horizon: float,
    streams: PathStreams,
    max_events: int = MAX_EVENTS_DEFAULT,
) -> RiskPath:
    """Compound mixed Poisson path: draw theta once, then run at that rate."""
    theta = sample_mixing(mixing, streams.mixing)
    return _poisson_path(theta, claims, horizon, streams, max_events, "cmpp")


def simulate_renewal_path(
    interarrival: ClaimLaw,
    claims: ClaimLaw,
    horizon: float,
    streams: PathStreams,
    max_events: int = MAX_EVENTS_DEFAULT,
) -> RiskPath:
    """Renewal path: i.i.d. positive gaps that need not be exponential.

    Serves as the stress case for the martingale tests. Non-exponential gaps
    break the compensated-count martingale property even though the path
    format is identical.
    """
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValueError(f"horizon must be positive and finite, got {horizon!r}")
    gap_mean = claim_mean(interarrival)
    arrivals = _draw_arrivals(
        lambda size: sample_claim(interarrival, streams.interarrival, size=size),
        horizon,
        max_events,
        expected_rate=1.0 / gap_mean,
    )
    sizes = sample_claim(claims, streams.claim, size=arrivals.size)
    return RiskPath(1.0 / gap_mean, arrivals, sizes, horizon, "renewal")


def simulate_ensemble(
    kind: str,
    *,
    claims: ClaimLaw,
    horizon: float,
    n_paths: int,
    master_seed: int,
    mixing: MixingLaw | None = None,
    interarrival: ClaimLaw | None = None,
    max_events: int = MAX_EVENTS_DEFAULT,
    namespace: int = 0,
    threads: int = 1,
) -> list[RiskPath]:
    """Simulate n_paths independent paths, path i from its own keyed streams.

    The result is a list ordered by path index and is identical for every
    thread count, because each path's randomness depends only on
    (master_seed, namespace, index).
    """
    if kind not in PATH_KINDS:
        raise ValueError(f"kind must be one of {PATH_KINDS}, got {kind!r}")
    if not (isinstance(n_paths, (int, np.integer)) and n_paths >= 1):
        raise ValueError(f"n_paths must be a positive integer, got {n_paths!r}")
    if kind in ("cpp", "cmpp") and mixing is None:
        raise ValueError(f"kind {kind!r} requires a mixing law")
    if kind == "renewal" and interarrival is None:
        raise ValueError("kind 'renewal' requires an interarrival law")

    def one(index: int) -> RiskPath:
        streams = path_streams(master_seed, index, namespace=namespace)
        if kind == "cmpp":
            return simulate_cmpp_path(mixing, claims, horizon, streams, max_events)
        if kind == "cpp":
            # Fixed rate: the mixing law must be degenerate; its point value
            # is the rate and the mixing stream goes unused.
            theta = sample_mixing(mixing, streams.mixing)
            return simulate_cpp_path(theta, claims, horizon, streams, max_events)
        return simulate_renewal_path(interarrival, claims, horizon, streams, max_events)

    paths: list[RiskPath | None] = [None] * int(n_paths)
    if threads <= 1:
        for i in range(int(n_paths)):
            paths[i] = one(i)
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            for i, p in enumerate(pool.map(one, range(int(n_paths)))):
                paths[i] = p
    return paths  # type: ignore[return-value]


def dump_paths_csv(paths: Iterable[RiskPath], fileobj) -> None:
    """Write one row per event: path_id, theta, arrival_time, claim_size.

    Floats are written with repr so the dump round-trips bit-exactly.
    """
    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["path_id", "theta", "arrival_time", "claim_size"])
    for i, path in enumerate(paths):
        theta = repr(path.theta)
        for t, x in zip(path.arrivals, path.claims):
            writer.writerow([i, theta, repr(float(t)), repr(float(x))])
