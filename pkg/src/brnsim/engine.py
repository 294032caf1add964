"""Exact stochastic simulation of a BRN and its embedded jump chain.

Direct-method SSA: all propensities are recomputed each step, the waiting
time is exponential in the total propensity (inverse-transform sampled), and
the reaction is chosen proportionally to its propensity.  One engine run is
single-threaded; replicates are independent and parallelize externally via
:class:`RngStream` substreams.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .brn import (
    Brn,
    Growth,
    NotApplicableError,
    apply_reaction,
    growth_propensity,
    mass_action_propensity,
    propensity_vector,
    volume_scaled_constant,
)

__all__ = [
    "EngineError",
    "AbsorbingStateError",
    "RngStream",
    "StopCondition",
    "RecordingPolicy",
    "Event",
    "Trajectory",
    "step",
    "simulate",
    "embedded_successors",
    "write_trajectory_csv",
    "write_summary_json",
]


class EngineError(Exception):
    """Simulation-level failure."""


class AbsorbingStateError(EngineError):
    """Requested jump-chain data in a state with zero total propensity."""


@dataclass(frozen=True)
class RngStream:
    """A root seed with derivable per-replicate substreams.

    ``(seed, replicate)`` determines the draw sequence bit-exactly,
    independent of process or thread layout, via numpy's SeedSequence
    spawn-key mechanism.
    """

    seed: int

    def generator(self, replicate: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(replicate,))
        return np.random.Generator(np.random.PCG64(ss))

    def child_seed(self, replicate: int) -> int:
        """64-bit fingerprint of a substream, for manifests."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(replicate,))
        return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class StopCondition:
    """Disjunction of halting rules; the first that fires ends the run.

    ``extinct`` stops the run as soon as any listed species has count 0
    (checked before the first step and after every applied reaction).  At
    least one of ``max_time``/``max_steps`` must be set as a termination
    guard.  Absorbing states (total propensity 0) always stop the run.
    """

    max_time: Union[float, None] = None
    max_steps: Union[int, None] = None
    extinct: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "extinct", frozenset(self.extinct))
        if self.max_time is None and self.max_steps is None:
            raise ValueError("StopCondition requires max_time or max_steps")
        if self.max_time is not None and self.max_time < 0:
            raise ValueError("max_time must be non-negative")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")


@dataclass(frozen=True)
class RecordingPolicy:
    """What a simulation keeps: every event, periodic snapshots, or a summary.

    ``full`` stores one :class:`Event` per applied reaction (replayable);
    ``interval``/``times`` store count snapshots on a time grid; ``summary``
    stores termination data only.
    """

    mode: str = "summary"
    interval: Union[float, None] = None
    times: tuple = ()

    @classmethod
    def full(cls) -> "RecordingPolicy":
        return cls(mode="full")

    @classmethod
    def every(cls, interval: float) -> "RecordingPolicy":
        if interval <= 0:
            raise ValueError("snapshot interval must be positive")
        return cls(mode="interval", interval=float(interval))

    @classmethod
    def at(cls, times: Sequence[float]) -> "RecordingPolicy":
        ts = tuple(sorted(float(t) for t in times))
        if ts and ts[0] < 0:
            raise ValueError("snapshot times must be non-negative")
        return cls(mode="times", times=ts)

    @classmethod
    def summary(cls) -> "RecordingPolicy":
        return cls(mode="summary")


@dataclass(frozen=True)
class Event:
    """One applied reaction: its firing time and the configuration after it."""

    time: float
    reaction_index: int
    config_after: tuple


@dataclass
class Trajectory:
    """Result of one simulation run.

    ``events`` is populated under full recording, ``snapshots`` under
    interval/times recording.  ``first_zero_time`` maps each cell type to the
    first simulated time its count reached zero.  ``seed_key`` records the
    (root seed, replicate index) pair that drove the run.
    """

    brn: Brn
    initial: np.ndarray
    events: list
    snapshots: list
    termination: str
    final: np.ndarray
    final_time: float
    step_count: int
    reaction_counts: np.ndarray
    first_zero_time: dict
    seed_key: Union[tuple, None] = None

    def replay(self) -> np.ndarray:
        """Re-apply all recorded events from the initial configuration."""
        config = np.array(self.initial, dtype=np.int64)
        for ev in self.events:
            config = apply_reaction(config, self.brn.reactions[ev.reaction_index])
            if tuple(int(x) for x in config) != tuple(ev.config_after):
                raise EngineError(f"replay diverged at t={ev.time}")
        return config


def _draw_waiting_time(rng: np.random.Generator, total: float) -> float:
    # inverse transform; u == 0 is redrawn so waiting times are strictly positive
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return -math.log1p(-u) / total


def _select_reaction(rng: np.random.Generator, props, total: float) -> int:
    # lowest index whose cumulative propensity strictly exceeds the draw;
    # zero-propensity reactions are never selected
    r = rng.random() * total
    acc = 0.0
    last_positive = 0
    for k, a in enumerate(props):
        if a > 0.0:
            acc += a
            last_positive = k
            if r < acc:
                return k
    return last_positive  # r landed on the final boundary through rounding


def step(brn: Brn, config: Sequence[int], rng: np.random.Generator):
    """One jump of the CTMC: (waiting_time, reaction_index), or None if absorbed."""
    props = propensity_vector(brn, config)
    total = float(props.sum())
    if total <= 0.0:
        return None
    dt = _draw_waiting_time(rng, total)
    return dt, _select_reaction(rng, props, total)


class _CompiledReaction:
    __slots__ = ("is_growth", "xi_over_v", "kind", "pairs", "delta")

    def __init__(self, brn: Brn, rx):
        self.pairs = rx.reactant_pairs
        self.delta = rx.delta_pairs
        self.kind = rx.kind
        self.is_growth = isinstance(rx.kind, Growth)
        self.xi_over_v = (
            None
            if self.is_growth
            else volume_scaled_constant(rx.kind, rx.order, brn.volume)
        )

    def propensity(self, counts) -> float:
        if self.is_growth:
            return growth_propensity(self.kind, self.pairs, counts)
        return mass_action_propensity(self.xi_over_v, self.pairs, counts)


def simulate(
    brn: Brn,
    initial: Sequence[int],
    stop: StopCondition,
    rng: np.random.Generator,
    record: RecordingPolicy = RecordingPolicy.summary(),
    seed_key: Union[tuple, None] = None,
) -> Trajectory:
    """Run the direct-method SSA until a stop condition fires.

    ``step_count`` counts applied reactions.  Stop precedence within one
    step: absorbed (before drawing), max_time (before applying), species
    extinction, then max_steps.
    """
    n_species = len(brn.species)
    if len(initial) != n_species:
        raise EngineError("initial configuration has wrong dimension")
    counts = [int(x) for x in initial]
    if any(c < 0 for c in counts):
        raise EngineError("initial configuration has negative counts")
    for name in stop.extinct:
        brn.index(name)

    compiled = [_CompiledReaction(brn, rx) for rx in brn.reactions]
    n_rx = len(compiled)
    props = [0.0] * n_rx

    cell_indices = [
        (i, s) for i, s in enumerate(brn.species) if s in brn.cell_types
    ]
    extinct_watch = [
        (brn.index(name), name)
        for name in sorted(stop.extinct, key=brn.index)
    ]

    events = []
    snapshots = []
    full = record.mode == "full"
    if record.mode == "interval":
        grid = _IntervalGrid(record.interval)
    elif record.mode == "times":
        grid = _TimesGrid(record.times)
    else:
        grid = None

    t = 0.0
    step_count = 0
    rx_counts = [0] * n_rx
    first_zero = {}
    for i, name in cell_indices:
        if counts[i] == 0:
            first_zero[name] = 0.0

    termination = None
    for i, name in extinct_watch:
        if counts[i] == 0:
            termination = f"species_extinct:{name}"
            break
    if termination is None and stop.max_steps is not None and stop.max_steps == 0:
        termination = "max_steps"

    while termination is None:
        total = 0.0
        for k in range(n_rx):
            a = compiled[k].propensity(counts)
            props[k] = a
            total += a
        if total <= 0.0:
            termination = "absorbed"
            break

        dt = _draw_waiting_time(rng, total)
        t_next = t + dt
        if stop.max_time is not None and t_next > stop.max_time:
            t = stop.max_time
            termination = "max_time"
            break

        k = _select_reaction(rng, props, total)

        if grid is not None:
            grid.emit_before(t_next, counts, snapshots)

        for i, d in compiled[k].delta:
            counts[i] += d
        t = t_next
        step_count += 1
        rx_counts[k] += 1
        if full:
            events.append(Event(t, k, tuple(counts)))
        for i, d in compiled[k].delta:
            if d < 0 and counts[i] == 0:
                name = brn.species[i]
                if name in brn.cell_types and name not in first_zero:
                    first_zero[name] = t

        for i, name in extinct_watch:
            if counts[i] == 0:
                termination = f"species_extinct:{name}"
                break
        if termination is None and stop.max_steps is not None:
            if step_count >= stop.max_steps:
                termination = "max_steps"

    if grid is not None:
        # an absorbed state persists forever, so its snapshots extend to the
        # recording horizon; other terminations stop the recording at t
        horizon = t
        if termination == "absorbed":
            if stop.max_time is not None:
                horizon = max(t, stop.max_time)
            elif record.mode == "times" and record.times:
                horizon = max(t, record.times[-1])
        grid.emit_through(horizon, counts, snapshots)

    final = np.array(counts, dtype=np.int64)
    return Trajectory(
        brn=brn,
        initial=np.array([int(x) for x in initial], dtype=np.int64),
        events=events,
        snapshots=snapshots,
        termination=termination,
        final=final,
        final_time=t,
        step_count=step_count,
        reaction_counts=np.array(rx_counts, dtype=np.int64),
        first_zero_time=first_zero,
        seed_key=seed_key,
    )


class _IntervalGrid:
    """Snapshot emitter on the grid 0, dt, 2*dt, ... (state is cadlag)."""

    def __init__(self, interval: float):
        self.interval = interval
        self.k = 0

    def _next(self) -> float:
        return self.k * self.interval

    def emit_before(self, t_event: float, counts, out):
        while self._next() < t_event:
            out.append((self._next(), np.array(counts, dtype=np.int64)))
            self.k += 1

    def emit_through(self, t_end: float, counts, out):
        while self._next() <= t_end:
            out.append((self._next(), np.array(counts, dtype=np.int64)))
            self.k += 1


class _TimesGrid:
    """Snapshot emitter at an explicit sorted list of times."""

    def __init__(self, times):
        self.times = times
        self.k = 0

    def emit_before(self, t_event: float, counts, out):
        while self.k < len(self.times) and self.times[self.k] < t_event:
            out.append((self.times[self.k], np.array(counts, dtype=np.int64)))
            self.k += 1

    def emit_through(self, t_end: float, counts, out):
        while self.k < len(self.times) and self.times[self.k] <= t_end:
            out.append((self.times[self.k], np.array(counts, dtype=np.int64)))
            self.k += 1


def embedded_successors(brn: Brn, config: Sequence[int]):
    """Jump-chain transition distribution from ``config``.

    Returns (configuration, probability) pairs with duplicates merged,
    ordered by configuration for determinism.  Raises
    :class:`AbsorbingStateError` when the total propensity is zero.
    """
    props = propensity_vector(brn, config)
    total = float(props.sum())
    if total <= 0.0:
        raise AbsorbingStateError("no applicable reaction in this configuration")
    merged = {}
    for k, a in enumerate(props):
        if a <= 0.0:
            continue
        succ = tuple(int(x) for x in apply_reaction(config, brn.reactions[k]))
        merged[succ] = merged.get(succ, 0.0) + a / total
    return [
        (np.array(c, dtype=np.int64), p) for c, p in sorted(merged.items())
    ]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV with header ``time,<species names...>``, one row per snapshot.

    Under full recording the rows are the initial state followed by the
    state after each event; under interval/times recording they are the grid
    snapshots.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + list(traj.brn.species))
        if traj.events:
            writer.writerow([_fmt(0.0)] + [_fmt(c) for c in traj.initial])
            for ev in traj.events:
                writer.writerow([_fmt(ev.time)] + [_fmt(c) for c in ev.config_after])
        else:
            for t, config in traj.snapshots:
                writer.writerow([_fmt(t)] + [_fmt(c) for c in config])


def write_summary_json(traj: Trajectory, path) -> None:
    """Run summary: termination cause, step counts, final configuration, seed."""
    payload = {
        "termination": traj.termination,
        "step_count": traj.step_count,
        "final_time": traj.final_time,
        "final": {s: int(c) for s, c in zip(traj.brn.species, traj.final)},
        "reaction_counts": {
            (traj.brn.reactions[k].name or f"#{k}"): int(c)
            for k, c in enumerate(traj.reaction_counts)
        },
        "first_zero_time": dict(sorted(traj.first_zero_time.items())),
        "seed": list(traj.seed_key) if traj.seed_key is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
