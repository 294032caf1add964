"""Consensus-probability analytics and experiment drivers.

Three kinds of answers about who wins a two-species competition:

* exact - :func:`exact_naive_win_prob` solves the absorbing-chain linear
  system of the no-interaction protocol (which collapses to the closed form
  first-count / total for symmetric extinction-forcing rates);
* bounds - :func:`azuma_bound` evaluates the concentration bound
  ``exp(-gap^2 / (2 steps))`` on the majority losing;
* Monte Carlo - :func:`estimate_consensus_prob` and :func:`gap_sweep` run
  seeded replicate batches through the engine, optionally across a process
  pool, with results merged deterministically by replicate index.

:func:`reproduce_figure` emits the bundled dataset families (single
trajectories and s-curve sweeps for the kill and no-interaction protocols)
as CSV files at a chosen population scale.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .engine import RecordingPolicy, RngStream, StopCondition, simulate, write_summary_json, write_trajectory_csv
from .protocols import (
    AnnihilationParams,
    OutcomeKind,
    TwoResourceParams,
    build_protocol,
    classify_outcome,
    reference_params,
)

__all__ = [
    "NotAbsorbingError",
    "UnknownFigureError",
    "NaiveChainSpec",
    "SweepConfig",
    "SweepRow",
    "EstimateResult",
    "exact_naive_win_table",
    "exact_naive_win_prob",
    "wilson_interval",
    "estimate_consensus_prob",
    "azuma_bound",
    "gap_sweep",
    "write_sweep_csv",
    "reproduce_figure",
    "FIGURE_IDS",
]

SOLVER_TOLERANCE = 1e-10


class NotAbsorbingError(ArithmeticError):
    """Extinction is not almost sure under the given rate specification."""


class UnknownFigureError(ValueError):
    """Requested dataset id is not one of the bundled figures."""


RateSpec = Union[float, Callable[[int, int], float]]


@dataclass(frozen=True)
class NaiveChainSpec:
    """Birth-death competition of two species without direct interaction.

    Rates are per individual and may depend on the current pair of counts
    (constants are accepted as a shorthand).  ``capacity`` truncates the
    state space: births are disabled once the total population reaches it,
    which makes extinction almost sure whenever death rates are positive.
    """

    birth_a: RateSpec
    birth_b: RateSpec
    death_a: RateSpec
    death_b: RateSpec
    capacity: int
    symmetric: bool = False

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")

    @classmethod
    def symmetric_spec(cls, birth: RateSpec, death: RateSpec, capacity: int) -> "NaiveChainSpec":
        return cls(birth, birth, death, death, capacity, symmetric=True)


def _rate(spec: RateSpec, a: int, b: int) -> float:
    value = spec(a, b) if callable(spec) else float(spec)
    if value < 0:
        raise ValueError(f"negative rate {value!r} at state ({a}, {b})")
    return value


def exact_naive_win_table(spec: NaiveChainSpec) -> np.ndarray:
    """Win probability of species A (B goes extinct first) at every state.

    Returns a (capacity+1) x (capacity+1) array indexed by the counts,
    with boundaries ``table[a, 0] = 1`` and ``table[0, b] = 0`` and NaN at
    (0, 0) and outside the capacity simplex.  Interior states are solved by
    dynamic programming when the spec is birth-free and by a sparse linear
    solve otherwise; the recurrence residual is checked to
    ``SOLVER_TOLERANCE``.
    """
    n = spec.capacity
    table = np.full((n + 1, n + 1), np.nan)
    table[1:, 0] = 1.0
    table[0, 1:] = 0.0

    interior = [(a, b) for s in range(2, n + 1) for a in range(1, s) for b in (s - a,)]
    rates = {}
    any_birth = False
    for a, b in interior:
        birth_a = _rate(spec.birth_a, a, b) * a if a + b < n else 0.0
        birth_b = _rate(spec.birth_b, a, b) * b if a + b < n else 0.0
        death_a = _rate(spec.death_a, a, b) * a
        death_b = _rate(spec.death_b, a, b) * b
        total = birth_a + birth_b + death_a + death_b
        if total <= 0.0:
            raise NotAbsorbingError(
                f"state ({a}, {b}) has no outgoing transition; extinction is not reachable"
            )
        rates[(a, b)] = (birth_a, birth_b, death_a, death_b, total)
        any_birth = any_birth or birth_a > 0.0 or birth_b > 0.0

    if not any_birth:
        for a, b in interior:  # already ordered by increasing a+b
            _, _, death_a, death_b, total = rates[(a, b)]
            table[a, b] = (death_a * table[a - 1, b] + death_b * table[a, b - 1]) / total
    else:
        index = {state: i for i, state in enumerate(interior)}
        rows, cols, vals = [], [], []
        rhs = np.zeros(len(interior))
        for (a, b), i in index.items():
            birth_a, birth_b, death_a, death_b, total = rates[(a, b)]
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            for rate, nbr in (
                (birth_a, (a + 1, b)),
                (birth_b, (a, b + 1)),
                (death_a, (a - 1, b)),
                (death_b, (a, b - 1)),
            ):
                if rate == 0.0:
                    continue
                if nbr[1] == 0:
                    rhs[i] += rate / total  # absorbed with A the winner
                elif nbr[0] == 0:
                    pass  # absorbed with A extinct
                else:
                    rows.append(i)
                    cols.append(index[nbr])
                    vals.append(-rate / total)
        matrix = scipy.sparse.csr_matrix(
            (vals, (rows, cols)), shape=(len(interior), len(interior))
        )
        solution = scipy.sparse.linalg.spsolve(matrix, rhs)
        if not np.all(np.isfinite(solution)):
            raise NotAbsorbingError("absorbing-chain system is singular")
        residual = np.abs(matrix @ solution - rhs).max() if len(interior) else 0.0
        if residual > SOLVER_TOLERANCE:
            raise ArithmeticError(f"solver residual {residual!r} above tolerance")
        for (a, b), i in index.items():
            table[a, b] = solution[i]

    return table


def exact_naive_win_prob(spec: NaiveChainSpec, a: int, b: int) -> float:
    """Probability that species B goes extinct before species A from (a, b)."""
    if a < 0 or b < 0 or a + b < 1:
        raise ValueError("need non-negative counts with a + b >= 1")
    if a + b > spec.capacity:
        raise ValueError("state outside the capacity simplex")
    return float(exact_naive_win_table(spec)[a, b])


def azuma_bound(gap: float, steps: int) -> float:
    """Concentration bound exp(-gap^2 / (2 steps)) on the majority losing.

    ``steps`` is the number of count-changing transitions until consensus
    (each moves the gap by at most one), ``gap`` the initial count
    difference.  Decreasing in the gap and increasing in the steps.
    """
    if gap < 0:
        raise ValueError("gap must be non-negative")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    return math.exp(-(gap * gap) / (2.0 * steps))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion (95% by default)."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes out of range")
    phat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (phat + z2 / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z2 / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class EstimateResult:
    """Monte Carlo consensus-probability estimate with a Wilson interval."""

    p_hat: float
    ci_lo: float
    ci_hi: float
    replicates: int
    tally: dict


def _consensus_job(args):
    brn, initial, majority, stop, seed, rep = args
    gen = RngStream(seed).generator(rep)
    traj = simulate(brn, initial, stop, gen, RecordingPolicy.summary(), seed_key=(seed, rep))
    return classify_outcome(traj, majority).kind.value


def _run_jobs(worker, jobs, threads):
    if threads and threads > 1 and len(jobs) > 1:
        chunk = max(1, len(jobs) // (threads * 4))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, jobs, chunksize=chunk))
    return [worker(job) for job in jobs]


def estimate_consensus_prob(
    brn,
    initial: Sequence[int],
    majority: str,
    stop: StopCondition,
    replicates: int,
    seed: int,
    threads: int = 1,
) -> EstimateResult:
    """Fraction of seeded replicates in which the majority species wins.

    Deterministic for a given (seed, replicates) pair at any thread count:
    replicate ``i`` always runs on substream ``(seed, i)`` and tallies are
    merged by index.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    init = tuple(int(x) for x in initial)
    jobs = [(brn, init, majority, stop, seed, rep) for rep in range(replicates)]
    kinds = _run_jobs(_consensus_job, jobs, threads)
    tally = {kind.value: 0 for kind in OutcomeKind}
    for k in kinds:
        tally[k] += 1
    wins = tally[OutcomeKind.MAJORITY_WINS.value]
    lo, hi = wilson_interval(wins, replicates)
    return EstimateResult(
        p_hat=wins / replicates,
        ci_lo=lo,
        ci_hi=hi,
        replicates=replicates,
        tally=tally,
    )


@dataclass(frozen=True)
class SweepConfig:
    """A grid of initial A-fractions run to fixed snapshot times.

    ``total`` is the initial A+B population; resources default to the
    protocol's reference counts.  ``replicates`` seeded runs per fraction.
    """

    protocol: str
    params: TwoResourceParams
    ann: Union[AnnihilationParams, None]
    total: int
    fractions: tuple
    times: tuple
    replicates: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "times", tuple(sorted(float(t) for t in self.times)))
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.fractions:
            raise ValueError("need at least one initial fraction")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in [0, 1]")
        if not self.times or self.times[0] <= 0:
            raise ValueError("need positive snapshot times")
        if self.total < 1:
            raise ValueError("total population must be positive")


@dataclass(frozen=True)
class SweepRow:
    fraction_init: float
    time_min: float
    mean_frac_a: float
    min_frac_a: float
    max_frac_a: float
    replicates: int


def _sweep_job(args):
    config, fraction, rep_index, job_index = args
    brn = build_protocol(config.protocol, config.params, config.ann)
    a0 = int(round(fraction * config.total))
    b0 = config.total - a0
    initial = brn.configuration(
        {
            "A": a0,
            "B": b0,
            "R1": int(round(config.params.r1_ref)),
            "R2": int(round(config.params.r2_ref)),
        }
    )
    stop = StopCondition(max_time=config.times[-1])
    gen = RngStream(config.seed).generator(job_index)
    traj = simulate(
        brn, initial, stop, gen, RecordingPolicy.at(config.times), (config.seed, job_index)
    )
    ia, ib = brn.index("A"), brn.index("B")
    by_time = {t: cfg for t, cfg in traj.snapshots}
    out = []
    for t in config.times:
        cfg = by_time[t]
        total = int(cfg[ia]) + int(cfg[ib])
        out.append(float(cfg[ia]) / total if total else math.nan)
    return out


def gap_sweep(config: SweepConfig, threads: int = 1):
    """A-fraction statistics over the sweep grid.

    One :class:`SweepRow` per (initial fraction, snapshot time) with the
    mean/min/max of A/(A+B) over replicates; snapshots where both
    populations are extinct are excluded from the aggregates (a row is NaN
    only if that happened in every replicate).
    """
    jobs = []
    job_index = 0
    for fraction in config.fractions:
        for rep in range(config.replicates):
            jobs.append((config, fraction, rep, job_index))
            job_index += 1
    results = _run_jobs(_sweep_job, jobs, threads)

    rows = []
    per_point = config.replicates
    for fi, fraction in enumerate(config.fractions):
        block = results[fi * per_point : (fi + 1) * per_point]
        for ti, t in enumerate(config.times):
            values = np.array([rep[ti] for rep in block])
            values = values[~np.isnan(values)]
            if values.size:
                mean, lo, hi = float(values.mean()), float(values.min()), float(values.max())
            else:
                mean = lo = hi = math.nan
            rows.append(SweepRow(fraction, t, mean, lo, hi, per_point))
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["fraction_init", "time_min", "mean_frac_A", "min_frac_A", "max_frac_A", "replicates"]
        )
        for row in rows:
            writer.writerow(
                [
                    repr(row.fraction_init),
                    repr(row.time_min),
                    repr(row.mean_frac_a),
                    repr(row.min_frac_a),
                    repr(row.max_frac_a),
                    row.replicates,
                ]
            )


# Bundled dataset families.  1: single kill-protocol trajectory over one
# simulated day; 2: kill-protocol s-curve at 60/120 min; 3: zoomed s-curve
# around the balanced start; 4: no-interaction s-curve after one day;
# 5: single no-interaction trajectory over one day.
FIGURE_IDS = (1, 2, 3, 4, 5)
_DAY = 1440.0
_REF_A, _REF_B = 151_000, 149_000


def _figure_sweep_config(figure_id: int, scale: float, seed: int) -> SweepConfig:
    coarse = tuple(i / 20 for i in range(21))
    zoom = tuple(0.45 + i / 100 for i in range(11))
    if figure_id == 2:
        protocol, fractions, times = "conjugation", coarse, (60.0, 120.0)
    elif figure_id == 3:
        protocol, fractions, times = "conjugation", zoom, (60.0, 120.0)
    else:
        protocol, fractions, times = "naive", coarse, (_DAY,)
    params, ann, _ = reference_params(scale, intermediate=True)
    return SweepConfig(
        protocol=protocol,
        params=params,
        ann=ann if protocol == "conjugation" else None,
        total=int(round(300_000 * scale)),
        fractions=fractions,
        times=times,
        replicates=10,
        seed=seed,
    )


def reproduce_figure(
    figure_id: int,
    scale: float = 1.0,
    out_dir="figures",
    seed: int = 20240801,
    threads: int = 1,
):
    """Write the CSV dataset of one bundled figure at a population scale.

    Scaling multiplies every initial count and the volume by ``scale``,
    preserving concentrations and per-cell rates.  Returns the written file
    paths; a sidecar manifest documents the seed and scale.
    """
    if figure_id not in FIGURE_IDS:
        raise UnknownFigureError(f"figure id must be one of {FIGURE_IDS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if figure_id in (1, 5):
        protocol = "conjugation" if figure_id == 1 else "naive"
        params, ann, resources = reference_params(scale, intermediate=True)
        brn = build_protocol(protocol, params, ann if protocol == "conjugation" else None)
        initial = brn.configuration(
            dict(resources, A=int(round(_REF_A * scale)), B=int(round(_REF_B * scale)))
        )
        gen = RngStream(seed).generator(0)
        traj = simulate(
            brn,
            initial,
            StopCondition(max_time=_DAY),
            gen,
            RecordingPolicy.every(1.0),
            (seed, 0),
        )
        csv_path = out / f"fig{figure_id}_trajectory.csv"
        write_trajectory_csv(traj, csv_path)
        written.append(csv_path)
        summary_path = out / f"fig{figure_id}_summary.json"
        write_summary_json(traj, summary_path)
        written.append(summary_path)
    else:
        config = _figure_sweep_config(figure_id, scale, seed)
        rows = gap_sweep(config, threads=threads)
        csv_path = out / f"fig{figure_id}_sweep.csv"
        write_sweep_csv(rows, csv_path)
        written.append(csv_path)

    manifest_path = out / f"fig{figure_id}_manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump({"figure": figure_id, "scale": scale, "seed": seed}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(manifest_path)
    return [str(p) for p in written]
