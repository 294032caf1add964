"""Reduced Markov chains bounding the minority population of a two-species duel.

The reduction has three layers:

1. :class:`PessimisticChain` - a two-species discrete-time chain with no
   resources in which the designated majority never reproduces and the
   minority reproduces at the capped total per-cell rate.  Its transition
   probabilities track the *designated minimum* side: the B side while
   ``b < a``, the A side on ties.
2. :class:`BirthDeathChain` - a scalar birth-death walk on the naturals with
   step-up/step-down probability functions ``p_up``/``q_down`` and an
   absorbing zero.
3. :func:`dominating_birth_death` - the closed-form birth-death chain that
   dominates the pessimistic chain's minimum, certified pointwise by
   :func:`check_dominance` and pathwise by :func:`simulate_coupling`.

Dominance means three inequalities at every pair state ``c`` with minimum
``m``: ``p(c) <= p_up(m)``, ``q(c) >= q_down(m)``, and
``p(c) <= 1 - q_down(m+1)``.  Under them, driving both chains from one
shared uniform stream keeps the pair minimum at or below the scalar walk in
every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "BothZeroError",
    "NonConvergentError",
    "PessimisticChain",
    "BirthDeathChain",
    "DominanceReport",
    "CouplingResult",
    "dominating_birth_death",
    "check_dominance",
    "simulate_mchain",
    "simulate_mchain_batch",
    "expected_extinction_steps",
    "simulate_coupling",
    "simulate_coupling_batch",
]


class BothZeroError(ValueError):
    """Transition probabilities requested at the empty state (0, 0)."""


class NonConvergentError(ArithmeticError):
    """The extinction-step series could not be truncated with a certificate."""


@dataclass(frozen=True)
class PessimisticChain:
    """Two-species annihilation duel without resources.

    Species A starts at ``a0 > b0`` and never reproduces; species B
    reproduces at per-cell rate ``gamma_total``.  Both sides are removed by
    out-flow ``rho_out``, death ``delta``, and pairwise annihilation
    ``alpha`` (one kill per direction per pair).  One discrete step is one
    embedded-jump-chain transition.
    """

    a0: int
    b0: int
    gamma_total: float
    rho_out: float
    delta: float
    alpha: float

    def __post_init__(self):
        if not self.a0 > self.b0 >= 0:
            raise ValueError("requires a0 > b0 >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        for name in ("gamma_total", "rho_out", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def _event_terms(self, a, b):
        """Vectorized event rates: (denominator, up, down, stutter_rate, b_is_min).

        ``up`` is the designated-minimum birth rate (minority birth while
        ``b < a``; zero on ties), ``down`` the designated-minimum removal
        rate, ``stutter_rate`` everything else.  Frozen states (denominator
        zero) report all zeros.
        """
        af = np.asarray(a, dtype=float)
        bf = np.asarray(b, dtype=float)
        loss = self.rho_out + self.delta
        ann = af * bf * self.alpha
        denom = (af + bf) * loss + bf * self.gamma_total + 2.0 * ann
        b_is_min = bf < af
        up = np.where(b_is_min, bf * self.gamma_total, 0.0)
        down = np.where(b_is_min, bf * loss + ann, af * loss + ann)
        stutter = np.where(b_is_min, af * loss + ann, bf * self.gamma_total + bf * loss + ann)
        return denom, up, down, stutter, b_is_min

    def transition_probs(self, a, b):
        """(p, q, stutter) for the designated minimum at state (a, b).

        ``p`` is the probability the designated minimum increases in the
        next step, ``q`` that it decreases; the remainder is a stutter.
        States with no applicable event report (0, 0, 1).  Accepts scalars
        or equal-shaped arrays; raises :class:`BothZeroError` at (0, 0).
        """
        a_arr = np.asarray(a)
        b_arr = np.asarray(b)
        if np.any((a_arr == 0) & (b_arr == 0)):
            raise BothZeroError("state (0, 0) has no designated minimum")
        denom, up, down, stutter, _ = self._event_terms(a_arr, b_arr)
        safe = np.where(denom > 0.0, denom, 1.0)
        p = np.where(denom > 0.0, up / safe, 0.0)
        q = np.where(denom > 0.0, down / safe, 0.0)
        s = np.where(denom > 0.0, stutter / safe, 1.0)
        if p.ndim == 0:
            return float(p), float(q), float(s)
        return p, q, s


@dataclass(frozen=True)
class BirthDeathChain:
    """Scalar birth-death walk given by step-probability functions.

    From state ``m`` the walk moves to ``m+1`` with probability ``p_up(m)``
    and to ``m-1`` with probability ``q_down(m)``; zero is absorbing.  Both
    functions must accept numpy integer arrays and satisfy
    ``p_up(m) + q_down(m) <= 1`` with ``p_up(0) = q_down(0) = 0``
    (see :meth:`probe`; deliberately broken specs are representable for
    testing the dominance checker).
    """

    p_up: Callable
    q_down: Callable
    label: str = ""

    def probe(self, m_max: int = 64) -> list:
        """Spot-check the step-probability invariants on 0..m_max."""
        ms = np.arange(0, m_max + 1)
        p = np.asarray(self.p_up(ms), dtype=float)
        q = np.asarray(self.q_down(ms), dtype=float)
        issues = []
        if p[0] != 0.0:
            issues.append("p_up(0) must be 0")
        if q[0] != 0.0:
            issues.append("q_down(0) must be 0")
        bad = np.nonzero((p < 0) | (q < 0) | (p + q > 1.0 + 1e-12))[0]
        issues.extend(f"invalid step probabilities at m={int(m)}" for m in bad[:5])
        return issues


@dataclass(frozen=True)
class _RationalStep:
    """m*num / (2m*rho + m*gamma + 2m*delta + 2m^2*alpha), optionally capped."""

    gamma_total: float
    rho_out: float
    delta: float
    alpha: float
    use_annihilation: bool
    cap: Union[float, None] = None

    def __call__(self, m):
        mf = np.asarray(m, dtype=float)
        denom = (
            2.0 * mf * self.rho_out
            + mf * self.gamma_total
            + 2.0 * mf * self.delta
            + 2.0 * mf * mf * self.alpha
        )
        num = mf * mf * self.alpha if self.use_annihilation else mf * self.gamma_total
        safe = np.where(denom > 0.0, denom, 1.0)
        val = np.where(denom > 0.0, num / safe, 0.0)
        if self.cap is not None:
            val = np.minimum(val, self.cap)
        if val.ndim == 0:
            return float(val)
        return val


def dominating_birth_death(
    gamma_total: float, rho_out: float, delta: float, alpha: float
) -> BirthDeathChain:
    """Closed-form birth-death chain dominating the pessimistic duel's minimum.

    Step-up probability ``m*gamma / (2m*rho + m*gamma + 2m*delta +
    2m^2*alpha)``, maximized at ``m = 1`` (call the maximum P); step-down
    probability ``min(1 - P, m^2*alpha / <same denominator>)``.  The up
    probability decays like 1/m while the down probability stays bounded
    away from zero, which makes extinction linear-time from any start.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if gamma_total <= 0:
        raise ValueError("gamma_total must be positive")
    if rho_out < 0 or delta < 0:
        raise ValueError("rates must be non-negative")
    p_up = _RationalStep(gamma_total, rho_out, delta, alpha, use_annihilation=False)
    peak = p_up(1)
    q_down = _RationalStep(
        gamma_total, rho_out, delta, alpha, use_annihilation=True, cap=1.0 - peak
    )
    return BirthDeathChain(
        p_up=p_up,
        q_down=q_down,
        label=(
            f"dominating(gamma={gamma_total!r}, rho={rho_out!r}, "
            f"delta={delta!r}, alpha={alpha!r})"
        ),
    )


@dataclass
class DominanceReport:
    """Grid evaluation of the three dominance inequalities.

    Each violation is ``(a, b, condition, lhs, rhs)`` with condition 1 for
    ``p <= p_up(m)``, 2 for ``q >= q_down(m)``, and 3 for
    ``p <= 1 - q_down(m+1)``.  An empty list means dominance holds on the
    whole grid.
    """

    a_max: int
    b_max: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_dominance(
    chain: PessimisticChain, spec: BirthDeathChain, a_max: int, b_max: int
) -> DominanceReport:
    """Evaluate the dominance inequalities at every grid state with a+b >= 1."""
    if a_max < 1 or b_max < 1:
        raise ValueError("grid bounds must be at least 1")
    a_grid, b_grid = np.meshgrid(
        np.arange(a_max + 1), np.arange(b_max + 1), indexing="ij"
    )
    mask = (a_grid + b_grid) >= 1
    a = a_grid[mask]
    b = b_grid[mask]
    p, q, _ = chain.transition_probs(a, b)
    m = np.minimum(a, b)
    p_bound = np.asarray(spec.p_up(m), dtype=float)
    q_bound = np.asarray(spec.q_down(m), dtype=float)
    q_next = np.asarray(spec.q_down(m + 1), dtype=float)

    violations = []

    def collect(bad, condition, lhs, rhs):
        for i in np.nonzero(bad)[0]:
            violations.append(
                (int(a[i]), int(b[i]), condition, float(lhs[i]), float(rhs[i]))
            )

    collect(p > p_bound, 1, p, p_bound)
    collect(q < q_bound, 2, q, q_bound)
    collect(p > 1.0 - q_next, 3, p, 1.0 - q_next)
    violations.sort()
    return DominanceReport(a_max=a_max, b_max=b_max, violations=violations)


def simulate_mchain(
    spec: BirthDeathChain, m0: int, rng: np.random.Generator, max_steps: int
):
    """Walk the birth-death chain until absorption at 0.

    Returns the number of steps taken (stutters included), or None when the
    walk is still positive after ``max_steps`` steps.
    """
    m = int(m0)
    if m < 0:
        raise ValueError("initial state must be non-negative")
    steps = 0
    while m > 0 and steps < max_steps:
        u = rng.random()
        if u < float(spec.p_up(m)):
            m += 1
        elif u >= 1.0 - float(spec.q_down(m)):
            m -= 1
        steps += 1
    return steps if m == 0 else None


def simulate_mchain_batch(
    spec: BirthDeathChain,
    m0: int,
    runs: int,
    rng: np.random.Generator,
    max_steps: int,
) -> np.ndarray:
    """Vectorized lockstep version of :func:`simulate_mchain`.

    Returns an int64 array of steps-to-absorption per run, with -1 marking
    runs still positive after ``max_steps``.
    """
    m = np.full(runs, int(m0), dtype=np.int64)
    steps = np.zeros(runs, dtype=np.int64)
    active = m > 0
    it = 0
    while active.any() and it < max_steps:
        u = rng.random(runs)
        p = np.asarray(spec.p_up(m), dtype=float)
        q = np.asarray(spec.q_down(m), dtype=float)
        up = active & (u < p)
        down = active & (u >= 1.0 - q)
        m[up] += 1
        m[down] -= 1
        steps[active] += 1
        active &= m > 0
        it += 1
    return np.where(m == 0, steps, np.int64(-1))


def expected_extinction_steps(
    spec: BirthDeathChain, m_init: int, tol: float = 1e-9
) -> float:
    """Expected steps to absorption from ``m_init``, by certified series truncation.

    Uses the standard birth-death hitting-time series: summed over levels
    j = 1..m_init, the inner series has first term 1/q_down(j) and advances
    by the factor p_up(k)/q_down(k+1).  Each inner series is truncated once
    a geometric tail bound (ratio = the suffix supremum of those factors,
    assumed not to increase beyond the probe range) drops below ``tol``
    relative to the partial sum.  Raises :class:`NonConvergentError` when no
    such certificate exists on the probe range.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    m_init = int(m_init)
    if m_init < 0:
        raise ValueError("initial state must be non-negative")
    if m_init == 0:
        return 0.0

    probe = max(4 * m_init, 4096)
    ms = np.arange(1, probe + 1)
    p = np.asarray(spec.p_up(ms), dtype=float)
    q = np.asarray(spec.q_down(ms), dtype=float)
    if np.any(q <= 0.0):
        raise NonConvergentError(
            "q_down is not bounded away from zero on the probe range"
        )
    if np.any(p < 0.0):
        raise ValueError("p_up must be non-negative")

    # ratio[k-1] = p_up(k) / q_down(k+1): the advance factor of the inner series
    ratio = np.empty(probe, dtype=float)
    ratio[: probe - 1] = p[: probe - 1] / q[1:]
    ratio[probe - 1] = ratio[probe - 2]
    sup_tail = np.maximum.accumulate(ratio[::-1])[::-1]

    total = 0.0
    for j in range(1, m_init + 1):
        term = 1.0 / q[j - 1]
        level_sum = term
        k = j
        while True:
            if k > probe - 1:
                raise NonConvergentError(
                    f"inner series at level {j} lacks a tail certificate "
                    f"within the probe range ({probe})"
                )
            term *= ratio[k - 1]
            if term == 0.0:
                break
            if term > 1e250:
                raise NonConvergentError("inner-series terms diverge")
            level_sum += term
            rho = sup_tail[k]
            if rho < 1.0 and term * rho / (1.0 - rho) <= tol * level_sum:
                break
            k += 1
        total += level_sum
    return total


@dataclass
class CouplingResult:
    """Paths of one coupled run and the pathwise-domination verdict."""

    min_path: np.ndarray
    m_path: np.ndarray
    ok: bool


def simulate_coupling(
    chain: PessimisticChain,
    spec: BirthDeathChain,
    rng: np.random.Generator,
    horizon: int,
    m0: Union[int, None] = None,
) -> CouplingResult:
    """Drive the pair chain and the scalar chain from one uniform stream.

    Per step one shared uniform selects the branch on both sides: values in
    ``[0, p)`` increase the (designated) minimum, values in ``[1-q, 1)``
    decrease it, the rest stutter.  Within a stutter the pair side samples
    the remaining events proportionally to their rates (branches whose
    conditioning event has probability zero are unreachable, since their
    selection interval is empty).  ``ok`` reports whether
    ``min(a, b) <= m`` held at every step.

    Identical in distribution and draw layout to
    :func:`simulate_coupling_batch` with one run.
    """
    a, b = chain.a0, chain.b0
    m = chain.b0 if m0 is None else int(m0)
    if m < min(a, b):
        raise ValueError("the scalar chain must start at or above the pair minimum")
    loss = chain.rho_out + chain.delta
    min_path = np.empty(horizon + 1, dtype=np.int64)
    m_path = np.empty(horizon + 1, dtype=np.int64)
    min_path[0] = min(a, b)
    m_path[0] = m
    ok = True

    for k in range(1, horizon + 1):
        xi = rng.random()
        aux = rng.random()
        if a == 0 and b == 0:
            p = q = 0.0
        else:
            p, q, _ = chain.transition_probs(a, b)

        if xi < p:
            b += 1  # minority birth: only reachable while b < a
        elif q > 0.0 and xi >= 1.0 - q:
            if b < a:
                b -= 1
            else:
                a -= 1
        else:
            if b < a:
                if a * loss + a * b * chain.alpha > 0.0:
                    a -= 1
            else:
                birth = b * chain.gamma_total
                removal = b * loss + a * b * chain.alpha
                tot = birth + removal
                if tot > 0.0:
                    if aux * tot < birth:
                        b += 1
                    else:
                        b -= 1

        if xi < float(spec.p_up(m)):
            m += 1
        elif m > 0 and xi >= 1.0 - float(spec.q_down(m)):
            m -= 1

        min_path[k] = min(a, b)
        m_path[k] = m
        if min_path[k] > m_path[k]:
            ok = False
    return CouplingResult(min_path=min_path, m_path=m_path, ok=ok)


def simulate_coupling_batch(
    chain: PessimisticChain,
    spec: BirthDeathChain,
    runs: int,
    rng: np.random.Generator,
    horizon: int,
    m0: Union[int, None] = None,
):
    """Vectorized coupled runs advanced in lockstep.

    Returns ``(ok, a, b, m)``: per-run domination verdicts over the whole
    horizon and the final states of both sides.
    """
    m_start = chain.b0 if m0 is None else int(m0)
    if m_start < chain.b0:
        raise ValueError("the scalar chain must start at or above the pair minimum")
    a = np.full(runs, chain.a0, dtype=np.int64)
    b = np.full(runs, chain.b0, dtype=np.int64)
    m = np.full(runs, m_start, dtype=np.int64)
    ok = np.ones(runs, dtype=bool)
    gamma = chain.gamma_total
    loss = chain.rho_out + chain.delta
    alpha = chain.alpha

    for _ in range(horizon):
        xi = rng.random(runs)
        aux = rng.random(runs)

        af = a.astype(float)
        bf = b.astype(float)
        ann = af * bf * alpha
        denom = (af + bf) * loss + bf * gamma + 2.0 * ann
        b_is_min = b < a
        safe = np.where(denom > 0.0, denom, 1.0)
        p = np.where((denom > 0.0) & b_is_min, bf * gamma / safe, 0.0)
        down_rate = np.where(b_is_min, bf * loss + ann, af * loss + ann)
        q = np.where(denom > 0.0, down_rate / safe, 0.0)

        up = xi < p
        down = (q > 0.0) & (xi >= 1.0 - q)
        stutter = ~(up | down)

        da = np.zeros(runs, dtype=np.int64)
        db = np.zeros(runs, dtype=np.int64)
        db[up] += 1
        db[down & b_is_min] -= 1
        da[down & ~b_is_min] -= 1

        st_rate = af * loss + ann
        da[stutter & b_is_min & (st_rate > 0.0)] -= 1
        birth = bf * gamma
        removal = bf * loss + ann
        tot = birth + removal
        active = stutter & ~b_is_min & (tot > 0.0)
        go_up = active & (aux * np.where(tot > 0.0, tot, 1.0) < birth)
        db[go_up] += 1
        db[active & ~go_up] -= 1

        a += da
        b += db

        pu = np.asarray(spec.p_up(m), dtype=float)
        qd = np.asarray(spec.q_down(m), dtype=float)
        m[xi < pu] += 1
        m[(m > 0) & (xi >= 1.0 - qd)] -= 1

        ok &= np.minimum(a, b) <= m
    return ok, a, b, m
