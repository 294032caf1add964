"""Builders for two-resource competition protocols and outcome classification.

The protocols share a common chassis: two consumable resources R1/R2 with
optional in/out-flow, and per cell type two resource-limited growth
reactions, individual death, and cell out-flow.  On top of that chassis:

* ``naive``: no direct interaction; competition only through the shared
  resources.
* ``mutual_annihilation``: symmetric bimolecular kill reactions
  ``A+B -> A`` and ``A+B -> B`` at rate constant alpha.
* ``conjugation``: the kill is mediated by a short-lived intermediate type
  AB (``A+B -> A+AB``, ``A+B -> AB+B``) that dies at rate alpha_prime and
  does not feed, grow, or conjugate further.

Zero-rate reactions are elided from the built network (the elisions are
recorded in ``Brn.notes``).  Rate-constant units follow the convention
that second-order constants are divided by the volume (in ml), so the
effective per-pair interaction rate is ``alpha / volume``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence, Union

from .brn import (
    Brn,
    BrnError,
    Growth,
    LinearGrowthRate,
    MassAction,
    Reaction,
    normalize_order_zero,
)
from .engine import Trajectory

__all__ = [
    "TwoResourceParams",
    "AnnihilationParams",
    "OutcomeKind",
    "Outcome",
    "UnknownSpeciesError",
    "build_two_resource",
    "build_naive",
    "build_mutual_annihilation",
    "build_conjugation_variant",
    "build_protocol",
    "classify_outcome",
    "reference_params",
    "REFERENCE_TOTAL",
    "PROTOCOL_NAMES",
]

PROTOCOL_NAMES = ("naive", "mutual_annihilation", "conjugation")


class UnknownSpeciesError(BrnError):
    """A referenced species does not exist in the network."""


@dataclass(frozen=True)
class TwoResourceParams:
    """Rate parameters of the two-resource chassis.

    ``gamma1_max``/``gamma2_max`` are per-cell growth rates at the reference
    resource counts ``r1_ref``/``r2_ref`` (the rate scales linearly with the
    resource count relative to its reference).  ``rho1_in``/``rho2_in`` are
    resource in-flow rates in counts per minute, ``rho_out`` the shared
    resource/cell out-flow constant, ``delta`` the per-cell death constant,
    and ``volume`` the culture volume in ml.

    In a closed system (no in-flow) resources only decrease, so the growth
    caps default to the rates at the reference counts; open systems must
    supply explicit ``gamma_caps``.
    """

    gamma1_max: float
    gamma2_max: float
    r1_ref: float
    r2_ref: float
    delta: float
    rho1_in: float = 0.0
    rho2_in: float = 0.0
    rho_out: float = 0.0
    volume: float = 1.0
    gamma_caps: Union[tuple, None] = None

    def __post_init__(self):
        for name in ("gamma1_max", "gamma2_max", "delta", "rho1_in", "rho2_in", "rho_out"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.r1_ref <= 0 or self.r2_ref <= 0:
            raise ValueError("resource reference counts must be positive")
        if self.volume <= 0:
            raise ValueError("volume must be positive")
        open_system = self.rho1_in > 0 or self.rho2_in > 0
        if open_system and self.gamma_caps is None:
            raise ValueError(
                "explicit gamma_caps required when resources flow in "
                "(growth rates are no longer bounded by their reference values)"
            )

    def caps(self) -> tuple:
        if self.gamma_caps is not None:
            return self.gamma_caps
        return (self.gamma1_max, self.gamma2_max)

    def gamma_total_bound(self) -> float:
        """Upper bound on the summed per-cell birth rate, for chain analyses."""
        c1, c2 = self.caps()
        return c1 + c2


@dataclass(frozen=True)
class AnnihilationParams:
    """Direct-interaction parameters.

    ``alpha`` is the pairwise kill/conjugation rate constant;
    ``alpha_prime`` the death constant of the intermediate type when
    ``intermediate`` is set.
    """

    alpha: float
    alpha_prime: Union[float, None] = None
    intermediate: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.intermediate and not (self.alpha_prime and self.alpha_prime > 0):
            raise ValueError("alpha_prime must be positive for the intermediate variant")


class OutcomeKind(str, enum.Enum):
    MAJORITY_WINS = "majority_wins"
    MINORITY_WINS = "minority_wins"
    BOTH_EXTINCT = "both_extinct"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class Outcome:
    """Classification of a finished run.

    ``consensus_time`` is the simulated time at which the losing cell type
    reached zero (for both-extinct, the time the later one did); None on
    timeout.  ``steps`` is the run's applied-reaction count.
    """

    kind: OutcomeKind
    consensus_time: Union[float, None]
    steps: int


def _reaction(species, reactants, products, kind, name) -> Reaction:
    idx = {s: i for i, s in enumerate(species)}
    r = [0] * len(species)
    p = [0] * len(species)
    for s, c in reactants.items():
        r[idx[s]] = c
    for s, c in products.items():
        p[idx[s]] = c
    return Reaction(tuple(r), tuple(p), kind, name)


def build_two_resource(params: TwoResourceParams, cell_types: Sequence[str]) -> Brn:
    """Two-resource chassis for the given cell types.

    With all rates positive this yields 4 resource reactions plus 4 per cell
    type (two growth, death, cell out-flow); in-flows are normalized onto a
    dummy species.  Zero-rate reactions are elided and noted.
    """
    cells = tuple(cell_types)
    if not cells:
        raise ValueError("at least one cell type required")
    if len(set(cells)) != len(cells):
        raise ValueError("duplicate cell types")
    species = ("R1", "R2") + cells
    idx = {s: i for i, s in enumerate(species)}
    cap1, cap2 = params.caps()

    reactions = []
    notes = []

    def add(reactants, products, kind, name):
        reactions.append(_reaction(species, reactants, products, kind, name))

    def elide(name):
        notes.append(f"elided zero-rate reaction: {name}")

    if params.rho1_in > 0:
        add({}, {"R1": 1}, MassAction(params.rho1_in), "inflow:R1")
    else:
        elide("inflow:R1")
    if params.rho2_in > 0:
        add({}, {"R2": 1}, MassAction(params.rho2_in), "inflow:R2")
    else:
        elide("inflow:R2")
    if params.rho_out > 0:
        add({"R1": 1}, {}, MassAction(params.rho_out), "outflow:R1")
        add({"R2": 1}, {}, MassAction(params.rho_out), "outflow:R2")
    else:
        elide("outflow:R1")
        elide("outflow:R2")

    for cell in cells:
        if params.gamma1_max > 0:
            add(
                {cell: 1, "R1": 1},
                {cell: 2},
                Growth(idx[cell], LinearGrowthRate(idx["R1"], params.gamma1_max, params.r1_ref), cap1),
                f"growth:{cell}:R1",
            )
        else:
            elide(f"growth:{cell}:R1")
        if params.gamma2_max > 0:
            add(
                {cell: 1, "R2": 1},
                {cell: 2},
                Growth(idx[cell], LinearGrowthRate(idx["R2"], params.gamma2_max, params.r2_ref), cap2),
                f"growth:{cell}:R2",
            )
        else:
            elide(f"growth:{cell}:R2")
        if params.delta > 0:
            add({cell: 1}, {}, MassAction(params.delta), f"death:{cell}")
        else:
            elide(f"death:{cell}")
        if params.rho_out > 0:
            add({cell: 1}, {}, MassAction(params.rho_out), f"outflow:{cell}")
        else:
            elide(f"outflow:{cell}")

    brn = Brn(
        species=species,
        cell_types=frozenset(cells),
        reactions=tuple(reactions),
        volume=params.volume,
        notes=tuple(notes),
    )
    return normalize_order_zero(brn)


def build_naive(params: TwoResourceParams) -> Brn:
    """Two competing cell types with no direct interaction."""
    return build_two_resource(params, ("A", "B"))


def build_mutual_annihilation(params: TwoResourceParams, ann: AnnihilationParams) -> Brn:
    """Naive chassis plus the symmetric kill reactions A+B -> A and A+B -> B."""
    if ann.intermediate:
        raise ValueError("use build_conjugation_variant for the intermediate type")
    base = build_naive(params)
    species = base.species
    reactions = list(base.reactions)
    notes = list(base.notes)
    if ann.alpha > 0:
        reactions.append(
            _reaction(species, {"A": 1, "B": 1}, {"A": 1}, MassAction(ann.alpha), "annihilate:keep:A")
        )
        reactions.append(
            _reaction(species, {"A": 1, "B": 1}, {"B": 1}, MassAction(ann.alpha), "annihilate:keep:B")
        )
    else:
        notes.append("elided zero-rate reaction: annihilate:keep:A")
        notes.append("elided zero-rate reaction: annihilate:keep:B")
    return Brn(
        species=species,
        cell_types=base.cell_types,
        reactions=tuple(reactions),
        volume=base.volume,
        dummy=base.dummy,
        notes=tuple(notes),
    )


def build_conjugation_variant(params: TwoResourceParams, ann: AnnihilationParams) -> Brn:
    """Kill mediated by a short-lived intermediate type AB.

    A+B -> A+AB and A+B -> AB+B at rate alpha; the AB intermediate only
    dies, at rate alpha_prime (it does not feed, grow, or conjugate).
    """
    if not ann.intermediate:
        raise ValueError("conjugation variant requires intermediate=True")
    base = build_naive(params)
    species = base.species + ("AB",)
    reactions = []
    for rx in base.reactions:
        reactions.append(Reaction(rx.reactants + (0,), rx.products + (0,), rx.kind, rx.name))
    notes = list(base.notes)
    if ann.alpha > 0:
        reactions.append(
            _reaction(species, {"A": 1, "B": 1}, {"A": 1, "AB": 1}, MassAction(ann.alpha), "conjugate:keep:A")
        )
        reactions.append(
            _reaction(species, {"A": 1, "B": 1}, {"AB": 1, "B": 1}, MassAction(ann.alpha), "conjugate:keep:B")
        )
    else:
        notes.append("elided zero-rate reaction: conjugate:keep:A")
        notes.append("elided zero-rate reaction: conjugate:keep:B")
    reactions.append(_reaction(species, {"AB": 1}, {}, MassAction(ann.alpha_prime), "death:AB"))
    return Brn(
        species=species,
        cell_types=base.cell_types | {"AB"},
        reactions=tuple(reactions),
        volume=base.volume,
        dummy=base.dummy,
        notes=tuple(notes),
    )


def build_protocol(name: str, params: TwoResourceParams, ann: Union[AnnihilationParams, None] = None) -> Brn:
    """Dispatch on a protocol name from a config file."""
    if name == "naive":
        return build_naive(params)
    if name == "mutual_annihilation":
        if ann is None:
            raise ValueError("mutual_annihilation requires annihilation parameters")
        return build_mutual_annihilation(params, ann)
    if name == "conjugation":
        if ann is None:
            raise ValueError("conjugation requires annihilation parameters")
        return build_conjugation_variant(params, ann)
    raise ValueError(f"unknown protocol {name!r}; expected one of {PROTOCOL_NAMES}")


def classify_outcome(trajectory: Trajectory, majority: str) -> Outcome:
    """Classify a finished run of a two-type protocol.

    The initially-larger type is named by ``majority``; consensus means the
    other type's count reached zero.  AB intermediates are ignored: they
    cannot reproduce, so a surviving AB population is doomed regardless.
    """
    brn = trajectory.brn
    competitors = sorted(brn.cell_types - {"AB"})
    if majority not in competitors:
        raise UnknownSpeciesError(
            f"majority species {majority!r} not among competitors {competitors}"
        )
    if len(competitors) != 2:
        raise UnknownSpeciesError(
            f"outcome classification needs exactly two competitors, got {competitors}"
        )
    minority = competitors[0] if competitors[1] == majority else competitors[1]
    maj_count = int(trajectory.final[brn.index(majority)])
    min_count = int(trajectory.final[brn.index(minority)])
    steps = trajectory.step_count

    if maj_count == 0 and min_count == 0:
        time = max(trajectory.first_zero_time.get(s, trajectory.final_time) for s in competitors)
        return Outcome(OutcomeKind.BOTH_EXTINCT, time, steps)
    if min_count == 0:
        return Outcome(OutcomeKind.MAJORITY_WINS, trajectory.first_zero_time.get(minority), steps)
    if maj_count == 0:
        return Outcome(OutcomeKind.MINORITY_WINS, trajectory.first_zero_time.get(majority), steps)
    return Outcome(OutcomeKind.TIMEOUT, None, steps)


# Default culture parameterization used by the bundled configs and dataset
# generators: a closed 1 ul system, 20 min doubling time on R1, 8% of that
# rate on R2, death rate 1e-4 per min, conjugative kill at 5e-10 ml/min with
# a 10 min intermediate lifetime.  Initial populations total 3e5 cells.
REFERENCE_TOTAL = 300_000
_REFERENCE = {
    "delta": 1e-4,
    "gamma1_max": 1.0 / 20.0,
    "gamma2_max": 1.0 / 20.0 * 0.08,
    "r1_per_ml": 2e6,
    "r2_per_ml": 1e8,
    "alpha": 5e-10,
    "alpha_prime": 1e-1,
    "volume_ml": 1e-3,
}


def reference_params(scale: float = 1.0, intermediate: bool = True):
    """Reference culture at a population scale in (0, 1].

    Scaling multiplies the volume and every initial count by ``scale``,
    which preserves all concentrations and per-cell rates; per-pair
    interaction rates (alpha / volume) speed up by 1/scale so the dynamics
    match the full-size system on the same time axis.

    Returns ``(TwoResourceParams, AnnihilationParams, initial_counts)``
    where the initial counts cover the resources only; callers add A and B.
    """
    if not 0 < scale <= 1:
        raise ValueError("scale must be in (0, 1]")
    volume = _REFERENCE["volume_ml"] * scale
    r1 = int(round(_REFERENCE["r1_per_ml"] * volume))
    r2 = int(round(_REFERENCE["r2_per_ml"] * volume))
    params = TwoResourceParams(
        gamma1_max=_REFERENCE["gamma1_max"],
        gamma2_max=_REFERENCE["gamma2_max"],
        r1_ref=r1,
        r2_ref=r2,
        delta=_REFERENCE["delta"],
        volume=volume,
    )
    ann = AnnihilationParams(
        alpha=_REFERENCE["alpha"],
        alpha_prime=_REFERENCE["alpha_prime"] if intermediate else None,
        intermediate=intermediate,
    )
    return params, ann, {"R1": r1, "R2": r2}
