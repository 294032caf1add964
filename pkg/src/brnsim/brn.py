"""Biological reaction network (BRN) model: species, reactions, kinetics.

A BRN generalizes a chemical reaction network: designated *cell types* grow
through growth reactions whose per-cell rate is an arbitrary bounded function
of the configuration, while every other reaction follows stochastic
mass-action kinetics.  Configurations are integer count vectors over the
species list; all types here are immutable values and all operations are
pure functions, so they are safe to share across threads and processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "BrnError",
    "NotApplicableError",
    "GrowthRateBoundError",
    "LinearGrowthRate",
    "ConstantGrowthRate",
    "GrowthRate",
    "MassAction",
    "Growth",
    "Reaction",
    "Brn",
    "propensity",
    "propensity_vector",
    "is_applicable",
    "apply_reaction",
    "normalize_order_zero",
    "validate",
    "permute_species",
    "permute_configuration",
]

# Relative slack when comparing a growth rate against its declared cap, so
# that evaluating the rate at its reference configuration does not trip the
# bound through rounding alone.
GROWTH_BOUND_SLACK = 1e-9


class BrnError(Exception):
    """Malformed network or invalid model operation."""


class NotApplicableError(BrnError):
    """A reaction was applied to a configuration lacking its reactants."""


class GrowthRateBoundError(BrnError):
    """A growth rate function exceeded its declared maximum rate."""


@dataclass(frozen=True)
class LinearGrowthRate:
    """Per-cell growth rate proportional to a single resource count.

    rate(c) = max_value * c[resource] / reference.  The rate equals
    ``max_value`` when the resource sits at its reference count and falls to
    zero together with the resource.
    """

    resource: int
    max_value: float
    reference: float

    def __call__(self, counts: Sequence[int]) -> float:
        return self.max_value * (counts[self.resource] / self.reference)


@dataclass(frozen=True)
class ConstantGrowthRate:
    """Configuration-independent per-cell growth rate."""

    value: float

    def __call__(self, counts: Sequence[int]) -> float:
        return self.value


GrowthRate = Union[LinearGrowthRate, ConstantGrowthRate]


@dataclass(frozen=True)
class MassAction:
    """Mass-action kinetics with rate constant ``rate_constant``.

    For a reaction of order o >= 1 the propensity in configuration c is
    rate_constant / volume**(o-1) times the product of binomial(c[s], r[s])
    over all species.  Zero-order reactions fire at the constant rate
    ``rate_constant``; this matches their one-reactant rewrite against a
    dummy species held at count 1 (see :func:`normalize_order_zero`).
    """

    rate_constant: float


@dataclass(frozen=True)
class Growth:
    """Cell-growth kinetics: propensity = counts[cell_type] * rate_fn(counts).

    ``rate_fn`` must stay at or below ``max_rate`` on every reachable
    configuration; evaluation raises :class:`GrowthRateBoundError` otherwise.
    """

    cell_type: int
    rate_fn: GrowthRate
    max_rate: float


@dataclass(frozen=True)
class Reaction:
    """A reaction: reactant counts, product counts, and a kinetics kind.

    The count vectors are indexed by species position in the owning
    :class:`Brn`.  ``name`` is a free-form label used in reports.
    """

    reactants: tuple[int, ...]
    products: tuple[int, ...]
    kind: Union[MassAction, Growth]
    name: str = ""

    def __post_init__(self):
        if len(self.reactants) != len(self.products):
            raise BrnError(
                f"reaction {self.name!r}: reactant/product vector lengths differ"
            )
        if any(r < 0 for r in self.reactants) or any(p < 0 for p in self.products):
            raise BrnError(f"reaction {self.name!r}: negative stoichiometry")
        object.__setattr__(
            self,
            "reactant_pairs",
            tuple((i, r) for i, r in enumerate(self.reactants) if r),
        )
        object.__setattr__(
            self,
            "delta_pairs",
            tuple(
                (i, p - r)
                for i, (r, p) in enumerate(zip(self.reactants, self.products))
                if p != r
            ),
        )

    @property
    def order(self) -> int:
        """Total reactant multiplicity."""
        return sum(self.reactants)


@dataclass(frozen=True)
class Brn:
    """A biological reaction network.

    ``species`` fixes the index of each species name; ``cell_types`` is the
    subset that may appear as the growing type of a growth reaction.
    ``dummy`` names the species injected by :func:`normalize_order_zero`, if
    any; initial configurations built through :meth:`configuration` hold it
    at count 1.  ``notes`` carries informational builder annotations (e.g.
    elided zero-rate reactions) surfaced by :func:`validate`.
    """

    species: tuple[str, ...]
    cell_types: frozenset[str]
    reactions: tuple[Reaction, ...]
    volume: float = 1.0
    dummy: Union[str, None] = None
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "cell_types", frozenset(self.cell_types))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        if len(set(self.species)) != len(self.species):
            raise BrnError("species names must be unique")
        unknown = self.cell_types - set(self.species)
        if unknown:
            raise BrnError(f"cell types not in species list: {sorted(unknown)}")
        if self.volume <= 0:
            raise BrnError("volume must be positive")
        if self.dummy is not None and self.dummy not in self.species:
            raise BrnError(f"dummy species {self.dummy!r} not in species list")
        n = len(self.species)
        for rx in self.reactions:
            if len(rx.reactants) != n:
                raise BrnError(
                    f"reaction {rx.name!r}: vector length {len(rx.reactants)} "
                    f"does not match {n} species"
                )
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.species)})

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise BrnError(f"unknown species {name!r}") from None

    def configuration(self, counts: Union[Mapping[str, int], None] = None) -> np.ndarray:
        """Build a count vector from a name -> count mapping.

        Unlisted species default to 0, except the in-flow dummy species,
        which defaults to 1 as required by the zero-order rewrite.
        """
        vec = np.zeros(len(self.species), dtype=np.int64)
        if self.dummy is not None:
            vec[self.index(self.dummy)] = 1
        for name, count in (counts or {}).items():
            c = int(count)
            if c < 0:
                raise BrnError(f"negative count for species {name!r}")
            vec[self.index(name)] = c
        return vec


def _binomial_count(c: int, r: int) -> int:
    if r == 1:
        return c
    if r == 2:
        return (c * (c - 1)) // 2
    return math.comb(c, r)


def mass_action_count_product(pairs, counts) -> int:
    """Exact integer product of binomial(counts[i], r) over reactant pairs.

    Computed in arbitrary-precision integers so that the product is exact and
    independent of factor order; 0 whenever some count is below its
    multiplicity.
    """
    prod = 1
    for i, r in pairs:
        prod *= _binomial_count(int(counts[i]), r)
        if not prod:
            return 0
    return prod


def mass_action_propensity(xi_over_v: float, pairs, counts) -> float:
    """Propensity of a mass-action reaction given its volume-scaled constant."""
    prod = mass_action_count_product(pairs, counts)
    if not prod:
        return 0.0
    return xi_over_v * prod


def growth_propensity(kind: Growth, pairs, counts) -> float:
    """Propensity of a growth reaction; 0 when reactants are unavailable."""
    rate = kind.rate_fn(counts)
    if rate > kind.max_rate * (1.0 + GROWTH_BOUND_SLACK):
        raise GrowthRateBoundError(
            f"growth rate {rate!r} exceeds declared maximum {kind.max_rate!r}"
        )
    for i, r in pairs:
        if counts[i] < r:
            return 0.0
    return float(counts[kind.cell_type]) * rate


def volume_scaled_constant(kind: MassAction, order: int, volume: float) -> float:
    """rate_constant / volume**(order-1); zero-order reactions use the raw constant."""
    if order <= 1:
        return kind.rate_constant
    return kind.rate_constant / volume ** (order - 1)


def propensity(brn: Brn, reaction: Reaction, config: Sequence[int]) -> float:
    """Evaluate a reaction's propensity in the given configuration.

    Returns 0 when the reaction is not applicable.  Raises
    :class:`GrowthRateBoundError` when a growth rate function exceeds its cap.
    """
    kind = reaction.kind
    if isinstance(kind, Growth):
        return growth_propensity(kind, reaction.reactant_pairs, config)
    xi_over_v = volume_scaled_constant(kind, reaction.order, brn.volume)
    return mass_action_propensity(xi_over_v, reaction.reactant_pairs, config)


def propensity_vector(brn: Brn, config: Sequence[int]) -> np.ndarray:
    """Propensities of all reactions of ``brn`` in ``config``."""
    return np.array([propensity(brn, rx, config) for rx in brn.reactions], dtype=float)


def is_applicable(reaction: Reaction, config: Sequence[int]) -> bool:
    return all(config[i] >= r for i, r in reaction.reactant_pairs)


def apply_reaction(config: Sequence[int], reaction: Reaction) -> np.ndarray:
    """Return the configuration after firing ``reaction``: c - reactants + products."""
    if not is_applicable(reaction, config):
        raise NotApplicableError(
            f"reaction {reaction.name!r} not applicable: insufficient reactants"
        )
    out = np.array(config, dtype=np.int64)
    for i, d in reaction.delta_pairs:
        out[i] += d
    return out


def _fresh_name(base: str, taken) -> str:
    name = base
    k = 2
    while name in taken:
        name = f"{base}{k}"
        k += 1
    return name


def normalize_order_zero(brn: Brn) -> Brn:
    """Rewrite zero-order reactions as one-reactant reactions on a dummy species.

    Every reaction with an empty reactant set becomes
    ``dummy -> dummy + products`` against a single shared dummy species meant
    to be held at count 1; propensities and the dynamics of the original
    species are unchanged.  Networks without zero-order reactions are
    returned as-is.
    """
    if not any(rx.order == 0 for rx in brn.reactions):
        return brn

    if brn.dummy is not None:
        species = brn.species
        dummy_idx = brn.index(brn.dummy)
        dummy = brn.dummy
        extend = False
    else:
        dummy = _fresh_name("dummy", set(brn.species))
        species = brn.species + (dummy,)
        dummy_idx = len(brn.species)
        extend = True

    rewritten = []
    for rx in brn.reactions:
        reactants = rx.reactants + (0,) if extend else rx.reactants
        products = rx.products + (0,) if extend else rx.products
        if rx.order == 0:
            r = list(reactants)
            p = list(products)
            r[dummy_idx] += 1
            p[dummy_idx] += 1
            rewritten.append(
                Reaction(tuple(r), tuple(p), rx.kind, rx.name or f"inflow:{dummy}")
            )
        elif extend:
            rewritten.append(Reaction(reactants, products, rx.kind, rx.name))
        else:
            rewritten.append(rx)

    return Brn(
        species=species,
        cell_types=brn.cell_types,
        reactions=tuple(rewritten),
        volume=brn.volume,
        dummy=dummy,
        notes=brn.notes,
    )


def validate(brn: Brn, probe_configs: Sequence[Sequence[int]] = ()) -> list:
    """Collect model-quality violations; an empty list means no findings.

    Checks rate-constant signs, growth reaction shape (one unit of the cell
    type among reactants, exactly two among products, no other cell types
    involved), growth caps on the supplied probe configurations, and flags
    zero-order reactions that still need normalization.  Builder notes are
    surfaced with a ``note:`` prefix.
    """
    report = [f"note: {n}" for n in brn.notes]
    for k, rx in enumerate(brn.reactions):
        label = rx.name or f"#{k}"
        kind = rx.kind
        if isinstance(kind, MassAction):
            if kind.rate_constant < 0:
                report.append(f"reaction {label}: negative rate constant")
            if rx.order == 0:
                report.append(
                    f"reaction {label}: zero-order; apply normalize_order_zero"
                )
        else:
            if kind.max_rate <= 0:
                report.append(f"reaction {label}: growth cap must be positive")
            if not 0 <= kind.cell_type < len(brn.species):
                report.append(f"reaction {label}: growth cell type index out of range")
                continue
            cell_name = brn.species[kind.cell_type]
            if cell_name not in brn.cell_types:
                report.append(f"reaction {label}: {cell_name!r} is not a cell type")
            if rx.reactants[kind.cell_type] != 1:
                report.append(
                    f"reaction {label}: growth needs exactly one {cell_name!r} reactant"
                )
            if rx.products[kind.cell_type] != 2:
                report.append(
                    f"reaction {label}: growth must produce exactly two {cell_name!r}"
                )
            for i, name in enumerate(brn.species):
                if i == kind.cell_type or name not in brn.cell_types:
                    continue
                if rx.reactants[i] or rx.products[i]:
                    report.append(
                        f"reaction {label}: other cell type {name!r} involved in growth"
                    )
            for config in probe_configs:
                rate = kind.rate_fn(config)
                if rate > kind.max_rate * (1.0 + GROWTH_BOUND_SLACK):
                    report.append(
                        f"reaction {label}: rate {rate!r} exceeds cap "
                        f"{kind.max_rate!r} on probe {list(config)!r}"
                    )
    return report


def _index_permutation(brn: Brn, mapping: Mapping[str, str]) -> list:
    for src, dst in mapping.items():
        brn.index(src), brn.index(dst)  # raises on unknown names
    full = {s: mapping.get(s, s) for s in brn.species}
    if sorted(full.values()) != sorted(brn.species):
        raise BrnError("species mapping must be a permutation")
    return [brn.index(full[s]) for s in brn.species]


def _rename_label(name: str, mapping: Mapping[str, str]) -> str:
    return ":".join(mapping.get(tok, tok) for tok in name.split(":"))


def permute_species(brn: Brn, mapping: Mapping[str, str]) -> Brn:
    """Relabel species inside every reaction according to a permutation.

    The species list keeps its order; each reaction's stoichiometry and
    growth indices are remapped so the role of species ``s`` is taken over by
    ``mapping[s]``.  Reaction list order is preserved, which makes simulation
    of the permuted network bit-compatible with the original under
    :func:`permute_configuration` of the initial state.
    """
    perm = _index_permutation(brn, mapping)

    def permute_vec(vec):
        out = [0] * len(vec)
        for i, v in enumerate(vec):
            out[perm[i]] = v
        return tuple(out)

    reactions = []
    for rx in brn.reactions:
        kind = rx.kind
        if isinstance(kind, Growth):
            rate = kind.rate_fn
            if isinstance(rate, LinearGrowthRate):
                rate = replace(rate, resource=perm[rate.resource])
            kind = replace(kind, cell_type=perm[kind.cell_type], rate_fn=rate)
        reactions.append(
            Reaction(
                permute_vec(rx.reactants),
                permute_vec(rx.products),
                kind,
                _rename_label(rx.name, mapping),
            )
        )
    return Brn(
        species=brn.species,
        cell_types=brn.cell_types,
        reactions=tuple(reactions),
        volume=brn.volume,
        dummy=brn.dummy,
        notes=brn.notes,
    )


def permute_configuration(
    brn: Brn, config: Sequence[int], mapping: Mapping[str, str]
) -> np.ndarray:
    """Move counts along with the species relabeling of :func:`permute_species`."""
    perm = _index_permutation(brn, mapping)
    out = np.zeros(len(config), dtype=np.int64)
    for i, c in enumerate(config):
        out[perm[i]] = c
    return out
