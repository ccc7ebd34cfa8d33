"""Builders translating an instance into each of its LP relaxations.

All variants share one matrix layout: one column per (customer type,
assortment) pair, ordered type-major with assortments in lexicographic
order; rows are inventory (one per item, right-hand side equal to its
stock), sell-at-most-one and patience (one per type), and, for the
no-repeat variants, one overlap row per (type, product).  Rows carry tags
so dual values are retrievable by semantic name.

Builders are pure functions and safe to call concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import lpcore
from .model import CustomerType, Instance, choice_prob

INT_TOL = 1e-9

__all__ = [
    "McdlpVariant",
    "McdlpSolution",
    "MonteCarloEstimate",
    "Verdict",
    "build",
    "solve_variant",
    "integralize",
    "verify_policy_upper_bound",
]


class McdlpVariant(Enum):
    SINGLE_ITEM = "single-item"
    MCDLP_R = "mcdlp-r"
    MCDLP_NR = "mcdlp-nr"
    MCDLP_NRS = "mcdlp-nrs"
    MMCDLP_NR = "mmcdlp-nr"

    @property
    def no_repeat(self) -> bool:
        return self in (McdlpVariant.MCDLP_NR, McdlpVariant.MCDLP_NRS, McdlpVariant.MMCDLP_NR)


@dataclass(frozen=True)
class McdlpSolution:
    """Optimal fractional plan: per-type weights over assortments."""

    variant: McdlpVariant
    objective: float
    assortments: tuple[frozenset[int], ...]
    plan: tuple[dict, ...]              # per type: {assortment: weight > 0}
    lp: lpcore.LpSolution

    def weight(self, j: int, S: frozenset[int]) -> float:
        return self.plan[j].get(S, 0.0)

    def single_item_plan(self, n_products: int) -> np.ndarray:
        """x[j, i] for matching instances (singleton assortments)."""
        m = len(self.plan)
        x = np.zeros((m, n_products))
        for j in range(m):
            for S, v in self.plan[j].items():
                if len(S) == 1:
                    (i,) = tuple(S)
                    x[j, i] = v
        return x


def _patience_rhs(ct: CustomerType) -> float:
    """Patience cap; non-deterministic patience uses its expectation 1/p_out."""
    if ct.patience is not None:
        return float(ct.patience)
    return 1.0 / ct.leave_prob


def _check_preconditions(inst: Instance, variant: McdlpVariant) -> None:
    if variant == McdlpVariant.SINGLE_ITEM:
        if not inst.family.is_singleton_family(inst.n_products):
            raise ValueError("single-item LP requires the family {S: |S| <= 1}")
    if variant == McdlpVariant.MCDLP_NR:
        rates = [ct.total_rate(inst.T) for ct in inst.types]
        if any(abs(r - round(r)) > 1e-6 for r in rates):
            raise ValueError(
                "MCDLP-NR requires integral arrival rates; integralize() the instance "
                "or use the homogeneous-revenue NRS variant"
            )
    if variant == McdlpVariant.MCDLP_NRS:
        base = inst.types[0].revenues
        for ct in inst.types[1:]:
            if any(abs(a - b) > INT_TOL for a, b in zip(ct.revenues, base)):
                raise ValueError("MCDLP-NRS requires homogeneous revenues r_ij = r_i")
    if variant == McdlpVariant.MMCDLP_NR and inst.price_levels < 2:
        raise ValueError("MMCDLP-NR requires at least two price levels")


def build(
    inst: Instance,
    variant: McdlpVariant,
    assortments: Sequence[frozenset[int]] | None = None,
    colgen_master: bool = False,
) -> lpcore.LpModel:
    """Emit the LP for ``variant``; ``assortments`` restricts the columns
    (used by column generation), defaulting to the whole enumerated family.

    With ``colgen_master`` the per-variable caps move out of the bound vector:
    variables get a slack bound that can never bind (the patience row binds
    first), and the variants whose formulation really caps x at 1 (repeated
    offers, single-item) carry explicit ("xcap", j, k) rows instead.  Pricing
    then sees every dual it needs; a nonbasic-at-bound column would otherwise
    hide its reduced cost in a bound dual invisible to the subproblem.
    """
    _check_preconditions(inst, variant)
    fam = tuple(assortments) if assortments is not None else inst.family.assortments(inst.n_products)
    m = inst.m
    n_items = inst.n_items
    F = len(fam)
    Q = [ct.total_rate(inst.T) for ct in inst.types]

    nvars = m * F
    var = lambda j, k: j * F + k
    objective = [0.0] * nvars
    upper = [1.0] * nvars

    # cache choice probabilities once per (type, assortment)
    probs: list[list[dict[int, float]]] = []
    for j in range(m):
        model = inst.types[j].choice
        probs.append([{i: choice_prob(model, i, S) for i in S} for S in fam])

    for j in range(m):
        rev = inst.types[j].revenues
        for k, S in enumerate(fam):
            objective[var(j, k)] = Q[j] * sum(rev[i] * probs[j][k][i] for i in S)

    rows: list[tuple[list[tuple[int, float]], float, lpcore.RowTag]] = []
    for item in range(n_items):
        prods = set(inst.products_of_item(item))
        coeffs = []
        for j in range(m):
            for k, S in enumerate(fam):
                a = Q[j] * sum(probs[j][k][i] for i in S if i in prods)
                if a:
                    coeffs.append((var(j, k), a))
        rows.append((coeffs, float(inst.items[item].inventory), ("inventory", item)))
    for j in range(m):
        coeffs = []
        for k, S in enumerate(fam):
            a = sum(probs[j][k][i] for i in S)
            if a:
                coeffs.append((var(j, k), a))
        rows.append((coeffs, 1.0, ("sell_one", j)))
    for j in range(m):
        coeffs = [(var(j, k), 1.0) for k in range(F)]
        rows.append((coeffs, _patience_rhs(inst.types[j]), ("patience", j)))
    if variant.no_repeat:
        for j in range(m):
            for prod in range(inst.n_products):
                coeffs = [(var(j, k), 1.0) for k, S in enumerate(fam) if prod in S]
                rows.append((coeffs, 1.0, ("overlap", j, prod)))

    caps_are_real = variant in (McdlpVariant.SINGLE_ITEM, McdlpVariant.MCDLP_R)
    if variant == McdlpVariant.SINGLE_ITEM:
        # aggregated copies of a multi-unit item admit weights up to the stock
        for j in range(m):
            for k, S in enumerate(fam):
                if len(S) == 1:
                    (i,) = tuple(S)
                    upper[var(j, k)] = float(inst.items[inst.products[i].item].inventory)

    if colgen_master:
        if caps_are_real:
            for j in range(m):
                for k in range(F):
                    rows.append(([(var(j, k), 1.0)], upper[var(j, k)], ("xcap", j, k)))
        for j in range(m):
            slack = 2.0 * _patience_rhs(inst.types[j]) + 2.0
            for k in range(F):
                upper[var(j, k)] = slack

    return lpcore.LpModel.build(objective, rows, upper)


def solve_variant(
    inst: Instance,
    variant: McdlpVariant,
    assortments: Sequence[frozenset[int]] | None = None,
    colgen_master: bool = False,
) -> McdlpSolution:
    fam = tuple(assortments) if assortments is not None else inst.family.assortments(inst.n_products)
    model = build(inst, variant, fam, colgen_master=colgen_master)
    sol = lpcore.solve(model)
    if not sol.optimal:
        raise lpcore.LpError(f"MCDLP solve returned status {sol.status}")
    F = len(fam)
    plan = tuple(
        {fam[k]: sol.x[j * F + k] for k in range(F) if sol.x[j * F + k] > 1e-12}
        for j in range(inst.m)
    )
    return McdlpSolution(variant, sol.objective, fam, plan, sol)


def integralize(inst: Instance) -> Instance:
    """Split types until every type has unit expected arrivals (T q_j = 1).

    Mirrors the integral-arrival normalization: requires stationary arrivals
    with integral per-type rates; the result has q_j = 1/T for every type.
    """
    if not inst.stationary:
        raise ValueError("integralize requires stationary arrival probabilities")
    new_types: list[CustomerType] = []
    for ct in inst.types:
        rate = ct.total_rate(inst.T)
        copies = round(rate)
        if abs(rate - copies) > 1e-6:
            raise ValueError(f"type {ct.id}: arrival rate {rate} is not integral")
        for _ in range(copies):
            new_types.append(
                CustomerType(
                    id=len(new_types),
                    arrival=1.0 / inst.T,
                    revenues=ct.revenues,
                    choice=ct.choice,
                    patience=ct.patience,
                    leave_prob=ct.leave_prob,
                )
            )
    return Instance(
        T=inst.T,
        items=inst.items,
        products=inst.products,
        types=tuple(new_types),
        family=inst.family,
        price_levels=inst.price_levels,
        repeated_offers_allowed=inst.repeated_offers_allowed,
        matching_with_timeouts=inst.matching_with_timeouts,
    )


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    std_error: float
    count: int

    @staticmethod
    def from_samples(samples) -> "MonteCarloEstimate":
        arr = np.asarray(samples, dtype=float)
        se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        return MonteCarloEstimate(float(arr.mean()), se, len(arr))


@dataclass(frozen=True)
class Verdict:
    consistent: bool
    margin: float  # opt + 3 se - mean; negative means the bound is violated

    def __bool__(self) -> bool:
        return self.consistent


def verify_policy_upper_bound(
    inst: Instance, mcdlp_opt: float, empirical_revenue: MonteCarloEstimate
) -> Verdict:
    """Sanity oracle: any policy's mean revenue must stay below the LP optimum.

    Consistent iff mean <= OPT + 3 standard errors.
    """
    margin = mcdlp_opt + 3.0 * empirical_revenue.std_error - empirical_revenue.mean
    return Verdict(consistent=margin >= 0.0, margin=margin)
