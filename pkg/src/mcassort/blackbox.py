"""Offline randomized flipping procedures for one arriving customer.

A coin set carries success probabilities, fractional weights and a patience
cap.  The run rounds the weights with dependent rounding, draws one uniform
per surviving coin, sorts by the case-appropriate key and flips in order
until the first heads or the patience cap.  Under either hypothesis
(sum of probabilities at most one, or patience covering the whole set) every
coin is flipped with probability at least x_i * (1 - e^{-w_i}) / w_i.

Outside the two certified cases the procedure still runs (with the
full-patience ordering) but carries no guarantee; callers see the case tag
``"none"`` on such sets.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .rounding import gkps_round, gkps_round_batch

CASE_SMALL = "small-probs"
CASE_FULL = "full-patience"
CASE_NONE = "none"

_TOL = 1e-9

F_DERIV_AT_0 = -0.5
F_DERIV_AT_1 = -1.0 + 2.0 / math.e

__all__ = [
    "CoinSet",
    "FlipOutcome",
    "f",
    "w_value",
    "run_blackbox",
    "run_blackbox_assort",
    "batch_flip",
    "CASE_SMALL",
    "CASE_FULL",
    "CASE_NONE",
]


def f(z: float) -> float:
    """(1 - e^{-z}) / z on [0,1], with the limit value 1 at z = 0.

    Decreasing and convex; bounded first derivative (-1/2 at 0, -1+2/e at 1).
    """
    if z < -_TOL or z > 1 + _TOL:
        raise ValueError(f"f is only used on [0,1], got {z}")
    if z <= _TOL:
        return 1.0
    return (1.0 - math.exp(-z)) / z


@dataclass(frozen=True)
class CoinSet:
    """Coins for one customer: ids, heads probabilities, weights, patience."""

    probs: tuple[float, ...]
    weights: tuple[float, ...]
    patience: int
    case: str

    def __post_init__(self):
        n = len(self.probs)
        if n != len(self.weights) or n == 0:
            raise ValueError("probs and weights must be equal-length and non-empty")
        if any(p < -_TOL or p > 1 + _TOL for p in self.probs):
            raise ValueError("probabilities outside [0,1]")
        if any(x < -_TOL or x > 1 + _TOL for x in self.weights):
            raise ValueError("weight outside [0,1]")
        if self.patience < 1:
            raise ValueError("patience must be a positive integer")
        px = sum(p * x for p, x in zip(self.probs, self.weights))
        if px > 1 + 1e-7:
            raise ValueError(f"sum p_i x_i = {px} exceeds 1")
        if sum(self.weights) > self.patience + 1e-7:
            raise ValueError("sum of weights exceeds patience")
        if self.case == CASE_SMALL and sum(self.probs) > 1 + 1e-7:
            raise ValueError("small-probs case requires sum p_i <= 1")
        if self.case == CASE_FULL and self.patience < n:
            raise ValueError("full-patience case requires patience >= number of coins")
        if self.case not in (CASE_SMALL, CASE_FULL, CASE_NONE):
            raise ValueError(f"unknown case {self.case}")

    @staticmethod
    def make(probs: Sequence[float], weights: Sequence[float], patience: int) -> "CoinSet":
        """Pick the case tag automatically, preferring the tighter full-patience bound."""
        probs = tuple(float(p) for p in probs)
        weights = tuple(float(x) for x in weights)
        if patience >= len(probs):
            case = CASE_FULL
        elif sum(probs) <= 1 + _TOL:
            case = CASE_SMALL
        else:
            case = CASE_NONE
        return CoinSet(probs, weights, patience, case)


@dataclass(frozen=True)
class FlipOutcome:
    """Result of one run: flip order, per-coin flags and the first heads."""

    order: tuple[int, ...]          # coins flipped, in flip order
    flipped: tuple[bool, ...]
    heads: tuple[bool, ...]
    winner: int | None

    def __post_init__(self):
        # flipping must stop right after a heads
        seen_heads = False
        for i in self.order:
            assert not seen_heads, "coin flipped after a heads"
            seen_heads = self.heads[i]


def w_value(coin: int, coins: CoinSet, case: str | None = None) -> float:
    """The case-appropriate w_i; equals 1 by convention when its denominator vanishes."""
    case = case or coins.case
    if case == CASE_NONE:
        case = CASE_FULL
    rest = sum(p * x for k, (p, x) in enumerate(zip(coins.probs, coins.weights)) if k != coin)
    if case == CASE_SMALL:
        denom = 1.0 - coins.probs[coin]
    else:
        denom = 1.0 - coins.probs[coin] * coins.weights[coin]
    if denom <= _TOL:
        return 1.0
    w = rest / denom
    assert w <= 1 + 1e-7, f"w_i = {w} exceeds 1; coin-set preconditions violated"
    return min(w, 1.0)


def flip_bound(coin: int, coins: CoinSet) -> float:
    """Guaranteed lower bound x_i * (1 - e^{-w_i}) / w_i on the flip probability."""
    return coins.weights[coin] * f(w_value(coin, coins))


def _sort_keys(p_times_x: np.ndarray, Y: np.ndarray) -> np.ndarray:
    denom = 1.0 - p_times_x
    keys = np.where(denom > _TOL, Y / np.maximum(denom, _TOL), np.inf)
    return keys


def run_blackbox(coins: CoinSet, seed: int | None = None, rng: random.Random | None = None,
                 wrong_key: bool = False) -> FlipOutcome:
    """Round the weights, order the survivors and flip until heads or patience.

    ``wrong_key`` forces the small-probs ordering key Y/(1-p) regardless of the
    case, which reproduces the known failure mode when sum p_i > 1.
    """
    if rng is None:
        rng = random.Random(seed)
    n = len(coins.probs)
    rounded = gkps_round(coins.weights, rng=rng)
    survivors = [i for i in range(n) if rounded.values[i]]
    keyed = []
    for i in survivors:
        y = rng.random()
        if coins.case == CASE_SMALL or wrong_key:
            denom = 1.0 - coins.probs[i]
        else:
            denom = 1.0 - coins.probs[i] * coins.weights[i]
        key = y / denom if denom > _TOL else math.inf
        keyed.append((key, i))
    keyed.sort()  # ties (probability-zero under floats) resolve by lower id
    order: list[int] = []
    flipped = [False] * n
    heads = [False] * n
    winner = None
    for key, i in keyed:
        if len(order) >= coins.patience:
            break
        order.append(i)
        flipped[i] = True
        if rng.random() < coins.probs[i]:
            heads[i] = True
            winner = i
            break
    return FlipOutcome(tuple(order), tuple(flipped), tuple(heads), winner)


def run_blackbox_assort(
    assortments: Sequence[frozenset[int]],
    weights: Sequence[float],
    patience: int,
    choice_prob: Callable[[int, frozenset[int]], float],
    seed: int | None = None,
    rng: random.Random | None = None,
    case: str | None = None,
) -> tuple[FlipOutcome, int | None]:
    """Assortment version: a flip shows a whole set; heads means any item chosen.

    The per-assortment mass is sum_{i in S} p(i, S).  Returns the flip outcome
    over assortment indices plus the chosen item when some assortment won.
    """
    if rng is None:
        rng = random.Random(seed)
    masses = []
    for S in assortments:
        mass = sum(choice_prob(i, S) for i in S)
        if mass > 1 + 1e-7:
            raise ValueError(f"choice probabilities sum to {mass} > 1 on {sorted(S)}")
        masses.append(mass)
    x = tuple(float(v) for v in weights)
    if case is None:
        total = sum(m for m in masses)
        if patience >= len(assortments):
            case = CASE_FULL
        elif total <= 1 + _TOL:
            case = CASE_SMALL
        else:
            case = CASE_NONE
    coins = CoinSet(tuple(masses), x, patience, case)
    rounded = gkps_round(x, rng=rng)
    keyed = []
    for k in range(len(assortments)):
        if not rounded.values[k]:
            continue
        y = rng.random()
        denom = 1.0 - (masses[k] if coins.case == CASE_SMALL else masses[k] * x[k])
        keyed.append((y / denom if denom > _TOL else math.inf, k))
    keyed.sort()
    order: list[int] = []
    flipped = [False] * len(assortments)
    heads = [False] * len(assortments)
    winner = None
    item = None
    for key, k in keyed:
        if len(order) >= patience:
            break
        order.append(k)
        flipped[k] = True
        # one categorical draw over the displayed items plus no-purchase
        u = rng.random()
        acc = 0.0
        for i in sorted(assortments[k]):
            acc += choice_prob(i, assortments[k])
            if u < acc:
                heads[k] = True
                winner = k
                item = i
                break
        if winner is not None:
            break
    return FlipOutcome(tuple(order), tuple(flipped), tuple(heads), winner), item


def batch_flip(
    probs: np.ndarray,
    x_rows: np.ndarray,
    patience,
    case,
    rng: np.random.Generator,
    wrong_key: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized black-box across many independent runs.

    ``x_rows`` has one weight vector per row (zero rows are skipped wholesale);
    ``probs`` is one shared vector or a per-row matrix (used when stripping
    makes heads probabilities replica-dependent).  ``patience`` and ``case``
    may also vary per row (an int array, and a boolean array marking rows
    that use the small-probs ordering key).  Returns (flipped, winner): a
    boolean matrix of flipped coins per row and the winning coin per row
    (-1 when no heads occurred).
    """
    x_rows = np.asarray(x_rows, dtype=float)
    B, n = x_rows.shape
    p = np.asarray(probs, dtype=float)
    p_rows = np.broadcast_to(p, (B, n)) if p.ndim == 1 else p
    if isinstance(case, str):
        small_rows = np.full(B, case == CASE_SMALL)
    else:
        small_rows = np.asarray(case, dtype=bool)
    ell_rows = np.broadcast_to(np.asarray(patience, dtype=np.int64), (B,))
    in_set = gkps_round_batch(x_rows, rng)
    Y = rng.random((B, n))
    if wrong_key:
        denom = 1.0 - p_rows
    else:
        denom = np.where(small_rows[:, None], 1.0 - p_rows, 1.0 - p_rows * x_rows)
    keys = np.where(denom > _TOL, Y / np.maximum(denom, _TOL), np.inf)
    keys = np.where(in_set, keys, np.nan)  # NaN sorts last, after any inf
    order = np.argsort(keys, axis=1, kind="stable")
    heads_draw = rng.random((B, n)) < p_rows
    in_sorted = np.take_along_axis(in_set, order, axis=1)
    heads_sorted = np.take_along_axis(heads_draw, order, axis=1) & in_sorted
    ranks = np.arange(n)[None, :]
    first_heads = np.where(heads_sorted.any(axis=1), heads_sorted.argmax(axis=1), n)
    allowed = np.minimum(first_heads, ell_rows - 1)
    flip_sorted = in_sorted & (ranks <= allowed[:, None])
    flipped = np.zeros_like(in_set)
    np.put_along_axis(flipped, order, flip_sorted, axis=1)
    won = first_heads <= np.minimum(ell_rows - 1, n - 1)
    winner = np.where(won, np.take_along_axis(order, np.minimum(first_heads, n - 1)[:, None], axis=1)[:, 0], -1)
    return flipped, winner.astype(np.int64)
