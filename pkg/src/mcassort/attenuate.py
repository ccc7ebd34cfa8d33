"""Availability schedule and the attenuated online policies.

The schedule gamma_1 = 1, gamma_{t+1} = gamma_t - (1 - e^{-gamma_t})/T pins
the probability that each item is available at the start of every time-step.
The online policies run the offline black-box each step, then damp two knobs
with Monte-Carlo-estimated attenuation factors: an edge factor per (item,
type) (or per (item, assortment, type)) forcing the realized sale rate onto
(1 - e^{-gamma_t}) q_j p x*, and a vertex factor retiring surviving items so
availability lands exactly on gamma_{t+1}.

Factors are estimated by fresh nested simulation per time-step (cost grows
with T^2 times the budget, so keep attenuated horizons at desk scale).  All
estimation and evaluation is vectorized across replicas; a scalar path
produces per-replica traces with inline safety assertions.  Replicas derive
independent generator streams from the seed, so the work could be fanned out
concurrently without changing any estimate.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import mcdlp
from .blackbox import CASE_FULL, CASE_NONE, CASE_SMALL, batch_flip, run_blackbox
from .model import Instance, Mnl, Tabular, choice_prob
from .trace import PolicyTrace, StepRecord, draw_type

__all__ = [
    "GammaSchedule",
    "gamma_schedule",
    "h_limit",
    "AttenuationFactors",
    "ProbabilityEstimates",
    "AttenuationRunResult",
    "compute_attenuation_factors",
    "estimate_probabilities",
    "run_algorithm1",
    "run_algorithm6",
    "AssortmentFactors",
]

_EPS = 1e-12


def h_limit(z: float) -> float:
    """Limit availability curve h(z) = ln((e-1) e^{-z} + 1); h(1) = ln(2 - 1/e)."""
    return math.log((math.e - 1.0) * math.exp(-z) + 1.0)


@dataclass(frozen=True)
class GammaSchedule:
    """gamma_1..gamma_{T+1} plus the horizon-average offer rate."""

    T: int
    values: tuple[float, ...]

    def gamma(self, t: int) -> float:
        """gamma_t for t in 1..T+1."""
        return self.values[t - 1]

    @property
    def ratio(self) -> float:
        """(1/T) sum_t (1 - e^{-gamma_t}); telescopes to gamma_1 - gamma_{T+1}."""
        return sum(1.0 - math.exp(-g) for g in self.values[:-1]) / self.T

    def h(self, z: float) -> float:
        return h_limit(z)


def gamma_schedule(T: int) -> GammaSchedule:
    if T < 1:
        raise ValueError("T must be at least 1")
    vals = [1.0]
    g = 1.0
    for _ in range(T):
        g = g - (1.0 - math.exp(-g)) / T
        vals.append(g)
    sched = GammaSchedule(T, tuple(vals))
    assert vals[0] == 1.0
    assert all(b < a for a, b in zip(vals, vals[1:])), "gamma must be strictly decreasing"
    assert 0.0 < vals[-1] <= h_limit(1.0) + 1e-12, "gamma_{T+1} must not exceed h(1)"
    return sched


# ---------------------------------------------------------------------------
# Single-item case (online stochastic matching with timeouts), Algorithm 1.


@dataclass
class AttenuationFactors:
    """Edge and vertex damping factors plus the estimation error budget."""

    edge: np.ndarray          # (T, m, n)
    vertex: np.ndarray        # (T, n)
    surv_rel_var: np.ndarray  # (T, n): per-step relative variance of survival estimates
    mc_budget: int
    diagnostics: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class ProbabilityEstimates:
    """Monte Carlo estimates at the start of one time-step."""

    t: int
    availability: np.ndarray      # (n,)
    availability_se: np.ndarray
    offer: np.ndarray             # (m, n): Pr[Offer and Avail | Type j], pre-attenuation
    offer_se: np.ndarray


class _MatchingKernel:
    """Precomputed arrays for vectorized simulation of a matching instance."""

    def __init__(self, inst: Instance, x: np.ndarray, allow_uncertified: bool):
        if not inst.family.is_singleton_family(inst.n_products):
            raise ValueError("algorithm 1 needs a matching instance (|S| <= 1 assortments)")
        if not inst.stationary:
            raise ValueError("algorithm 1 assumes stationary arrival probabilities")
        if not inst.unit_inventory:
            raise ValueError("split_inventory() the instance first: unit stocks required")
        n, m = inst.n_products, inst.m
        self.inst = inst
        self.n, self.m = n, m
        self.T = inst.T
        self.q = np.array([inst.q(0, j) for j in range(m)])
        self.cum_q = np.cumsum(self.q)
        self.p = np.zeros((m, n))
        self.r = np.zeros((m, n))
        for j in range(m):
            ct = inst.types[j]
            for i in range(n):
                self.p[j, i] = choice_prob(ct.choice, i, frozenset({i}))
                self.r[j, i] = ct.revenues[i]
        self.x = np.asarray(x, dtype=float)
        if self.x.shape != (m, n):
            raise ValueError(f"plan must have shape {(m, n)}")
        self.ell = np.array([int(ct.patience) if ct.patience is not None else 0 for ct in inst.types])
        if any(ct.patience is None for ct in inst.types):
            raise ValueError("algorithm 1 needs deterministic patience levels")
        self.case = []
        self.certified = True
        for j in range(m):
            if self.ell[j] >= n:
                self.case.append(CASE_FULL)
            elif self.p[j].sum() <= 1 + 1e-9:
                self.case.append(CASE_SMALL)
            else:
                self.case.append(CASE_NONE)
                self.certified = False
        if not self.certified and not allow_uncertified:
            raise ValueError(
                "hypothesis violated: need sum_i p_ij <= 1 or ell_j >= n per type "
                "(pass allow_uncertified=True to run without a guarantee)"
            )
        self.small_case = np.array([c == CASE_SMALL for c in self.case])

    def draw_types(self, B: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(B)
        return np.searchsorted(self.cum_q, u, side="right")  # == m means no arrival

    def offer_estimates(self, avail: np.ndarray, rng: np.random.Generator,
                        max_rows: int = 16_000) -> np.ndarray:
        """Pre-attenuation flip frequencies per (type, item), forcing each
        type against the whole availability ensemble (types are stacked into
        blocks so one vectorized pass covers many types)."""
        B, n = avail.shape
        out = np.zeros((self.m, n))
        per_block = max(1, max_rows // max(B, 1))
        for start in range(0, self.m, per_block):
            block = np.arange(start, min(start + per_block, self.m))
            reps = len(block)
            p_rows = np.repeat(self.p[block], B, axis=0)
            x_rows = (self.x[block][:, None, :] * avail[None, :, :]).reshape(reps * B, n)
            flipped, _ = batch_flip(
                p_rows, x_rows, np.repeat(self.ell[block], B),
                np.repeat(self.small_case[block], B), rng,
            )
            out[block] = flipped.reshape(reps, B, n).mean(axis=1)
        return out

    def advance(
        self,
        avail: np.ndarray,
        edge_t: np.ndarray,
        vertex_t: np.ndarray,
        rng: np.random.Generator,
        accept_out: np.ndarray | None = None,
        revenue_out: np.ndarray | None = None,
    ) -> None:
        """One time-step for every replica row in ``avail`` (modified in place).

        All arriving types are handled in a single vectorized black-box pass
        (no-arrival rows get zero weights and never flip).
        """
        B = avail.shape[0]
        types = self.draw_types(B, rng)
        arrived = types < self.m
        t_idx = np.where(arrived, types, 0)
        x_eff = self.x[t_idx] * avail
        x_eff[~arrived] = 0.0
        _, winner = batch_flip(self.p[t_idx], x_eff, self.ell[t_idx],
                               self.small_case[t_idx], rng)
        won = np.nonzero(winner >= 0)[0]
        if won.size:
            w_items = winner[won]
            w_types = types[won]
            keep = rng.random(won.size) < edge_t[w_types, w_items]
            s_rows, s_items, s_types = won[keep], w_items[keep], w_types[keep]
            avail[s_rows, s_items] = False
            if accept_out is not None:
                np.add.at(accept_out, (s_types, s_items), 1)
            if revenue_out is not None:
                revenue_out[s_rows] += self.r[s_types, s_items]
        # vertex attenuation retires surviving items independently
        avail &= rng.random(avail.shape) < vertex_t[None, :]


def _as_plan_array(inst: Instance, plan) -> np.ndarray:
    if isinstance(plan, mcdlp.McdlpSolution):
        return plan.single_item_plan(inst.n_products)
    return np.asarray(plan, dtype=float)


def compute_attenuation_factors(
    inst: Instance,
    plan,
    mc_budget: int = 2000,
    seed: int = 0,
    allow_uncertified: bool = False,
) -> AttenuationFactors:
    """Estimate edge and vertex factors for every step by nested simulation.

    Per step t the attenuated prefix is re-simulated on a fresh ensemble of
    ``mc_budget`` replicas; offer probabilities give the edge factors, the
    ensemble advanced through t gives survival rates and the vertex factors.
    Targets exceeding their estimate by more than two standard errors are
    recorded as diagnostics (the factor clamps to 1 rather than aborting).
    """
    if mc_budget < 1:
        raise ValueError("mc_budget must be positive")
    kern = _MatchingKernel(inst, _as_plan_array(inst, plan), allow_uncertified)
    T, m, n = kern.T, kern.m, kern.n
    sched = gamma_schedule(T)
    edge = np.ones((T, m, n))
    vertex = np.ones((T, n))
    surv_rel_var = np.zeros((T, n))
    diags: list[str] = []
    streams = np.random.SeedSequence(seed).spawn(T)
    B = mc_budget
    for t in range(1, T + 1):
        rng = np.random.default_rng(streams[t - 1])
        avail = np.ones((B, n), dtype=bool)
        for s in range(1, t):
            kern.advance(avail, edge[s - 1], vertex[s - 1], rng)
        g_t = sched.gamma(t)
        target_scale = 1.0 - math.exp(-g_t)
        p_offer_all = kern.offer_estimates(avail, rng)
        for j in range(m):
            p_offer = p_offer_all[j]
            se = np.sqrt(np.maximum(p_offer * (1 - p_offer), 0.0) / B)
            target = kern.x[j] * target_scale
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(p_offer > 0, target / np.maximum(p_offer, _EPS), 1.0)
            over = target > p_offer + 2 * se + _EPS
            for i in np.nonzero(over & (kern.x[j] > 0))[0]:
                diags.append(
                    f"t={t} type={j} item={int(i)}: offer target {target[i]:.4f} exceeds "
                    f"estimate {p_offer[i]:.4f} + 2se"
                )
            edge[t - 1, j] = np.clip(ratio, 0.0, 1.0)
        # survival through step t under the freshly set edge factors
        kern.advance(avail, edge[t - 1], np.ones(n), rng)
        p_surv = avail.mean(axis=0)
        g_next = sched.gamma(t + 1)
        se = np.sqrt(np.maximum(p_surv * (1 - p_surv), 0.0) / B)
        over = g_next > p_surv + 2 * se + _EPS
        for i in np.nonzero(over)[0]:
            diags.append(
                f"t={t} item={int(i)}: availability target {g_next:.4f} exceeds "
                f"survival estimate {p_surv[i]:.4f} + 2se"
            )
        vertex[t - 1] = np.clip(g_next / np.maximum(p_surv, _EPS), 0.0, 1.0)
        surv_rel_var[t - 1] = np.where(
            p_surv > 0, (1 - p_surv) / np.maximum(p_surv * B, _EPS), 0.0
        )
    return AttenuationFactors(edge, vertex, surv_rel_var, mc_budget, diags)


def estimate_probabilities(
    inst: Instance,
    plan,
    factors: AttenuationFactors,
    t: int,
    mc_budget: int,
    seed: int = 0,
    allow_uncertified: bool = False,
) -> ProbabilityEstimates:
    """Re-simulate the attenuated policy up to the start of step ``t``.

    Returns availability and per-(type, item) pre-attenuation offer estimates
    with standard errors.  Items whose conditioning events never occur come
    back with estimate 0 and are treated as factor 1 by the factor builder.
    """
    if mc_budget < 1:
        raise ValueError("mc_budget must be positive")
    if not 1 <= t <= inst.T:
        raise ValueError(f"t must be in 1..{inst.T}")
    kern = _MatchingKernel(inst, _as_plan_array(inst, plan), allow_uncertified)
    n, m = kern.n, kern.m
    B = mc_budget
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    avail = np.ones((B, n), dtype=bool)
    for s in range(1, t):
        kern.advance(avail, factors.edge[s - 1], factors.vertex[s - 1], rng)
    if t == 1:
        availability = np.ones(n)
        availability_se = np.zeros(n)
    else:
        availability = avail.mean(axis=0)
        availability_se = np.sqrt(availability * (1 - availability) / B)
    offer = kern.offer_estimates(avail, rng)
    offer_se = np.sqrt(np.maximum(offer * (1 - offer), 0.0) / B)
    return ProbabilityEstimates(t, availability, availability_se, offer, offer_se)


@dataclass
class AttenuationRunResult:
    """Aggregate outcome of an attenuated run over many replicas."""

    schedule: GammaSchedule
    factors: AttenuationFactors
    replicas: int
    revenues: np.ndarray          # (replicas,)
    avail_freq: np.ndarray        # (T+1, n): availability at the start of t = 1..T+1
    accept_freq: np.ndarray       # (T, m, n): realized sale frequency per step
    traces: list[PolicyTrace] = field(default_factory=list)

    @property
    def revenue_mean(self) -> float:
        return float(self.revenues.mean())

    @property
    def revenue_se(self) -> float:
        if len(self.revenues) < 2:
            return 0.0
        return float(self.revenues.std(ddof=1) / math.sqrt(len(self.revenues)))

    def avail_sigma(self, t: int) -> np.ndarray:
        """Std budget for |avail_freq(t) - gamma_t|: eval noise plus factor noise.

        The vertex factors are estimated from finite samples, so availability
        performs a multiplicative random walk around gamma_t; the per-step
        relative variances accumulated in the factor pass quantify it.
        """
        freq = self.avail_freq[t - 1]
        eval_var = freq * (1 - freq) / self.replicas
        g = self.schedule.gamma(t)
        sched_var = (g ** 2) * self.factors.surv_rel_var[: t - 1].sum(axis=0)
        return np.sqrt(eval_var + sched_var)


def run_algorithm1(
    inst: Instance,
    plan,
    mc_budget: int = 2000,
    replicas: int = 10_000,
    seed: int = 0,
    factors: AttenuationFactors | None = None,
    allow_uncertified: bool = False,
    record_traces: int = 0,
    chunk: int = 100_000,
) -> AttenuationRunResult:
    """Attenuated online policy for matching with timeouts.

    Computes attenuation factors (unless supplied) and evaluates the policy on
    ``replicas`` fresh horizons, tracking availability, sales and revenue.
    """
    x = _as_plan_array(inst, plan)
    kern = _MatchingKernel(inst, x, allow_uncertified)
    if factors is None:
        factors = compute_attenuation_factors(
            inst, x, mc_budget=mc_budget, seed=seed * 2_654_435_761 % (2**31) + 1,
            allow_uncertified=allow_uncertified,
        )
    T, n, m = kern.T, kern.n, kern.m
    sched = gamma_schedule(T)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    revenues = np.zeros(replicas)
    avail_counts = np.zeros((T + 1, n))
    accept_counts = np.zeros((T, m, n))
    done = 0
    while done < replicas:
        B = min(chunk, replicas - done)
        avail = np.ones((B, n), dtype=bool)
        rev = np.zeros(B)
        for t in range(1, T + 1):
            avail_counts[t - 1] += avail.sum(axis=0)
            kern.advance(
                avail, factors.edge[t - 1], factors.vertex[t - 1], rng,
                accept_out=accept_counts[t - 1], revenue_out=rev,
            )
        avail_counts[T] += avail.sum(axis=0)
        revenues[done : done + B] = rev
        done += B
    traces = [
        _trace_algorithm1(inst, kern, factors, sched, replica_id=k, seed=seed + 7_919 * (k + 1))
        for k in range(record_traces)
    ]
    return AttenuationRunResult(
        schedule=sched,
        factors=factors,
        replicas=replicas,
        revenues=revenues,
        avail_freq=avail_counts / replicas,
        accept_freq=accept_counts / replicas,
        traces=traces,
    )


def _trace_algorithm1(
    inst: Instance,
    kern: _MatchingKernel,
    factors: AttenuationFactors,
    sched: GammaSchedule,
    replica_id: int,
    seed: int,
) -> PolicyTrace:
    """Scalar single-horizon path with inline event recording and assertions."""
    rng = random.Random(seed)
    n = kern.n
    stock = [1] * n
    retired = [False] * n
    trace = PolicyTrace(replica=replica_id, initial_inventory=tuple(stock))
    from .blackbox import CoinSet  # local import keeps module load light

    for t in range(1, kern.T + 1):
        j = draw_type(inst, 0, rng)
        if j is not None:
            avail_ids = [i for i in range(n) if stock[i] > 0 and not retired[i] and kern.x[j, i] > 0]
            if avail_ids:
                coins = CoinSet(
                    tuple(kern.p[j, i] for i in avail_ids),
                    tuple(kern.x[j, i] for i in avail_ids),
                    int(kern.ell[j]),
                    kern.case[j],
                )
                outcome = run_blackbox(coins, rng=rng)
                assert len(outcome.order) <= kern.ell[j], "patience exceeded"
                stage = 0
                for local in outcome.order:
                    i = avail_ids[local]
                    assert stock[i] > 0 and not retired[i], "offered an unavailable item"
                    displayed = rng.random() < factors.edge[t - 1, j, i]
                    if not displayed:
                        continue
                    stage += 1
                    bought = outcome.heads[local]
                    if bought:
                        stock[i] -= 1
                        trace.steps.append(StepRecord(t, j, stage, (i,), i, kern.r[j, i]))
                    else:
                        trace.steps.append(StepRecord(t, j, stage, (i,), None, 0.0))
        for i in range(n):
            if stock[i] > 0 and not retired[i] and rng.random() >= factors.vertex[t - 1, i]:
                retired[i] = True
    trace.final_inventory = tuple(stock)
    trace.check_conservation(inst)
    return trace


# ---------------------------------------------------------------------------
# Assortment case with repeated offerings allowed, Algorithm 6.


@dataclass
class AssortmentFactors:
    """Per-(item, assortment, type) edge factors plus vertex factors."""

    edge: list[np.ndarray]    # per type: (T, K_j, n)
    vertex: np.ndarray        # (T, n)
    surv_rel_var: np.ndarray  # (T, n)
    mc_budget: int
    diagnostics: list[str] = field(default_factory=list)


class _AssortmentKernel:
    """Vectorized simulation of the repeated-offerings assortment policy."""

    def __init__(self, inst: Instance, solution: mcdlp.McdlpSolution, allow_uncertified: bool):
        if not inst.repeated_offers_allowed:
            raise ValueError("algorithm 6 needs repeated_offers_allowed")
        if not inst.stationary:
            raise ValueError("algorithm 6 assumes stationary arrivals")
        if not inst.unit_inventory:
            raise ValueError("split_inventory() the instance first: unit stocks required")
        if inst.price_levels != 1:
            raise ValueError("algorithm 6 runs on single-price instances")
        self.inst = inst
        n, m = inst.n_products, inst.m
        self.n, self.m, self.T = n, m, inst.T
        self.q = np.array([inst.q(0, j) for j in range(m)])
        self.cum_q = np.cumsum(self.q)
        self.ell = np.array([int(ct.patience) for ct in inst.types])
        self.sets: list[list[frozenset[int]]] = []
        self.masks: list[np.ndarray] = []
        self.weights: list[np.ndarray] = []
        self.p_orig: list[np.ndarray] = []   # per type: (K_j, n) original p_j(i, S)
        self.case: list[str] = []
        family = solution.assortments
        self.certified = True
        for j in range(m):
            ct = inst.types[j]
            support = [(S, v) for S, v in sorted(solution.plan[j].items(), key=lambda kv: tuple(sorted(kv[0])))
                       if v > 1e-12 and len(S) > 0]
            sets = [S for S, _ in support]
            self.sets.append(sets)
            K = len(sets)
            mask = np.zeros((K, n), dtype=bool)
            porig = np.zeros((K, n))
            for k, S in enumerate(sets):
                for i in S:
                    mask[k, i] = True
                    porig[k, i] = choice_prob(ct.choice, i, S)
            self.masks.append(mask)
            self.p_orig.append(porig)
            self.weights.append(np.array([v for _, v in support]))
            total_mass = 0.0
            nonempty = 0
            for S in family:
                total_mass += sum(choice_prob(ct.choice, i, S) for i in S)
                nonempty += bool(S)
            # the empty assortment is never a coin, so it does not count
            # against the patience side of the hypothesis
            if self.ell[j] >= nonempty:
                self.case.append(CASE_FULL)
            elif total_mass <= 1 + 1e-9:
                self.case.append(CASE_SMALL)
            else:
                self.case.append(CASE_NONE)
                self.certified = False
        if not self.certified and not allow_uncertified:
            raise ValueError(
                "hypothesis violated: need sum_S sum_i p_j(i,S) <= 1 or ell_j >= |family| per type"
            )
        self.r = np.array([ct.revenues for ct in inst.types])
        self._mnl_w = []
        self._item_c = []
        for ct in inst.types:
            if isinstance(ct.choice, Mnl):
                self._mnl_w.append((np.array(ct.choice.weights), ct.choice.no_purchase))
                self._item_c.append(None)
            elif isinstance(ct.choice, Tabular) and ct.choice.item_probs is not None:
                self._mnl_w.append(None)
                self._item_c.append(np.array(ct.choice.item_probs))
            else:
                self._mnl_w.append(None)
                self._item_c.append(None)

    def draw_types(self, B: int, rng: np.random.Generator) -> np.ndarray:
        return np.searchsorted(self.cum_q, rng.random(B), side="right")

    def _masses_and_vals(self, j: int, avail_rows: np.ndarray):
        """Stripped per-row assortment masses and per-item selection values.

        Returns (mass (B,K), val (B,K,n)) where val is proportional to the
        conditional item-selection probabilities within each stripped set.
        """
        mask = self.masks[j]
        if self._mnl_w[j] is not None:
            w, v0 = self._mnl_w[j]
            masked = mask[None, :, :] * (w[None, None, :] * avail_rows[:, None, :])
            V = masked.sum(axis=2)
            mass = V / (v0 + V)
            return mass, masked
        if self._item_c[j] is not None:
            c = self._item_c[j]
            masked = mask[None, :, :] * (c[None, None, :] * avail_rows[:, None, :])
            mass = masked.sum(axis=2)
            return mass, masked
        # general tabular: row-by-row evaluation on stripped sets
        ct = self.inst.types[j]
        B = avail_rows.shape[0]
        K = mask.shape[0]
        mass = np.zeros((B, K))
        val = np.zeros((B, K, self.n))
        for b in range(B):
            av = avail_rows[b]
            for k, S in enumerate(self.sets[j]):
                stripped = frozenset(i for i in S if av[i])
                for i in stripped:
                    p = choice_prob(ct.choice, i, stripped)
                    val[b, k, i] = p
                    mass[b, k] += p
        return mass, val

    def advance(
        self,
        avail: np.ndarray,
        edge_t: list[np.ndarray] | None,
        vertex_t: np.ndarray,
        rng: np.random.Generator,
        sell_out: list[np.ndarray] | None = None,
        revenue_out: np.ndarray | None = None,
    ) -> None:
        B = avail.shape[0]
        types = self.draw_types(B, rng)
        for j in range(self.m):
            rows = np.nonzero(types == j)[0]
            if rows.size == 0 or len(self.sets[j]) == 0:
                continue
            mass, val = self._masses_and_vals(j, avail[rows].astype(float))
            x_rows = np.broadcast_to(self.weights[j], mass.shape).copy()
            x_rows[mass <= 0.0] = 0.0  # fully sold-out assortments are not offered
            flipped, winner = batch_flip(mass, x_rows, int(self.ell[j]), self.case[j], rng)
            won = np.nonzero(winner >= 0)[0]
            if won.size == 0:
                continue
            k_win = winner[won]
            vals = val[won, k_win, :]
            totals = vals.sum(axis=1)
            u = rng.random(won.size) * totals
            items = (vals.cumsum(axis=1) > u[:, None]).argmax(axis=1)
            if edge_t is not None:
                keep = rng.random(won.size) < edge_t[j][k_win, items]
            else:
                keep = np.ones(won.size, dtype=bool)
            sel = won[keep]
            s_rows = rows[sel]
            s_items = items[keep]
            avail[s_rows, s_items] = False
            if sell_out is not None:
                np.add.at(sell_out[j], (k_win[keep], s_items), 1)
            if revenue_out is not None:
                revenue_out[s_rows] += self.r[j, s_items]
        avail &= rng.random(avail.shape) < vertex_t[None, :]

    def presell_tally(self, j: int, avail: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Pre-attenuation sale frequencies Pr[winner = (S_k, i) | Type j]."""
        B = avail.shape[0]
        mass, val = self._masses_and_vals(j, avail.astype(float))
        x_rows = np.broadcast_to(self.weights[j], mass.shape).copy()
        x_rows[mass <= 0.0] = 0.0
        flipped, winner = batch_flip(mass, x_rows, int(self.ell[j]), self.case[j], rng)
        K = len(self.sets[j])
        counts = np.zeros((K, self.n))
        won = np.nonzero(winner >= 0)[0]
        if won.size:
            k_win = winner[won]
            vals = val[won, k_win, :]
            totals = vals.sum(axis=1)
            u = rng.random(won.size) * totals
            items = (vals.cumsum(axis=1) > u[:, None]).argmax(axis=1)
            np.add.at(counts, (k_win, items), 1)
        return counts / B


def run_algorithm6(
    inst: Instance,
    solution: mcdlp.McdlpSolution,
    mc_budget: int = 2000,
    replicas: int = 10_000,
    seed: int = 0,
    allow_uncertified: bool = False,
) -> tuple[AttenuationRunResult, AssortmentFactors]:
    """Attenuated online policy offering assortments with repeats allowed.

    Sold-out items are stripped from every positive-weight assortment before
    the black-box runs; edge attenuation acts per (item, assortment, type).
    Returns the aggregate run result plus the factors; ``accept_freq`` in the
    result is indexed (t, type, item) with sales summed over assortments.
    """
    if solution.variant not in (mcdlp.McdlpVariant.MCDLP_R, mcdlp.McdlpVariant.SINGLE_ITEM):
        raise ValueError("algorithm 6 rounds an MCDLP-R (or single-item) plan")
    if mc_budget < 1:
        raise ValueError("mc_budget must be positive")
    kern = _AssortmentKernel(inst, solution, allow_uncertified)
    T, n, m = kern.T, kern.n, kern.m
    sched = gamma_schedule(T)
    edge = [np.ones((T, len(kern.sets[j]), n)) for j in range(m)]
    vertex = np.ones((T, n))
    surv_rel_var = np.zeros((T, n))
    diags: list[str] = []
    streams = np.random.SeedSequence(seed).spawn(T + 1)
    B = mc_budget
    for t in range(1, T + 1):
        rng = np.random.default_rng(streams[t - 1])
        avail = np.ones((B, n), dtype=bool)
        for s in range(1, t):
            kern.advance(avail, [e[s - 1] for e in edge], vertex[s - 1], rng)
        g_t = sched.gamma(t)
        scale = 1.0 - math.exp(-g_t)
        for j in range(m):
            if len(kern.sets[j]) == 0:
                continue
            presell = kern.presell_tally(j, avail, rng)
            target = scale * kern.p_orig[j] * kern.weights[j][:, None]
            se = np.sqrt(np.maximum(presell * (1 - presell), 0.0) / B)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(presell > 0, target / np.maximum(presell, _EPS), 1.0)
            over = (target > presell + 2 * se + _EPS) & (target > 0)
            for k, i in zip(*np.nonzero(over)):
                diags.append(
                    f"t={t} type={j} set={sorted(kern.sets[j][k])} item={int(i)}: "
                    f"sale target {target[k, i]:.4f} exceeds estimate {presell[k, i]:.4f} + 2se"
                )
            edge[j][t - 1] = np.clip(ratio, 0.0, 1.0)
        kern.advance(avail, [e[t - 1] for e in edge], np.ones(n), rng)
        p_surv = avail.mean(axis=0)
        g_next = sched.gamma(t + 1)
        vertex[t - 1] = np.clip(g_next / np.maximum(p_surv, _EPS), 0.0, 1.0)
        surv_rel_var[t - 1] = np.where(p_surv > 0, (1 - p_surv) / np.maximum(p_surv * B, _EPS), 0.0)
    factors = AssortmentFactors(
        edge=[e for e in edge], vertex=vertex, surv_rel_var=surv_rel_var,
        mc_budget=mc_budget, diagnostics=diags,
    )
    # evaluation
    rng = np.random.default_rng(streams[T])
    revenues = np.zeros(replicas)
    avail_counts = np.zeros((T + 1, n))
    accept_counts = np.zeros((T, m, n))
    done = 0
    while done < replicas:
        Bc = min(100_000, replicas - done)
        avail = np.ones((Bc, n), dtype=bool)
        rev = np.zeros(Bc)
        for t in range(1, T + 1):
            avail_counts[t - 1] += avail.sum(axis=0)
            sell_out = [np.zeros((len(kern.sets[j]), n)) for j in range(m)]
            kern.advance(avail, [e[t - 1] for e in edge], vertex[t - 1], rng,
                         sell_out=sell_out, revenue_out=rev)
            for j in range(m):
                if len(kern.sets[j]):
                    accept_counts[t - 1, j] += sell_out[j].sum(axis=0)
        avail_counts[T] += avail.sum(axis=0)
        revenues[done : done + Bc] = rev
        done += Bc
    mfactors = AttenuationFactors(
        edge=np.ones((T, m, n)), vertex=vertex, surv_rel_var=surv_rel_var,
        mc_budget=mc_budget, diagnostics=diags,
    )
    result = AttenuationRunResult(
        schedule=sched,
        factors=mfactors,
        replicas=replicas,
        revenues=revenues,
        avail_freq=avail_counts / replicas,
        accept_freq=accept_counts / replicas,
    )
    return result, factors
