"""Minimal bounded linear-program abstraction and dense simplex solver.

Problems have the fixed shape ``max c.x  s.t.  A x <= b,  lo <= x <= hi`` with
``lo >= 0`` and every structural variable bounded above.  The solver is a
two-phase revised simplex over bounded variables: Dantzig pricing with ties
broken by lowest variable index, falling back to Bland's rule after a long
degenerate streak.  Every optimal solve returns row duals and is checked for
primal feasibility and strong duality before being handed back.

``solve`` is a pure function of its input (fixed pivot rules, no randomness),
so identical models produce identical solutions and concurrent solves on
distinct models are safe.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

TOL_FEAS = 1e-7
TOL_DUAL = 1e-7
_PIVOT_TOL = 1e-9
_REFACTOR_EVERY = 64

__all__ = [
    "LpModel",
    "LpRow",
    "LpSolution",
    "LpError",
    "LpNumericalError",
    "solve",
    "dual_of",
    "to_lp_text",
]


class LpError(Exception):
    pass


class LpNumericalError(LpError):
    """Raised when pivot refinement cannot restore the optimality certificates."""


RowTag = str | tuple


@dataclass(frozen=True)
class LpRow:
    """One <= constraint given as a sparse coefficient list."""

    coeffs: tuple[tuple[int, float], ...]
    rhs: float
    tag: RowTag | None = None


@dataclass(frozen=True)
class LpModel:
    num_vars: int
    objective: tuple[float, ...]
    rows: tuple[LpRow, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.objective) != self.num_vars:
            raise LpError("objective length mismatch")
        if len(self.lower) != self.num_vars or len(self.upper) != self.num_vars:
            raise LpError("bound length mismatch")
        for v in self.objective:
            if not np.isfinite(v):
                raise LpError("objective coefficients must be finite")
        for lo, hi in zip(self.lower, self.upper):
            if lo < 0 or not np.isfinite(lo):
                raise LpError("lower bounds must be finite and >= 0")
            if not np.isfinite(hi):
                raise LpError("every variable needs a finite upper bound")
            if hi < lo:
                raise LpError("upper bound below lower bound")
        for row in self.rows:
            if not np.isfinite(row.rhs):
                raise LpError("row rhs must be finite")
            for j, a in row.coeffs:
                if j < 0 or j >= self.num_vars:
                    raise LpError(f"row references unknown variable {j}")
                if not np.isfinite(a):
                    raise LpError("row coefficients must be finite")

    @staticmethod
    def build(
        objective: Sequence[float],
        rows: Iterable[tuple[Sequence[tuple[int, float]], float, RowTag | None]],
        upper: Sequence[float],
        lower: Sequence[float] | None = None,
    ) -> "LpModel":
        n = len(objective)
        lo = tuple(lower) if lower is not None else (0.0,) * n
        return LpModel(
            num_vars=n,
            objective=tuple(float(c) for c in objective),
            rows=tuple(LpRow(tuple((j, float(a)) for j, a in cs), float(rhs), tag) for cs, rhs, tag in rows),
            lower=lo,
            upper=tuple(float(u) for u in upper),
        )

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        A = np.zeros((len(self.rows), self.num_vars))
        b = np.zeros(len(self.rows))
        for r, row in enumerate(self.rows):
            b[r] = row.rhs
            for j, a in row.coeffs:
                A[r, j] += a
        return A, b


@dataclass(frozen=True)
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    objective: float
    x: tuple[float, ...]
    duals: tuple[float, ...]
    row_tags: tuple[RowTag | None, ...]
    _tag_index: Mapping[RowTag, int] = field(default_factory=dict, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def dual(self, row: int | RowTag) -> float:
        return dual_of(self, row)


def dual_of(solution: LpSolution, row: int | RowTag) -> float:
    """Dual multiplier of a constraint row, addressed by index or builder tag."""
    if not solution.optimal:
        raise LpError("duals are only available for optimal solutions")
    if isinstance(row, int) and not isinstance(row, bool):
        if row < 0 or row >= len(solution.duals):
            raise LpError(f"unknown row index {row}")
        return solution.duals[row]
    try:
        return solution.duals[solution._tag_index[row]]
    except KeyError:
        raise LpError(f"unknown row tag {row!r}") from None


class _Simplex:
    """Bounded-variable primal simplex on max c.x, A x <= b, lo <= x <= hi."""

    def __init__(self, model: LpModel):
        A, b = model.dense()
        m, n = A.shape
        self.m, self.n_struct = m, n
        n_art = int(np.sum(b - A @ np.array(model.lower) < -TOL_FEAS)) if m else 0
        # columns: structural | slacks | artificials (phase 1 only)
        cols = n + m
        self.A = np.zeros((m, cols))
        self.A[:, :n] = A
        self.A[:, n : n + m] = np.eye(m)
        self.b = b
        self.lo = np.concatenate([np.array(model.lower), np.zeros(m)])
        self.hi = np.concatenate([np.array(model.upper), np.full(m, np.inf)])
        self.c = np.concatenate([np.array(model.objective), np.zeros(m)])
        self.art: list[int] = []
        self.model = model

    def _install_artificials(self) -> None:
        start = np.array(self.lo[: self.n_struct])
        resid = self.b - self.A[:, : self.n_struct] @ start
        self.basis = []
        art_cols = []
        for r in range(self.m):
            if resid[r] >= -TOL_FEAS:
                self.basis.append(self.n_struct + r)  # slack basic
            else:
                col = np.zeros(self.m)
                col[r] = -1.0
                art_cols.append(col)
                self.art.append(self.A.shape[1] + len(art_cols) - 1)
                self.basis.append(self.art[-1])
        if art_cols:
            self.A = np.hstack([self.A, np.column_stack(art_cols)])
            self.lo = np.concatenate([self.lo, np.zeros(len(art_cols))])
            self.hi = np.concatenate([self.hi, np.full(len(art_cols), np.inf)])
            self.c = np.concatenate([self.c, np.zeros(len(art_cols))])
        ncols = self.A.shape[1]
        self.at_upper = np.zeros(ncols, dtype=bool)
        self.in_basis = np.zeros(ncols, dtype=bool)
        self.in_basis[self.basis] = True

    def _refactor(self) -> None:
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LpNumericalError(f"singular basis: {exc}") from exc

    def _x_nonbasic(self) -> np.ndarray:
        x = np.where(self.at_upper, self.hi, self.lo)
        x[self.basis] = 0.0
        return x

    def _xB(self) -> np.ndarray:
        xN = self._x_nonbasic()
        mask = ~self.in_basis
        return self.Binv @ (self.b - self.A[:, mask] @ xN[mask])

    def _iterate(self, cvec: np.ndarray, max_iter: int) -> str:
        bland = False
        degen_streak = 0
        since_refactor = 0
        for _ in range(max_iter):
            if since_refactor >= _REFACTOR_EVERY:
                self._refactor()
                since_refactor = 0
            xB = self._xB()
            y = cvec[self.basis] @ self.Binv
            d = cvec - y @ self.A
            viol = np.zeros_like(d)
            free = ~self.in_basis
            lo_side = free & ~self.at_upper
            hi_side = free & self.at_upper
            viol[lo_side] = d[lo_side]
            viol[hi_side] = -d[hi_side]
            candidates = np.nonzero(viol > TOL_DUAL)[0]
            if candidates.size == 0:
                return "optimal"
            if bland:
                e = int(candidates[0])
            else:
                best = viol[candidates].max()
                e = int(candidates[viol[candidates] >= best - 1e-15][0])
            sigma = -1.0 if self.at_upper[e] else 1.0
            w = self.Binv @ self.A[:, e]
            # ratio test: entering moves by delta >= 0 in direction sigma
            delta = np.inf
            leave_pos = -1
            leave_to_upper = False
            for r in range(self.m):
                step = sigma * w[r]
                if step > _PIVOT_TOL:  # basic variable decreases toward its lower bound
                    cap = (xB[r] - self.lo[self.basis[r]]) / step
                    new_upper = False
                elif step < -_PIVOT_TOL:  # basic variable increases toward its upper bound
                    hi_r = self.hi[self.basis[r]]
                    if not np.isfinite(hi_r):
                        continue
                    cap = (hi_r - xB[r]) / (-step)
                    new_upper = True
                else:
                    continue
                cap = max(cap, 0.0)
                if cap < delta - 1e-12 or (
                    cap < delta + 1e-12
                    and leave_pos >= 0
                    and self.basis[r] < self.basis[leave_pos]
                ):
                    delta = cap
                    leave_pos = r
                    leave_to_upper = new_upper
            bound_gap = self.hi[e] - self.lo[e]
            if not np.isfinite(delta) and not np.isfinite(bound_gap):
                return "unbounded"
            if bound_gap <= delta:
                # bound flip: entering variable runs to its opposite bound
                self.at_upper[e] = not self.at_upper[e]
                if bound_gap <= _PIVOT_TOL:
                    degen_streak += 1
                else:
                    degen_streak = 0
            else:
                leaving = self.basis[leave_pos]
                self.basis[leave_pos] = e
                self.in_basis[leaving] = False
                self.in_basis[e] = True
                self.at_upper[leaving] = leave_to_upper
                self.at_upper[e] = False
                # product-form update of Binv
                piv = w[leave_pos]
                if abs(piv) < _PIVOT_TOL:
                    self._refactor()
                else:
                    row = self.Binv[leave_pos] / piv
                    self.Binv -= np.outer(w, row)
                    self.Binv[leave_pos] = row
                since_refactor += 1
                degen_streak = degen_streak + 1 if delta <= _PIVOT_TOL else 0
            if degen_streak > 2 * (self.m + 10):
                bland = True
        raise LpNumericalError("simplex iteration limit reached")

    def run(self) -> LpSolution:
        model = self.model
        tags = tuple(row.tag for row in model.rows)
        tag_index = {t: i for i, t in enumerate(tags) if t is not None}
        if self.m == 0:
            x = np.where(np.array(model.objective) > 0, model.upper, model.lower).astype(float)
            obj = float(np.dot(model.objective, x))
            return LpSolution("optimal", obj, tuple(x), (), tags, tag_index)
        self._install_artificials()
        self._refactor()
        max_iter = 200 * (self.A.shape[1] + self.m) + 2000
        if self.art:
            c1 = np.zeros(self.A.shape[1])
            c1[self.art] = -1.0
            status = self._iterate(c1, max_iter)
            if status != "optimal":
                raise LpNumericalError("phase 1 did not converge")
            xfull = self._assemble_x()
            if float(np.sum(xfull[self.art])) > TOL_FEAS * (1 + abs(self.b).sum()):
                return LpSolution("infeasible", float("nan"), (), (), tags, tag_index)
            self.hi[self.art] = 0.0  # lock artificials at zero for phase 2
        status = self._iterate(self.c, max_iter)
        if status == "unbounded":
            return LpSolution("unbounded", float("inf"), (), (), tags, tag_index)
        return self._certified_solution(tags, tag_index)

    def _assemble_x(self) -> np.ndarray:
        x = self._x_nonbasic()
        x[self.basis] = self._xB()
        return x

    def _certified_solution(self, tags, tag_index) -> LpSolution:
        for attempt in range(3):
            self._refactor()
            x = self._assemble_x()
            y = self.c[self.basis] @ self.Binv
            err = self._certificate_error(x, y)
            if err <= TOL_FEAS:
                xs = x[: self.n_struct]
                obj = float(np.dot(self.model.objective, xs))
                return LpSolution("optimal", obj, tuple(xs), tuple(y), tags, tag_index)
            if attempt < 2:
                # one more pivoting pass from the refactored basis
                self._iterate(self.c, 50 * (self.m + 10))
        raise LpNumericalError(f"optimality certificates violated by {err:g}")

    def _certificate_error(self, x: np.ndarray, y: np.ndarray) -> float:
        A, b = self.A, self.b
        scale = 1.0 + float(np.abs(b).max(initial=0.0)) + float(np.abs(x).max(initial=0.0))
        feas = max(
            float(np.max(A @ x - b, initial=0.0)),
            float(np.max(self.lo - x, initial=0.0)),
            float(np.max((x - self.hi)[np.isfinite(self.hi)], initial=0.0)),
        )
        dual_feas = max(0.0, float(-y.min(initial=0.0)))
        d = self.c - y @ A
        pos = d > TOL_DUAL
        neg = d < -TOL_DUAL
        hi_terms = np.where(np.isfinite(self.hi), self.hi, 0.0)
        unbounded_pos = pos & ~np.isfinite(self.hi)
        if unbounded_pos.any():
            return float("inf")
        dual_obj = float(y @ b + np.sum(d[pos] * hi_terms[pos]) + np.sum(d[neg] * self.lo[neg]))
        primal_obj = float(self.c @ x)
        gap = abs(primal_obj - dual_obj)
        objscale = 1.0 + abs(primal_obj)
        return max(feas / scale, dual_feas, gap / objscale)


def solve(model: LpModel) -> LpSolution:
    """Solve to optimality with primal and dual certificates, or report status."""
    return _Simplex(model).run()


def to_lp_text(model: LpModel, name: str = "model") -> str:
    """Debug dump in LP text interchange layout for cross-checking elsewhere."""
    lines = [f"\\ {name}", "Maximize", " obj: " + _expr(enumerate(model.objective))]
    lines.append("Subject To")
    for r, row in enumerate(model.rows):
        tag = row.tag if row.tag is not None else f"r{r}"
        lines.append(f" c{r}: " + _expr(row.coeffs) + f" <= {row.rhs:.12g}  \\ {tag}")
    lines.append("Bounds")
    for j in range(model.num_vars):
        lines.append(f" {model.lower[j]:.12g} <= x{j} <= {model.upper[j]:.12g}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def _expr(coeffs) -> str:
    parts = []
    for j, a in coeffs:
        if a == 0:
            continue
        sign = "+" if a >= 0 else "-"
        parts.append(f"{sign} {abs(a):.12g} x{j}")
    if not parts:
        return "0"
    if parts[0].startswith("+ "):
        parts[0] = parts[0][2:]
    return " ".join(parts)
