"""Primal revised simplex for LPs with boxed variables.

Solves ``min c·x  s.t.  A x (<=|=|>=) b,  lower <= x <= upper`` with finite
variable bounds. Nonbasic variables sit at one of their bounds, so bound
changes never need extra rows. Phase 1 minimizes the sum of artificials
added only to rows whose slack cannot absorb the starting residual.

Pricing is Dantzig (largest reduced cost) until ``5 * ncols`` pivots have
been made, then Bland's rule, which cannot cycle. The basis inverse is kept
explicitly and rebuilt from scratch every ``REFACTOR_EVERY`` pivots.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import dger

REFACTOR_EVERY = 256
PIVOT_TOL = 1e-9
DUAL_TOL = 1e-9
PRIMAL_TOL = 1e-9
SPARSE_ABOVE = 20_000


class NumericalBreakdown(ArithmeticError):
    """The basis became singular or the iterates lost feasibility."""


class LpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    objective: float
    x: np.ndarray | None
    iterations: int = 0


def solve_lp_arrays(c, A, sense, b, lower, upper) -> LpSolution:
    """Solve one LP given as dense arrays. ``sense``: -1 for <=, 0 for =, +1 for >=."""
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    sense = np.asarray(sense)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = c.size
    if A.shape != (b.size, n):
        raise ValueError(f"A has shape {A.shape}, expected {(b.size, n)}")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("all variable bounds must be finite")
    if np.any(lower > upper + PRIMAL_TOL):
        return LpSolution(LpStatus.INFEASIBLE, float("nan"), None)

    # bound fixing: substitute variables with lower == upper
    fixed = lower >= upper
    free = ~fixed
    x = np.where(fixed, lower, 0.0)
    rhs = b - A[:, fixed] @ lower[fixed] if fixed.any() else b.copy()
    Af = A[:, free]
    live = np.any(Af != 0.0, axis=1)
    scale = 1.0 + np.abs(b).max(initial=0.0)
    tol = PRIMAL_TOL * scale
    for i in np.flatnonzero(~live):
        r = rhs[i]
        if (sense[i] < 0 and r < -tol) or (sense[i] > 0 and r > tol) or (sense[i] == 0 and abs(r) > tol):
            return LpSolution(LpStatus.INFEASIBLE, float("nan"), None)

    if free.any():
        core = _BoundedSimplex(c[free], Af[live], sense[live], rhs[live], lower[free], upper[free], tol)
        status, xf, iters = core.run()
        if status is not LpStatus.OPTIMAL:
            return LpSolution(status, float("nan"), None, iters)
        x[free] = xf
    else:
        iters = 0
    return LpSolution(LpStatus.OPTIMAL, float(c @ x), x, iters)


class _BoundedSimplex:
    def __init__(self, c, A, sense, b, lower, upper, tol):
        m, n = A.shape
        self.m, self.n = m, n
        self.tol = tol
        self.b = b
        # columns: structural | slacks | artificials (added below)
        slack_lo = np.where(sense > 0, -np.inf, 0.0)
        slack_hi = np.where(sense < 0, np.inf, 0.0)

        x_struct = lower.copy()
        resid = b - A @ x_struct
        clamp = np.minimum(np.maximum(resid, slack_lo), slack_hi)
        gap = resid - clamp
        need_art = np.abs(gap) > 0.0
        art_rows = np.flatnonzero(need_art)
        k = art_rows.size

        M = np.zeros((m, n + m + k))
        M[:, :n] = A
        M[np.arange(m), n + np.arange(m)] = 1.0
        sigma = np.sign(gap[art_rows])
        M[art_rows, n + m + np.arange(k)] = sigma
        self.M = M
        # sparse pricing only pays off once the tableau is reasonably large
        self.sparse = M.size > SPARSE_ABOVE
        if self.sparse:
            self.Mt = sp.csr_matrix(M.T)
            Mc = sp.csc_matrix(M)
            self.col_rows = [Mc.indices[Mc.indptr[j]:Mc.indptr[j + 1]] for j in range(M.shape[1])]
            self.col_vals = [Mc.data[Mc.indptr[j]:Mc.indptr[j + 1]] for j in range(M.shape[1])]
        else:
            self.Mt = np.ascontiguousarray(M.T)
        self.ncols = n + m + k
        self.lo = np.concatenate([lower, slack_lo, np.zeros(k)])
        self.hi = np.concatenate([upper, slack_hi, np.full(k, np.inf)])
        self.cost2 = np.concatenate([c, np.zeros(m + k)])
        self.cost1 = np.concatenate([np.zeros(n + m), np.ones(k)])

        # starting basis: slack where it absorbs the residual, artificial otherwise
        self.x = np.concatenate([x_struct, clamp, np.abs(gap[art_rows])])
        basis = n + np.arange(m)
        basis[art_rows] = n + m + np.arange(k)
        self.basis = basis
        self.is_basic = np.zeros(self.ncols, dtype=bool)
        self.is_basic[basis] = True
        self.at_upper = np.zeros(self.ncols, dtype=bool)
        # slacks of >= rows start nonbasic at their upper bound (0)
        nb_slack = (~self.is_basic[n:n + m]) & (sense > 0)
        self.at_upper[n:n + m] = nb_slack
        self.Binv = np.asfortranarray(np.eye(m))
        self.Binv[art_rows, art_rows] = sigma
        self.iterations = 0
        self.since_refactor = 0
        self.bland_after = 5 * self.ncols
        self.num_art = k
        self.art_start = n + m

    def run(self):
        if self.num_art:
            status = self._iterate(self.cost1)
            if status is not LpStatus.OPTIMAL:
                raise NumericalBreakdown("phase 1 reported an unbounded ray")
            infeas = float(self.x[self.art_start:].sum())
            if infeas > self.tol:
                return LpStatus.INFEASIBLE, None, self.iterations
            self.hi[self.art_start:] = 0.0
            self.x[self.art_start:] = np.clip(self.x[self.art_start:], 0.0, 0.0)
            self._refactor()
        status = self._iterate(self.cost2)
        if status is not LpStatus.OPTIMAL:
            return status, None, self.iterations
        if self.since_refactor:
            self._refactor()
        xs = self.x[:self.n]
        return LpStatus.OPTIMAL, np.clip(xs, self.lo[:self.n], self.hi[:self.n]), self.iterations

    def _refactor(self):
        B = self.M[:, self.basis]
        try:
            self.Binv = np.asfortranarray(np.linalg.inv(B))
        except np.linalg.LinAlgError:
            raise NumericalBreakdown("basis matrix is singular") from None
        nonbasic = ~self.is_basic
        r = self.b - self.M[:, nonbasic] @ self.x[nonbasic]
        xb = self.Binv @ r
        if not np.all(np.isfinite(xb)) or np.abs(B @ xb - r).max(initial=0.0) > 1e-6 * (1 + np.abs(r).max(initial=0.0)):
            raise NumericalBreakdown("basis solve lost accuracy")
        self.x[self.basis] = xb
        self.since_refactor = 0

    def _iterate(self, cost):
        Mt = self.Mt
        limit = 50 * (self.ncols + self.m) + 1000
        movable = self.lo < self.hi
        while True:
            if self.iterations > limit:
                raise NumericalBreakdown(f"no convergence after {self.iterations} pivots")
            y = self.Binv.T @ cost[self.basis]
            d = cost - Mt @ y
            elig = (~self.is_basic) & movable & np.where(self.at_upper, d > DUAL_TOL, d < -DUAL_TOL)
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return LpStatus.OPTIMAL
            bland = self.iterations >= self.bland_after
            q = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = -1.0 if self.at_upper[q] else 1.0

            if self.sparse:
                alpha = self.Binv[:, self.col_rows[q]] @ self.col_vals[q]
            else:
                alpha = self.Binv @ self.M[:, q]
            delta = direction * alpha
            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = delta > PIVOT_TOL
            inc = delta < -PIVOT_TOL
            with np.errstate(invalid="ignore"):
                ratios[dec] = (xb[dec] - lob[dec]) / delta[dec]
                ratios[inc] = (hib[inc] - xb[inc]) / (-delta[inc])
            ratios = np.maximum(ratios, 0.0)
            theta = ratios.min(initial=np.inf)
            flip = self.hi[q] - self.lo[q]

            if flip <= theta:
                if not np.isfinite(flip):
                    return LpStatus.UNBOUNDED
                self.x[self.basis] = xb - flip * delta
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                self.at_upper[q] = direction > 0
                self.iterations += 1
                continue

            ties = np.flatnonzero(ratios <= theta + 1e-12)
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(delta[ties]))])
            piv = alpha[r]
            if abs(piv) < PIVOT_TOL:
                raise NumericalBreakdown(f"pivot magnitude {abs(piv):.3e} below threshold")

            leaving = int(self.basis[r])
            self.x[self.basis] = xb - theta * delta
            self.x[q] += direction * theta
            self.x[leaving] = self.lo[leaving] if delta[r] > 0 else self.hi[leaving]
            self.at_upper[leaving] = delta[r] <= 0
            self.is_basic[leaving] = False
            self.is_basic[q] = True
            self.at_upper[q] = False
            self.basis[r] = q

            prow = self.Binv[r] / piv
            self.Binv = dger(-1.0, alpha, prow, a=self.Binv, overwrite_a=1)
            self.Binv[r] = prow
            self.iterations += 1
            self.since_refactor += 1
            if self.since_refactor >= REFACTOR_EVERY:
                self._refactor()
