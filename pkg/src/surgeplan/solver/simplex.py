"""Bounded-variable simplex over a slack-extended standard form.

The working problem is min c.x subject to A x + s = b with both structural
and slack variables box-bounded (slacks encode row sense).  Rows are scaled
to unit max-abs before solving.  The basis inverse is kept as a sparse LU
factorization plus a product-form eta file, refreshed periodically.

Pricing is Dantzig (most negative reduced cost) with a Bland fallback after
a run of degenerate pivots.  A bounded dual simplex supports warm restarts
after variable-bound changes, which is how branch-and-bound re-solves nodes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sla

from ..domain import ValidationError
from .model import MipModel

AT_LB = np.int8(0)
AT_UB = np.int8(1)
BASIC = np.int8(2)
FREE_NB = np.int8(3)

_PIVOT_TOL = 1e-9
_DUAL_TOL = 1e-9
_ETA_LIMIT = 80


@dataclass
class StandardForm:
    """Slack-extended, row-scaled LP data."""

    A: sparse.csc_matrix
    AT: sparse.csr_matrix
    b: np.ndarray
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_structural: int
    num_rows: int
    row_scale: np.ndarray
    convexity_row_of_group: list[int]

    @property
    def num_cols(self) -> int:
        return self.c.size


def standardize(model: MipModel) -> StandardForm:
    """Convert a MipModel to slack form.  SOS1 groups contribute one
    convexity row each (members sum to 1), which is their LP relaxation."""
    n = model.num_variables
    rows: list[tuple[np.ndarray, np.ndarray, str, float]] = [
        (con.indices, con.coefficients, con.sense, con.rhs) for con in model.constraints
    ]
    convexity_row_of_group = []
    for members in model.sos1_groups:
        convexity_row_of_group.append(len(rows))
        rows.append(
            (np.array(members, dtype=np.int64), np.ones(len(members)), "=", 1.0)
        )
    m = len(rows)

    data, row_idx, col_idx = [], [], []
    b = np.zeros(m)
    scale = np.ones(m)
    slack_lb = np.zeros(m)
    slack_ub = np.zeros(m)
    for r, (idx, coef, sense, rhs) in enumerate(rows):
        s = float(np.max(np.abs(coef))) if coef.size else 1.0
        if s <= 0:
            s = 1.0
        scale[r] = s
        data.append(coef / s)
        row_idx.append(np.full(idx.size, r, dtype=np.int64))
        col_idx.append(idx)
        b[r] = rhs / s
        if sense == "<=":
            slack_lb[r], slack_ub[r] = 0.0, math.inf
        elif sense == ">=":
            slack_lb[r], slack_ub[r] = -math.inf, 0.0
        else:
            slack_lb[r], slack_ub[r] = 0.0, 0.0
    # slack identity block
    data.append(np.ones(m))
    row_idx.append(np.arange(m, dtype=np.int64))
    col_idx.append(np.arange(n, n + m, dtype=np.int64))

    A = sparse.csc_matrix(
        (np.concatenate(data), (np.concatenate(row_idx), np.concatenate(col_idx))),
        shape=(m, n + m),
    )
    lb = np.concatenate([np.array(model.var_lb, dtype=float), slack_lb])
    ub = np.concatenate([np.array(model.var_ub, dtype=float), slack_ub])
    c = np.concatenate([model.objective_vector(), np.zeros(m)])
    return StandardForm(
        A=A,
        AT=A.T.tocsr(),
        b=b,
        c=c,
        lb=lb,
        ub=ub,
        n_structural=n,
        num_rows=m,
        row_scale=scale,
        convexity_row_of_group=convexity_row_of_group,
    )


class BoundedSimplex:
    """Primal/dual bounded simplex sharing one factorization state."""

    def __init__(self, sf: StandardForm, feas_tol: float = 1e-7):
        self.sf = sf
        self.feas_tol = feas_tol
        m, ncols = sf.num_rows, sf.num_cols
        self.m = m
        self.ncols = ncols
        self.lb = sf.lb.copy()
        self.ub = sf.ub.copy()
        self.x = np.zeros(ncols)
        self.status = np.full(ncols, AT_LB, dtype=np.int8)
        self.basis = np.zeros(m, dtype=np.int64)
        self._lu = None
        self._etas: list[tuple[int, np.ndarray]] = []
        self.iterations = 0
        self._degenerate_run = 0
        self._bland = False
        # column scatter buffer
        self._colbuf = np.zeros(m)

    # -- basis & factorization ----------------------------------------------

    def reset_slack_basis(self) -> None:
        """All-slack basis with structurals at their cheapest finite bound."""
        sf = self.sf
        n = sf.n_structural
        self.status[:] = AT_LB
        for j in range(n):
            lo, hi = self.lb[j], self.ub[j]
            if math.isinf(lo) and math.isinf(hi):
                self.status[j] = FREE_NB
                self.x[j] = 0.0
            elif math.isinf(lo):
                self.status[j] = AT_UB
                self.x[j] = hi
            elif math.isinf(hi):
                self.status[j] = AT_LB
                self.x[j] = lo
            else:
                # prefer the bound with lower cost contribution
                take_ub = sf.c[j] < 0
                self.status[j] = AT_UB if take_ub else AT_LB
                self.x[j] = hi if take_ub else lo
        self.basis = np.arange(n, n + self.m, dtype=np.int64)
        self.status[n:] = BASIC
        self.factorize()
        self.recompute_basics()

    def factorize(self) -> None:
        B = self.sf.A[:, self.basis]
        try:
            self._lu = sla.splu(B.tocsc(), permc_spec="COLAMD")
        except RuntimeError as err:
            raise _SingularBasis(str(err)) from err
        diag = np.abs(self._lu.U.diagonal())
        if diag.size and diag.min() < 1e-12:
            raise _SingularBasis("numerically singular basis")
        self._etas = []

    def ftran(self, rhs: np.ndarray) -> np.ndarray:
        v = self._lu.solve(rhs)
        for r, w in self._etas:
            piv = v[r] / w[r]
            if piv != 0.0:
                v -= piv * w
            v[r] = piv
        return v

    def btran(self, rhs: np.ndarray) -> np.ndarray:
        v = rhs.copy()
        for r, w in reversed(self._etas):
            s = w @ v
            v[r] = (v[r] * (1.0 + w[r]) - s) / w[r]
        return self._lu.solve(v, trans="T")

    def column(self, j: int) -> np.ndarray:
        """Dense copy of A[:, j]."""
        A = self.sf.A
        start, end = A.indptr[j], A.indptr[j + 1]
        buf = self._colbuf
        buf[:] = 0.0
        buf[A.indices[start:end]] = A.data[start:end]
        return buf

    def recompute_basics(self) -> None:
        """Refresh basic values from the nonbasic point (numerical hygiene)."""
        xn = self.x.copy()
        xn[self.basis] = 0.0
        rhs = self.sf.b - self.sf.A @ xn
        self.x[self.basis] = self.ftran(rhs)

    # -- shared pieces --------------------------------------------------------

    def _basic_violations(self) -> np.ndarray:
        xb = self.x[self.basis]
        return np.maximum(self.lb[self.basis] - xb, xb - self.ub[self.basis])

    def reduced_costs(self, cost: Optional[np.ndarray] = None) -> np.ndarray:
        c = self.sf.c if cost is None else cost
        y = self.btran(np.ascontiguousarray(c[self.basis]))
        return c - self.sf.AT @ y

    def duals(self) -> np.ndarray:
        """Row prices for the scaled rows (divide by row_scale for originals)."""
        return self.btran(np.ascontiguousarray(self.sf.c[self.basis]))

    def objective_value(self) -> float:
        return float(self.sf.c @ self.x)

    def solution(self) -> np.ndarray:
        return self.x[: self.sf.n_structural].copy()

    def max_row_violation(self) -> float:
        """Row residual in original (unscaled) units plus bound violations."""
        resid = self.sf.A @ self.x - self.sf.b
        row_res = float(np.max(np.abs(resid * self.sf.row_scale))) if resid.size else 0.0
        lbv = float(np.max(np.maximum(self.lb - self.x, 0.0), initial=0.0))
        ubv = float(np.max(np.maximum(self.x - self.ub, 0.0), initial=0.0))
        return max(row_res, lbv, ubv)

    def _note_degenerate(self, step: float) -> None:
        if step <= 1e-10:
            self._degenerate_run += 1
            if self._degenerate_run >= 10 * (self.m + self.ncols):
                self._bland = True
        else:
            self._degenerate_run = 0
            self._bland = False

    def _pivot(self, q: int, rpos: int, w: np.ndarray, leave_status: np.int8) -> None:
        leaving = self.basis[rpos]
        self.status[leaving] = leave_status
        self.status[q] = BASIC
        self.basis[rpos] = q
        # a pivot too small for a stable eta update forces refactorization;
        # factorize() raises _SingularBasis if the new basis is truly rank
        # deficient, which node solves answer with a cold restart
        tiny = abs(w[rpos]) < 1e-7 * max(1.0, float(np.abs(w).max()))
        if tiny or len(self._etas) + 1 >= _ETA_LIMIT:
            self.factorize()
            self.recompute_basics()
        else:
            self._etas.append((rpos, w.copy()))

    # -- primal simplex -------------------------------------------------------

    def primal_solve(
        self,
        deadline: Optional[float] = None,
        iteration_limit: Optional[int] = None,
    ) -> str:
        """Two-phase primal; returns optimal | infeasible | unbounded | limit."""
        sf = self.sf
        limit = iteration_limit or max(200_000, 50 * (self.m + self.ncols))
        fixed = self.lb == self.ub
        for it in range(limit):
            if deadline is not None and it % 64 == 0 and time.perf_counter() > deadline:
                return "limit"
            viol = self._basic_violations()
            max_viol = float(viol.max(initial=0.0))
            phase1 = max_viol > self.feas_tol
            if phase1:
                grad = np.zeros(self.m)
                xb = self.x[self.basis]
                grad[xb > self.ub[self.basis] + self.feas_tol] = 1.0
                grad[xb < self.lb[self.basis] - self.feas_tol] = -1.0
                d = -(sf.AT @ self.btran(grad))
            else:
                d = self.reduced_costs()

            eligible = (
                ((self.status == AT_LB) & (d < -_DUAL_TOL))
                | ((self.status == AT_UB) & (d > _DUAL_TOL))
                | ((self.status == FREE_NB) & (np.abs(d) > _DUAL_TOL))
            )
            eligible &= ~fixed
            eligible[self.basis] = False
            cand = np.flatnonzero(eligible)
            if cand.size == 0:
                if phase1:
                    return "infeasible"
                return "optimal"
            if self._bland:
                q = int(cand[0])
            else:
                q = int(cand[np.argmax(np.abs(d[cand]))])
            sigma = 1.0 if (self.status[q] == AT_LB or (self.status[q] == FREE_NB and d[q] < 0)) else -1.0

            w = self.ftran(self.column(q))
            step, rpos, leave_status = self._primal_ratio(q, sigma, w, phase1)
            if rpos == -2:
                if phase1:
                    # cannot happen exactly (phase-1 objective is bounded);
                    # treat as numerical noise and retry with Bland's rule
                    self._bland = True
                    self.factorize()
                    self.recompute_basics()
                    continue
                return "unbounded"
            self.iterations += 1
            self._note_degenerate(step)
            if step > 0:
                self.x[self.basis] -= sigma * step * w
                self.x[q] += sigma * step
            if rpos == -1:
                # bound flip, no basis change
                self.status[q] = AT_UB if sigma > 0 else AT_LB
            else:
                self._pivot(q, rpos, w, leave_status)
        return "limit"

    def _primal_ratio(self, q: int, sigma: float, w: np.ndarray, phase1: bool):
        """Smallest blocking step for entering q moving in direction sigma.

        Returns (step, leaving_basis_position, leaving_status); position -1
        means the entering variable flips to its opposite bound, -2 means
        unbounded.
        """
        xb = self.x[self.basis]
        lbb = self.lb[self.basis]
        ubb = self.ub[self.basis]
        rate = -sigma * w  # d x_B / d step
        big = np.inf
        steps = np.full(self.m, big)
        targets = np.full(self.m, AT_LB, dtype=np.int8)

        up = rate > _PIVOT_TOL
        dn = rate < -_PIVOT_TOL
        if phase1:
            below = xb < lbb - self.feas_tol
            above = xb > ubb + self.feas_tol
            # infeasible basics block when they reach their violated bound
            sel = up & below
            steps[sel] = (lbb[sel] - xb[sel]) / rate[sel]
            targets[sel] = AT_LB
            sel = dn & above
            steps[sel] = (ubb[sel] - xb[sel]) / rate[sel]
            targets[sel] = AT_UB
            # feasible basics must stay feasible
            sel = up & ~below & ~above & np.isfinite(ubb)
            steps[sel] = (ubb[sel] - xb[sel]) / rate[sel]
            targets[sel] = AT_UB
            sel = dn & ~below & ~above & np.isfinite(lbb)
            steps[sel] = (lbb[sel] - xb[sel]) / rate[sel]
            targets[sel] = AT_LB
        else:
            sel = up & np.isfinite(ubb)
            steps[sel] = (ubb[sel] - xb[sel]) / rate[sel]
            targets[sel] = AT_UB
            sel = dn & np.isfinite(lbb)
            steps[sel] = (lbb[sel] - xb[sel]) / rate[sel]
            targets[sel] = AT_LB
        np.clip(steps, 0.0, None, out=steps)

        own_gap = self.ub[q] - self.lb[q]
        best = float(steps.min(initial=big))
        if np.isfinite(own_gap) and own_gap <= best:
            return own_gap, -1, AT_LB
        if not np.isfinite(best):
            return 0.0, -2, AT_LB
        ties = np.flatnonzero(steps <= best + 1e-12)
        if self._bland:
            rpos = int(ties[np.argmin(self.basis[ties])])
        else:
            rpos = int(ties[np.argmax(np.abs(w[ties]))])
        return float(max(steps[rpos], 0.0)), rpos, targets[rpos]

    # -- dual simplex ----------------------------------------------------------

    def dual_solve(
        self,
        deadline: Optional[float] = None,
        iteration_limit: Optional[int] = None,
    ) -> str:
        """Re-optimize after bound changes from a dual-feasible basis.

        Returns optimal | infeasible | limit | lost-dual (caller should fall
        back to the primal when dual feasibility cannot be maintained).
        """
        sf = self.sf
        limit = iteration_limit or max(200_000, 50 * (self.m + self.ncols))
        fixed = self.lb == self.ub
        d = self.reduced_costs()
        for it in range(limit):
            if deadline is not None and it % 64 == 0 and time.perf_counter() > deadline:
                return "limit"
            viol = self._basic_violations()
            rpos = int(np.argmax(viol))
            if viol[rpos] <= self.feas_tol:
                return "optimal"
            leaving = self.basis[rpos]
            xr = self.x[leaving]
            below = xr < self.lb[leaving]
            t_row = 1.0 if below else -1.0
            target_bound = self.lb[leaving] if below else self.ub[leaving]
            target_status = AT_LB if below else AT_UB

            e = np.zeros(self.m)
            e[rpos] = 1.0
            rho = self.btran(e)
            alpha = sf.AT @ rho

            nb_sigma = np.where(self.status == AT_UB, -1.0, 1.0)
            direction = alpha * nb_sigma * t_row
            can_move = (
                (self.status == AT_LB)
                | (self.status == AT_UB)
                | (self.status == FREE_NB)
            )
            can_move &= ~fixed
            can_move[self.basis] = False
            elig = can_move & (direction < -_PIVOT_TOL)
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return "infeasible"
            dj = np.abs(d[cand])
            ratios = dj / (-direction[cand])
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12)
            pick = ties[np.argmax(np.abs(alpha[cand[ties]]))]
            q = int(cand[pick])

            w = self.ftran(self.column(q))
            alpha_q = alpha[q]
            sigma_q = nb_sigma[q]
            step = (target_bound - xr) / (-alpha_q * sigma_q)
            if step < 0:
                step = 0.0
            self.iterations += 1
            self._note_degenerate(step)
            if step > 0:
                self.x[self.basis] -= sigma_q * step * w
                self.x[q] += sigma_q * step
            self.x[leaving] = target_bound
            # keep reduced costs current (d_q becomes 0 at the pivot)
            theta = d[q] / alpha_q
            d = d - theta * alpha
            d[q] = 0.0
            d[leaving] = -theta
            self._pivot(q, rpos, w, target_status)
        return "limit"

    # -- bound edits -------------------------------------------------------------

    def set_bounds(self, indices: Sequence[int], lbs: Sequence[float], ubs: Sequence[float]) -> None:
        for j, lo, hi in zip(indices, lbs, ubs):
            self.lb[j] = lo
            self.ub[j] = hi

    def refresh_after_bounds(self) -> str:
        """Snap nonbasics to their (possibly moved) bounds, restore a
        dual-feasible status assignment and refresh basic values.

        Returns 'ok' when dual feasibility holds, 'need-primal' otherwise.
        """
        d = self.reduced_costs()
        nb = self.status != BASIC
        lo_fin = np.isfinite(self.lb)
        hi_fin = np.isfinite(self.ub)
        fixed = self.lb == self.ub

        at_lb = nb & (self.status == AT_LB) & ~fixed
        at_ub = nb & (self.status == AT_UB) & ~fixed
        # reduced costs are basis-only quantities, so bound edits never change
        # them; a previously fixed variable may still sit at the wrong bound
        # for its reduced-cost sign and must hop across
        sel = at_lb & (d < -_DUAL_TOL)
        self.status[sel & hi_fin] = AT_UB
        need_primal = bool(np.any(sel & ~hi_fin))
        sel = at_ub & (d > _DUAL_TOL)
        self.status[sel & lo_fin] = AT_LB
        need_primal = need_primal or bool(np.any(sel & ~lo_fin))

        # vars whose resting bound vanished move to the other one (or free)
        sel = nb & (self.status == AT_LB) & ~lo_fin
        self.status[sel & hi_fin] = AT_UB
        self.status[sel & ~hi_fin] = FREE_NB
        sel = nb & (self.status == AT_UB) & ~hi_fin
        self.status[sel & lo_fin] = AT_LB
        self.status[sel & ~lo_fin] = FREE_NB

        self.status[nb & fixed] = AT_LB
        sel = nb & (self.status == AT_LB)
        self.x[sel] = self.lb[sel]
        sel = nb & (self.status == AT_UB)
        self.x[sel] = self.ub[sel]
        sel = nb & (self.status == FREE_NB)
        self.x[sel] = 0.0
        self.recompute_basics()
        return "need-primal" if need_primal else "ok"


class _SingularBasis(Exception):
    pass
