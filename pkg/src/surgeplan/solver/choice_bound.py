"""Combinatorial lower bounds from discrete choice structures.

The LP relaxation prices a one-hot level ladder at its convex envelope, so
on covering models the node bound can sit far below any integer solution
no matter how the tree branches.  This module recovers the integer-side
slack by bound reasoning alone: every exactly-one SOS1 group, and every
chain of binaries linked by ordering rows, must pay the cost of one of its
admissible states outright.  Costs other columns would have to chip in are
accounted by splitting each helper's objective coefficient across the rows
it can serve, which keeps the total charge a valid lower bound on any
integer-feasible completion (each helper is never billed for more than its
own cost).  No rows are ever added to an LP; everything here is interval
arithmetic over the model's own constraints and bounds.

Validity sketch, minimization throughout: fix any integer-feasible x.
Each structure occupies exactly one admissible state, paying its members'
costs plus, for each implication row m <= y it switches on, at least
c_y / indeg(y) of y's cost (the split over all rows that can force y).
Each constraint row a structure claims needs its residual demand covered
by helper columns; billing that demand at min_j c_j / mass_j, where
mass_j sums |a_rj| over every row j could serve, never exceeds what the
helpers actually spend.  Summing structure minima therefore stays at or
below the cost of x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import MipModel, VarKind

_EPS = 1e-9


@dataclass
class _Row:
    indices: np.ndarray
    coefficients: np.ndarray
    sense: str
    rhs: float
    # residual capacity of helper columns to raise/lower the activity, and
    # the cheapest helper price per unit in each direction
    supply_up: float = 0.0
    supply_dn: float = 0.0
    price_up: float = math.inf
    price_dn: float = math.inf
    # activity range of every non-member column at root bounds
    base_lo: float = 0.0
    base_hi: float = 0.0


@dataclass
class _Structure:
    kind: str  # "sos1" (pick exactly one) | "ladder" (prefixes of a chain)
    members: list[int]
    member_cost: np.ndarray  # objective + forced-implication surcharges
    rows: list[tuple[_Row, np.ndarray]] = field(default_factory=list)  # row, member coefs


class ChoiceBound:
    """Valid objective lower bounds for nodes of a branch-and-bound tree.

    evaluate(bounds) -> float: a lower bound on every integer-feasible
    point satisfying the given variable bounds (math.inf when some
    structure has no admissible state left).  Bounds not mentioned in the
    dict default to the root bounds captured at construction; everything
    outside the affected structures is frozen at its root contribution,
    which only ever weakens the bound, never invalidates it.
    """

    def __init__(
        self,
        model: MipModel,
        groups: list[list[int]],
        root_lb: np.ndarray | None = None,
        root_ub: np.ndarray | None = None,
        cost: np.ndarray | None = None,
        constant: float = 0.0,
    ):
        n = model.num_variables
        # cost/constant support penalty reshapes of the objective (shifting a
        # soft row into the prices): the bound then holds for the original
        # objective as long as cost @ x + constant <= objective of every
        # feasible x, which the caller guarantees
        self.c = np.array(model.objective_vector() if cost is None else cost, dtype=float)
        self.constant = constant
        self.lb0 = np.array(root_lb[:n] if root_lb is not None else model.var_lb, dtype=float)
        self.ub0 = np.array(root_ub[:n] if root_ub is not None else model.var_ub, dtype=float)
        kinds = model.var_kind
        is_binary = np.array([k is VarKind.BINARY for k in kinds])

        # one sweep of bound propagation: a <=/= row with nonnegative terms
        # caps every column it touches (budget rows cap transfer columns)
        for con in model.constraints:
            if con.sense == ">=":
                continue
            coef = con.coefficients
            if np.any(coef <= 0) or np.any(self.lb0[con.indices] < -_EPS):
                continue
            floor = float(coef @ np.maximum(self.lb0[con.indices], 0.0))
            for j, a in zip(con.indices, con.coefficients):
                j = int(j)
                cap = (con.rhs - (floor - a * max(self.lb0[j], 0.0))) / a
                if cap < self.ub0[j]:
                    self.ub0[j] = max(cap, self.lb0[j])

        # -- binaries forced equal by a two-variable equality row collapse
        # into one column (a day-one conversion flag equals its unit flag);
        # the alias's cost rides on the base so chains stay unbroken
        alias_base: dict[int, int] = {}
        usage = np.zeros(n, dtype=np.int64)
        for con in model.constraints:
            usage[con.indices] += 1
        for con in model.constraints:
            if con.sense != "=" or con.indices.size != 2 or abs(con.rhs) > _EPS:
                continue
            a, b = int(con.indices[0]), int(con.indices[1])
            ca, cb = float(con.coefficients[0]), float(con.coefficients[1])
            if not (is_binary[a] and is_binary[b]) or abs(ca + cb) > _EPS:
                continue
            if a in alias_base or b in alias_base:
                continue
            alias, base = (a, b) if usage[a] <= usage[b] else (b, a)
            alias_base[alias] = base
            self.c[base] += self.c[alias]
            self.c[alias] = 0.0

        # -- implication edges m -> y (m = 1 forces y = 1) between binaries
        out_edges: dict[int, list[int]] = {}
        indeg: dict[int, int] = {}
        for con in model.constraints:
            if con.indices.size != 2:
                continue
            a, b = int(con.indices[0]), int(con.indices[1])
            ca, cb = float(con.coefficients[0]), float(con.coefficients[1])
            if not (is_binary[a] and is_binary[b]) or abs(con.rhs) > _EPS:
                continue
            if a in alias_base or b in alias_base:
                continue  # the aliasing already accounts for this row
            pairs = []
            if con.sense in ("<=", "="):
                if ca > _EPS and cb < -_EPS:
                    pairs.append((a, b))
                elif cb > _EPS and ca < -_EPS:
                    pairs.append((b, a))
            if con.sense in (">=", "="):
                if ca < -_EPS and cb > _EPS:
                    pairs.append((a, b))
                elif cb < -_EPS and ca > _EPS:
                    pairs.append((b, a))
            for m, y in pairs:
                out_edges.setdefault(m, []).append(y)
                indeg[y] = indeg.get(y, 0) + 1

        # -- structures: SOS1 groups first, then ordering-row ladders
        claimed = np.zeros(n, dtype=bool)
        self.structures: list[_Structure] = []
        for members in groups:
            self.structures.append(_Structure("sos1", list(members), np.zeros(0)))
            claimed[members] = True

        # chain link m -> y only when m is the sole variable implying y;
        # shared targets (an availability flag fed by several switches) stay
        # out of chains and are billed through surcharges instead
        in_nbrs: dict[int, set[int]] = {}
        for m, ys in out_edges.items():
            for y in ys:
                if not claimed[m] and not claimed[y]:
                    in_nbrs.setdefault(y, set()).add(m)
        link = {next(iter(ms)): y for y, ms in in_nbrs.items() if len(ms) == 1}
        has_in_link = set(link.values())
        for m in list(link):
            if m in has_in_link:
                continue  # not a chain top
            chain = [m]
            while chain[-1] in link:
                nxt = link[chain[-1]]
                if nxt in chain:
                    break
                chain.append(nxt)
            if len(chain) < 2 or any(claimed[j] for j in chain):
                continue
            chain = chain[::-1]  # base first; member i implies all below it
            self.structures.append(_Structure("ladder", chain, np.zeros(0)))
            claimed[chain] = True

        # price members once every structure is known: an implication target
        # inside any structure is paid by that structure's own state, so only
        # unclaimed targets carry a surcharge (split across their impliers)
        for st in self.structures:
            st.member_cost = np.array(
                [
                    self.c[j]
                    + sum(
                        self.c[y] / indeg[y]
                        for y in out_edges.get(j, ())
                        if not claimed[y] and self.lb0[y] <= _EPS and self.c[y] > 0.0
                    )
                    for j in st.members
                ]
            )

        # -- helper columns: continuous, positively priced, free to stay at 0
        helper = (~is_binary) & (self.c > 0.0) & (self.lb0 <= _EPS)

        # -- claimed rows: each row serves at most one structure
        member_of: dict[int, int] = {}
        for si, st in enumerate(self.structures):
            for j in st.members:
                member_of[j] = si
        self.rows: list[_Row] = []
        row_helpers: list[tuple[list[int], list[int]]] = []  # up / down servers
        row_owner: list[int] = []
        row_mcoef: list[np.ndarray] = []
        for con in model.constraints:
            owners = {member_of[int(j)] for j in con.indices if int(j) in member_of}
            if len(owners) != 1:
                continue
            si = owners.pop()
            row = _Row(con.indices.copy(), con.coefficients.copy(), con.sense, con.rhs)
            st = self.structures[si]
            mem_set = set(st.members)
            mcoef = np.zeros(len(st.members))
            pos = {j: k for k, j in enumerate(st.members)}
            ups: list[int] = []
            dns: list[int] = []
            for j, a in zip(row.indices, row.coefficients):
                j = int(j)
                if j in mem_set:
                    mcoef[pos[j]] += a
                    continue
                lo, hi = self.lb0[j], self.ub0[j]
                if helper[j]:
                    flex = hi - max(lo, 0.0)
                    if a > 0:
                        if row.sense in (">=", "="):
                            row.supply_up += a * flex
                            ups.append(j)
                    else:
                        if row.sense in ("<=", "="):
                            row.supply_dn += -a * flex
                            dns.append(j)
                    lo, hi = lo, max(lo, 0.0)  # helpers rest at their floor
                if a > 0:
                    row.base_lo += a * lo
                    row.base_hi += a * hi
                else:
                    row.base_lo += a * hi
                    row.base_hi += a * lo
            self.rows.append(row)
            row_helpers.append((ups, dns))
            row_owner.append(si)
            row_mcoef.append(mcoef)
            st.rows.append((row, mcoef))

        # -- helper pricing.  mass sums a helper's reach over the claimed rows
        # that can ever fall short given the root bounds, so price = cost/mass
        # splits its coefficient without over-billing; rows that cannot fall
        # short never charge (price zero) and stay out of every mass.  A
        # transfer landing mostly outside an overload window is then priced
        # by the shortfall days it actually serves, not its whole stay.
        charge_up = np.zeros(len(self.rows), dtype=bool)
        charge_dn = np.zeros(len(self.rows), dtype=bool)
        states_of: dict[int, list[list[int]]] = {}
        for ri, row in enumerate(self.rows):
            si = row_owner[ri]
            if si not in states_of:
                states_of[si] = self._state_sets(self.structures[si], None)
            mcoef = row_mcoef[ri]
            acts = [float(mcoef[state].sum()) if state else 0.0 for state in states_of[si]]
            if row.sense in (">=", "="):
                charge_up[ri] = row.rhs - (row.base_hi + min(acts, default=0.0)) > _EPS
            if row.sense in ("<=", "="):
                charge_dn[ri] = (row.base_lo + max(acts, default=0.0)) - row.rhs > _EPS
        mass = np.zeros(n)
        for ri, (row, (ups, dns)) in enumerate(zip(self.rows, row_helpers)):
            coef = {int(j): float(a) for j, a in zip(row.indices, row.coefficients)}
            if charge_up[ri]:
                for j in ups:
                    mass[j] += coef[j]
            if charge_dn[ri]:
                for j in dns:
                    mass[j] += -coef[j]
        price = np.where(mass > 0, self.c / np.maximum(mass, _EPS), math.inf)
        for ri, (row, (ups, dns)) in enumerate(zip(self.rows, row_helpers)):
            row.price_up = min((price[j] for j in ups), default=math.inf) if charge_up[ri] else 0.0
            row.price_dn = min((price[j] for j in dns), default=math.inf) if charge_dn[ri] else 0.0

        # -- frozen contribution of everything outside the structures
        outside = 0.0
        for j in range(n):
            if claimed[j] or helper[j]:
                if helper[j] and self.lb0[j] > 0.0:
                    outside += self.c[j] * self.lb0[j]
                continue
            if self.c[j] > 0.0:
                outside += self.c[j] * max(self.lb0[j], 0.0)
            elif self.c[j] < 0.0:
                outside += self.c[j] * self.ub0[j]  # may be -inf: bound degrades
        self.outside = outside

        self._root_cost = [self._structure_min(st, None) for st in self.structures]
        self._member_struct = member_of

    def structure_of(self, j: int) -> int | None:
        """Index of the structure column j belongs to, None for outsiders."""
        return self._member_struct.get(j)

    # -- evaluation ----------------------------------------------------------

    def _state_sets(self, st: _Structure, bounds) -> list[list[int]]:
        """Admissible states under the bounds: index lists of chosen members."""

        def bnd(j):
            if bounds is not None:
                pair = bounds.get(j)
                if pair is not None:
                    return pair
            return self.lb0[j], self.ub0[j]

        los = np.array([bnd(j)[0] for j in st.members])
        his = np.array([bnd(j)[1] for j in st.members])
        if st.kind == "sos1":
            pinned = np.flatnonzero(los > _EPS)
            if pinned.size > 1:
                return []
            if pinned.size == 1:
                k = int(pinned[0])
                return [[k]] if his[k] > _EPS else []
            return [[int(k)] for k in np.flatnonzero(his > _EPS)] or []
        # ladder: states are prefixes [0, p)
        pinned = np.flatnonzero(los > _EPS)
        p_min = int(pinned.max()) + 1 if pinned.size else 0
        dead = np.flatnonzero(his <= _EPS)
        p_max = int(dead.min()) if dead.size else len(st.members)
        if p_min > p_max:
            return []
        return [list(range(p)) for p in range(p_min, p_max + 1)]

    def _structure_min(self, st: _Structure, bounds) -> float:
        return self._structure_argmin(st, bounds)[0]

    def _state_cost(self, st: _Structure, state: list[int]) -> tuple[float, bool, bool]:
        """(priced cost, admissible, covers rows without helper aid)."""
        cost = float(st.member_cost[state].sum()) if state else 0.0
        unaided = True
        for row, mcoef in st.rows:
            act = float(mcoef[state].sum()) if state else 0.0
            if row.sense in (">=", "="):
                need = row.rhs - (row.base_hi + act)
                if need > _EPS:
                    unaided = False
                    if need > row.supply_up + 1e-7:
                        return math.inf, False, False
                    if math.isfinite(row.price_up):
                        cost += need * row.price_up
            if row.sense in ("<=", "="):
                need = (row.base_lo + act) - row.rhs
                if need > _EPS:
                    unaided = False
                    if need > row.supply_dn + 1e-7:
                        return math.inf, False, False
                    if math.isfinite(row.price_dn):
                        cost += need * row.price_dn
        return cost, True, unaided

    def _structure_argmin(self, st: _Structure, bounds) -> tuple[float, list[int]]:
        best, best_state = math.inf, []
        for state in self._state_sets(st, bounds):
            cost, ok, _ = self._state_cost(st, state)
            if ok and cost < best:
                best, best_state = cost, state
        return best, best_state

    def guide_states(self, bounds) -> list[tuple[list[int], list[int] | None]] | None:
        """Per structure: (cheapest admissible state, cheapest unaided state).

        The first is what the bound itself is priced against and may lean on
        helper columns; the second satisfies every claimed row outright and
        is None when no state manages that.  States index into the member
        list; exactly-one groups hold the single chosen member, ladders the
        chosen prefix.  Returns None when some structure has no state at all.
        """
        out = []
        for st in self.structures:
            states = self._state_sets(st, bounds)
            best, best_state = math.inf, None
            cover, cover_state = math.inf, None
            for state in states:
                cost, ok, unaided = self._state_cost(st, state)
                if not ok:
                    continue
                if cost < best:
                    best, best_state = cost, state
                if unaided and cost < cover:
                    cover, cover_state = cost, state
            if best_state is None:
                return None
            out.append((best_state, cover_state))
        return out

    def split_minima(
        self, si: int, bounds, split: int
    ) -> tuple[float, float]:
        """Structure minima if members above (resp. at or below) a split die.

        Mirrors the two children of a branch on structure si: the first value
        keeps states whose top member index is <= split, the second keeps the
        rest.  Either side is inf when no admissible state survives there.
        Cheap enough to score every candidate branch at a node.
        """
        st = self.structures[si]
        lo_min, hi_min = math.inf, math.inf
        for state in self._state_sets(st, bounds):
            cost, ok, _ = self._state_cost(st, state)
            if not ok:
                continue
            if (max(state) if state else -1) <= split:
                lo_min = min(lo_min, cost)
            else:
                hi_min = min(hi_min, cost)
        return lo_min, hi_min

    def evaluate(self, bounds: dict[int, tuple[float, float]]) -> float:
        """Lower bound for integer completions within the given bounds."""
        if not self.structures:
            return -math.inf
        touched = set()
        for j in bounds:
            si = self._member_struct.get(j)
            if si is not None:
                touched.add(si)
        total = self.outside + self.constant
        for si, st in enumerate(self.structures):
            part = self._structure_min(st, bounds) if si in touched else self._root_cost[si]
            if math.isinf(part) and part > 0:
                return math.inf
            total += part
        return total
