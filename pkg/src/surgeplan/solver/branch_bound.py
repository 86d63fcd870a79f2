"""LP and MILP solve entry points.

solve_lp runs the bounded primal simplex on the SOS1-relaxed model.
solve_mip wraps it in best-bound branch-and-bound: SOS1 groups branch by
splitting at the value-weighted mean position of their fractional members
(groups visited in model order, which build order makes day-major), plain
binaries branch most-fractional.  Node re-solves warm start the parent's
factorization through the dual simplex.
"""

from __future__ import annotations

import heapq
import math
import time
from typing import Optional

import numpy as np

from ..domain import ValidationError
from .choice_bound import ChoiceBound
from .model import MipModel, SolveOptions, SolveResult, SolveStatus, VarKind
from .simplex import AT_LB, AT_UB, BoundedSimplex, _SingularBasis, standardize

_INT_TOL = 1e-7
# trial LPs a single incumbent-polish call may spend; each trial pins every
# choice structure and re-prices the continuous columns, so the cap keeps
# polishing a bounded slice of the node budget on large instances
_POLISH_TRIALS = 300


def solve_lp(model: MipModel, options: Optional[SolveOptions] = None) -> SolveResult:
    """Solve the LP relaxation to an optimal basic solution."""
    options = options or SolveOptions()
    model.validate()
    t0 = time.perf_counter()
    sf = standardize(model)
    spx = BoundedSimplex(sf, feas_tol=options.absolute_feas_tol)
    spx.reset_slack_basis()
    deadline = t0 + options.time_limit_seconds
    status = spx.primal_solve(deadline=deadline)
    wall = time.perf_counter() - t0
    if status == "optimal":
        obj = spx.objective_value()
        return SolveResult(
            status=SolveStatus.OPTIMAL,
            objective=obj,
            bound=obj,
            values=spx.solution(),
            iteration_count=spx.iterations,
            wall_time_seconds=wall,
            max_violation=spx.max_row_violation(),
        )
    if status == "infeasible":
        return SolveResult(
            status=SolveStatus.INFEASIBLE,
            iteration_count=spx.iterations,
            wall_time_seconds=wall,
        )
    if status == "unbounded":
        return SolveResult(
            status=SolveStatus.UNBOUNDED,
            iteration_count=spx.iterations,
            wall_time_seconds=wall,
        )
    return SolveResult(
        status=SolveStatus.LIMIT_HIT,
        iteration_count=spx.iterations,
        wall_time_seconds=wall,
        message="simplex hit its iteration or time limit",
    )


class _Tree:
    """Mutable branch-and-bound state around one simplex instance."""

    def __init__(self, model: MipModel, options: SolveOptions):
        self.model = model
        self.options = options
        self.sf = standardize(model)
        self.spx = BoundedSimplex(self.sf, feas_tol=options.absolute_feas_tol)
        self.groups = [list(g) for g in model.sos1_groups]
        in_group = set(i for g in self.groups for i in g)
        self.plain_binaries = [
            i
            for i, kind in enumerate(model.var_kind)
            if kind is VarKind.BINARY and i not in in_group
        ]
        self.root_lb = self.spx.lb.copy()
        self.root_ub = self.spx.ub.copy()
        self.current: dict[int, tuple[float, float]] = {}
        # global fixings discovered mid-search, not yet pushed into the simplex
        self.pending_fixes: dict[int, tuple[float, float]] = {}
        self.deadline = None
        self.nodes_processed = 0

    # -- bound management --------------------------------------------------

    def apply(self, bounds: dict[int, tuple[float, float]]) -> None:
        for j in list(self.current):
            if j not in bounds:
                self.spx.lb[j] = self.root_lb[j]
                self.spx.ub[j] = self.root_ub[j]
        for j, (lo, hi) in bounds.items():
            self.spx.lb[j] = lo
            self.spx.ub[j] = hi
        if self.pending_fixes:
            # node bounds mask a fix for this node only; the exit path above
            # restores from the root arrays, which already carry it
            for j, (lo, hi) in self.pending_fixes.items():
                if j not in bounds:
                    self.spx.lb[j] = lo
                    self.spx.ub[j] = hi
            self.pending_fixes = {}
        self.current = bounds

    def solve_node(self, bounds: dict[int, tuple[float, float]], cold: bool = False) -> str:
        self.apply(bounds)
        spx = self.spx
        try:
            if cold:
                spx.reset_slack_basis()
                return spx.primal_solve(deadline=self.deadline)
            state = spx.refresh_after_bounds()
            if state == "need-primal":
                return spx.primal_solve(deadline=self.deadline)
            status = spx.dual_solve(deadline=self.deadline)
            if status == "optimal":
                # cheap insurance: confirm no profitable entering remains
                return spx.primal_solve(deadline=self.deadline)
            if status == "infeasible":
                return "infeasible"
            return status
        except _SingularBasis:
            spx.reset_slack_basis()
            return spx.primal_solve(deadline=self.deadline)

    # -- integrality --------------------------------------------------------

    def fractional_group(self) -> Optional[int]:
        x = self.spx.x
        for gi, members in enumerate(self.groups):
            nonzero = sum(1 for j in members if abs(x[j]) > _INT_TOL)
            if nonzero > 1:
                return gi
        return None

    def fractional_groups(self, limit: int) -> list[int]:
        x = self.spx.x
        out = []
        for gi, members in enumerate(self.groups):
            nonzero = sum(1 for j in members if abs(x[j]) > _INT_TOL)
            if nonzero > 1:
                out.append(gi)
                if len(out) >= limit:
                    break
        return out

    def fractional_binary(self) -> Optional[int]:
        x = self.spx.x
        worst, pick = _INT_TOL, None
        for j in self.plain_binaries:
            frac = abs(x[j] - round(x[j]))
            if frac > worst:
                worst, pick = frac, j
        return pick

    def is_integral(self) -> bool:
        return self.fractional_group() is None and self.fractional_binary() is None

    # -- branching ----------------------------------------------------------

    def group_split(self, gi: int) -> int:
        """Split index for a fractional group: the weighted mean level."""
        members = self.groups[gi]
        x = self.spx.x
        vals = np.array([max(x[j], 0.0) for j in members])
        frac = vals > _INT_TOL
        positions = np.flatnonzero(frac)
        weights = vals[positions]
        mean_pos = float(positions @ weights / weights.sum())
        split = int(math.floor(mean_pos))
        return int(min(max(split, positions[0]), len(members) - 2))

    def branch_group(self, gi: int, bounds: dict) -> tuple[dict, dict]:
        members = self.groups[gi]
        split = self.group_split(gi)
        left = dict(bounds)
        for j in members[split + 1 :]:
            left[j] = (0.0, 0.0)
        right = dict(bounds)
        for j in members[: split + 1]:
            right[j] = (0.0, 0.0)
        return left, right

    def branch_binary(self, j: int, bounds: dict) -> tuple[dict, dict]:
        left = dict(bounds)
        left[j] = (0.0, 0.0)
        right = dict(bounds)
        right[j] = (1.0, 1.0)
        return left, right

    # -- probing ------------------------------------------------------------

    def probe_groups(self) -> int:
        """Feasibility-based fixing for SOS1 members: if committing a member
        (which zeroes its siblings) already breaks some row against the best
        possible activity of every non-group variable, fix that member to 0.
        Pure bound tightening on the root relaxation."""
        sf = self.sf
        spx = self.spx
        if not self.groups:
            return 0
        A = sf.A.tocsr()
        lo = spx.lb
        hi = spx.ub
        group_of = {}
        for gi, members in enumerate(self.groups):
            for j in members:
                group_of[j] = gi
        fixed_count = 0
        for r in range(sf.num_rows):
            start, end = A.indptr[r], A.indptr[r + 1]
            cols = A.indices[start:end]
            vals = A.data[start:end]
            if not any(j in group_of for j in cols):
                continue
            ub_contrib = np.where(vals > 0, vals * hi[cols], vals * lo[cols])
            lb_contrib = np.where(vals > 0, vals * lo[cols], vals * hi[cols])
            max_act = float(ub_contrib.sum())
            min_act = float(lb_contrib.sum())
            # total contribution of each group present in this row; removing
            # a member and its siblings removes exactly the group's sum
            grp_hi: dict[int, float] = {}
            grp_lo: dict[int, float] = {}
            for k, j in enumerate(cols):
                gi = group_of.get(j)
                if gi is not None:
                    grp_hi[gi] = grp_hi.get(gi, 0.0) + float(ub_contrib[k])
                    grp_lo[gi] = grp_lo.get(gi, 0.0) + float(lb_contrib[k])
            slack_lo = lo[sf.n_structural + r]
            slack_hi = hi[sf.n_structural + r]
            # row reads  a.x + s = b  with s in [slack_lo, slack_hi]
            b = sf.b[r]
            for k, j in enumerate(cols):
                gi = group_of.get(j)
                if gi is None or lo[j] == hi[j] or hi[j] == 0.0:
                    continue
                aj = float(vals[k])
                hi_with = max_act - grp_hi[gi] + aj
                lo_with = min_act - grp_lo[gi] + aj
                # need  b - a.x  to fit inside the slack range
                dead = False
                if not math.isinf(slack_hi) and not math.isinf(lo_with):
                    dead = b - lo_with > slack_hi + 1e-9
                if not dead and not math.isinf(slack_lo) and not math.isinf(hi_with):
                    dead = b - hi_with < slack_lo - 1e-9
                if dead:
                    spx.ub[j] = 0.0
                    self.root_ub[j] = 0.0
                    fixed_count += 1
        return fixed_count


def pick_branch_group(tree: _Tree, cb: ChoiceBound, bounds: dict) -> Optional[int]:
    """Choose the fractional group whose split raises a child bound most.

    The split point itself stays the weighted-mean level; only the choice of
    group is scored.  One child always keeps the group's cheapest admissible
    state, so the useful signal is the raise forced on the other side; an
    infinite side means the branch refutes that child outright.
    """
    cands = tree.fractional_groups(limit=128)
    if not cands:
        return None
    if len(cands) == 1:
        return cands[0]
    best_gi, best_score = cands[0], -1.0
    for gi in cands:
        lo, hi = cb.split_minima(gi, bounds, tree.group_split(gi))
        cur = min(lo, hi)
        if math.isinf(cur):
            continue
        rl = (lo - cur) if math.isfinite(lo) else 1e12
        rh = (hi - cur) if math.isfinite(hi) else 1e12
        score = max(rl, rh) + 0.1 * min(rl, rh)
        if score > best_score:
            best_gi, best_score = gi, score
    return best_gi


def pick_branch_binary(tree: _Tree, cb: ChoiceBound, bounds: dict) -> Optional[int]:
    """Choose the fractional binary whose 0/1 split raises a child bound most.

    Structure members (ladder rungs) get scored through the choice bound;
    without any scorable candidate the most fractional binary wins, matching
    plain most-fractional branching on models without structures.
    """
    x = tree.spx.x
    cands: list[tuple[float, int]] = []
    for j in tree.plain_binaries:
        frac = abs(x[j] - round(x[j]))
        if frac > _INT_TOL:
            cands.append((frac, j))
    if not cands:
        return None
    cands.sort(reverse=True)
    fallback = cands[0][1]
    scored = [(f, j) for f, j in cands[:48] if cb.structure_of(j) is not None]
    if not scored:
        return fallback
    cur = cb.evaluate(bounds)
    if math.isinf(cur):
        return fallback
    best_j, best_score = fallback, 0.0
    for _, j in scored:
        raises = []
        for pin in ((0.0, 0.0), (1.0, 1.0)):
            child = dict(bounds)
            child[j] = pin
            val = cb.evaluate(child)
            raises.append((val - cur) if math.isfinite(val) else 1e12)
        score = max(raises) + 0.1 * min(raises)
        if score > best_score:
            best_j, best_score = j, score
    return best_j


def budget_penalized_bound(
    model: MipModel, tree: _Tree, spx: BoundedSimplex
) -> Optional[ChoiceBound]:
    """Companion bound with soft-row prices folded into the helper costs.

    Rows over continuous columns only (the daily transfer budgets) are priced
    at their root LP duals and shifted into the objective: cost' = cost +
    sum_r lam_r a_r with constant -sum_r lam_r rhs_r.  For lam >= 0 on <=
    rows, cost' @ x + constant <= cost @ x at every feasible point, so the
    structure bound over the reshaped costs stays a valid lower bound while
    seeing the scarcity the plain per-unit prices miss.  None when no row
    earns a positive price.
    """
    is_binary = np.array([k is VarKind.BINARY for k in model.var_kind])
    y = spx.duals()
    scale = spx.sf.row_scale
    c2 = model.objective_vector()
    const = 0.0
    priced = False
    for r, con in enumerate(model.constraints):
        if con.sense != "<=" or bool(np.any(is_binary[con.indices])):
            continue
        lam = -float(y[r]) / float(scale[r])
        if lam <= 1e-9:
            continue
        priced = True
        c2[con.indices] += lam * con.coefficients
        const -= lam * con.rhs
    if not priced:
        return None
    return ChoiceBound(
        model, tree.groups, tree.root_lb, tree.root_ub, cost=c2, constant=const
    )


def solve_mip(model: MipModel, options: Optional[SolveOptions] = None) -> SolveResult:
    """Branch-and-bound over LP relaxations with best-bound node selection."""
    options = options or SolveOptions()
    model.validate()
    t0 = time.perf_counter()
    tree = _Tree(model, options)
    tree.deadline = t0 + options.time_limit_seconds
    spx = tree.spx

    def rel_gap(inc: float, bnd: float) -> float:
        return (inc - bnd) / max(1.0, abs(inc))

    tree.probe_groups()

    status = tree.solve_node({}, cold=True)
    iterations = lambda: spx.iterations  # noqa: E731
    if status == "infeasible":
        return SolveResult(
            status=SolveStatus.INFEASIBLE,
            iteration_count=iterations(),
            wall_time_seconds=time.perf_counter() - t0,
        )
    if status == "unbounded":
        return SolveResult(
            status=SolveStatus.UNBOUNDED,
            iteration_count=iterations(),
            wall_time_seconds=time.perf_counter() - t0,
        )
    if status == "limit":
        return SolveResult(
            status=SolveStatus.LIMIT_HIT,
            iteration_count=iterations(),
            wall_time_seconds=time.perf_counter() - t0,
            message="hit the time limit while solving the root relaxation",
        )

    incumbent_x: Optional[np.ndarray] = None
    incumbent_obj = math.inf
    root_obj = spx.objective_value()
    # combinatorial companion bounds: what the choice structures must pay
    # regardless of how the LP spreads them, at plain and at dual-reshaped
    # prices; the sharper of the two leads branching and dive guidance
    cb = ChoiceBound(model, tree.groups, tree.root_lb, tree.root_ub)
    cbl = budget_penalized_bound(model, tree, spx)
    if cbl is not None and cbl.evaluate({}) > cb.evaluate({}):
        cb, cbl = cbl, cb

    def eval_cb(b: dict) -> float:
        out = cb.evaluate(b)
        if cbl is not None and out < math.inf:
            out = max(out, cbl.evaluate(b))
        return out

    root_bound = max(root_obj, eval_cb({}))
    if root_bound == math.inf:
        return SolveResult(
            status=SolveStatus.INFEASIBLE,
            iteration_count=iterations(),
            wall_time_seconds=time.perf_counter() - t0,
            message="a choice structure has no admissible state",
        )
    # root dual information for reduced-cost fixing once an incumbent exists
    root_d = spx.reduced_costs().copy()
    root_at_lb = spx.status == AT_LB
    root_at_ub = spx.status == AT_UB
    binary_js = np.array(
        sorted(set(tree.plain_binaries) | {j for g in tree.groups for j in g}),
        dtype=np.intp,
    )
    rc_fixed = np.zeros(binary_js.size, dtype=bool)

    heap: list[tuple[float, int, dict]] = []
    seq = 0
    heapq.heappush(heap, (root_bound, seq, {}))
    # smallest bound among nodes proven unnecessary to expand; open nodes in
    # the heap are accounted separately at exit
    proof_bound = math.inf
    hit_limit = False
    limit_reason = ""
    nodes = 0

    def fix_by_reduced_cost() -> None:
        """Tighten binaries whose root reduced cost already prices them out.

        Flipping a nonbasic binary off its root-LP bound costs at least its
        reduced cost, so any flip whose implied bound the tree would prune
        can be fixed globally.  Pure bound tightening off the root basis.
        """
        if binary_js.size == 0:
            return
        d = root_d[binary_js]
        up = (
            root_at_lb[binary_js]
            & (d > 0.0)
            & (rel_gap(incumbent_obj, root_obj + d) <= options.relative_gap_tol)
            & ~rc_fixed
        )
        down = (
            root_at_ub[binary_js]
            & (d < 0.0)
            & (rel_gap(incumbent_obj, root_obj - d) <= options.relative_gap_tol)
            & ~rc_fixed
        )
        for j in binary_js[up]:
            j = int(j)
            tree.root_ub[j] = 0.0
            tree.pending_fixes[j] = (tree.root_lb[j], 0.0)
        for j in binary_js[down]:
            j = int(j)
            tree.root_lb[j] = 1.0
            tree.pending_fixes[j] = (1.0, tree.root_ub[j])
        rc_fixed[up] = True
        rc_fixed[down] = True

    def consider_incumbent() -> None:
        nonlocal incumbent_x, incumbent_obj
        obj = spx.objective_value()
        if obj < incumbent_obj - 1e-12:
            incumbent_obj = obj
            incumbent_x = spx.solution()
            fix_by_reduced_cost()

    last_polished = math.inf

    def polish(known_bound: float) -> None:
        """Single-move descent on the incumbent's choice-structure states.

        Pin every structure to the state the incumbent uses, then retry one
        structure at a time in each of its other admissible states and let
        the trial LP reprice the continuous columns under the pins.  A move
        that lowers the objective replaces the incumbent and restarts the
        scan.  Incumbents are already LP-optimal for their own pins, so
        only moved states are tried; moves are ordered by their pinned
        cost delta, so cheaper levels are probed before costlier swaps
        that could still pay off through transfer relief.  Runs only while
        the proof is struggling: an incumbent already within gap tolerance
        of the known bound is about to be accepted as is.
        """
        nonlocal incumbent_x, incumbent_obj, last_polished
        if incumbent_x is None or incumbent_obj >= last_polished - 1e-12:
            return
        if rel_gap(incumbent_obj, known_bound) <= options.relative_gap_tol:
            return
        sts = cb.structures
        if not sts:
            last_polished = incumbent_obj
            return
        trials = _POLISH_TRIALS

        def pin_into(trial: dict, si: int, state: int) -> None:
            st = sts[si]
            if st.kind == "sos1":
                for k, j in enumerate(st.members):
                    if k != state:
                        trial[j] = (0.0, 0.0)
            else:
                for k, j in enumerate(st.members):
                    trial[j] = (1.0, 1.0) if k < state else (0.0, 0.0)

        improved = True
        while improved and trials > 0 and time.perf_counter() <= tree.deadline:
            improved = False
            x = incumbent_x
            cur: list[int] = []
            for st in sts:
                if st.kind == "sos1":
                    cur.append(max(range(len(st.members)), key=lambda k: x[st.members[k]]))
                else:
                    cur.append(sum(1 for j in st.members if x[j] > 0.5))
            base: dict[int, tuple[float, float]] = {}
            for si in range(len(sts)):
                pin_into(base, si, cur[si])

            moves: list[tuple[float, int, int]] = []
            for si, st in enumerate(sts):
                mc = st.member_cost
                if st.kind == "sos1":
                    if tree.root_lb[st.members[cur[si]]] >= 1.0:
                        continue  # fixed on, nothing to move
                    for k, j in enumerate(st.members):
                        if k != cur[si] and tree.root_ub[j] > 0.0:
                            moves.append((float(mc[k] - mc[cur[si]]), si, k))
                else:
                    p = cur[si]
                    if p > 0 and tree.root_lb[st.members[p - 1]] <= 0.0:
                        moves.append((float(-mc[p - 1]), si, p - 1))
                    if p < len(st.members) and tree.root_ub[st.members[p]] > 0.0:
                        moves.append((float(mc[p]), si, p + 1))
            moves.sort()
            for _, si, state in moves:
                if trials <= 0 or time.perf_counter() > tree.deadline:
                    break
                trial = dict(base)
                for j in sts[si].members:
                    trial.pop(j, None)
                pin_into(trial, si, state)
                trials -= 1
                if tree.solve_node(trial) != "optimal":
                    continue
                obj = spx.objective_value()
                if obj < incumbent_obj - 1e-9 and tree.is_integral():
                    incumbent_obj = obj
                    incumbent_x = spx.solution()
                    fix_by_reduced_cost()
                    improved = True
                    break
        last_polished = incumbent_obj

    def dive(base_bounds: dict) -> None:
        """Pin the choice structures to states the bound suggests and let a
        trial LP settle the continuous side.

        Structures whose cheapest state covers their rows unaided are
        pinned to it outright (exactly-one groups to the chosen member,
        ladders to the chosen prefix).  Structures that lean on helper
        columns stay open from that state upward, so the first trial LP
        arbitrates the scarce helpers among them; whatever it leaves
        fractional is rounded up from the trial point and pinned in a
        second trial.  A last attempt pins every structure to its covering
        state.  Binaries outside the structures (availability and
        conversion flags) follow from the pinned ones through their own
        rows, so the trials leave them free.  Anything the guide gets
        wrong the trial LPs simply reject.
        """
        guide = cb.guide_states(base_bounds)
        if guide is None:
            return
        sts = cb.structures

        # what each structure may still reach under the node's live bounds
        open_sos: dict[int, list[int]] = {}
        ladder_rng: dict[int, tuple[int, int]] = {}
        for si, st in enumerate(sts):
            if st.kind == "sos1":
                ks = [k for k, j in enumerate(st.members) if spx.ub[j] > 0.0]
                if not ks:
                    return
                open_sos[si] = ks
            else:
                on = [k for k, j in enumerate(st.members) if spx.lb[j] > 0.0]
                off = [k for k, j in enumerate(st.members) if spx.ub[j] <= 0.0]
                p_min = max(on) + 1 if on else 0
                p_max = min(off) if off else len(st.members)
                if p_min > p_max:
                    return
                ladder_rng[si] = (p_min, p_max)

        def align(si: int, state: Optional[list[int]]) -> int:
            if si in open_sos:
                open_ks = open_sos[si]
                want = state[0] if state else open_ks[-1]
                if want in open_ks:
                    return want
                return next((k for k in open_ks if k > want), open_ks[-1])
            p_min, p_max = ladder_rng[si]
            want = len(state) if state is not None else p_max
            return min(max(want, p_min), p_max)

        def run_trial(pins: dict[int, int], floor: dict[int, int]) -> str:
            trial = dict(base_bounds)
            for si, winner in pins.items():
                members = sts[si].members
                if si in open_sos:
                    for k in open_sos[si]:
                        if k != winner:
                            trial[members[k]] = (0.0, 0.0)
                else:
                    for k in range(winner):
                        trial[members[k]] = (1.0, 1.0)
                    for k in range(winner, len(members)):
                        trial[members[k]] = (0.0, 0.0)
            for si, lo in floor.items():
                members = sts[si].members
                if si in open_sos:
                    for k in open_sos[si]:
                        if k < lo:
                            trial[members[k]] = (0.0, 0.0)
                else:
                    for k in range(lo):
                        trial[members[k]] = (1.0, 1.0)
            return tree.solve_node(trial)

        winners: dict[int, int] = {}
        floors: dict[int, int] = {}
        for si in range(len(sts)):
            best, cover = guide[si]
            w = align(si, best)
            if cover == best:
                winners[si] = w
            else:
                floors[si] = w
        st = run_trial(winners, floors)
        if st == "optimal":
            if tree.is_integral():
                consider_incumbent()
                return
            xt = spx.x
            for si, lo in floors.items():
                members = sts[si].members
                if si in open_sos:
                    open_ks = [k for k in open_sos[si] if k >= lo]
                    weights = np.array([max(xt[members[k]], 0.0) for k in open_ks])
                    total = float(weights.sum())
                    if total <= _INT_TOL:
                        winners[si] = open_ks[0]
                        continue
                    mean_pos = float(np.array(open_ks, dtype=float) @ weights) / total
                    k_up = int(math.ceil(mean_pos - _INT_TOL))
                    winners[si] = min(
                        (k for k in open_ks if k >= k_up), default=open_ks[-1]
                    )
                else:
                    p_min, p_max = ladder_rng[si]
                    frac = sum(max(xt[members[k]], 0.0) for k in range(lo, p_max))
                    winners[si] = min(max(int(math.ceil(lo + frac - _INT_TOL)), lo), p_max)
            st = run_trial(winners, {})
            if st == "optimal" and tree.is_integral():
                consider_incumbent()
                return
            if st != "infeasible":
                return
        elif st != "infeasible":
            return
        safe: dict[int, int] = {}
        for si in range(len(sts)):
            safe[si] = align(si, guide[si][1])
        st = run_trial(safe, {})
        if st == "optimal" and tree.is_integral():
            consider_incumbent()

    while heap:
        if time.perf_counter() > tree.deadline:
            hit_limit = True
            limit_reason = "time limit"
            break
        if nodes >= options.node_limit:
            hit_limit = True
            limit_reason = "node limit"
            break
        bound, _, bounds = heapq.heappop(heap)
        if incumbent_x is not None and rel_gap(incumbent_obj, bound) <= options.relative_gap_tol:
            # best-bound order: every remaining node is at least this bound
            proof_bound = bound
            heap.clear()
            break
        nodes += 1
        st = tree.solve_node(bounds)
        if st == "limit":
            hit_limit = True
            limit_reason = "time limit"
            heapq.heappush(heap, (bound, -1, bounds))  # still open
            break
        if st in ("infeasible", "unbounded"):
            continue
        obj = spx.objective_value()
        node_bound = max(obj, bound)  # popped key already folds in the choice bound
        if incumbent_x is not None and rel_gap(incumbent_obj, node_bound) <= options.relative_gap_tol:
            proof_bound = min(proof_bound, node_bound)
            continue
        gi = pick_branch_group(tree, cb, bounds)
        bj = None if gi is not None else pick_branch_binary(tree, cb, bounds)
        if gi is None and bj is None:
            consider_incumbent()
            polish(node_bound)
            continue
        if gi is not None:
            left, right = tree.branch_group(gi, bounds)
        else:
            left, right = tree.branch_binary(bj, bounds)
        for child in (left, right):
            child_bound = eval_cb(child)
            if child_bound == math.inf:
                continue  # some structure ran out of admissible states
            seq += 1
            heapq.heappush(heap, (max(node_bound, child_bound), seq, child))
        if nodes % 40 == 1:
            dive(bounds)
            polish(node_bound)

    wall = time.perf_counter() - t0
    open_min = min(b for b, _, _ in heap) if heap else math.inf
    if hit_limit:
        if incumbent_x is None:
            partial = min(open_min, proof_bound)
            return SolveResult(
                status=SolveStatus.LIMIT_HIT,
                bound=None if math.isinf(partial) else partial,
                node_count=nodes,
                iteration_count=iterations(),
                wall_time_seconds=wall,
                message=f"stopped on {limit_reason} with no feasible point",
            )
        return SolveResult(
            status=SolveStatus.LIMIT_HIT,
            objective=incumbent_obj,
            bound=min(open_min, proof_bound, incumbent_obj),
            values=incumbent_x,
            node_count=nodes,
            iteration_count=iterations(),
            wall_time_seconds=wall,
            max_violation=_verify(tree, incumbent_x),
            message=f"stopped on {limit_reason}",
        )
    if incumbent_x is None:
        return SolveResult(
            status=SolveStatus.INFEASIBLE,
            node_count=nodes,
            iteration_count=iterations(),
            wall_time_seconds=wall,
        )
    # every node not expanded has bound >= min(proof_bound, open_min); the
    # optimum cannot sit below that or above the incumbent
    final_bound = min(incumbent_obj, proof_bound, open_min)
    gap = rel_gap(incumbent_obj, final_bound)
    status = (
        SolveStatus.OPTIMAL
        if gap <= options.relative_gap_tol
        else SolveStatus.FEASIBLE_GAP
    )
    return SolveResult(
        status=status,
        objective=incumbent_obj,
        bound=final_bound,
        values=incumbent_x,
        node_count=nodes,
        iteration_count=iterations(),
        wall_time_seconds=wall,
        max_violation=_verify(tree, incumbent_x),
    )


def _verify(tree: _Tree, values: np.ndarray) -> float:
    """Worst raw-units violation of the original rows at the solution."""
    worst = 0.0
    for con in tree.model.constraints:
        act = float(con.coefficients @ values[con.indices])
        if con.sense == "<=":
            worst = max(worst, act - con.rhs)
        elif con.sense == ">=":
            worst = max(worst, con.rhs - act)
        else:
            worst = max(worst, abs(act - con.rhs))
    lb = np.array(tree.model.var_lb)
    ub = np.array(tree.model.var_ub)
    worst = max(worst, float(np.max(np.maximum(lb - values, 0.0), initial=0.0)))
    worst = max(worst, float(np.max(np.maximum(values - ub, 0.0), initial=0.0)))
    return worst
