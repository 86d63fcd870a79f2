"""Capacity-planning model builders and the request -> plan pipeline.

Two optimization models share one transfer structure:

* the fast model picks one surge level per hospital-day (SOS1 over levels),
* the complete model schedules individual capacity units with setup and
  teardown lead times, availability windows, and conversion charges.

Census never appears as a model variable.  Each hospital-day coverage row
substitutes the census recursion directly: nominal census (a constant
computed by the projection code) plus survivor-weighted contributions of
the transfer variables from earlier days.  Decoding re-runs the projection
through the same code and insists the two census calculations agree, which
catches builder drift before a plan ever leaves this module.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .domain import (
    CensusSeed,
    HospitalProfile,
    Horizon,
    ProjectionResult,
    SurgeplanError,
    TransferMatrixSeries,
    ValidationError,
    project,
)
from .solver import (
    MipModel,
    SolveOptions,
    SolveResult,
    SolveStatus,
    VarKind,
    solve_mip,
)

RECOMMENDATION_TYPES = ("capacity+transfers", "capacity only", "transfers only", "none")
OBJECTIVE_MODES = ("min-cost", "min-surge", "balance-load")
SURGE_CAPACITY_TYPES = ("discrete", "continuous")
MODEL_COMPLEXITIES = ("fast", "complete")
CAPACITY_TYPES = ("total", "ICU", "general")

# objective epsilons: transfer tiebreak and level tiebreak used by the
# balance-load and decision-free modes
_TRANSFER_EPS = 1e-3
_LEVEL_EPS = 1e-6


class PlanInfeasibleError(SurgeplanError):
    """The optimizer proved the request unsatisfiable."""

    def __init__(self, message: str, hint: str = ""):
        super().__init__(message)
        self.hint = hint


class PlanTimeoutError(SurgeplanError):
    """Solve limits were hit before any feasible plan was found."""


class InternalConsistencyError(SurgeplanError):
    """Solver census and recomputed census disagree; model builder bug."""


# ---------------------------------------------------------------------------
# request / data surfaces


@dataclass(frozen=True)
class PlanRequest:
    """Everything the planner asks the user for.

    Budgets are patients per day; ``math.inf`` means unlimited.  The
    per-hospital budget caps incoming and outgoing volume separately.
    relative_costs (r_h in [0, 1]) scale how much each hospital's surge
    burden counts; hospitals missing from the mapping default to 1.
    """

    horizon: Horizon
    population: str = "all"
    capacity_type: str = "total"
    scenario: str = "moderate"
    recommendation_type: str = "capacity+transfers"
    objective_mode: str = "min-cost"
    surge_capacity_type: str = "discrete"
    model_complexity: str = "fast"
    hospital_budget: Union[float, Mapping[str, float]] = math.inf
    system_budget: float = math.inf
    relative_costs: Mapping[str, float] = field(default_factory=dict)
    max_utilization: float = 1.0
    headroom: Optional[float] = None

    def __post_init__(self):
        if self.recommendation_type not in RECOMMENDATION_TYPES:
            raise ValidationError(
                f"recommendation_type must be one of {RECOMMENDATION_TYPES}, "
                f"got {self.recommendation_type!r}"
            )
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ValidationError(
                f"objective_mode must be one of {OBJECTIVE_MODES}, got {self.objective_mode!r}"
            )
        if self.surge_capacity_type not in SURGE_CAPACITY_TYPES:
            raise ValidationError(
                f"surge_capacity_type must be one of {SURGE_CAPACITY_TYPES}, "
                f"got {self.surge_capacity_type!r}"
            )
        if self.model_complexity not in MODEL_COMPLEXITIES:
            raise ValidationError(
                f"model_complexity must be one of {MODEL_COMPLEXITIES}, "
                f"got {self.model_complexity!r}"
            )
        if self.capacity_type not in CAPACITY_TYPES:
            raise ValidationError(
                f"capacity_type must be one of {CAPACITY_TYPES}, got {self.capacity_type!r}"
            )
        for name, value in self._budget_items():
            if math.isnan(value) or value < 0:
                raise ValidationError(f"transfer budget {name} must be >= 0, got {value}")
        if math.isnan(self.system_budget) or self.system_budget < 0:
            raise ValidationError(
                f"transfer_budget must be >= 0, got {self.system_budget}"
            )
        for h, r in dict(self.relative_costs).items():
            if not (0.0 <= r <= 1.0):
                raise ValidationError(f"relative cost for {h} must be in [0, 1], got {r}")
        if not (0.0 < self.max_utilization <= 1.0):
            raise ValidationError(
                f"max_utilization must be in (0, 1], got {self.max_utilization}"
            )
        if self.headroom is not None and self.headroom < 0:
            raise ValidationError(f"headroom must be >= 0, got {self.headroom}")
        if self.model_complexity == "complete" and self.surge_capacity_type == "continuous":
            raise ValidationError(
                "continuous surge capacity only applies to the fast model"
            )

    def _budget_items(self):
        if isinstance(self.hospital_budget, Mapping):
            return list(self.hospital_budget.items())
        return [("(uniform)", float(self.hospital_budget))]

    def budget_for(self, hospital_id: str) -> float:
        if isinstance(self.hospital_budget, Mapping):
            return float(self.hospital_budget.get(hospital_id, math.inf))
        return float(self.hospital_budget)

    def relative_cost_for(self, hospital_id: str) -> float:
        return float(dict(self.relative_costs).get(hospital_id, 1.0))

    @property
    def wants_transfers(self) -> bool:
        return self.recommendation_type in ("capacity+transfers", "transfers only")

    @property
    def wants_capacity(self) -> bool:
        return self.recommendation_type in ("capacity+transfers", "capacity only", "none")


@dataclass
class PlanningData:
    """Resolved inputs for one solve: hospital roster, arrivals, census seed."""

    horizon: Horizon
    profiles: dict[str, HospitalProfile]
    arrivals: np.ndarray
    seed: Optional[CensusSeed] = None

    def __post_init__(self):
        if not self.profiles:
            raise ValidationError("planning data needs at least one hospital")
        arr = np.asarray(self.arrivals, dtype=float)
        expect = (len(self.profiles), self.horizon.num_days)
        if arr.shape != expect:
            raise ValidationError(
                f"arrivals shape {arr.shape} does not match (hospitals, days) {expect}"
            )
        if np.any(arr < 0):
            raise ValidationError("negative arrivals")
        if np.any(~np.isfinite(arr)):
            raise ValidationError("non-finite arrivals")
        self.arrivals = arr

    @property
    def hospital_ids(self) -> tuple[str, ...]:
        return tuple(self.profiles)

    def profile_list(self) -> list[HospitalProfile]:
        return list(self.profiles.values())


@dataclass(frozen=True)
class CapacityUnit:
    """One convertible block of staffed beds in the complete model."""

    name: str
    bed_count: float
    setup_days: int = 0
    teardown_days: int = 0

    def __post_init__(self):
        if self.bed_count <= 0:
            raise ValidationError(f"unit {self.name!r}: bed_count must be > 0")
        if self.setup_days < 0 or self.teardown_days < 0:
            raise ValidationError(f"unit {self.name!r}: lead times must be >= 0")


@dataclass
class UnitCatalog:
    """Per-hospital ordered unit lists; order is the preferred opening order."""

    units: dict[str, tuple[CapacityUnit, ...]]

    def __post_init__(self):
        cleaned = {}
        for h, items in self.units.items():
            items = tuple(items)
            names = [u.name for u in items]
            if len(set(names)) != len(names):
                raise ValidationError(f"{h}: duplicate unit names")
            cleaned[h] = items
        self.units = cleaned

    def for_hospital(self, hospital_id: str) -> tuple[CapacityUnit, ...]:
        return self.units.get(hospital_id, ())

    def total_units(self) -> int:
        return sum(len(v) for v in self.units.values())


# ---------------------------------------------------------------------------
# cost weights


@dataclass
class CostWeights:
    """Objective weights; see apply_objective_mode for how modes reshape them.

    w1[h][l]   day-cost of running hospital h at surge level l
    w2[h][g]   cost per patient transferred h -> g
    w1c[h][t]  complete model: day-cost per staffed bed
    w2c[h][k]  complete model: day-cost of keeping unit k available
    w3c[h][k]  complete model: one-off cost of converting unit k
    """

    w1: dict[str, np.ndarray]
    w2: dict[str, dict[str, float]]
    w1c: Optional[dict[str, np.ndarray]] = None
    w2c: Optional[dict[str, np.ndarray]] = None
    w3c: Optional[dict[str, np.ndarray]] = None

    def validate(self, baseline_must_be_free: bool = True) -> None:
        for h, arr in self.w1.items():
            arr = np.asarray(arr, dtype=float)
            if np.any(arr < -1e-12) or np.any(~np.isfinite(arr)):
                raise ValidationError(f"w1[{h}] must be finite and non-negative")
            if baseline_must_be_free and abs(arr[0]) > 1e-12:
                raise ValidationError(f"w1[{h}][baseline] must be 0, got {arr[0]}")
        for h, row in self.w2.items():
            for g, v in row.items():
                if v < 0 or not math.isfinite(v):
                    raise ValidationError(f"w2[{h}][{g}] must be finite and non-negative")
        for label, table in (("w1c", self.w1c), ("w2c", self.w2c), ("w3c", self.w3c)):
            if table is None:
                continue
            for h, arr in table.items():
                arr = np.asarray(arr, dtype=float)
                if np.any(arr < -1e-12) or np.any(~np.isfinite(arr)):
                    raise ValidationError(f"{label}[{h}] must be finite and non-negative")

    def transfer_cost(self, from_id: str, to_id: str) -> float:
        return float(self.w2.get(from_id, {}).get(to_id, 0.0))


#: default transfer cost: one diverted patient weighs like this many
#: surge bed-days in the objective
DEFAULT_TRANSFER_COST = 5.0

#: complete-model defaults per unit bed: availability runs at a tenth of
#: the full burden rate, a conversion costs about one bed-day per bed
DEFAULT_AVAILABILITY_RATE = 0.1
DEFAULT_CONVERSION_RATE = 1.0


def default_cost_weights(
    profiles: Mapping[str, HospitalProfile],
    horizon: Horizon,
    catalog: Optional[UnitCatalog] = None,
) -> CostWeights:
    """Burden-proportional defaults: a level costs its extra staffed beds.

    These are the pre-mode weights; apply_objective_mode folds in the
    relative surge costs r_h (so the effective min-cost weight becomes
    r_h * (b_l - b_baseline) per day).
    """
    w1 = {}
    w2 = {}
    for h, prof in profiles.items():
        caps = np.asarray(prof.level_capacities, dtype=float)
        w1[h] = caps - caps[0]
        w2[h] = {g: DEFAULT_TRANSFER_COST for g in profiles if g != h}
    w1c = {h: np.ones(horizon.num_days) for h in profiles}
    w2c = w3c = None
    if catalog is not None:
        w2c = {}
        w3c = {}
        for h in profiles:
            beds = np.array([u.bed_count for u in catalog.for_hospital(h)], dtype=float)
            w2c[h] = DEFAULT_AVAILABILITY_RATE * beds
            w3c[h] = DEFAULT_CONVERSION_RATE * beds
    return CostWeights(w1=w1, w2=w2, w1c=w1c, w2c=w2c, w3c=w3c)


def apply_objective_mode(request: PlanRequest, weights: CostWeights) -> CostWeights:
    """Reshape the weight tables for the requested objective.

    min-cost scales the given surge weights by each hospital's relative
    cost r_h.  min-surge replaces them with the bare level index so the
    optimizer counts escalation steps, with a small transfer tiebreak.
    balance-load zeroes real costs down to tiny tiebreaks; the load
    variable the builder adds carries the objective instead.
    """
    mode = request.objective_mode
    w1 = {h: np.asarray(v, dtype=float).copy() for h, v in weights.w1.items()}
    w2 = {h: dict(row) for h, row in weights.w2.items()}
    w1c = None if weights.w1c is None else {
        h: np.asarray(v, dtype=float).copy() for h, v in weights.w1c.items()
    }
    w2c = None if weights.w2c is None else {
        h: np.asarray(v, dtype=float).copy() for h, v in weights.w2c.items()
    }
    w3c = None if weights.w3c is None else {
        h: np.asarray(v, dtype=float).copy() for h, v in weights.w3c.items()
    }
    if mode == "min-cost":
        for h in w1:
            w1[h] = request.relative_cost_for(h) * w1[h]
        if w1c is not None:
            for h in w1c:
                w1c[h] = request.relative_cost_for(h) * w1c[h]
    elif mode == "min-surge":
        for h in w1:
            w1[h] = np.arange(len(w1[h]), dtype=float)
        for h in w2:
            w2[h] = {g: _TRANSFER_EPS for g in w2[h]}
        if w1c is not None:
            # unit analogue: count staffed surge beds, availability and
            # conversion only break ties
            for h in w1c:
                w1c[h] = np.ones_like(w1c[h])
        if w2c is not None:
            for h in w2c:
                w2c[h] = _TRANSFER_EPS * np.ones_like(w2c[h])
        if w3c is not None:
            for h in w3c:
                w3c[h] = _TRANSFER_EPS * np.ones_like(w3c[h])
    elif mode == "balance-load":
        for h in w1:
            w1[h] = _LEVEL_EPS * np.arange(len(w1[h]), dtype=float)
        for h in w2:
            w2[h] = {g: _TRANSFER_EPS for g in w2[h]}
        if w1c is not None:
            for h in w1c:
                w1c[h] = _LEVEL_EPS * np.ones_like(w1c[h])
        if w2c is not None:
            for h in w2c:
                w2c[h] = np.zeros_like(w2c[h])
        if w3c is not None:
            for h in w3c:
                w3c[h] = np.zeros_like(w3c[h])
    return CostWeights(w1=w1, w2=w2, w1c=w1c, w2c=w2c, w3c=w3c)


# ---------------------------------------------------------------------------
# shared builder plumbing


_NAME_SAFE = re.compile(r"[^A-Za-z0-9_.]")


def _safe(token: str) -> str:
    return _NAME_SAFE.sub("_", token)


@dataclass
class PlanMeta:
    """Decode bookkeeping the builders attach to the model."""

    hospital_ids: tuple[str, ...]
    horizon: Horizon
    nominal_census: np.ndarray  # (H, T) census with zero transfers
    survivors: list[np.ndarray]  # per hospital, P(stay > k) for k < T
    weights: CostWeights
    s_index: np.ndarray  # (H, H, T) var ids, -1 where absent
    u_index: Optional[np.ndarray] = None  # (H, T, L) fast discrete
    seg_index: Optional[np.ndarray] = None  # (H, T, L-1) fast continuous
    unit_index: Optional[dict[str, np.ndarray]] = None  # (K_h, T) in-use vars
    avail_index: Optional[dict[str, np.ndarray]] = None
    conv_index: Optional[dict[str, np.ndarray]] = None
    unit_beds: Optional[dict[str, np.ndarray]] = None  # (K_h,) bed counts
    load_var: Optional[int] = None  # balance-load variable


def _nominal_census(data: PlanningData, request: PlanRequest) -> np.ndarray:
    base = project(
        data.arrivals,
        data.profile_list(),
        data.horizon,
        transfers=None,
        seed=data.seed,
        max_utilization=request.max_utilization,
        headroom=request.headroom,
    )
    return base.census


def _transfer_variables(
    model: MipModel,
    request: PlanRequest,
    data: PlanningData,
    weights: CostWeights,
) -> np.ndarray:
    """Create s variables plus outbound and budget rows.

    Returns the (H, H, T) index array.  Variables exist whenever the
    recommendation type includes transfers OR is decision-free (fixed at
    zero there), matching the documented model shape.
    """
    ids = data.hospital_ids
    n = len(ids)
    T = data.horizon.num_days
    s_index = -np.ones((n, n, T), dtype=np.int64)
    if request.recommendation_type == "capacity only":
        return s_index
    fixed_zero = request.recommendation_type == "none"
    day_cap = request.system_budget
    for t in range(T):
        for hi, h in enumerate(ids):
            ub_out = min(
                float(data.arrivals[hi, t]),
                request.budget_for(h),
                day_cap,
            )
            for gi, g in enumerate(ids):
                if gi == hi:
                    continue
                ub = 0.0 if fixed_zero else max(0.0, min(ub_out, request.budget_for(g)))
                s_index[hi, gi, t] = model.add_variable(
                    f"s({_safe(h)},{_safe(g)},{t + 1})",
                    0.0,
                    ub,
                    objective=weights.transfer_cost(h, g),
                )
    if fixed_zero:
        return s_index
    # outbound transfers divert incoming patients, never exceed them
    for t in range(T):
        for hi, h in enumerate(ids):
            members = [(int(s_index[hi, gi, t]), 1.0) for gi in range(n) if gi != hi]
            if members:
                model.add_constraint(
                    f"out({_safe(h)},{t + 1})", members, "<=", float(data.arrivals[hi, t])
                )
    # per-hospital budgets cap each direction separately
    for hi, h in enumerate(ids):
        cap = request.budget_for(h)
        if not math.isfinite(cap):
            continue
        for t in range(T):
            outgoing = [(int(s_index[hi, gi, t]), 1.0) for gi in range(n) if gi != hi]
            incoming = [(int(s_index[gi, hi, t]), 1.0) for gi in range(n) if gi != hi]
            if outgoing:
                model.add_constraint(f"cap_out({_safe(h)},{t + 1})", outgoing, "<=", cap)
            if incoming:
                model.add_constraint(f"cap_in({_safe(h)},{t + 1})", incoming, "<=", cap)
    if math.isfinite(day_cap):
        for t in range(T):
            members = [
                (int(s_index[hi, gi, t]), 1.0)
                for hi in range(n)
                for gi in range(n)
                if hi != gi
            ]
            if members:
                model.add_constraint(f"sys({t + 1})", members, "<=", day_cap)
    return s_index


def _census_adjustment_terms(
    meta: PlanMeta, hi: int, t: int
) -> list[tuple[int, float]]:
    """Coverage-row terms for how prior transfers move hospital hi's day-t census.

    Incoming patients still present contribute +R(t - t'), outgoing ones
    -R(t - t'); in a >= coverage row they enter with flipped signs.
    """
    surv = meta.survivors[hi]
    s_index = meta.s_index
    n = len(meta.hospital_ids)
    terms: list[tuple[int, float]] = []
    lo = max(0, t - (surv.size - 1))
    for tp in range(lo, t + 1):
        r = float(surv[t - tp])
        if r <= 0.0:
            continue
        for gi in range(n):
            if gi == hi:
                continue
            vin = int(s_index[gi, hi, tp])
            if vin >= 0:
                terms.append((vin, -r))
            vout = int(s_index[hi, gi, tp])
            if vout >= 0:
                terms.append((vout, r))
    return terms


def _coverage_rows(
    model: MipModel,
    request: PlanRequest,
    data: PlanningData,
    meta: PlanMeta,
    capacity_terms,
    capacity_const=None,
    load_pool=None,
) -> None:
    """Emit o <= z*c (and o <= c - headroom) rows for every hospital-day.

    capacity_terms(hi, t) yields the variable terms whose activity plus
    capacity_const(hi, t) is the staffed capacity c_{h,t}.  load_pool(hi)
    is the balance-load denominator capacity when that mode is active.
    """
    ids = data.hospital_ids
    z = request.max_utilization
    zprime = request.headroom
    T = data.horizon.num_days
    for t in range(T):
        for hi, h in enumerate(ids):
            k = float(meta.nominal_census[hi, t])
            const = float(capacity_const(hi, t)) if capacity_const is not None else 0.0
            adj = _census_adjustment_terms(meta, hi, t)
            cap = [(j, z * c) for j, c in capacity_terms(hi, t)]
            model.add_constraint(
                f"cover({_safe(h)},{t + 1})", cap + adj, ">=", k - z * const
            )
            if zprime is not None:
                cap_raw = list(capacity_terms(hi, t))
                model.add_constraint(
                    f"head({_safe(h)},{t + 1})",
                    cap_raw + adj,
                    ">=",
                    k + zprime - const,
                )
            if meta.load_var is not None:
                pool = float(load_pool(hi)) if load_pool is not None else _peak_capacity(
                    data.profiles[h]
                )
                model.add_constraint(
                    f"load({_safe(h)},{t + 1})",
                    [(meta.load_var, z * pool)] + adj,
                    ">=",
                    k,
                )


def _peak_capacity(profile: HospitalProfile) -> float:
    return float(profile.level_capacities[-1])


# ---------------------------------------------------------------------------
# fast model


def build_simplified(
    request: PlanRequest,
    data: PlanningData,
    weights: Optional[CostWeights] = None,
) -> MipModel:
    """Surge-level + transfer model, census substituted into coverage rows.

    Discrete mode: binary u(h,t,l) per level with one SOS1 group per
    hospital-day.  Continuous mode: per-level capacity segments that fill
    in order under interpolated costs.  Transfers-only fixes every
    hospital at its baseline level; decision-free mode fixes transfers at
    zero and prices levels by a tiny index tiebreak so the chosen level is
    the minimum cover.
    """
    if data.horizon.num_days <= 0:
        raise ValidationError("planning horizon must contain at least one day")
    if weights is None:
        weights = apply_objective_mode(
            request, default_cost_weights(data.profiles, data.horizon)
        )
    weights.validate()

    ids = data.hospital_ids
    n = len(ids)
    T = data.horizon.num_days
    model = MipModel()
    meta = PlanMeta(
        hospital_ids=ids,
        horizon=data.horizon,
        nominal_census=_nominal_census(data, request),
        survivors=[p.survivor(T) for p in data.profile_list()],
        weights=weights,
        s_index=-np.ones((n, n, T), dtype=np.int64),
    )

    decision_free = request.recommendation_type == "none"
    transfers_only = request.recommendation_type == "transfers only"

    if request.surge_capacity_type == "discrete":
        levels = {h: len(data.profiles[h].level_capacities) for h in ids}
        L = max(levels.values())
        u_index = -np.ones((n, T, L), dtype=np.int64)
        for t in range(T):
            for hi, h in enumerate(ids):
                group = []
                for l in range(levels[h]):
                    if decision_free:
                        cost = _LEVEL_EPS * l
                    else:
                        cost = float(weights.w1[h][l])
                    lb, ub = 0.0, 1.0
                    if transfers_only:
                        # hold the current operating level; baseline by default
                        lb = ub = 1.0 if l == 0 else 0.0
                    j = model.add_variable(
                        f"u({_safe(h)},{t + 1},{l})",
                        lb,
                        ub,
                        kind=VarKind.BINARY,
                        objective=cost,
                    )
                    u_index[hi, t, l] = j
                    group.append(j)
                model.add_sos1(f"lvl({_safe(h)},{t + 1})", group)
        meta.u_index = u_index
    else:
        seg_counts = {h: len(data.profiles[h].level_capacities) - 1 for h in ids}
        max_seg = max(seg_counts.values()) if seg_counts else 0
        seg_index = -np.ones((n, T, max(max_seg, 1)), dtype=np.int64)
        for t in range(T):
            for hi, h in enumerate(ids):
                caps = data.profiles[h].level_capacities
                w1 = weights.w1[h]
                for l in range(1, len(caps)):
                    width = float(caps[l] - caps[l - 1])
                    if width <= 0:
                        continue
                    rate = float(w1[l] - w1[l - 1]) / width
                    ub = 0.0 if transfers_only else width
                    seg_index[hi, t, l - 1] = model.add_variable(
                        f"c({_safe(h)},{t + 1},{l})", 0.0, ub, objective=max(rate, 0.0)
                    )
        meta.seg_index = seg_index

    if request.objective_mode == "balance-load":
        meta.load_var = model.add_variable("peak_load", 0.0, math.inf, objective=1.0)

    meta.s_index = _transfer_variables(model, request, data, weights)

    if request.surge_capacity_type == "discrete":

        def capacity_terms(hi: int, t: int):
            caps = data.profiles[ids[hi]].level_capacities
            return [
                (int(meta.u_index[hi, t, l]), float(caps[l])) for l in range(len(caps))
            ]

    else:

        def capacity_terms(hi: int, t: int):
            prof = data.profiles[ids[hi]]
            terms = []
            for l in range(1, len(prof.level_capacities)):
                j = int(meta.seg_index[hi, t, l - 1])
                if j >= 0:
                    terms.append((j, 1.0))
            return terms

    if request.surge_capacity_type == "continuous":
        # baseline beds are a constant and move to the right-hand side
        def capacity_const(hi: int, t: int) -> float:
            return data.profiles[ids[hi]].baseline_capacity

        _coverage_rows(model, request, data, meta, capacity_terms, capacity_const)
    else:
        _coverage_rows(model, request, data, meta, capacity_terms)

    model.meta = meta
    return model


# ---------------------------------------------------------------------------
# complete model


def build_complete(
    request: PlanRequest,
    data: PlanningData,
    unit_catalog: UnitCatalog,
    weights: Optional[CostWeights] = None,
) -> MipModel:
    """Unit-scheduling model: in-use, availability, and conversion binaries.

    Capacity is the bed sum of in-use units.  A unit in use on day t must
    be available teardown_days earlier, setup_days later, and on the day
    itself; shifted days outside the horizon are dropped (units are assumed
    convertible before day one).  Conversions are charged whenever a unit
    turns on, including day one.  Units open in catalog order.
    """
    if data.horizon.num_days <= 0:
        raise ValidationError("planning horizon must contain at least one day")
    for h in data.hospital_ids:
        if h not in unit_catalog.units:
            raise ValidationError(f"unit catalog missing hospital {h}")
    if weights is None:
        weights = apply_objective_mode(
            request,
            default_cost_weights(data.profiles, data.horizon, catalog=unit_catalog),
        )
    weights.validate()
    if weights.w1c is None or weights.w2c is None or weights.w3c is None:
        raise ValidationError("complete model needs w1c, w2c, and w3c weights")

    ids = data.hospital_ids
    n = len(ids)
    T = data.horizon.num_days
    model = MipModel()
    meta = PlanMeta(
        hospital_ids=ids,
        horizon=data.horizon,
        nominal_census=_nominal_census(data, request),
        survivors=[p.survivor(T) for p in data.profile_list()],
        weights=weights,
        s_index=-np.ones((n, n, T), dtype=np.int64),
    )

    transfers_only = request.recommendation_type == "transfers only"
    unit_index: dict[str, np.ndarray] = {}
    avail_index: dict[str, np.ndarray] = {}
    conv_index: dict[str, np.ndarray] = {}

    for hi, h in enumerate(ids):
        units = unit_catalog.for_hospital(h)
        K = len(units)
        uu = -np.ones((K, T), dtype=np.int64)
        aa = -np.ones((K, T), dtype=np.int64)
        cc = -np.ones((K, T), dtype=np.int64)
        w1c = np.asarray(weights.w1c[h], dtype=float)
        if w1c.size != T:
            raise ValidationError(f"w1c[{h}] must cover {T} days")
        w2c = np.asarray(weights.w2c[h], dtype=float)
        w3c = np.asarray(weights.w3c[h], dtype=float)
        if w2c.size != K or w3c.size != K:
            raise ValidationError(f"w2c/w3c[{h}] must cover {K} units")
        for k, unit in enumerate(units):
            fixed = (0.0, 0.0) if transfers_only else (0.0, 1.0)
            for t in range(T):
                # the bed count enters the objective through the capacity term
                uu[k, t] = model.add_variable(
                    f"unit({_safe(h)},{t + 1},{k})",
                    *fixed,
                    kind=VarKind.BINARY,
                    objective=float(w1c[t]) * unit.bed_count,
                )
                aa[k, t] = model.add_variable(
                    f"avail({_safe(h)},{t + 1},{k})",
                    *fixed,
                    kind=VarKind.BINARY,
                    objective=float(w2c[k]),
                )
                cc[k, t] = model.add_variable(
                    f"conv({_safe(h)},{t + 1},{k})",
                    *fixed,
                    kind=VarKind.BINARY,
                    objective=float(w3c[k]),
                )
        unit_index[h] = uu
        avail_index[h] = aa
        conv_index[h] = cc

        for k, unit in enumerate(units):
            for t in range(T):
                shifts = {t - unit.teardown_days, t + unit.setup_days, t}
                for tshift in sorted(shifts):
                    if 0 <= tshift < T:
                        model.add_constraint(
                            f"avl({_safe(h)},{t + 1},{k},{tshift + 1})",
                            [(int(uu[k, t]), 1.0), (int(aa[k, tshift]), -1.0)],
                            "<=",
                            0.0,
                        )
                if t == 0:
                    model.add_constraint(
                        f"cnv({_safe(h)},1,{k})",
                        [(int(cc[k, 0]), 1.0), (int(uu[k, 0]), -1.0)],
                        "=",
                        0.0,
                    )
                else:
                    model.add_constraint(
                        f"cnv({_safe(h)},{t + 1},{k})",
                        [
                            (int(uu[k, t]), 1.0),
                            (int(uu[k, t - 1]), -1.0),
                            (int(cc[k, t]), -1.0),
                        ],
                        "<=",
                        0.0,
                    )
                if k > 0:
                    model.add_constraint(
                        f"ord({_safe(h)},{t + 1},{k})",
                        [(int(uu[k, t]), 1.0), (int(uu[k - 1, t]), -1.0)],
                        "<=",
                        0.0,
                    )

    meta.unit_index = unit_index
    meta.avail_index = avail_index
    meta.conv_index = conv_index
    meta.unit_beds = {
        h: np.array([u.bed_count for u in unit_catalog.for_hospital(h)], dtype=float)
        for h in ids
    }

    if request.objective_mode == "balance-load":
        meta.load_var = model.add_variable("peak_load", 0.0, math.inf, objective=1.0)

    meta.s_index = _transfer_variables(model, request, data, weights)

    def capacity_terms(hi: int, t: int):
        h = ids[hi]
        beds = meta.unit_beds[h]
        uu = unit_index[h]
        return [(int(uu[k, t]), float(beds[k])) for k in range(len(beds))]

    def load_pool(hi: int) -> float:
        # balance-load denominator: the full convertible pool
        total = float(meta.unit_beds[ids[hi]].sum())
        return total if total > 0 else 1.0

    _coverage_rows(model, request, data, meta, capacity_terms, load_pool=load_pool)

    model.meta = meta
    return model


# ---------------------------------------------------------------------------
# decoding


@dataclass
class CapacityPlan:
    """A solved recommendation: levels/capacity, transfers, projection."""

    request: PlanRequest
    hospital_ids: tuple[str, ...]
    horizon: Horizon
    capacity: np.ndarray  # (H, T) staffed beds
    transfers: TransferMatrixSeries
    projection: ProjectionResult
    objective: float
    status: SolveStatus
    levels: Optional[np.ndarray] = None  # (H, T) level index, discrete fast mode
    bound: Optional[float] = None
    units_in_use: Optional[dict[str, np.ndarray]] = None
    units_available: Optional[dict[str, np.ndarray]] = None
    units_converted: Optional[dict[str, np.ndarray]] = None
    solve_stats: dict = field(default_factory=dict)
    # the inputs the plan was solved against, kept so downstream replay
    # (robustness validation, reporting) does not need them re-supplied
    data: Optional[PlanningData] = None

    @property
    def census(self) -> np.ndarray:
        return self.projection.census


def decode_plan(
    request: PlanRequest,
    model: MipModel,
    solve_result: SolveResult,
    data: PlanningData,
) -> CapacityPlan:
    """Turn solver values back into a plan and cross-check the census.

    The census each coverage row saw is recomputed from the decoded
    transfers through the projection code; any disagreement beyond 1e-6
    means the builder and the domain layer drifted apart and is raised,
    never papered over.
    """
    if solve_result.values is None:
        raise PlanInfeasibleError(
            f"cannot decode a plan from solver status {solve_result.status.value}"
        )
    meta: PlanMeta = model.meta
    ids = meta.hospital_ids
    n = len(ids)
    T = meta.horizon.num_days
    x = solve_result.values

    s_values = np.zeros((n, n, T))
    mask = meta.s_index >= 0
    s_values[mask] = np.maximum(x[meta.s_index[mask]], 0.0)
    s_values[np.abs(s_values) < 1e-9] = 0.0
    transfers = TransferMatrixSeries(ids, meta.horizon, s_values)

    levels = None
    units_in_use = units_available = units_converted = None
    if meta.u_index is not None:
        levels = np.zeros((n, T), dtype=np.int64)
        capacity = np.zeros((n, T))
        for hi, h in enumerate(ids):
            caps = data.profiles[h].level_capacities
            for t in range(T):
                vals = x[meta.u_index[hi, t, : len(caps)]]
                winner = int(np.argmax(vals))
                if vals[winner] < 0.5:
                    raise InternalConsistencyError(
                        f"no surge level chosen for {h} day {t + 1}"
                    )
                levels[hi, t] = winner
                capacity[hi, t] = caps[winner]
    elif meta.seg_index is not None:
        capacity = np.zeros((n, T))
        for hi, h in enumerate(ids):
            base = data.profiles[h].baseline_capacity
            for t in range(T):
                segs = meta.seg_index[hi, t]
                extra = float(np.sum(x[segs[segs >= 0]])) if np.any(segs >= 0) else 0.0
                capacity[hi, t] = base + extra
    else:
        capacity = np.zeros((n, T))
        units_in_use = {}
        units_available = {}
        units_converted = {}
        for hi, h in enumerate(ids):
            uu = meta.unit_index[h]
            if uu.size == 0:
                empty = np.zeros((0, T), np.int64)
                units_in_use[h] = units_available[h] = units_converted[h] = empty
                continue
            units_in_use[h] = np.rint(x[uu]).astype(np.int64)
            units_available[h] = np.rint(x[meta.avail_index[h]]).astype(np.int64)
            units_converted[h] = np.rint(x[meta.conv_index[h]]).astype(np.int64)
            capacity[hi] = meta.unit_beds[h] @ units_in_use[h]

    # the census every coverage row saw, rebuilt from decoded transfers
    model_census = np.zeros((n, T))
    for hi in range(n):
        surv = meta.survivors[hi]
        net = s_values[:, hi, :].sum(axis=0) - s_values[hi, :, :].sum(axis=0)
        shift = np.convolve(net, surv)[:T]
        model_census[hi] = meta.nominal_census[hi] + shift

    projection = project(
        data.arrivals,
        data.profile_list(),
        meta.horizon,
        transfers=transfers,
        seed=data.seed,
        levels=levels,
        max_utilization=request.max_utilization,
        headroom=request.headroom,
    )
    drift = float(np.max(np.abs(projection.census - model_census)))
    if drift > 1e-6:
        raise InternalConsistencyError(
            f"solver census and recomputed census disagree by {drift:.3e}"
        )

    return CapacityPlan(
        request=request,
        hospital_ids=ids,
        horizon=meta.horizon,
        capacity=capacity,
        transfers=transfers,
        projection=projection,
        objective=float(solve_result.objective),
        status=solve_result.status,
        levels=levels,
        bound=solve_result.bound,
        units_in_use=units_in_use,
        units_available=units_available,
        units_converted=units_converted,
        solve_stats={
            "node_count": solve_result.node_count,
            "iterations": solve_result.iteration_count,
            "wall_time_seconds": solve_result.wall_time_seconds,
            "max_violation": solve_result.max_violation,
            "gap": solve_result.gap,
        },
        data=data,
    )


# ---------------------------------------------------------------------------
# pipeline


def infeasibility_hint(request: PlanRequest, data: PlanningData) -> str:
    """Best-effort explanation for an infeasible solve."""
    ids = data.hospital_ids
    T = data.horizon.num_days
    nominal = _nominal_census(data, request)
    z = request.max_utilization
    for hi, h in enumerate(ids):
        prof = data.profiles[h]
        usable = z * _peak_capacity(prof)
        if request.headroom is not None:
            usable = min(usable, _peak_capacity(prof) - request.headroom)
        surv = prof.survivor(T)
        out_cap = np.minimum(
            data.arrivals[hi],
            min(request.budget_for(h), request.system_budget),
        )
        if not request.wants_transfers:
            out_cap = np.zeros(T)
        relief = np.convolve(out_cap, surv)[:T]
        worst = float(np.max(nominal[hi] - relief - usable))
        if worst > 1e-9:
            return (
                f"coverage: {h} census exceeds its highest usable capacity "
                f"by {worst:.1f} even with maximal diversions"
            )
    return "transfer-budgets: no single hospital is impossible, but the combined budget and coverage rows conflict"


def run_plan(
    request: PlanRequest,
    data: PlanningData,
    weights: Optional[CostWeights] = None,
    unit_catalog: Optional[UnitCatalog] = None,
    options: Optional[SolveOptions] = None,
) -> CapacityPlan:
    """Build, solve, and decode one plan request."""
    if weights is None:
        weights = default_cost_weights(
            data.profiles,
            data.horizon,
            catalog=unit_catalog if request.model_complexity == "complete" else None,
        )
    weights = apply_objective_mode(request, weights)
    if request.model_complexity == "complete":
        if unit_catalog is None:
            raise ValidationError("complete model needs a unit catalog")
        model = build_complete(request, data, unit_catalog, weights)
    else:
        model = build_simplified(request, data, weights)
    result = solve_mip(model, options or SolveOptions())
    if result.status is SolveStatus.INFEASIBLE:
        raise PlanInfeasibleError(
            "no feasible plan for this request", hint=infeasibility_hint(request, data)
        )
    if result.status is SolveStatus.UNBOUNDED:
        raise InternalConsistencyError(
            "planning model is unbounded; cost weights must be non-negative"
        )
    if result.values is None:
        raise PlanTimeoutError(
            f"solver hit its limits before finding any plan ({result.message})"
        )
    plan = decode_plan(request, model, result, data)
    return plan
