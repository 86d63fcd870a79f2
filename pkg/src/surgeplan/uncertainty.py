"""Forecast envelopes: membership, corner sampling, robustness replay.

A demand envelope wraps a nominal arrivals forecast in three clause
families: a per-day box, a budget on total absolute deviation (as a
fraction of total nominal volume), and a day-over-day ramp bound relative
to the nominal ramp.  The robust counterpart is deliberately not built
into the optimization model; instead a solved plan is replayed against
sampled member scenarios and graded on how often its fixed capacity and
transfer schedule would have been breached.

Sampling and validation are pure functions of (spec, seed).  Every
scenario draws from its own spawned child stream, so evaluating scenarios
in parallel cannot change results.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .domain import (
    DemandSeries,
    Horizon,
    TransferMatrixSeries,
    ValidationError,
    project,
)
from .planning import CapacityPlan, InternalConsistencyError

_log = logging.getLogger(__name__)

# relative slack for clause checks; deviations are backed off by more than
# this when sampling, so boundary samples never flicker
_CLAUSE_TOL = 1e-9
# a nominal ramp below this (scaled) is treated as flat and the ramp
# clause is skipped for that day pair
_FLAT_RAMP = 1e-12


# ---------------------------------------------------------------------------
# envelope spec and membership


@dataclass(frozen=True, eq=False)
class UncertaintySpec:
    """Envelope around one hospital's nominal forecast.

    dev_lo / dev_hi are the allowed per-day deviations below and above the
    nominal (both non-negative; scalars broadcast).  gamma1 caps the total
    absolute deviation as a fraction of total nominal arrivals; gamma2
    caps each day-over-day swing at gamma2 times the nominal swing.
    """

    nominal: DemandSeries
    dev_lo: np.ndarray
    dev_hi: np.ndarray
    gamma1: float
    gamma2: float

    def __post_init__(self):
        t = self.nominal.horizon.num_days
        for name in ("dev_lo", "dev_hi"):
            dev = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (t,)).copy()
            if np.any(dev < 0) or np.any(~np.isfinite(dev)):
                raise ValidationError(f"{name} must be finite and >= 0")
            dev.setflags(write=False)
            object.__setattr__(self, name, dev)
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValidationError("gamma parameters must be >= 0")

    @property
    def num_days(self) -> int:
        return self.nominal.horizon.num_days

    @property
    def hospital_id(self) -> str:
        return self.nominal.hospital_id

    def is_point(self) -> bool:
        """True when the envelope has no interior beyond the nominal."""
        return bool(np.all(self.dev_lo == 0) and np.all(self.dev_hi == 0))


def scaled_envelope(
    nominal: DemandSeries, scale: float, gamma1: float, gamma2: float
) -> UncertaintySpec:
    """One-sided envelope reaching from the nominal to scale * nominal.

    scale above 1 allows upward deviation only, below 1 downward only;
    exactly 1 is the point envelope.  Preset scenario tags (optimistic,
    pessimistic, ...) are mapped to scale factors by configuration, not
    here.
    """
    if scale < 0:
        raise ValidationError(f"envelope scale must be >= 0, got {scale}")
    vals = nominal.values
    if scale >= 1.0:
        return UncertaintySpec(nominal, np.zeros_like(vals), (scale - 1.0) * vals, gamma1, gamma2)
    return UncertaintySpec(nominal, (1.0 - scale) * vals, np.zeros_like(vals), gamma1, gamma2)


@dataclass(frozen=True)
class ClauseViolation:
    """First clause a candidate broke: which family, where, by how much."""

    clause: str  # "box" | "budget" | "ramp"
    day: Optional[int]  # day index, or None for the horizon-wide budget
    observed: float
    limit: float

    def __str__(self) -> str:
        where = "" if self.day is None else f" at day {self.day + 1}"
        return f"{self.clause} clause{where}: {self.observed:.6g} exceeds {self.limit:.6g}"


@dataclass(frozen=True)
class MembershipReport:
    """contains() verdict; truthy iff the candidate is a member."""

    ok: bool
    violation: Optional[ClauseViolation]
    ramp_days_skipped: int

    def __bool__(self) -> bool:
        return self.ok


def _candidate_values(spec: UncertaintySpec, candidate) -> np.ndarray:
    if isinstance(candidate, DemandSeries):
        if candidate.horizon != spec.nominal.horizon:
            raise ValidationError(
                f"candidate horizon {candidate.horizon.start}..{candidate.horizon.end} "
                f"does not match the envelope's "
                f"{spec.nominal.horizon.start}..{spec.nominal.horizon.end}"
            )
        return candidate.values
    vals = np.asarray(candidate, dtype=float)
    if vals.shape != (spec.num_days,):
        raise ValidationError(
            f"candidate length {vals.shape} does not match {spec.num_days} days"
        )
    return vals


def contains(spec: UncertaintySpec, candidate) -> MembershipReport:
    """Clause-by-clause membership test.

    Reports the first violated clause in box, budget, ramp order (box and
    ramp scanned day by day).  Day pairs where the nominal is flat are
    skipped by the ramp clause (the ratio is undefined there) and counted
    in the report.
    """
    vals = _candidate_values(spec, candidate)
    nom = spec.nominal.values

    lo = nom - spec.dev_lo
    hi = nom + spec.dev_hi
    slack = _CLAUSE_TOL * (1.0 + np.abs(nom) + spec.dev_lo + spec.dev_hi)
    below = vals < lo - slack
    above = vals > hi + slack
    skipped = _flat_ramp_days(nom)
    if np.any(below) or np.any(above):
        day = int(np.argmax(below | above))
        bound = float(lo[day]) if below[day] else float(hi[day])
        return MembershipReport(
            False, ClauseViolation("box", day, float(vals[day]), bound), skipped
        )

    total_dev = float(np.abs(vals - nom).sum())
    budget = spec.gamma1 * float(nom.sum())
    if total_dev > budget + _CLAUSE_TOL * (1.0 + budget):
        return MembershipReport(
            False, ClauseViolation("budget", None, total_dev, budget), skipped
        )

    nom_ramp = nom[:-1] - nom[1:]
    cand_ramp = vals[:-1] - vals[1:]
    flat = _flat_ramp_mask(nom)
    limit = spec.gamma2 * np.abs(nom_ramp)
    bad = ~flat & (np.abs(cand_ramp) > limit + _CLAUSE_TOL * (1.0 + limit))
    if np.any(bad):
        day = int(np.argmax(bad))
        return MembershipReport(
            False,
            ClauseViolation("ramp", day, float(abs(cand_ramp[day])), float(limit[day])),
            skipped,
        )
    return MembershipReport(True, None, skipped)


def _flat_ramp_mask(nominal: np.ndarray) -> np.ndarray:
    steps = np.abs(nominal[:-1] - nominal[1:])
    scale = 1.0 + np.abs(nominal[:-1]) + np.abs(nominal[1:])
    return steps <= _FLAT_RAMP * scale


def _flat_ramp_days(nominal: np.ndarray) -> int:
    return int(_flat_ramp_mask(nominal).sum())


# ---------------------------------------------------------------------------
# sampling


def draw_scenario(spec: UncertaintySpec, rng: np.random.Generator) -> np.ndarray:
    """One member of the envelope, biased toward its corners.

    Picks a random sign per day and a random subset of deviating days,
    starts from the full box corner on that subset, then scales the
    deviation back until the budget and ramp clauses hold.  The downward
    reach is trimmed at zero because negative arrivals are meaningless.

    The stream consumption is independent of gamma1/gamma2, so widening
    the budget with the same stream yields the same corner pushed further
    out, never a different corner.
    """
    nom = spec.nominal.values
    t = nom.size
    dev_dn = np.minimum(spec.dev_lo, nom)  # arrivals cannot go below zero
    signs = np.where(rng.random(t) < 0.5, 1.0, -1.0)
    if rng.random() < 0.5:
        mask = np.ones(t)
    else:
        mask = (rng.random(t) < rng.uniform(0.2, 1.0)).astype(float)
    delta = mask * np.where(signs > 0, spec.dev_hi, -dev_dn)

    alpha = 1.0
    total_delta = float(np.abs(delta).sum())
    if total_delta > 0.0:
        alpha = min(alpha, spec.gamma1 * float(nom.sum()) / total_delta)

    # per day pair: |r + a*d| <= gamma2*|r| solved exactly for the largest
    # admissible a >= 0; opposing deviations first flatten the ramp before
    # re-steepening it, hence the (gamma2 + 1) branch
    nom_ramp = nom[:-1] - nom[1:]
    dev_ramp = delta[:-1] - delta[1:]
    flat = _flat_ramp_mask(nom)
    live = ~flat & (np.abs(dev_ramp) > 0)
    if np.any(live):
        if spec.gamma2 < 1.0:
            # the nominal itself sits outside such an envelope wherever it
            # ramps; nothing anchored at the nominal can be scaled into it
            alpha = 0.0
        else:
            r = nom_ramp[live]
            d = dev_ramp[live]
            opposing = np.sign(r) != np.sign(d)
            room = np.where(opposing, spec.gamma2 + 1.0, spec.gamma2 - 1.0)
            caps = room * np.abs(r) / np.abs(d)
            alpha = min(alpha, float(caps.min()))

    alpha = max(alpha, 0.0) * (1.0 - 1e-9)  # stay strictly inside
    return np.maximum(nom + alpha * delta, 0.0)


def sample_scenarios(spec: UncertaintySpec, count: int, seed: int) -> list[DemandSeries]:
    """count member scenarios of the envelope, deterministic given seed.

    Each sample uses its own spawned child stream.  Every sample is
    re-checked through contains() before it is returned; a failure there
    is an internal defect, never a property of the inputs.  A point
    envelope yields count copies of the nominal (noted in the log).
    """
    if count < 1:
        raise ValidationError(f"sample count must be >= 1, got {count}")
    base = spec.nominal
    if spec.is_point():
        _log.info(
            "envelope for %s has no interior beyond the nominal; "
            "returning %d copies of it", spec.hospital_id, count,
        )
        vals = [base.values.copy() for _ in range(count)]
    else:
        children = np.random.SeedSequence(seed).spawn(count)
        vals = [draw_scenario(spec, np.random.default_rng(c)) for c in children]
    out = []
    for k, v in enumerate(vals):
        verdict = contains(spec, v)
        if not verdict:
            raise InternalConsistencyError(
                f"sampled scenario {k} escaped its envelope ({verdict.violation})"
            )
        out.append(
            DemandSeries(
                hospital_id=base.hospital_id,
                population=base.population,
                scenario=f"{base.scenario}-sample-{k}",
                horizon=base.horizon,
                values=v,
            )
        )
    return out


# ---------------------------------------------------------------------------
# scenario collections


@dataclass
class ScenarioSet:
    """Demand series keyed by (scenario tag, population, hospital)."""

    horizon: Horizon
    series: dict[tuple[str, str, str], DemandSeries] = field(default_factory=dict)

    def __post_init__(self):
        for key, s in self.series.items():
            self._check(key, s)

    def _check(self, key: tuple[str, str, str], s: DemandSeries) -> None:
        if s.horizon != self.horizon:
            raise ValidationError(
                f"scenario {key}: horizon {s.horizon.start}..{s.horizon.end} does not "
                f"cover the request horizon {self.horizon.start}..{self.horizon.end}"
            )
        if key != (s.scenario, s.population, s.hospital_id):
            raise ValidationError(f"scenario key {key} does not match its series tags")

    @classmethod
    def from_series(cls, horizon: Horizon, items: Sequence[DemandSeries]) -> "ScenarioSet":
        out = cls(horizon)
        for s in items:
            out.add(s)
        return out

    def add(self, s: DemandSeries) -> None:
        key = (s.scenario, s.population, s.hospital_id)
        if key in self.series:
            raise ValidationError(f"duplicate scenario series {key}")
        self._check(key, s)
        self.series[key] = s

    def get(self, scenario: str, population: str, hospital_id: str) -> DemandSeries:
        try:
            return self.series[(scenario, population, hospital_id)]
        except KeyError:
            raise ValidationError(
                f"no series for scenario={scenario!r} population={population!r} "
                f"hospital={hospital_id!r}"
            ) from None

    def scenario_tags(self) -> tuple[str, ...]:
        return tuple(sorted({k[0] for k in self.series}))

    def populations(self) -> tuple[str, ...]:
        return tuple(sorted({k[1] for k in self.series}))

    def hospitals(self, scenario: str, population: str) -> tuple[str, ...]:
        return tuple(
            sorted(k[2] for k in self.series if k[0] == scenario and k[1] == population)
        )

    def arrivals(
        self, scenario: str, population: str, hospital_ids: Sequence[str]
    ) -> np.ndarray:
        """(hospital, day) arrivals matrix in the given hospital order."""
        rows = [self.get(scenario, population, h).values for h in hospital_ids]
        return np.stack(rows)


# ---------------------------------------------------------------------------
# robustness replay


@dataclass(frozen=True)
class ScenarioOffense:
    """One (scenario, hospital) pair whose replay breached usable capacity."""

    scenario_index: int
    hospital_id: str
    days: np.ndarray  # day indices with census above usable capacity
    max_overflow: float
    arrivals: np.ndarray  # the offending scenario's arrivals for this hospital


@dataclass
class RobustnessReport:
    """How a fixed plan held up across sampled member scenarios.

    violation_rate[h] is the fraction of scenario-days where the replayed
    census exceeded the plan's usable capacity; worst_overflow[h] is the
    largest such breach in beds.  Scenarios whose outbound transfers had
    to be trimmed to the scenario's smaller arrivals are flagged.
    """

    hospital_ids: tuple[str, ...]
    horizon: Horizon
    sample_count: int
    violation_rate: np.ndarray  # (H,)
    worst_overflow: np.ndarray  # (H,)
    overall_rate: float
    offenders: list[ScenarioOffense]
    clip_events: int
    clipped_scenarios: tuple[int, ...]


def _clip_outbound(
    s_values: np.ndarray, arrivals: np.ndarray
) -> tuple[np.ndarray, int]:
    """Scale each origin's daily outbound so it never exceeds arrivals.

    Proportional over destinations, so the transfer mix is preserved while
    net admissions stay non-negative under every scenario.
    """
    out_total = s_values.sum(axis=1)  # (origin, day)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(out_total > 0.0, arrivals / out_total, 1.0)
    factor = np.minimum(factor, 1.0)
    events = int(np.count_nonzero(factor < 1.0 - 1e-12))
    if events == 0:
        return s_values, 0
    return s_values * factor[:, None, :], events


def validate_plan(
    plan: CapacityPlan,
    specs: Mapping[str, UncertaintySpec],
    count: int = 200,
    seed: int = 0,
) -> RobustnessReport:
    """Replay a solved plan against sampled scenarios from each envelope.

    The plan's capacity schedule and transfer matrix stay fixed; only the
    arrivals vary.  Census is recomputed through the projection pipeline
    per scenario, outbound transfers are trimmed proportionally wherever a
    scenario's arrivals fall below the planned outbound volume, and a
    scenario-day counts as a violation when the recomputed census exceeds
    the plan's usable capacity.

    Deterministic given (specs, count, seed); each scenario and hospital
    draws from its own spawned stream.
    """
    if count < 1:
        raise ValidationError(f"sample count must be >= 1, got {count}")
    data = plan.data
    if data is None:
        raise ValidationError("plan carries no planning data; re-run the planning pipeline")
    ids = plan.hospital_ids
    missing = [h for h in ids if h not in specs]
    if missing:
        raise ValidationError(f"no envelope for hospitals {missing}")
    unknown = [h for h in specs if h not in ids]
    if unknown:
        raise ValidationError(f"envelopes for unknown hospitals {unknown}")
    for h in ids:
        spec = specs[h]
        if spec.nominal.horizon != plan.horizon:
            raise ValidationError(f"{h}: envelope horizon does not match the plan")
        if spec.hospital_id != h:
            raise ValidationError(
                f"envelope keyed {h!r} wraps a forecast for {spec.hospital_id!r}"
            )

    n = len(ids)
    t = plan.horizon.num_days
    usable = plan.request.max_utilization * plan.capacity
    if plan.request.headroom is not None:
        usable = np.minimum(usable, plan.capacity - plan.request.headroom)
    tol = _CLAUSE_TOL * (1.0 + np.abs(usable))

    profiles = data.profile_list()
    violations = np.zeros(n, dtype=np.int64)
    worst = np.zeros(n)
    offenders: list[ScenarioOffense] = []
    clip_events = 0
    clipped: list[int] = []

    scenario_seeds = np.random.SeedSequence(seed).spawn(count)
    for k in range(count):
        hospital_seeds = scenario_seeds[k].spawn(n)
        arr = np.zeros((n, t))
        for hi, h in enumerate(ids):
            spec = specs[h]
            if spec.is_point():
                arr[hi] = spec.nominal.values
            else:
                arr[hi] = draw_scenario(spec, np.random.default_rng(hospital_seeds[hi]))
            verdict = contains(spec, arr[hi])
            if not verdict:
                raise InternalConsistencyError(
                    f"scenario {k} for {h} escaped its envelope ({verdict.violation})"
                )
        s_values, events = _clip_outbound(plan.transfers.values, arr)
        if events:
            clip_events += events
            clipped.append(k)
            transfers = TransferMatrixSeries(ids, plan.horizon, s_values)
        else:
            transfers = plan.transfers
        replay = project(
            arr,
            profiles,
            plan.horizon,
            transfers=transfers,
            seed=data.seed,
        )
        breach = replay.census > usable + tol
        for hi, h in enumerate(ids):
            days = np.flatnonzero(breach[hi])
            if days.size == 0:
                continue
            violations[hi] += days.size
            over = float(np.max(replay.census[hi, days] - usable[hi, days]))
            worst[hi] = max(worst[hi], over)
            offenders.append(ScenarioOffense(k, h, days, over, arr[hi].copy()))

    total_days = count * t
    return RobustnessReport(
        hospital_ids=ids,
        horizon=plan.horizon,
        sample_count=count,
        violation_rate=violations / total_days,
        worst_overflow=worst,
        overall_rate=float(violations.sum()) / (total_days * n),
        offenders=offenders,
        clip_events=clip_events,
        clipped_scenarios=tuple(clipped),
    )
