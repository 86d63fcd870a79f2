"""Derived planning metrics: admission targets, occupancy, timelines, report.

Everything here is a pure function over a solved plan and its inputs.  The
admission target is the one metric with real modeling content: the largest
weekly admission rate a hospital can sustain at a given surge level, found
by binary search over constant-rate census projections seeded at steady
state.  Targets assume no inbound or outbound transfers; the report notes
this so the number is read as a per-hospital ceiling, not a system one.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import (
    CensusSeed,
    Horizon,
    HospitalProfile,
    ValidationError,
    project,
)
from .planning import CapacityPlan, PlanRequest, PlanningData

_TOL = 1e-9


# ---------------------------------------------------------------------------
# admission targets


def admission_target(profile: HospitalProfile, level: int, z: float) -> int:
    """Largest integer weekly admission rate sustainable at a surge level.

    A weekly rate A is sustainable when a constant A/7 daily admission
    stream, seeded at its own steady state, keeps census within z times
    the level's staffed beds on every day of an eight-expected-stay
    horizon.  Monotone in A, so binary search against the projection
    pipeline finds the boundary.
    """
    if not (0.0 < z <= 1.0):
        raise ValidationError(f"max utilization must be in (0, 1], got {z}")
    if level < 0 or level >= len(profile.level_capacities):
        raise ValidationError(
            f"{profile.hospital_id}: level {level} outside the ladder"
        )
    mean_los = profile.expected_los
    if mean_los <= 0.0:
        raise ValidationError(
            f"{profile.hospital_id}: zero expected stay admits unboundedly"
        )
    beds = profile.level_capacities[level]
    usable = z * beds
    days = max(int(math.ceil(8.0 * mean_los)), 1)
    horizon = Horizon(dt.date(2000, 1, 1), dt.date(2000, 1, 1) + dt.timedelta(days=days - 1))
    span = profile.max_los + 1

    def sustainable(weekly: int) -> bool:
        rate = weekly / 7.0
        seed = CensusSeed(history=np.full((1, span), rate))
        result = project(
            np.full((1, days), rate), [profile], horizon, seed=seed
        )
        return bool(np.all(result.census <= usable + _TOL * (1.0 + usable)))

    lo, hi = 0, int(math.ceil(7.0 * usable / mean_los)) + 7
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if sustainable(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def shade_flags(targets: Sequence[float], recent_weekly: float) -> np.ndarray:
    """Red flag per table cell: sustaining that level means admitting less
    than the hospital has actually been admitting."""
    return np.asarray(targets, dtype=float) < float(recent_weekly)


@dataclass(frozen=True)
class AdmissionTargetRow:
    hospital_id: str
    targets: np.ndarray  # weekly target per surge level, integer-valued
    recent_weekly: float
    red: np.ndarray  # shading flag per level


@dataclass(frozen=True)
class AdmissionTargetTable:
    """Weekly admission targets per hospital and level, with shading."""

    rows: tuple[AdmissionTargetRow, ...]
    max_utilization: float

    def row_for(self, hospital_id: str) -> AdmissionTargetRow:
        for row in self.rows:
            if row.hospital_id == hospital_id:
                return row
        raise ValidationError(f"no target row for {hospital_id!r}")


def admission_target_table(
    profiles: Sequence[HospitalProfile],
    z: float,
    recent_weekly: Sequence[float],
) -> AdmissionTargetTable:
    if len(recent_weekly) != len(profiles):
        raise ValidationError(
            f"{len(recent_weekly)} recent averages for {len(profiles)} hospitals"
        )
    rows = []
    for prof, recent in zip(profiles, recent_weekly):
        targets = np.array(
            [admission_target(prof, l, z) for l in range(len(prof.level_capacities))],
            dtype=np.int64,
        )
        rows.append(
            AdmissionTargetRow(prof.hospital_id, targets, float(recent), shade_flags(targets, recent))
        )
    return AdmissionTargetTable(tuple(rows), z)


def recent_weekly_admissions(data: PlanningData) -> tuple[np.ndarray, str]:
    """Trailing seven-day admission volume per hospital, plus a provenance note.

    Prefers the pre-horizon admission history when the census seed carries
    one (those are the actual recent admissions); otherwise falls back to
    the first week of the planning arrivals and says so.
    """
    if data.seed is not None and data.seed.history is not None:
        hist = data.seed.history
        window = hist[:, -min(7, hist.shape[1]):]
        note = "recent admissions from the trailing week of pre-horizon history"
    else:
        window = data.arrivals[:, : min(7, data.arrivals.shape[1])]
        note = "no admission history on the census seed; recent admissions approximated from the first planned week"
    return 7.0 * window.mean(axis=1), note


# ---------------------------------------------------------------------------
# occupancy


@dataclass(frozen=True)
class OccupancySeries:
    """Census relative to the staffed beds of one reference surge level.

    undefined is set when the reference level has zero beds; values are
    then zeros rather than infinities so downstream plotting stays finite.
    """

    hospital_id: str
    reference_level: int
    values: np.ndarray
    undefined: bool


def occupancy(
    census: np.ndarray, profile: HospitalProfile, reference_level: int
) -> OccupancySeries:
    if reference_level < 0 or reference_level >= len(profile.level_capacities):
        raise ValidationError(
            f"{profile.hospital_id}: level {reference_level} outside the ladder"
        )
    census = np.asarray(census, dtype=float)
    beds = profile.level_capacities[reference_level]
    if beds <= 0.0:
        return OccupancySeries(
            profile.hospital_id, reference_level, np.zeros_like(census), True
        )
    return OccupancySeries(profile.hospital_id, reference_level, census / beds, False)


# ---------------------------------------------------------------------------
# surge timeline


@dataclass(frozen=True)
class TimelineSpan:
    start: dt.date
    end: dt.date  # inclusive
    level: int


def _rle_spans(levels: np.ndarray, horizon: Horizon) -> list[TimelineSpan]:
    dates = horizon.dates()
    spans = []
    run_start = 0
    for t in range(1, levels.size + 1):
        if t == levels.size or levels[t] != levels[run_start]:
            spans.append(TimelineSpan(dates[run_start], dates[t - 1], int(levels[run_start])))
            run_start = t
    return spans


def plan_levels(plan: CapacityPlan) -> np.ndarray:
    """The plan's surge level series, derived from capacity if not explicit.

    Discrete fast plans carry levels directly.  Continuous and unit-based
    plans get the smallest ladder level covering each day's staffed
    capacity, so the timeline stays meaningful across model kinds.
    """
    if plan.levels is not None:
        return plan.levels
    if plan.data is None:
        raise ValidationError("plan carries neither levels nor planning data")
    out = np.zeros(plan.capacity.shape, dtype=np.int64)
    for hi, h in enumerate(plan.hospital_ids):
        caps = np.asarray(plan.data.profiles[h].level_capacities, dtype=float)
        idx = np.searchsorted(caps, plan.capacity[hi] - 1e-9, side="left")
        out[hi] = np.minimum(idx, len(caps) - 1)
    return out


def surge_timeline(plan: CapacityPlan) -> dict[str, list[TimelineSpan]]:
    """Run-length encoded level timeline per hospital.

    Spans partition the horizon and adjacent spans always differ in level.
    """
    levels = plan_levels(plan)
    return {
        h: _rle_spans(levels[hi], plan.horizon)
        for hi, h in enumerate(plan.hospital_ids)
    }


# ---------------------------------------------------------------------------
# status report


@dataclass
class StatusReport:
    """One-page summary of a plan: timelines, targets, transfer totals."""

    hospital_ids: tuple[str, ...]
    horizon: Horizon
    timeline: dict[str, list[TimelineSpan]]
    targets: AdmissionTargetTable
    transfer_totals: np.ndarray  # (origin, destination) summed over days
    generated_at: dt.datetime
    request: PlanRequest
    notes: list[str] = field(default_factory=list)

    def transfer_total(self, origin: str, dest: str) -> float:
        i = self.hospital_ids.index(origin)
        j = self.hospital_ids.index(dest)
        return float(self.transfer_totals[i, j])


def build_status_report(
    plan: CapacityPlan,
    data: Optional[PlanningData] = None,
    request: Optional[PlanRequest] = None,
    now: Optional[dt.datetime] = None,
) -> StatusReport:
    """Assemble the dashboard status report for a solved plan.

    data and request default to what the plan was solved against; now is
    injectable so report generation stays reproducible under test.
    """
    data = data if data is not None else plan.data
    request = request if request is not None else plan.request
    if data is None:
        raise ValidationError("status report needs the planning data")
    recent, recent_note = recent_weekly_admissions(data)
    profiles = [data.profiles[h] for h in plan.hospital_ids]
    targets = admission_target_table(profiles, request.max_utilization, recent)
    return StatusReport(
        hospital_ids=plan.hospital_ids,
        horizon=plan.horizon,
        timeline=surge_timeline(plan),
        targets=targets,
        transfer_totals=plan.transfers.values.sum(axis=2),
        generated_at=now if now is not None else dt.datetime.now(dt.timezone.utc),
        request=request,
        notes=[
            "admission targets assume no inbound or outbound transfers",
            recent_note,
        ],
    )


def report_rows(report: StatusReport) -> list[dict]:
    """Flatten the report to one row per hospital metric, for CSV export."""
    rows = []
    for hi, h in enumerate(report.hospital_ids):
        row = report.targets.row_for(h)
        for l, target in enumerate(row.targets):
            rows.append(
                {
                    "hospital_id": h,
                    "metric": f"weekly_target_level_{l}",
                    "value": int(target),
                    "flag": "red" if row.red[l] else "green",
                }
            )
        rows.append(
            {"hospital_id": h, "metric": "recent_weekly_admissions",
             "value": round(row.recent_weekly, 3), "flag": ""}
        )
        spans = report.timeline[h]
        rows.append(
            {"hospital_id": h, "metric": "peak_level",
             "value": max(s.level for s in spans), "flag": ""}
        )
        rows.append(
            {"hospital_id": h, "metric": "days_above_baseline",
             "value": sum((s.end - s.start).days + 1 for s in spans if s.level > 0),
             "flag": ""}
        )
        rows.append(
            {"hospital_id": h, "metric": "transfers_out_total",
             "value": round(float(report.transfer_totals[hi].sum()), 3), "flag": ""}
        )
        rows.append(
            {"hospital_id": h, "metric": "transfers_in_total",
             "value": round(float(report.transfer_totals[:, hi].sum()), 3), "flag": ""}
        )
    return rows
