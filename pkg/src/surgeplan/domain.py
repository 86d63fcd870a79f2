"""Core planning domain: hospitals, surge ladders, demand series and census projection.

The census model is discrete-time with a one-day step.  Admitted patients
leave according to a per-hospital length-of-stay distribution, so census at
day t is the running sum of admissions minus convolved discharges.  All
projection operations are pure functions over numpy arrays; the aggregate
``project`` pipeline wraps them into a ProjectionResult.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

#: Default surge ladder, ordered from normal operations to the most
#: aggressive expansion posture.
DEFAULT_LEVEL_NAMES = ("Baseline", "Ramp-Up", "Surge", "Surge+", "Maximum", "Crisis")

#: Canonical patient population tags accepted by plan requests.
POPULATION_TAGS = (
    "all",
    "adult",
    "pediatric",
    "covid",
    "adult_covid",
    "pediatric_covid",
)


class SurgeplanError(Exception):
    """Base class for all library errors."""


class ValidationError(SurgeplanError):
    """Raised when inputs violate a structural or numeric precondition."""


class InfeasibleTransferError(ValidationError):
    """Outgoing transfers exceed available arrivals at some hospital-day."""

    def __init__(self, hospital_id: str, day_index: int, value: float):
        self.hospital_id = hospital_id
        self.day_index = day_index
        self.value = value
        super().__init__(
            f"transfers drive admissions negative at hospital {hospital_id!r}, "
            f"day {day_index + 1} (net admissions {value:.6g})"
        )


@dataclass(frozen=True)
class SurgeLevelLadder:
    """Ordered surge level names, index 0 is baseline."""

    names: tuple[str, ...] = DEFAULT_LEVEL_NAMES

    def __post_init__(self):
        if len(self.names) < 1:
            raise ValidationError("surge ladder needs at least one level")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("surge level names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown surge level {name!r}") from None


@dataclass(frozen=True, eq=False)
class HospitalProfile:
    """Static facts about one hospital.

    level_capacities holds staffed-bed counts per surge level and must be
    non-decreasing.  los_pmf is the length-of-stay probability mass over
    whole days; index k is P(stay == k days), so index 0 covers same-day
    discharge.
    """

    hospital_id: str
    level_capacities: tuple[float, ...]
    los_pmf: np.ndarray
    name: str = ""
    latitude: Optional[float] = None
    longitude: Optional[float] = None

    def __post_init__(self):
        if not self.hospital_id:
            raise ValidationError("hospital_id must be non-empty")
        caps = tuple(float(b) for b in self.level_capacities)
        if len(caps) == 0:
            raise ValidationError(f"{self.hospital_id}: no surge levels given")
        if any(b < 0 for b in caps):
            raise ValidationError(f"{self.hospital_id}: negative bed capacity")
        if any(b2 < b1 for b1, b2 in zip(caps, caps[1:])):
            raise ValidationError(
                f"{self.hospital_id}: level capacities must be non-decreasing, got {caps}"
            )
        object.__setattr__(self, "level_capacities", caps)
        pmf = np.asarray(self.los_pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0:
            raise ValidationError(f"{self.hospital_id}: los_pmf must be a 1-d array")
        if np.any(pmf < -1e-12):
            raise ValidationError(f"{self.hospital_id}: los_pmf has negative mass")
        total = float(pmf.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(
                f"{self.hospital_id}: los_pmf sums to {total:.8f}, expected 1"
            )
        pmf = np.clip(pmf, 0.0, None)
        pmf = pmf / pmf.sum()
        pmf.setflags(write=False)
        object.__setattr__(self, "los_pmf", pmf)
        if not self.name:
            object.__setattr__(self, "name", self.hospital_id)

    @property
    def baseline_capacity(self) -> float:
        return self.level_capacities[0]

    @property
    def max_los(self) -> int:
        return len(self.los_pmf) - 1

    @property
    def expected_los(self) -> float:
        return float(np.arange(len(self.los_pmf)) @ self.los_pmf)

    def survivor(self, length: int) -> np.ndarray:
        """P(stay > k) for k = 0 .. length-1."""
        return survivor_function(self.los_pmf, length)


@dataclass(frozen=True, order=True)
class Horizon:
    """Inclusive day range [start, end]; day indices are 1-based in formulas."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.end < self.start:
            raise ValidationError(f"horizon end {self.end} precedes start {self.start}")

    @property
    def num_days(self) -> int:
        return (self.end - self.start).days + 1

    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=k) for k in range(self.num_days)]

    def index_of(self, day: dt.date) -> int:
        k = (day - self.start).days
        if k < 0 or k >= self.num_days:
            raise ValidationError(f"{day} outside horizon {self.start}..{self.end}")
        return k


@dataclass(frozen=True, eq=False)
class DemandSeries:
    """Daily arrivals at one hospital for one population/scenario."""

    hospital_id: str
    population: str
    scenario: str
    horizon: Horizon
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.horizon.num_days,):
            raise ValidationError(
                f"{self.hospital_id}: demand length {vals.shape} does not match "
                f"horizon of {self.horizon.num_days} days"
            )
        if np.any(vals < 0):
            raise ValidationError(f"{self.hospital_id}: negative arrivals")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True, eq=False)
class TransferMatrixSeries:
    """Patient transfers: values[i, j, t] moves from hospital i to hospital j on day t+1."""

    hospital_ids: tuple[str, ...]
    horizon: Horizon
    values: np.ndarray

    def __post_init__(self):
        ids = tuple(self.hospital_ids)
        object.__setattr__(self, "hospital_ids", ids)
        n = len(ids)
        if len(set(ids)) != n:
            raise ValidationError("duplicate hospital ids in transfer matrix")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (n, n, self.horizon.num_days):
            raise ValidationError(
                f"transfer matrix shape {vals.shape} does not match "
                f"({n}, {n}, {self.horizon.num_days})"
            )
        if np.any(vals < 0):
            raise ValidationError("negative transfer volume")
        if np.any(np.abs(np.diagonal(vals, axis1=0, axis2=1)) > 0):
            raise ValidationError("self-transfers (diagonal) must be zero")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, hospital_ids: Sequence[str], horizon: Horizon) -> "TransferMatrixSeries":
        n = len(hospital_ids)
        return cls(tuple(hospital_ids), horizon, np.zeros((n, n, horizon.num_days)))

    def total_volume(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True, eq=False)
class CensusSeed:
    """Pre-horizon state used to seed census projection.

    Either a pre-horizon admissions history (one row per hospital, oldest
    day first; ideally at least max-LOS days long) or a census snapshot
    taken the day before the horizon starts.  The snapshot form is modelled
    as a pseudo-admission pulse on day 0, so those occupants discharge via
    the same length-of-stay distribution.
    """

    history: Optional[np.ndarray] = None
    initial_census: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.history is not None and self.initial_census is not None:
            raise ValidationError("give either admission history or initial census, not both")
        if self.history is not None:
            h = np.asarray(self.history, dtype=float)
            if h.ndim != 2:
                raise ValidationError("seed history must be 2-d (hospital, day)")
            if np.any(h < 0):
                raise ValidationError("seed history has negative admissions")
            h.setflags(write=False)
            object.__setattr__(self, "history", h)
        if self.initial_census is not None:
            c = np.asarray(self.initial_census, dtype=float)
            if c.ndim != 1:
                raise ValidationError("initial census must be 1-d (hospital,)")
            if np.any(c < 0):
                raise ValidationError("negative initial census")
            c.setflags(write=False)
            object.__setattr__(self, "initial_census", c)


@dataclass(eq=False)
class ProjectionResult:
    """Aligned per-hospital, per-day projection arrays."""

    hospital_ids: tuple[str, ...]
    horizon: Horizon
    admissions: np.ndarray
    discharges: np.ndarray
    census: np.ndarray
    initial_census: np.ndarray
    levels: np.ndarray
    capacity: np.ndarray
    warnings: list[str] = field(default_factory=list)


def survivor_function(pmf: np.ndarray, length: int) -> np.ndarray:
    """P(stay > k) for k = 0 .. length-1, zero beyond the pmf support."""
    pmf = np.asarray(pmf, dtype=float)
    cdf = np.cumsum(pmf)
    out = np.zeros(length)
    upto = min(length, cdf.size)
    out[:upto] = 1.0 - cdf[:upto]
    # P(stay > k) = 0 once the cdf is exhausted
    np.clip(out, 0.0, 1.0, out=out)
    return out


def demand_matrix(
    series: Sequence[DemandSeries],
    hospital_ids: Sequence[str],
    horizon: Horizon,
) -> np.ndarray:
    """Stack demand series into an (H, T) arrivals matrix in hospital order."""
    by_id = {}
    for s in series:
        if s.horizon != horizon:
            raise ValidationError(
                f"{s.hospital_id}: demand horizon {s.horizon.start}..{s.horizon.end} "
                f"does not match {horizon.start}..{horizon.end}"
            )
        if s.hospital_id in by_id:
            raise ValidationError(f"duplicate demand series for {s.hospital_id}")
        by_id[s.hospital_id] = s.values
    missing = [h for h in hospital_ids if h not in by_id]
    if missing:
        raise ValidationError(f"no demand series for hospitals {missing}")
    return np.stack([by_id[h] for h in hospital_ids])


def project_admissions(
    arrivals: np.ndarray,
    transfers: Optional[TransferMatrixSeries] = None,
    hospital_ids: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """Realized admissions after transfers: a = arrivals + inbound - outbound.

    Raises InfeasibleTransferError if outgoing transfers exceed arrivals
    anywhere (net admissions would go negative).
    """
    arrivals = np.asarray(arrivals, dtype=float)
    if arrivals.ndim != 2:
        raise ValidationError("arrivals must be (hospital, day) shaped")
    if np.any(arrivals < 0):
        raise ValidationError("negative arrivals")
    if transfers is None:
        return arrivals.copy()
    n, t = arrivals.shape
    if transfers.values.shape != (n, n, t):
        raise ValidationError(
            f"transfer matrix shape {transfers.values.shape} does not match "
            f"arrivals shape {(n, n, t)}"
        )
    ids = tuple(hospital_ids) if hospital_ids is not None else transfers.hospital_ids
    if hospital_ids is not None and tuple(hospital_ids) != transfers.hospital_ids:
        raise ValidationError("hospital order differs between arrivals and transfers")
    inbound = transfers.values.sum(axis=0)   # (dest, day)
    outbound = transfers.values.sum(axis=1)  # (origin, day)
    admitted = arrivals + inbound - outbound
    bad = np.argwhere(admitted < -1e-9)
    if bad.size:
        h, d = bad[0]
        raise InfeasibleTransferError(ids[h], int(d), float(admitted[h, d]))
    return np.clip(admitted, 0.0, None)


def project_discharges(admissions: np.ndarray, los_pmfs: Sequence[np.ndarray]) -> np.ndarray:
    """Discharges implied by in-horizon admissions: d[h, t] = sum_k pmf[k] * a[h, t-k]."""
    admissions = np.asarray(admissions, dtype=float)
    n, t = admissions.shape
    if len(los_pmfs) != n:
        raise ValidationError(f"{len(los_pmfs)} LOS distributions for {n} hospitals")
    out = np.zeros_like(admissions)
    for h in range(n):
        out[h] = np.convolve(admissions[h], np.asarray(los_pmfs[h], dtype=float))[:t]
    return out


def project_census(
    admissions: np.ndarray,
    discharges: np.ndarray,
    initial_census: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Running census o[h, t] = o[h, 0] + cumulative (admissions - discharges).

    Negative values are possible with inconsistent seeds and are left in
    place; the project() pipeline flags them as warnings rather than failing.
    """
    admissions = np.asarray(admissions, dtype=float)
    discharges = np.asarray(discharges, dtype=float)
    if admissions.shape != discharges.shape:
        raise ValidationError("admissions and discharges must have the same shape")
    census = np.cumsum(admissions - discharges, axis=1)
    if initial_census is not None:
        census = census + np.asarray(initial_census, dtype=float)[:, None]
    return census


def seed_offsets(
    seed: Optional[CensusSeed],
    los_pmfs: Sequence[np.ndarray],
    num_days: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Day-0 census and in-horizon discharges produced by pre-horizon occupants.

    Returns (o0, seed_discharges) where o0[h] is the census entering day 1
    and seed_discharges[h, t] is the part of day t+1 discharges owed to
    patients admitted before the horizon.
    """
    n = len(los_pmfs)
    o0 = np.zeros(n)
    d_seed = np.zeros((n, num_days))
    if seed is None:
        return o0, d_seed
    if seed.history is not None:
        hist = seed.history
        if hist.shape[0] != n:
            raise ValidationError(
                f"seed history covers {hist.shape[0]} hospitals, expected {n}"
            )
    elif seed.initial_census is not None:
        if seed.initial_census.shape[0] != n:
            raise ValidationError(
                f"initial census covers {seed.initial_census.shape[0]} hospitals, expected {n}"
            )
        # census snapshot becomes a one-day pseudo-admission pulse
        hist = seed.initial_census[:, None]
    else:
        return o0, d_seed
    span = hist.shape[1]
    for h in range(n):
        pmf = np.asarray(los_pmfs[h], dtype=float)
        ext = np.convolve(hist[h], pmf)
        o0[h] = hist[h].sum() - ext[:span].sum()
        tail = ext[span : span + num_days]
        d_seed[h, : tail.size] = tail
    return o0, d_seed


def required_levels(
    census: np.ndarray,
    profile: HospitalProfile,
    max_utilization: float = 1.0,
    headroom: Optional[float] = None,
) -> np.ndarray:
    """Smallest surge level whose usable capacity covers each day's census.

    Usable capacity at level l is max_utilization * b_l, further reduced by
    the flat headroom if one is given.  Days no level can cover get the
    overflow marker len(level_capacities).
    """
    if not (0.0 < max_utilization <= 1.0):
        raise ValidationError(f"max_utilization must be in (0, 1], got {max_utilization}")
    caps = np.asarray(profile.level_capacities, dtype=float)
    usable = max_utilization * caps
    if headroom is not None:
        if headroom < 0:
            raise ValidationError("headroom must be non-negative")
        usable = np.minimum(usable, caps - headroom)
    census = np.asarray(census, dtype=float)
    # smallest l with usable[l] >= census, tolerant of float dust
    lev = np.searchsorted(usable, census - 1e-9, side="left")
    return lev.astype(np.int64)


def project(
    arrivals: np.ndarray,
    profiles: Sequence[HospitalProfile],
    horizon: Horizon,
    transfers: Optional[TransferMatrixSeries] = None,
    seed: Optional[CensusSeed] = None,
    levels: Optional[np.ndarray] = None,
    max_utilization: float = 1.0,
    headroom: Optional[float] = None,
) -> ProjectionResult:
    """Full projection pipeline: admissions, discharges, census, levels.

    When levels is None, the minimum covering level is chosen per day;
    otherwise the given level indices are respected and capacity is read
    off the profiles.
    """
    ids = tuple(p.hospital_id for p in profiles)
    pmfs = [p.los_pmf for p in profiles]
    admissions = project_admissions(arrivals, transfers, ids)
    n, t = admissions.shape
    if t != horizon.num_days:
        raise ValidationError(
            f"arrivals cover {t} days but horizon has {horizon.num_days}"
        )
    own = project_discharges(admissions, pmfs)
    o0, d_seed = seed_offsets(seed, pmfs, t)
    discharges = own + d_seed
    census = project_census(admissions, discharges, o0)

    warnings: list[str] = []
    if np.any(census < -1e-9):
        h, d = np.argwhere(census < -1e-9)[0]
        warnings.append(
            f"negative census at hospital {ids[h]!r} day {d + 1} "
            f"({census[h, d]:.4f}); check the seed data"
        )

    if levels is None:
        levels = np.stack(
            [required_levels(census[h], profiles[h], max_utilization, headroom) for h in range(n)]
        )
    else:
        levels = np.asarray(levels, dtype=np.int64)
        if levels.shape != (n, t):
            raise ValidationError(f"levels shape {levels.shape} != {(n, t)}")

    capacity = np.zeros((n, t))
    for h in range(n):
        caps = np.asarray(profiles[h].level_capacities, dtype=float)
        idx = np.minimum(levels[h], len(caps) - 1)
        capacity[h] = caps[idx]
        overflow = levels[h] >= len(caps)
        if np.any(overflow):
            days = np.flatnonzero(overflow) + 1
            warnings.append(
                f"census exceeds top-level capacity at {ids[h]!r} on days {days.tolist()}"
            )

    return ProjectionResult(
        hospital_ids=ids,
        horizon=horizon,
        admissions=admissions,
        discharges=discharges,
        census=census,
        initial_census=o0,
        levels=levels,
        capacity=capacity,
        warnings=warnings,
    )
