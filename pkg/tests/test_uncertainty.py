"""Envelope membership, corner sampling, and plan robustness replay.

The heavy checks are oracle agreements: membership against the literal
clause evaluator in oracle_tools, and robustness rates against a full
per-scenario recomputation through the brute-force projection pipeline.
"""

import dataclasses

import numpy as np
import pytest

from surgeplan.domain import (
    CensusSeed,
    DemandSeries,
    Horizon,
    HospitalProfile,
    ValidationError,
)
from surgeplan.planning import PlanRequest, PlanningData, run_plan
from surgeplan.uncertainty import (
    ScenarioSet,
    UncertaintySpec,
    contains,
    draw_scenario,
    sample_scenarios,
    scaled_envelope,
    validate_plan,
)

from oracle_tools import brute_membership, brute_projection, toy_horizon


def series(values, horizon=None, hospital="H0", scenario="moderate"):
    values = np.asarray(values, dtype=float)
    if horizon is None:
        horizon = toy_horizon(values.size)
    return DemandSeries(hospital, "all", scenario, horizon, values)


def flat_spec(level, days, dev, gamma1, gamma2=2.0, hospital="H0"):
    return UncertaintySpec(
        series(np.full(days, float(level)), hospital=hospital), dev, dev, gamma1, gamma2
    )


# ---------------------------------------------------------------------------
# membership


class TestContains:
    def test_nominal_is_member(self):
        spec = flat_spec(10, 6, dev=2.0, gamma1=0.1)
        report = contains(spec, spec.nominal)
        assert report
        assert report.violation is None
        # flat nominal: every day pair is skipped by the ramp clause
        assert report.ramp_days_skipped == 5

    def test_budget_clause_rejects_small_budget(self):
        # nominal [10, 10], deviations up to 2, but the budget only allows
        # a total deviation of 0.05 * 20 = 1
        spec = flat_spec(10, 2, dev=2.0, gamma1=0.05)
        report = contains(spec, [12.0, 10.0])
        assert not report
        assert report.violation.clause == "budget"
        assert report.violation.observed == pytest.approx(2.0)
        assert report.violation.limit == pytest.approx(1.0)

    def test_box_clause_reports_day(self):
        spec = flat_spec(10, 4, dev=1.0, gamma1=5.0)
        report = contains(spec, [10.0, 11.5, 10.0, 10.0])
        assert not report
        assert report.violation.clause == "box"
        assert report.violation.day == 1

    def test_ramp_clause_caps_swings(self):
        nominal = series([10.0, 6.0, 10.0, 6.0])
        spec = UncertaintySpec(nominal, 4.0, 4.0, gamma1=10.0, gamma2=1.5)
        # nominal swings by 4; the limit is 6; this candidate swings by 7
        report = contains(spec, [13.0, 6.0, 10.0, 6.0])
        assert not report
        assert report.violation.clause == "ramp"
        assert report.violation.day == 0
        # flattening the swing is allowed even below the nominal's own ramp
        assert contains(spec, [8.0, 7.0, 9.0, 7.0])

    def test_ramp_skip_counts_flat_days_only(self):
        nominal = series([10.0, 10.0, 14.0, 14.0, 9.0])
        spec = UncertaintySpec(nominal, 1.0, 1.0, gamma1=1.0, gamma2=2.0)
        assert contains(spec, nominal).ramp_days_skipped == 2

    def test_length_mismatch_raises(self):
        spec = flat_spec(10, 4, dev=1.0, gamma1=1.0)
        with pytest.raises(ValidationError):
            contains(spec, [10.0, 10.0])

    def test_horizon_mismatch_raises(self):
        spec = flat_spec(10, 4, dev=1.0, gamma1=1.0)
        other = series(np.full(5, 10.0), horizon=toy_horizon(5))
        with pytest.raises(ValidationError):
            contains(spec, other)

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            flat_spec(10, 3, dev=-1.0, gamma1=0.5)
        with pytest.raises(ValidationError):
            flat_spec(10, 3, dev=1.0, gamma1=-0.5)

    def test_oracle_agreement_on_random_candidates(self):
        rng = np.random.default_rng(7)
        agree = 0
        for _ in range(1000):
            days = int(rng.integers(2, 15))
            nominal = rng.uniform(0.0, 30.0, days).round(2)
            dev_lo = rng.uniform(0.0, 6.0, days)
            dev_hi = rng.uniform(0.0, 6.0, days)
            g1 = float(rng.uniform(0.0, 0.6))
            g2 = float(rng.uniform(0.5, 4.0))
            spec = UncertaintySpec(series(nominal), dev_lo, dev_hi, g1, g2)
            # straddle the boundary: some candidates derive from corners,
            # some are free noise around the nominal
            if rng.random() < 0.5:
                cand = nominal + rng.uniform(-1.5, 1.5, days) * np.where(
                    rng.random(days) < 0.5, dev_hi, dev_lo
                )
            else:
                cand = np.clip(nominal + rng.normal(0.0, 3.0, days), 0.0, None)
            got = contains(spec, cand)
            want_ok, want_clause = brute_membership(
                nominal, dev_lo, dev_hi, g1, g2, cand
            )
            assert got.ok == want_ok
            if not want_ok:
                assert got.violation.clause == want_clause
            agree += 1
        assert agree == 1000


# ---------------------------------------------------------------------------
# sampling


class TestSampling:
    def test_deterministic_given_seed(self):
        spec = flat_spec(12, 10, dev=3.0, gamma1=0.3)
        a = sample_scenarios(spec, 20, seed=5)
        b = sample_scenarios(spec, 20, seed=5)
        c = sample_scenarios(spec, 20, seed=6)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.values, sb.values)
        assert any(
            not np.array_equal(sa.values, sc.values) for sa, sc in zip(a, c)
        )

    def test_every_sample_is_a_member(self):
        rng = np.random.default_rng(11)
        for case in range(20):
            days = int(rng.integers(3, 20))
            nominal = rng.uniform(2.0, 25.0, days)
            spec = UncertaintySpec(
                series(nominal),
                rng.uniform(0.0, 4.0, days),
                rng.uniform(0.0, 4.0, days),
                float(rng.uniform(0.0, 0.5)),
                float(rng.uniform(1.0, 3.0)),
            )
            for s in sample_scenarios(spec, 50, seed=case):
                ok, clause = brute_membership(
                    nominal, spec.dev_lo, spec.dev_hi, spec.gamma1, spec.gamma2, s.values
                )
                assert ok, f"case {case}: sampled scenario broke the {clause} clause"

    def test_gamma1_zero_pins_samples_to_nominal(self):
        spec = flat_spec(15, 8, dev=4.0, gamma1=0.0)
        for s in sample_scenarios(spec, 10, seed=1):
            np.testing.assert_allclose(s.values, spec.nominal.values, atol=1e-9)

    def test_point_envelope_returns_nominal_copies(self):
        spec = flat_spec(15, 8, dev=0.0, gamma1=0.5)
        samples = sample_scenarios(spec, 7, seed=3)
        assert len(samples) == 7
        for s in samples:
            np.testing.assert_array_equal(s.values, spec.nominal.values)

    def test_count_must_be_positive(self):
        spec = flat_spec(10, 4, dev=1.0, gamma1=0.2)
        with pytest.raises(ValidationError):
            sample_scenarios(spec, 0, seed=0)

    def test_samples_lean_on_the_budget(self):
        # sawtooth nominal with swings wide enough that the ramp clause
        # never throttles the corners; the budget is then the binding
        # clause and full-subset corners should land right on it
        days = 30
        base = np.full(days, 10.0)
        base[::2] += 3.5
        base[1::2] -= 3.5
        spec = UncertaintySpec(series(base), 3.0, 3.0, gamma1=0.2, gamma2=2.0)
        samples = sample_scenarios(spec, 200, seed=9)
        budget = spec.gamma1 * float(base.sum())
        deep = sum(
            1
            for s in samples
            if float(np.abs(s.values - base).sum()) >= 0.8 * budget
        )
        # empirically ~half the draws take the full-subset branch; frozen
        # as a regression floor
        assert deep >= 60

    def test_sample_tags_and_identity(self):
        spec = flat_spec(9, 5, dev=2.0, gamma1=0.4, hospital="Met")
        samples = sample_scenarios(spec, 3, seed=2)
        assert [s.scenario for s in samples] == [
            "moderate-sample-0",
            "moderate-sample-1",
            "moderate-sample-2",
        ]
        assert all(s.hospital_id == "Met" for s in samples)
        assert all(s.horizon == spec.nominal.horizon for s in samples)

    def test_scaled_envelope_is_one_sided(self):
        nominal = series([10.0, 20.0])
        up = scaled_envelope(nominal, 1.25, 0.5, 2.0)
        np.testing.assert_allclose(up.dev_hi, [2.5, 5.0])
        np.testing.assert_allclose(up.dev_lo, [0.0, 0.0])
        down = scaled_envelope(nominal, 0.8, 0.5, 2.0)
        np.testing.assert_allclose(down.dev_lo, [2.0, 4.0])
        np.testing.assert_allclose(down.dev_hi, [0.0, 0.0])
        assert scaled_envelope(nominal, 1.0, 0.5, 2.0).is_point()


# ---------------------------------------------------------------------------
# scenario collections


class TestScenarioSet:
    def test_round_trip_and_matrix_order(self):
        horizon = toy_horizon(3)
        items = [
            series([1, 2, 3], horizon, hospital="A", scenario="pessimistic"),
            series([4, 5, 6], horizon, hospital="B", scenario="pessimistic"),
            series([7, 8, 9], horizon, hospital="A", scenario="optimistic"),
        ]
        ss = ScenarioSet.from_series(horizon, items)
        assert ss.scenario_tags() == ("optimistic", "pessimistic")
        assert ss.hospitals("pessimistic", "all") == ("A", "B")
        got = ss.arrivals("pessimistic", "all", ["B", "A"])
        np.testing.assert_array_equal(got, [[4, 5, 6], [1, 2, 3]])

    def test_duplicate_series_rejected(self):
        horizon = toy_horizon(2)
        ss = ScenarioSet.from_series(horizon, [series([1, 2], horizon)])
        with pytest.raises(ValidationError):
            ss.add(series([3, 4], horizon))

    def test_horizon_must_cover_request(self):
        with pytest.raises(ValidationError):
            ScenarioSet.from_series(toy_horizon(3), [series([1, 2], toy_horizon(2))])

    def test_missing_series_raises(self):
        ss = ScenarioSet(toy_horizon(2))
        with pytest.raises(ValidationError):
            ss.get("moderate", "all", "H9")


# ---------------------------------------------------------------------------
# robustness replay


def toy_plan(
    caps_by_hospital,
    arrivals,
    pmfs,
    budgets=(0.0, 0.0),
    z=0.95,
    surge="discrete",
):
    ids = [f"H{i}" for i in range(len(caps_by_hospital))]
    arrivals = np.atleast_2d(np.asarray(arrivals, dtype=float))
    horizon = toy_horizon(arrivals.shape[1])
    profiles = {
        h: HospitalProfile(h, tuple(caps), np.asarray(pmf, dtype=float))
        for h, caps, pmf in zip(ids, caps_by_hospital, pmfs)
    }
    data = PlanningData(horizon, profiles, arrivals)
    request = PlanRequest(
        horizon=horizon,
        hospital_budget=budgets[0],
        system_budget=budgets[1],
        max_utilization=z,
        surge_capacity_type=surge,
    )
    return run_plan(request, data), data


PMF3 = [0.0, 0.5, 0.3, 0.2]


def specs_for(plan, dev_lo, dev_hi, gamma1, gamma2=2.0):
    return {
        h: UncertaintySpec(
            series(plan.data.arrivals[hi], plan.horizon, hospital=h),
            dev_lo,
            dev_hi,
            gamma1,
            gamma2,
        )
        for hi, h in enumerate(plan.hospital_ids)
    }


class TestValidatePlan:
    def test_point_envelopes_reproduce_the_deterministic_verdict(self):
        plan, _ = toy_plan(
            [(30.0, 40.0, 50.0), (20.0, 28.0, 36.0)],
            np.full((2, 10), [[6.0], [4.0]]),
            [PMF3, PMF3],
        )
        report = validate_plan(plan, specs_for(plan, 0.0, 0.0, 0.0), count=50, seed=1)
        usable = plan.request.max_utilization * plan.capacity
        expected = np.mean(plan.census > usable + 1e-9, axis=1)
        np.testing.assert_array_equal(report.violation_rate, expected)
        assert report.overall_rate == 0.0
        assert report.offenders == []
        assert report.clip_events == 0
        assert report.worst_overflow.max() == 0.0

    def test_point_envelopes_flag_a_plan_pushed_past_its_capacity(self):
        plan, _ = toy_plan(
            [(30.0, 40.0, 50.0)], np.full((1, 8), 6.0), [PMF3]
        )
        squeezed = dataclasses.replace(plan, capacity=plan.capacity * 0.3)
        report = validate_plan(
            squeezed, specs_for(squeezed, 0.0, 0.0, 0.0), count=20, seed=1
        )
        usable = plan.request.max_utilization * squeezed.capacity
        expected = np.mean(plan.census > usable + 1e-9, axis=1)
        np.testing.assert_array_equal(report.violation_rate, expected)
        assert report.overall_rate > 0.0

    def test_boundary_plan_violates_under_upward_deviation(self):
        # continuous surge trims capacity to census / z on binding days, so
        # any upward deviation must create violations
        plan, _ = toy_plan(
            [(30.0, 40.0, 50.0)],
            18.0 + 4.0 * np.sin(np.arange(12.0)),
            [PMF3],
            surge="continuous",
        )
        report = validate_plan(
            plan, specs_for(plan, 0.0, 3.0, 0.5, gamma2=4.0), count=100, seed=2
        )
        assert report.overall_rate > 0.0
        assert report.worst_overflow[0] > 0.0
        assert report.offenders
        worst = max(o.max_overflow for o in report.offenders)
        assert worst == pytest.approx(float(report.worst_overflow.max()))

    def test_recomputation_oracle_agrees_on_rates(self):
        plan, data = toy_plan(
            [(26.0, 34.0, 42.0), (18.0, 24.0, 30.0), (12.0, 16.0, 20.0)],
            np.vstack(
                [
                    5.0 + 1.5 * np.sin(np.arange(10.0)),
                    3.5 + np.cos(np.arange(10.0)),
                    2.5 + 0.8 * np.sin(1.0 + np.arange(10.0)),
                ]
            ),
            [PMF3, [0.0, 0.6, 0.4], [0.0, 0.4, 0.4, 0.2]],
        )
        specs = specs_for(plan, 1.5, 2.5, 0.25, gamma2=3.0)
        count, seed = 500, 13
        report = validate_plan(plan, specs, count=count, seed=seed)

        # independent replay: regenerate the same member scenarios from the
        # published stream layout, then recompute census with plain loops
        ids = plan.hospital_ids
        usable = plan.request.max_utilization * plan.capacity
        pmfs = [data.profiles[h].los_pmf for h in ids]
        hits = np.zeros(len(ids))
        roots = np.random.SeedSequence(seed).spawn(count)
        for k in range(count):
            streams = roots[k].spawn(len(ids))
            arr = np.vstack(
                [
                    draw_scenario(specs[h], np.random.default_rng(streams[hi]))
                    for hi, h in enumerate(ids)
                ]
            )
            s = plan.transfers.values.copy()
            for hi in range(len(ids)):
                for t in range(arr.shape[1]):
                    out = s[hi, :, t].sum()
                    if out > arr[hi, t]:
                        s[hi, :, t] *= arr[hi, t] / out
            _, _, census, _ = brute_projection(arr, pmfs, transfer_values=s)
            hits += np.sum(census > usable + 1e-9 * (1.0 + usable), axis=1)
        np.testing.assert_array_equal(
            report.violation_rate, hits / (count * arr.shape[1])
        )

    def test_widening_the_budget_never_helps(self):
        # steady census rides within a bed of usable capacity, so rising
        # deviation depth converts directly into violations
        plan, _ = toy_plan(
            [(18.0, 24.0, 30.0), (20.0, 28.0, 36.0)],
            np.vstack([np.full(10, 9.5), np.full(10, 11.0)]),
            [PMF3, PMF3],
        )
        rates = []
        for g1 in (0.0, 0.05, 0.1, 0.2, 0.4):
            report = validate_plan(
                plan, specs_for(plan, 0.0, 6.0, g1), count=120, seed=4
            )
            rates.append(report.overall_rate)
        assert all(a <= b + 1e-12 for a, b in zip(rates, rates[1:]))
        assert rates[0] == 0.0
        assert rates[-1] > 0.0

    def test_downward_scenarios_clip_planned_transfers(self):
        # H0 cannot cover its census alone, so the plan must divert; a
        # scenario that dries up H0's arrivals forces the replay to trim
        # the planned outbound volume
        plan, _ = toy_plan(
            [(10.0, 12.0, 14.0), (30.0, 40.0, 50.0)],
            np.vstack([np.full(8, 9.0), np.full(8, 3.0)]),
            [PMF3, PMF3],
            budgets=(4.0, 4.0),
        )
        assert plan.transfers.total_volume() > 0.0
        report = validate_plan(
            plan, specs_for(plan, 8.5, 0.0, 1.0), count=80, seed=6
        )
        assert report.clip_events > 0
        assert report.clipped_scenarios
        assert report.sample_count == 80

    def test_validation_errors(self):
        plan, _ = toy_plan(
            [(30.0, 40.0, 50.0)], np.full((1, 6), 5.0), [PMF3]
        )
        specs = specs_for(plan, 1.0, 1.0, 0.2)
        with pytest.raises(ValidationError):
            validate_plan(plan, {}, count=10, seed=0)
        with pytest.raises(ValidationError):
            validate_plan(plan, specs, count=0, seed=0)
        with pytest.raises(ValidationError):
            validate_plan(plan, {**specs, "H9": specs["H0"]}, count=10, seed=0)
        stale = dataclasses.replace(plan, data=None)
        with pytest.raises(ValidationError):
            validate_plan(stale, specs, count=10, seed=0)

    def test_report_is_deterministic(self):
        plan, _ = toy_plan(
            [(30.0, 40.0, 50.0)], 6.0 + np.sin(np.arange(9.0)), [PMF3]
        )
        specs = specs_for(plan, 1.0, 2.0, 0.3, gamma2=3.0)
        a = validate_plan(plan, specs, count=60, seed=8)
        b = validate_plan(plan, specs, count=60, seed=8)
        np.testing.assert_array_equal(a.violation_rate, b.violation_rate)
        np.testing.assert_array_equal(a.worst_overflow, b.worst_overflow)
        assert a.clipped_scenarios == b.clipped_scenarios
        assert len(a.offenders) == len(b.offenders)
