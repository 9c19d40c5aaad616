"""
Synthetic fleet tests: determinism, clear-sky structure, fault injection and
the spec / ground-truth files.
"""

import numpy as np
import pandas as pd
import pytest

from analysis.errors import ContractViolation
from utils.ingest import Exclusion, screen_fleet
from utils.synth import (
    FaultKind,
    FaultSpec,
    FleetSpec,
    default_faults,
    generate_fleet,
    inject,
    load_fleet_spec,
    read_faults_json,
    regional_fleet_spec,
    region_entries,
    write_faults_json,
)


def small_spec(**changes):
    settings = dict(n_sites=4, days=14, interval=pd.Timedelta(minutes=15))
    settings.update(changes)
    return FleetSpec(**settings)


def window_mask(series, fault):
    stamps = series.timestamps
    return np.asarray((stamps >= fault.start) & (stamps < fault.end))


class TestFleetSpec:
    def test_defaults(self):
        spec = FleetSpec()
        assert spec.n_sites == 23
        assert spec.samples_per_day == 288
        assert spec.n_samples == 365 * 288
        assert spec.site_ids[0] == "site_000" and spec.site_ids[-1] == "site_022"

    def test_needs_two_sites(self):
        with pytest.raises(ContractViolation):
            FleetSpec(n_sites=1)

    def test_interval_must_divide_a_day(self):
        with pytest.raises(ContractViolation):
            FleetSpec(interval=pd.Timedelta(minutes=7))

    def test_fault_outside_span(self):
        fault = FaultSpec("site_000", FaultKind.DEAD_OUTPUT, "2019-01-10", "2019-02-10", 1.0)
        with pytest.raises(ContractViolation, match="outside"):
            small_spec(faults=[fault])

    def test_fault_on_unknown_site(self):
        fault = FaultSpec("site_099", FaultKind.DEAD_OUTPUT, "2019-01-02", "2019-01-03", 1.0)
        with pytest.raises(ContractViolation, match="unknown site"):
            small_spec(faults=[fault])

    def test_regional_spec(self):
        spec = regional_fleet_spec()
        assert spec.n_sites == 105
        assert region_entries(spec) == ["5000-5100", "5203-5255", "5540"]
        zones = {spec.zone_of(p) for p in spec.postcode_assignment}
        assert zones == set(region_entries(spec))
        assert len(spec.faults) == 5


class TestFaultSpec:
    def test_severity_range(self):
        with pytest.raises(ContractViolation):
            FaultSpec("site_000", FaultKind.DEAD_OUTPUT, "2019-01-01", "2019-01-02", 1.5)

    def test_end_after_start(self):
        with pytest.raises(ContractViolation):
            FaultSpec("site_000", FaultKind.DEAD_OUTPUT, "2019-01-02", "2019-01-02", 0.5)

    def test_unknown_parameter(self):
        with pytest.raises(ContractViolation, match="flutter"):
            FaultSpec("site_000", FaultKind.PARTIAL_SHADING, "2019-01-01", "2019-01-02", 0.5,
                      params={"flutter": 0.1})

    def test_defaults_are_merged(self):
        fault = FaultSpec("site_000", FaultKind.PARTIAL_SHADING, "2019-01-01", "2019-01-02", 0.5,
                          params={"taper_minutes": 0.0})
        assert fault.params == {"band_start_hour": 9.0, "band_end_hour": 15.0, "taper_minutes": 0.0}

    def test_from_dict_rejects_bad_entries(self):
        with pytest.raises(ContractViolation):
            FaultSpec.from_dict({"site_id": "site_000", "kind": "lightning",
                                 "start": "2019-01-01", "end": "2019-01-02", "severity": 0.5})
        with pytest.raises(ContractViolation):
            FaultSpec.from_dict({"site_id": "site_000", "kind": "dead_output"})


class TestGenerateFleet:
    def test_same_spec_same_fleet(self):
        first, second = generate_fleet(small_spec()), generate_fleet(small_spec())
        for a, b in zip(first, second):
            assert np.array_equal(a.values, b.values)

    def test_weather_seed_changes_the_fleet(self):
        first = generate_fleet(small_spec())[0].values
        second = generate_fleet(small_spec(weather_seed=7))[0].values
        assert not np.array_equal(first, second)

    def test_sites_without_per_site_variation_are_identical(self):
        fleet = generate_fleet(small_spec(n_sites=2, per_site_noise=0.0, shape_exponents=(1.2, 1.2),
                                          max_site_lag=0))
        assert np.array_equal(fleet[0].values, fleet[1].values)

    def test_per_unit_range_and_dark_nights(self):
        spec = small_spec()
        for series in generate_fleet(spec):
            assert series.per_unit
            assert series.values.min() == 0.0
            assert series.values.max() == 1.0
            hours = np.asarray(series.timestamps.hour)
            assert np.all(series.values[(hours < 4) | (hours >= 21)] == 0.0)
            assert not np.any(np.signbit(series.values))

    def test_series_carry_postcodes(self):
        spec = small_spec(postcode_assignment=["5000", "5001", "5540", "5540"])
        assert [s.postcode for s in generate_fleet(spec)] == ["5000", "5001", "5540", "5540"]

    def test_sites_in_one_zone_share_the_weather(self):
        spec = small_spec(per_site_noise=0.0, shape_exponents=(1.0, 1.0), max_site_lag=0,
                          postcode_assignment=["5000", "5001", "5540", "5541"],
                          weather_zones=["5000-5100", "5500-5600"])
        fleet = generate_fleet(spec)
        assert np.array_equal(fleet[0].values, fleet[1].values)
        assert np.array_equal(fleet[2].values, fleet[3].values)
        assert not np.array_equal(fleet[0].values, fleet[2].values)


class TestInject:
    @pytest.fixture
    def base(self):
        return generate_fleet(small_spec())[0]

    @pytest.mark.parametrize("kind", list(FaultKind))
    def test_severity_zero_is_identity(self, base, kind):
        fault = FaultSpec(base.site_id, kind, "2019-01-03", "2019-01-09", 0.0)
        assert np.array_equal(inject(base, fault).values, base.values)

    @pytest.mark.parametrize("kind", list(FaultKind))
    def test_only_the_interval_changes(self, base, kind):
        fault = FaultSpec(base.site_id, kind, "2019-01-03", "2019-01-09", 0.7, seed=11)
        faulted = inject(base, fault)
        inside = window_mask(base, fault)
        assert np.array_equal(faulted.values[~inside], base.values[~inside])
        assert not np.array_equal(faulted.values[inside], base.values[inside])
        assert np.all(faulted.values >= 0.0)

    def test_dead_output_over_the_whole_span(self, base):
        spec = small_spec()
        fault = FaultSpec(base.site_id, FaultKind.DEAD_OUTPUT, spec.start, spec.end, 1.0)
        dead = inject(base, fault)
        assert np.all(dead.values == 0.0)
        kept, exclusions = screen_fleet([dead])
        assert kept == []
        assert exclusions == [Exclusion(base.site_id, "dead", "no positive generation over the span")]

    def test_shading_only_dims_the_band(self, base):
        fault = FaultSpec(base.site_id, FaultKind.PARTIAL_SHADING, "2019-01-03", "2019-01-09", 0.6,
                          params={"taper_minutes": 0.0})
        shaded = inject(base, fault)
        inside = window_mask(base, fault)
        hours = np.asarray(base.timestamps.hour + base.timestamps.minute / 60.0)
        band = inside & (hours >= 9) & (hours <= 15)
        assert np.allclose(shaded.values[band], base.values[band] * 0.4)
        assert np.array_equal(shaded.values[inside & ~band], base.values[inside & ~band])

    def test_clipping_caps_each_day(self, base):
        fault = FaultSpec(base.site_id, FaultKind.CURTAILMENT_CLIPPING, "2019-01-03", "2019-01-09", 0.4)
        clipped = inject(base, fault)
        days = np.asarray((base.timestamps - base.start) // pd.Timedelta(days=1))
        for day in range(2, 8):
            today = days == day
            assert clipped.values[today].max() <= 0.6 * base.values[today].max() + 1e-12

    def test_fluctuation_only_lowers_daylight_output(self, base):
        fault = FaultSpec(base.site_id, FaultKind.RAPID_FLUCTUATION, "2019-01-03", "2019-01-09", 0.5)
        faulted = inject(base, fault)
        inside = window_mask(base, fault)
        assert np.all(faulted.values[inside] <= base.values[inside])
        assert np.all(faulted.values[inside] >= 0.5 * base.values[inside])

    def test_injection_is_seeded(self, base):
        fault = FaultSpec(base.site_id, FaultKind.RAPID_FLUCTUATION, "2019-01-03", "2019-01-09", 0.5, seed=3)
        assert np.array_equal(inject(base, fault).values, inject(base, fault).values)

    def test_fault_outside_the_series(self, base):
        fault = FaultSpec(base.site_id, FaultKind.DEAD_OUTPUT, "2018-12-30", "2019-01-02", 1.0)
        with pytest.raises(ContractViolation):
            inject(base, fault)


class TestSpecFiles:
    def test_faults_json_round_trip(self, tmp_path):
        faults = default_faults()
        path = write_faults_json(list(reversed(faults)), tmp_path / "faults.json")
        assert read_faults_json(path) == faults

    def test_fleet_spec_from_toml(self, tmp_path):
        path = tmp_path / "fleet.toml"
        path.write_text(
            "[fleet]\n"
            "n_sites = 3\n"
            "days = 10\n"
            "interval_minutes = 10\n"
            'postcodes = ["5000", "5000", "5540"]\n'
            'weather_zones = ["5000", "5540"]\n'
            "\n"
            "[[faults]]\n"
            'site_id = "site_002"\n'
            'kind = "partial_shading"\n'
            'start = "2019-01-02"\n'
            'end = "2019-01-05"\n'
            "severity = 0.5\n"
            "params = { taper_minutes = 30 }\n"
        )
        spec = load_fleet_spec(path)
        assert spec.n_sites == 3
        assert spec.samples_per_day == 144
        assert spec.faults[0].kind is FaultKind.PARTIAL_SHADING
        assert spec.faults[0].params["taper_minutes"] == 30.0
        assert len(generate_fleet(spec)) == 3

    def test_unknown_fleet_setting(self, tmp_path):
        path = tmp_path / "fleet.toml"
        path.write_text("[fleet]\nn_sites = 3\nsunshine = 11\n")
        with pytest.raises(ContractViolation, match="sunshine"):
            load_fleet_spec(path)


if __name__ == "__main__":
    pytest.main([__file__])
