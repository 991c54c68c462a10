import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vesseldiff.ais_data import (
    AisRecord,
    Journey,
    NormalizationParams,
    ParseError,
    RawJourney,
    assign_splits,
    filter_speed,
    make_windows,
    normalize,
    parse_ais,
    resample,
    segment_journeys,
)

HEADER = "# Timestamp,Type of mobile,MMSI,Latitude,Longitude,SOG"


def row(ts, mmsi, lat, lon, sog, mobile="Class A"):
    return f"{ts},{mobile},{mmsi},{lat},{lon},{sog}"


def make_journey(journey_id, times, lat, lon, rate_minutes=10.0, mmsi=219000000):
    return Journey(
        journey_id=journey_id,
        mmsi=mmsi,
        times=np.asarray(times, dtype=np.int64),
        lat=np.asarray(lat, dtype=np.float64),
        lon=np.asarray(lon, dtype=np.float64),
        rate_minutes=rate_minutes,
    )


class TestParseAis:
    def test_three_valid_rows_sorted(self):
        # hand-built fixture: rows intentionally out of timestamp order
        lines = [
            HEADER,
            row("01/02/2019 00:20:00", 219012345, 56.0, 11.0, 10.0),
            row("01/02/2019 00:00:00", 219012345, 55.9, 10.9, 10.0),
            row("01/02/2019 00:10:00", 219012345, 55.95, 10.95, 10.0),
        ]
        records, counters = parse_ais(lines)
        assert [r.lat for r in records] == [55.9, 55.95, 56.0]
        assert counters["rows_total"] == 3
        assert sum(v for k, v in counters.items() if k != "rows_total") == 0

    def test_short_mmsi_rejected(self):
        lines = [HEADER, row("01/02/2019 00:00:00", 1234567, 56.0, 11.0, 10.0)]
        records, counters = parse_ais(lines)
        assert records == []
        assert counters["mmsi_too_short"] == 1

    def test_empty_file(self):
        records, counters = parse_ais([])
        assert records == []
        assert all(v == 0 for v in counters.values())

    def test_missing_value_counted(self):
        lines = [HEADER, "01/02/2019 00:00:00,Class A,219012345,,11.0,10.0"]
        records, counters = parse_ais(lines)
        assert records == []
        assert counters["missing_value"] == 1

    def test_out_of_range_rejected_not_clamped(self):
        lines = [
            HEADER,
            row("01/02/2019 00:00:00", 219012345, 95.0, 11.0, 10.0),
            row("01/02/2019 00:00:00", 219012345, 56.0, 191.0, 10.0),
        ]
        records, counters = parse_ais(lines)
        assert records == []
        assert counters["lat_out_of_range"] == 1
        assert counters["lon_out_of_range"] == 1

    def test_bad_timestamp_and_number(self):
        lines = [
            HEADER,
            row("yesterday-ish", 219012345, 56.0, 11.0, 10.0),
            row("01/02/2019 00:00:00", 219012345, "abc", 11.0, 10.0),
        ]
        records, counters = parse_ais(lines)
        assert records == []
        assert counters["bad_timestamp"] == 1
        assert counters["bad_number"] == 1

    def test_malformed_header_fatal(self):
        with pytest.raises(ParseError):
            parse_ais(["Time,Ship,Lat", "1,2,3"])

    def test_epoch_seconds_accepted(self):
        lines = [HEADER, row("1549000000", 219012345, 56.0, 11.0, 10.0)]
        records, _ = parse_ais(lines)
        assert records[0].timestamp == 1549000000.0


class TestFilterSpeed:
    def test_boundaries(self):
        records = [
            AisRecord(219000000, 0.0, 56.0, 11.0, 30.0),  # removed: too fast
            AisRecord(219000000, 1.0, 56.0, 11.0, 0.2),  # removed: anchored
            AisRecord(219000000, 2.0, 56.0, 11.0, 12.5),  # kept
            AisRecord(219000000, 3.0, 56.0, 11.0, 29.999),  # kept
            AisRecord(219000000, 4.0, 56.0, 11.0, 0.201),  # kept
        ]
        kept, counters = filter_speed(records)
        assert [r.sog for r in kept] == [12.5, 29.999, 0.201]
        assert counters == {"sog_too_fast": 1, "sog_anchored": 1}


class TestSegmentJourneys:
    def _records(self, times, mmsi=219000000):
        return [AisRecord(mmsi, float(t), 56.0, 11.0, 10.0) for t in times]

    def test_single_gap_splits_in_two(self):
        times = [0, 600, 1200, 1200 + 3 * 3600, 1200 + 3 * 3600 + 600]
        journeys = segment_journeys(self._records(times))
        assert len(journeys) == 2
        assert [len(j.records) for j in journeys] == [3, 2]

    def test_no_gap_single_journey(self):
        journeys = segment_journeys(self._records([0, 600, 1200]))
        assert len(journeys) == 1

    def test_all_gaps_one_journey_per_record(self):
        # 5 records spaced > 2 h apart: each becomes its own journey
        times = [i * 3 * 3600 for i in range(5)]
        journeys = segment_journeys(self._records(times))
        assert len(journeys) == 5
        assert all(len(j.records) == 1 for j in journeys)

    def test_order_preserved_and_multiset_conserved(self):
        times = [0, 600, 9000, 9600, 100000]
        records = self._records(times)
        journeys = segment_journeys(records)
        rebuilt = [r for j in journeys for r in j.records]
        assert rebuilt == sorted(records, key=lambda r: r.timestamp)


class TestResample:
    def test_linear_midpoint(self):
        raw = RawJourney(
            "a:0",
            219000000,
            [
                AisRecord(219000000, 0.0, 55.0, 10.0, 10.0),
                AisRecord(219000000, 1200.0, 55.2, 10.2, 10.0),
            ],
        )
        journey = resample(raw, delta_minutes=10.0, min_samples=2)
        assert journey.times.tolist() == [0, 600, 1200]
        assert journey.lat[1] == pytest.approx(55.1, abs=1e-12)

    def test_short_journey_discarded(self):
        # 5 h span at 10 min -> 31 samples < 36
        records = [
            AisRecord(219000000, float(t), 55.0 + t * 1e-6, 10.0, 10.0)
            for t in range(0, 5 * 3600 + 1, 600)
        ]
        assert resample(RawJourney("a:0", 219000000, records)) is None

    def test_irregular_fixture_hand_interpolated(self):
        # records at 0, 7, 23, 31 min; lat has constant slope, lon changes slope
        records = [
            AisRecord(219000000, 0.0, 55.0, 10.0, 10.0),
            AisRecord(219000000, 420.0, 55.42, 10.1, 10.0),
            AisRecord(219000000, 1380.0, 56.38, 10.5, 10.0),
            AisRecord(219000000, 1860.0, 56.86, 10.55, 10.0),
        ]
        journey = resample(RawJourney("a:0", 219000000, records), 10.0, min_samples=2)
        assert journey.times.tolist() == [0, 600, 1200, 1800]
        # hand linear interpolation oracle
        assert journey.lat.tolist() == pytest.approx([55.0, 55.6, 56.2, 56.8], abs=1e-9)
        assert journey.lon.tolist() == pytest.approx([10.0, 10.175, 10.425, 10.54375], abs=1e-9)

    def test_grid_is_epoch_aligned(self):
        records = [
            AisRecord(219000000, 130.0, 55.0, 10.0, 10.0),
            AisRecord(219000000, 1900.0, 55.4, 10.4, 10.0),
        ]
        journey = resample(RawJourney("a:0", 219000000, records), 10.0, min_samples=2)
        assert journey.times.tolist() == [600, 1200, 1800]
        assert all(t % 600 == 0 for t in journey.times)

    def test_uniform_spacing_invariant(self):
        rng = np.random.default_rng(0)
        times = np.sort(rng.uniform(0, 30 * 3600, size=60))
        records = [
            AisRecord(219000000, float(t), 55.0 + i * 0.001, 10.0, 10.0)
            for i, t in enumerate(times)
        ]
        journey = resample(RawJourney("a:0", 219000000, records))
        assert journey is not None
        assert set(np.diff(journey.times).tolist()) == {600}

    def test_fewer_than_two_records(self):
        assert resample(RawJourney("a:0", 219000000, [AisRecord(219000000, 0.0, 55.0, 10.0, 10.0)])) is None


class TestNormalize:
    PARAMS = NormalizationParams(lat_min=55.5, lat_max=58.0, lon_min=10.3, lon_max=13.0)

    def test_boundaries_and_midpoint(self):
        y, x = self.PARAMS.normalize([55.5, 58.0, 56.75], [10.3, 13.0, 11.65])
        assert y.tolist() == pytest.approx([0.0, 1.0, 0.5], abs=1e-12)
        assert x.tolist() == pytest.approx([0.0, 1.0, 0.5], abs=1e-12)

    def test_degenerate_params_fatal(self):
        with pytest.raises(ValueError):
            NormalizationParams(lat_min=55.5, lat_max=55.5, lon_min=10.3, lon_max=13.0)

    @given(
        lat=st.floats(min_value=55.5, max_value=58.0),
        lon=st.floats(min_value=10.3, max_value=13.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_round_trip_identity(self, lat, lon):
        y, x = self.PARAMS.normalize(lat, lon)
        back_lat, back_lon = self.PARAMS.denormalize(y, x)
        assert abs(float(back_lat) - lat) < 1e-9
        assert abs(float(back_lon) - lon) < 1e-9

    def test_out_of_roi_points_dropped_and_journey_split(self):
        n = 80
        lat = np.full(n, 56.0)
        lat[40:43] = 59.0  # excursion outside the ROI
        journey = make_journey("j:0", np.arange(n) * 600, lat, np.full(n, 11.0))
        segments, dropped = normalize(journey, self.PARAMS, min_samples=36)
        assert dropped == 3
        assert len(segments) == 2
        assert all(seg.lat.min() >= 0.0 and seg.lat.max() <= 1.0 for seg in segments)
        assert segments[0].journey_id != segments[1].journey_id

    def test_short_roi_segments_discarded(self):
        n = 40
        lat = np.full(n, 56.0)
        lat[10] = 59.0
        journey = make_journey("j:0", np.arange(n) * 600, lat, np.full(n, 11.0))
        segments, dropped = normalize(journey, self.PARAMS, min_samples=36)
        assert segments == []
        assert dropped == n  # 1 out-of-ROI + both remnants shorter than 36


class TestMakeWindows:
    def _journeys(self):
        n = 36
        times = np.arange(n) * 600
        j1 = make_journey("a:0", times, np.linspace(0.2, 0.4, n), np.linspace(0.2, 0.4, n))
        j2 = make_journey(
            "b:0", times, np.linspace(0.21, 0.41, n), np.linspace(0.2, 0.4, n), mmsi=219000001
        )
        return [j1, j2]

    def test_window_count_oracle(self):
        # journey of 36 samples, L=8, H=24, stride 1 -> 36 - 32 + 1 = 5 windows
        windows = make_windows(self._journeys(), 8, 24, 1, neighbor_threshold=0.0)
        assert len(windows) == 10  # 5 per journey

    def test_exact_length_single_window(self):
        n = 32
        j = make_journey("a:0", np.arange(n) * 600, np.linspace(0.2, 0.4, n), np.full(n, 0.3))
        windows = make_windows([j], 8, 24, 1)
        assert len(windows) == 1

    def test_too_short_contributes_nothing(self):
        n = 31
        j = make_journey("a:0", np.arange(n) * 600, np.linspace(0.2, 0.4, n), np.full(n, 0.3))
        assert len(make_windows([j], 8, 24, 1)) == 0

    def test_windows_contiguous_and_in_unit_range(self):
        windows = make_windows(self._journeys(), 8, 24, 1, neighbor_threshold=0.05)
        assert windows.observed.min() >= 0.0 and windows.future.max() <= 1.0
        full = np.concatenate([windows.observed[0], windows.future[0]], axis=0)
        diffs = np.diff(full[:, 0])
        assert np.allclose(diffs, diffs[0])

    def test_neighbors_filled_at_anchor(self):
        windows = make_windows(self._journeys(), 8, 24, 1, neighbor_threshold=0.05)
        assert windows.neighbor_counts.max() == 1  # the two tracks see each other
        hist = windows.neighbor_histories(0)
        assert hist.shape == (1, 8, 2)

    def test_stride_and_count_property(self):
        for n, stride in [(36, 1), (40, 2), (50, 3)]:
            j = make_journey("a:0", np.arange(n) * 600, np.linspace(0.2, 0.4, n), np.full(n, 0.3))
            windows = make_windows([j], 8, 24, stride)
            expected = len(range(0, n - 32 + 1, stride))
            assert len(windows) == expected


class TestSplits:
    def test_fractions_and_determinism(self):
        ids = [f"j:{i}" for i in range(100)]
        a = assign_splits(ids, (0.8, 0.1, 0.1), seed=7)
        b = assign_splits(list(reversed(ids)), (0.8, 0.1, 0.1), seed=7)
        assert a == b
        counts = [sum(1 for v in a.values() if v == s) for s in range(3)]
        assert counts == [80, 10, 10]


class TestArchiveRoundTrip:
    def test_bit_exact_round_trip(self, tmp_path):
        windows = make_windows(TestMakeWindows()._journeys(), 8, 24, 1, neighbor_threshold=0.05)
        windows.meta["config_hash"] = "abc123"
        p1 = tmp_path / "w1.zip"
        p2 = tmp_path / "w2.zip"
        windows.save(p1)
        reloaded = windows.load(p1)
        reloaded.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(windows.observed, reloaded.observed)
        np.testing.assert_array_equal(windows.neighbors_flat, reloaded.neighbors_flat)
        assert reloaded.meta["config_hash"] == "abc123"
        assert reloaded.journey_ids == windows.journey_ids
