#!/usr/bin/env python3
"""Regenerate the committed AIS fixture, its config, and the golden archive.

Run from the repository root:

    python3 scripts/make_fixtures.py

The fixture is a 200-row AIS export exercising every ingest path:

    vessel 219012345  65 valid rows, 7-min spacing            -> 45-sample journey
    vessel 219023456  48 rows, 3 h gap, 49 rows, 8-min spacing -> two journeys (38, 39)
    vessel 219034567   8 rows over 49 min                      -> dropped (< 36 samples)
    vessel 219045678  12 rows with sog >= 30 or <= 0.2         -> removed by speed filter
    8 rows with 7-digit MMSI, 4 with missing fields, 3 out-of-range,
    1 bad timestamp, 1 non-numeric coordinate, 1 short row     -> parse rejections

Expected stage counts live in tests/test_acceptance.py next to the
byte-comparison against the golden archive.
"""

from datetime import datetime, timedelta, timezone
from pathlib import Path
import json
import shutil
import sys

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "tests" / "data"

HEADER = "# Timestamp,Type of mobile,MMSI,Latitude,Longitude,SOG"
T0 = datetime(2019, 2, 10, 8, 0, 0, tzinfo=timezone.utc)


def stamp(dt: datetime) -> str:
    return dt.strftime("%d/%m/%Y %H:%M:%S")


def vessel_rows(mmsi, start, count, spacing_min, lat0, lon0, dlat, dlon, sog="12.0"):
    rows = []
    for i in range(count):
        t = start + timedelta(minutes=spacing_min * i)
        rows.append(
            (t, f"{stamp(t)},Class A,{mmsi},{lat0 + i * dlat:.6f},{lon0 + i * dlon:.6f},{sog}")
        )
    return rows


def build_rows():
    rows = []
    # vessel A: one long journey crossing the ROI interior
    rows += vessel_rows(219012345, T0, 65, 7, 56.0, 11.0, 0.004, 0.003)
    # vessel B: two journeys split by a 3 h gap; first runs close to vessel A
    b1_start = T0 + timedelta(hours=1)
    rows += vessel_rows(219023456, b1_start, 48, 8, 56.05, 11.02, 0.004, 0.003)
    b2_start = b1_start + timedelta(minutes=8 * 47) + timedelta(hours=3, minutes=4)
    rows += vessel_rows(219023456, b2_start, 49, 8, 56.5, 11.5, -0.003, 0.004)
    # vessel C: too short to survive the 36-sample duration filter
    rows += vessel_rows(219034567, T0 + timedelta(hours=2), 8, 7, 57.0, 12.0, 0.002, 0.002)
    # vessel D: speed-filter fodder (6 implausibly fast, 6 anchored)
    d_start = T0 + timedelta(hours=3)
    rows += vessel_rows(219045678, d_start, 3, 10, 56.2, 11.3, 0.001, 0.001, sog="30.0")
    rows += vessel_rows(219045678, d_start + timedelta(minutes=30), 3, 10, 56.21, 11.31, 0.001, 0.001, sog="35.5")
    rows += vessel_rows(219045678, d_start + timedelta(minutes=60), 3, 10, 56.22, 11.32, 0.001, 0.001, sog="0.2")
    rows += vessel_rows(219045678, d_start + timedelta(minutes=90), 3, 10, 56.23, 11.33, 0.001, 0.001, sog="0.1")
    # parse rejections
    bad_start = T0 + timedelta(hours=4)
    rows += vessel_rows(1234567, bad_start, 8, 11, 56.3, 11.4, 0.001, 0.001)  # 7-digit MMSI
    t = bad_start + timedelta(minutes=1)
    rows.append((t, f"{stamp(t)},Class A,219012345,,11.5,12.0"))  # missing lat
    t = bad_start + timedelta(minutes=2)
    rows.append((t, f"{stamp(t)},Class A,219012345,56.4,,12.0"))  # missing lon
    t = bad_start + timedelta(minutes=3)
    rows.append((t, f"{stamp(t)},Class A,,56.4,11.5,12.0"))  # missing mmsi
    t = bad_start + timedelta(minutes=4)
    rows.append((t, f"{stamp(t)},Class A,219012345,56.4,11.5,"))  # missing sog
    t = bad_start + timedelta(minutes=5)
    rows.append((t, f"{stamp(t)},Class A,219012345,95.0,11.5,12.0"))  # lat out of range
    t = bad_start + timedelta(minutes=6)
    rows.append((t, f"{stamp(t)},Class A,219012345,-93.2,11.5,12.0"))  # lat out of range
    t = bad_start + timedelta(minutes=7)
    rows.append((t, f"{stamp(t)},Class A,219012345,56.4,-190.0,12.0"))  # lon out of range
    t = bad_start + timedelta(minutes=8)
    rows.append((t, f"not-a-time,Class A,219012345,56.4,11.5,12.0"))
    t = bad_start + timedelta(minutes=9)
    rows.append((t, f"{stamp(t)},Class A,219012345,abc,11.5,12.0"))  # non-numeric lat
    t = bad_start + timedelta(minutes=10)
    rows.append((t, f"{stamp(t)},219012345"))  # short row
    rows.sort(key=lambda pair: pair[0])
    return [line for _, line in rows]


def main() -> int:
    DATA.mkdir(parents=True, exist_ok=True)
    rows = build_rows()
    assert len(rows) == 200, f"fixture must have 200 data rows, built {len(rows)}"
    fixture = DATA / "ais_fixture_200.csv"
    fixture.write_text(HEADER + "\n" + "\n".join(rows) + "\n")
    print(f"wrote {fixture}")

    # config committed next to the fixture; the input path is repo-relative so
    # the embedded config hash is machine independent
    from vesseldiff.config import RunConfig, save_config

    cfg = RunConfig()
    cfg.data.ais_files = ["tests/data/ais_fixture_200.csv"]
    cfg_path = DATA / "fixture_config.json"
    save_config(cfg, cfg_path)
    print(f"wrote {cfg_path}")

    # golden archive: one preprocess run, frozen thereafter
    from vesseldiff.cli import main as cli_main

    out = DATA / "_golden_build"
    code = cli_main(["preprocess", "--config", str(cfg_path), "--out", str(out)])
    if code != 0:
        return code
    shutil.move(out / "windows.zip", DATA / "golden_windows.zip")
    shutil.move(out / "preprocess_report.json", DATA / "golden_report.json")
    shutil.rmtree(out)
    print(f"wrote {DATA / 'golden_windows.zip'}")
    print(json.dumps(json.loads((DATA / "golden_report.json").read_text()), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
