"""
End-to-end command tests on small synthetic fleets.
"""

import json

import pandas as pd
import pytest

from cli import EXIT_ANOMALIES, EXIT_ERROR, EXIT_OK, main

IDENTICAL_SITES = """\
[fleet]
n_sites = 4
days = 20
interval_minutes = 15
per_site_noise = 0.0
shape_exponents = [1.2, 1.2]
max_site_lag = 0
postcodes = ["5000", "5000", "5540", "5540"]
weather_zones = ["5000-5600"]
"""

FLUCTUATING_SITE = """
[[faults]]
site_id = "site_003"
kind = "rapid_fluctuation"
start = "2019-01-06"
end = "2019-01-16"
severity = 0.5
seed = 1
"""

RUN_SETTINGS = """\
interval_minutes = 15

[embedding]
d = 3
tau = 1
width = "5d"
stride = "1d"
"""


def synth(tmp_path, spec_text, name="data"):
    spec = tmp_path / f"{name}.toml"
    spec.write_text(spec_text)
    out = tmp_path / name
    assert main(["synth", "--spec", str(spec), "--out", str(out), "-q"]) == EXIT_OK
    return out


@pytest.fixture
def fleet_csv(tmp_path):
    return synth(tmp_path, IDENTICAL_SITES) / "fleet.csv"


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(RUN_SETTINGS)
    return str(path)


class TestSynth:
    def test_default_fleet(self, tmp_path):
        out = tmp_path / "default"
        assert main(["synth", "--out", str(out), "-q"]) == EXIT_OK
        faults = json.loads((out / "faults.json").read_text())["faults"]
        assert [f["site_id"] for f in faults] == ["site_000", "site_008", "site_010"]
        sites = pd.read_csv(out / "fleet.csv", usecols=["site_id"])["site_id"]
        assert sites.nunique() == 23
        assert len(sites) == 23 * 365 * 288

    def test_same_spec_gives_identical_files(self, tmp_path):
        first = synth(tmp_path, IDENTICAL_SITES, "first")
        second = synth(tmp_path, IDENTICAL_SITES, "second")
        for name in ("fleet.csv", "faults.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()
        assert json.loads((first / "faults.json").read_text()) == {"faults": []}

    def test_fleet_csv_layout(self, fleet_csv):
        frame = pd.read_csv(fleet_csv, dtype={"postcode": str})
        assert list(frame.columns) == ["site_id", "postcode", "timestamp", "power"]
        assert len(frame) == 4 * 20 * 96
        assert frame["timestamp"].iloc[0] == "2019-01-01T00:00:00Z"

    def test_unknown_spec_file(self, tmp_path):
        out = tmp_path / "never"
        assert main(["synth", "--spec", str(tmp_path / "absent.toml"), "--out", str(out), "-q"]) == EXIT_ERROR
        assert not out.exists()


class TestAnalyze:
    def test_identical_sites_are_all_normal(self, fleet_csv, run_config, tmp_path):
        out = tmp_path / "out"
        code = main(["analyze", str(fleet_csv), "--config", run_config, "--out", str(out), "-q"])
        assert code == EXIT_OK
        assert json.loads((out / "anomalies.json").read_text()) == {"anomalies": []}
        assert {p.name for p in out.iterdir()} == {
            "profiles.csv", "region_all.json", "correlation_hist.csv",
            "anomalies.json", "exclusions.json", "run_metrics.json",
        }
        report = json.loads((out / "region_all.json").read_text())
        assert report["n_sites"] == 4
        assert all(s["verdict"] == "normal" for s in report["sites"])
        profiles = pd.read_csv(out / "profiles.csv")
        assert len(profiles) == 4 * 16

    def test_anomalies_give_exit_code_two(self, fleet_csv, run_config, tmp_path):
        out = tmp_path / "out"
        code = main(["analyze", str(fleet_csv), "--config", run_config, "--threshold", "1.01",
                     "--out", str(out), "-q"])
        assert code == EXIT_ANOMALIES
        anomalies = json.loads((out / "anomalies.json").read_text())["anomalies"]
        assert [a["site_id"] for a in anomalies] == ["site_000", "site_001", "site_002", "site_003"]

    def test_regions_get_their_own_reports(self, fleet_csv, run_config, tmp_path):
        out = tmp_path / "out"
        code = main(["analyze", str(fleet_csv), "--config", run_config, "--region", "5000-5100",
                     "--region", "5540", "--out", str(out), "-q"])
        assert code == EXIT_OK
        assert (out / "region_5000-5100.json").exists()
        assert (out / "region_5540.json").exists()
        hist = pd.read_csv(out / "correlation_hist.csv", dtype={"region_id": str})
        assert hist.groupby("region_id")["count"].sum().to_dict() == {"5000-5100": 2, "5540": 2}

    def test_unmatched_sites_are_listed(self, fleet_csv, run_config, tmp_path):
        out = tmp_path / "out"
        main(["analyze", str(fleet_csv), "--config", run_config, "--region", "5000", "--out", str(out), "-q"])
        exclusions = json.loads((out / "exclusions.json").read_text())
        assert exclusions["unmatched"] == ["site_002", "site_003"]

    def test_truth_file_adds_an_evaluation(self, tmp_path, run_config):
        data = synth(tmp_path, IDENTICAL_SITES + FLUCTUATING_SITE, "faulted")
        out = tmp_path / "out"
        code = main(["analyze", str(data / "fleet.csv"), "--config", run_config,
                     "--truth", str(data / "faults.json"), "--out", str(out), "-q"])
        assert code in (EXIT_OK, EXIT_ANOMALIES)
        evaluation = json.loads((out / "evaluation.json").read_text())
        assert evaluation["total_faults"] == 1
        assert evaluation["faults"][0]["site_id"] == "site_003"
        assert evaluation["faults"][0]["fault_windows"] > 0
        assert "| site_003 | rapid_fluctuation |" in (out / "evaluation.md").read_text()

    def test_site_missing_its_first_rows(self, fleet_csv, run_config, tmp_path):
        frame = pd.read_csv(fleet_csv, dtype=str, keep_default_na=False)
        late = frame[frame["site_id"] == "site_002"].index[:20]
        trimmed = tmp_path / "trimmed.csv"
        frame.drop(index=late).to_csv(trimmed, index=False)
        out = tmp_path / "out"
        code = main(["analyze", str(trimmed), "--config", run_config, "--out", str(out), "-q"])
        assert code == EXIT_OK
        report = json.loads((out / "region_all.json").read_text())
        assert report["n_sites"] == 4
        assert json.loads((out / "exclusions.json").read_text())["excluded"] == []

    def test_missing_input_leaves_no_output(self, tmp_path):
        out = tmp_path / "out"
        assert main(["analyze", str(tmp_path / "absent.csv"), "--out", str(out), "-q"]) == EXIT_ERROR
        assert not out.exists()

    def test_malformed_input_leaves_no_output(self, tmp_path, run_config):
        bad = tmp_path / "bad.csv"
        bad.write_text("site_id,postcode,timestamp,power\nsite_a,5000,2019-01-01T00:00:00Z,lots\n")
        out = tmp_path / "out"
        assert main(["analyze", str(bad), "--config", run_config, "--out", str(out), "-q"]) == EXIT_ERROR
        assert not out.exists()

    def test_window_shorter_than_one_embedding_vector(self, fleet_csv, tmp_path):
        out = tmp_path / "out"
        code = main(["analyze", str(fleet_csv), "--d", "6", "--tau", "3", "--width", "10",
                     "--out", str(out), "-q"])
        assert code == EXIT_ERROR
        assert not out.exists()


class TestProfileAndTune:
    def test_profile(self, fleet_csv, run_config, tmp_path):
        out = tmp_path / "out"
        assert main(["profile", str(fleet_csv), "--config", run_config, "--out", str(out), "-q"]) == EXIT_OK
        profiles = pd.read_csv(out / "profiles.csv")
        assert sorted(profiles["site_id"].unique()) == ["site_000", "site_001", "site_002", "site_003"]
        payload = json.loads((out / "profiles.json").read_text())
        assert (payload["d"], payload["tau"], payload["width"], payload["stride"]) == (3, 1, 480, 96)
        assert json.loads((out / "exclusions.json").read_text())["excluded"] == []

    def test_single_cell_sweep(self, fleet_csv, tmp_path):
        out = tmp_path / "out"
        code = main(["tune", str(fleet_csv), "--interval-minutes", "15", "--d-values", "3",
                     "--tau-values", "1", "--out", str(out), "-q"])
        assert code == EXIT_OK
        sweep = pd.read_csv(out / "sweep.csv")
        assert len(sweep) == 1
        assert (sweep["d"].iloc[0], sweep["tau"].iloc[0]) == (3, 1)

    def test_default_grid(self, fleet_csv, tmp_path):
        out = tmp_path / "out"
        assert main(["tune", str(fleet_csv), "--interval-minutes", "15", "--out", str(out), "-q"]) == EXIT_OK
        sweep = pd.read_csv(out / "sweep.csv")
        assert len(sweep) == 15
        metrics = json.loads((out / "run_metrics.json").read_text())
        assert metrics


if __name__ == "__main__":
    pytest.main([__file__])
