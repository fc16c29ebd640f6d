import logging
import math

import numpy as np
import pytest

from landmix.data import (
    DEFAULT_SPAN,
    load_landings,
    simulate_dataset,
    write_landings,
)
from landmix.errors import ConfigError, DataFormatError
from landmix.model import JointParams, Sector, TotalParams


def write_csv(tmp_path, rows, name="landings.csv"):
    path = tmp_path / name
    path.write_text("country,year,sector,tonnes\n" + "\n".join(rows) + "\n")
    return path


class TestLoadLandings:
    def test_log_transform_and_time_index(self, tmp_path):
        path = write_csv(tmp_path, ["Spain,1970,industrial,1000"])
        data = load_landings(path, "joint")
        (obs,) = data.observations
        assert obs.t == 0
        assert obs.sector is Sector.INDUSTRIAL
        assert obs.y == pytest.approx(6.907755278982137, abs=1e-9)

    def test_sum_then_log_for_total(self, tmp_path):
        path = write_csv(
            tmp_path, ["France,1980,industrial,600", "France,1980,artisanal,400"]
        )
        data = load_landings(path, "total")
        (obs,) = data.observations
        assert obs.t == 10
        assert obs.sector is Sector.TOTAL
        assert obs.y == pytest.approx(math.log(1000.0), rel=1e-12)

    def test_explicit_total_rows_win(self, tmp_path):
        path = write_csv(
            tmp_path,
            ["France,1980,industrial,600", "France,1980,total,900"],
        )
        data = load_landings(path, "total")
        (obs,) = data.observations
        assert obs.y == pytest.approx(math.log(900.0), rel=1e-12)

    def test_zero_tonnage_dropped_with_warning(self, tmp_path, caplog):
        path = write_csv(
            tmp_path, ["Spain,1970,industrial,1000", "Spain,1971,industrial,0"]
        )
        with caplog.at_level(logging.WARNING, logger="landmix.data"):
            data = load_landings(path, "joint")
        assert len(data.observations) == 1
        assert any("zero-tonnage" in rec.message for rec in caplog.records)

    def test_duplicate_row_rejected(self, tmp_path):
        path = write_csv(
            tmp_path, ["Spain,1970,industrial,10", "Spain,1970,industrial,20"]
        )
        with pytest.raises(DataFormatError, match="duplicate"):
            load_landings(path, "joint")

    def test_year_outside_span_rejected(self, tmp_path):
        path = write_csv(tmp_path, ["Spain,1969,industrial,10"])
        with pytest.raises(DataFormatError, match="line 2"):
            load_landings(path, "joint")

    def test_unparseable_row_reports_line(self, tmp_path):
        path = write_csv(tmp_path, ["Spain,1970,industrial,10", "Spain,notayear,industrial,5"])
        with pytest.raises(DataFormatError, match="line 3"):
            load_landings(path, "joint")

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("pais,ano,sector,toneladas\nSpain,1970,industrial,10\n")
        with pytest.raises(DataFormatError, match="header"):
            load_landings(path, "joint")

    def test_availability_read_from_data(self, tmp_path):
        path = write_csv(
            tmp_path,
            [
                "Spain,1970,industrial,10",
                "France,1970,industrial,10",
                "France,1970,artisanal,5",
            ],
        )
        data = load_landings(path, "joint")
        avail = data.availability
        spain = data.labels.index("Spain")
        france = data.labels.index("France")
        assert avail[spain] == frozenset({Sector.INDUSTRIAL})
        assert avail[france] == frozenset({Sector.INDUSTRIAL, Sector.ARTISANAL})

    def test_roundtrip_idempotent(self, tmp_path):
        path = write_csv(
            tmp_path,
            [
                "Spain,1970,industrial,1234.5",
                "Spain,1980,industrial,99.25",
                "France,1990,artisanal,7.125",
            ],
        )
        d1 = load_landings(path, "joint")
        out1 = tmp_path / "rt1.csv"
        write_landings(d1, out1)
        d2 = load_landings(out1, "joint")
        out2 = tmp_path / "rt2.csv"
        write_landings(d2, out2)
        d3 = load_landings(out2, "joint")
        assert d2.labels == d3.labels
        assert d2.observations == d3.observations
        for a, b in zip(d1.observations, d2.observations):
            assert a.y == pytest.approx(b.y, rel=1e-15)


class TestSimulateDataset:
    def test_same_seed_identical(self):
        p = TotalParams(8.0, 0.5, 2.0, 0.05)
        d1, e1 = simulate_dataset("total", p, 5, 10, seed=42)
        d2, e2 = simulate_dataset("total", p, 5, 10, seed=42)
        assert d1.observations == d2.observations
        assert np.array_equal(e1.b0, e2.b0)

    def test_degenerate_variance_limit(self):
        p = TotalParams(3.5, 1e-8, 1e-8, 1e-8)
        data, _ = simulate_dataset("total", p, 3, 4, seed=0)
        for obs in data.observations:
            assert obs.y == pytest.approx(3.5, abs=1e-6)

    def test_intercept_effect_spread_matches_sigma0(self):
        p = TotalParams(8.098, 0.541, 4.234, 0.054)
        _, effects = simulate_dataset("total", p, 500, 45, seed=3)
        assert np.var(effects.b0, ddof=1) == pytest.approx(4.234**2, rel=0.15)

    def test_simulated_data_revalidates(self, tmp_path):
        p = JointParams(8.0, 5.0, 0.5, 2.0, 3.0, 0.05, 0.06, 0.5, 0.9)
        data, _ = simulate_dataset("joint", p, 4, 6, seed=9)
        path = tmp_path / "sim.csv"
        write_landings(data, path)
        loaded = load_landings(path, "joint", span=(1970, 1970 + data.horizon - 1))
        assert loaded.labels == data.labels
        assert len(loaded.observations) == len(data.observations)

    def test_availability_respected(self):
        p = JointParams(8.0, 5.0, 0.5, 2.0, 3.0, 0.05, 0.06, 0.5, 0.9)
        data, _ = simulate_dataset(
            "joint",
            p,
            2,
            3,
            availability={0: (Sector.INDUSTRIAL,), 1: (Sector.INDUSTRIAL, Sector.ARTISANAL)},
            seed=1,
        )
        avail = data.availability
        assert avail[0] == frozenset({Sector.INDUSTRIAL})
        assert avail[1] == frozenset({Sector.INDUSTRIAL, Sector.ARTISANAL})

    def test_invalid_params_rejected(self):
        with pytest.raises(ConfigError):
            simulate_dataset("total", TotalParams(0.0, -1.0, 1.0, 1.0), 2, 3)
        with pytest.raises(ConfigError):
            simulate_dataset("total", TotalParams(0.0, 1.0, 1.0, 1.0), 0, 3)
