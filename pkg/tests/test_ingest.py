"""Tests for misreg.services.ingest."""

import math

import numpy as np
import pytest

from misreg.exceptions import InputError
from misreg.models.geometry import LagMode
from misreg.services.ingest import ingest, ingest_aligned, read_lags, read_stations, read_targets, summarize

STATIONS = """id,x_km,y_km,value
s1,0,0,1.0
s2,1,0,2.0
s3,0,1,3.0
s4,1,1,4.0
"""

OUTCOMES = """id,x_km,y_km,y,ctrl_1,ctrl_2
o1,0.5,0.5,1.0,1,0.3
o2,1.5,0.5,2.0,1,-0.2
o3,0.5,1.5,0.5,1,0.9
"""


@pytest.fixture
def write(tmp_path):
    def _write(name: str, text: str):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


class TestStations:
    """Tests for station tables."""

    def test_read(self, write):
        sample = read_stations(write("stations.csv", STATIONS))
        assert len(sample) == 4
        np.testing.assert_allclose(sample.values, [1, 2, 3, 4])

    def test_leading_comments_skipped(self, write):
        sample = read_stations(write("stations.csv", "# run_config: {}\n# more\n" + STATIONS))
        assert len(sample) == 4

    def test_bad_number_names_the_line(self, write):
        text = STATIONS.replace("s2,1,0,2.0", "s2,1,0,abc")
        with pytest.raises(InputError, match="line 3"):
            read_stations(write("stations.csv", text))

    def test_line_numbers_count_comments(self, write):
        text = "# comment\n" + STATIONS.replace("s2,1,0,2.0", "s2,1,0,nan")
        with pytest.raises(InputError, match="line 4"):
            read_stations(write("stations.csv", text))

    def test_missing_column(self, write):
        with pytest.raises(InputError, match="missing column"):
            read_stations(write("stations.csv", "id,x_km,y_km\ns1,0,0\n"))

    def test_no_rows(self, write):
        with pytest.raises(InputError, match="no data rows"):
            read_stations(write("stations.csv", "id,x_km,y_km,value\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="File not found"):
            read_stations(tmp_path / "absent.csv")

    def test_unsupported_extension(self, write):
        with pytest.raises(InputError, match="not supported"):
            read_stations(write("stations.xlsx", STATIONS))


class TestIngest:
    """Tests for misaligned datasets."""

    def test_dataset(self, write):
        data = ingest(write("stations.csv", STATIONS), write("outcomes.csv", OUTCOMES))
        assert data.n_stations == 4
        assert data.n_outcomes == 3
        assert data.F.shape == (3, 2)
        assert data.group is None

    def test_duplicate_stations_averaged(self, write):
        text = STATIONS + "s5,0,0,3.0\n"
        data = ingest(write("stations.csv", text), write("outcomes.csv", OUTCOMES))
        assert data.n_stations == 4
        assert data.r_star[0] == pytest.approx(2.0)

    def test_groups(self, write):
        text = "id,x_km,y_km,y,ctrl_1,group\no1,0,0,1,1,a\no2,1,1,2,1,b\n"
        data = ingest(write("stations.csv", STATIONS), write("outcomes.csv", text))
        assert data.group_labels == ["a", "b"]

    def test_empty_group_label(self, write):
        text = "id,x_km,y_km,y,ctrl_1,group\no1,0,0,1,1,a\no2,1,1,2,1,\n"
        with pytest.raises(InputError, match="line 3"):
            ingest(write("stations.csv", STATIONS), write("outcomes.csv", text))

    def test_controls_must_be_consecutive(self, write):
        text = "id,x_km,y_km,y,ctrl_1,ctrl_3\no1,0,0,1,1,2\n"
        with pytest.raises(InputError, match="ctrl_1..ctrl_2"):
            ingest(write("stations.csv", STATIONS), write("outcomes.csv", text))

    def test_controls_required(self, write):
        text = "id,x_km,y_km,y\no1,0,0,1\n"
        with pytest.raises(InputError, match="no control columns"):
            ingest(write("stations.csv", STATIONS), write("outcomes.csv", text))

    def test_rank_deficient_controls(self, write):
        text = "id,x_km,y_km,y,ctrl_1,ctrl_2\no1,0,0,1,1,2\no2,1,1,2,1,2\n"
        with pytest.raises(InputError, match="full column rank"):
            ingest(write("stations.csv", STATIONS), write("outcomes.csv", text))

    def test_summary(self, write):
        data = ingest(write("stations.csv", STATIONS), write("outcomes.csv", OUTCOMES))
        summary = summarize(data)
        assert summary["N"] == 3
        assert summary["M"] == 4
        assert summary["nearest_median_km"] == pytest.approx(math.sqrt(0.5))


class TestOtherTables:
    """Tests for targets, lag grids and aligned tables."""

    def test_targets(self, write):
        ids, coords = read_targets(write("targets.csv", "id,x_km,y_km\nt1,0.2,0.3\nt2,4,5\n"))
        assert ids == ["t1", "t2"]
        assert coords.shape == (2, 2)

    def test_lags(self, write):
        text = "kind,r,r_tol,angle,angle_tol\nself,1,0.5,,\nself,2,0.5,0.0,0.3\ncross,1,0.5,,\n"
        lags_self, lags_cross = read_lags(write("lags.csv", text))
        assert len(lags_self) == 2 and len(lags_cross) == 1
        assert lags_self[0].mode == LagMode.ISOTROPIC
        assert lags_self[1].mode == LagMode.DIRECTIONAL

    def test_lag_kind(self, write):
        text = "kind,r,r_tol\nself,1,0.5\nboth,1,0.5\n"
        with pytest.raises(InputError, match="line 3"):
            read_lags(write("lags.csv", text))

    def test_lags_need_both_kinds(self, write):
        with pytest.raises(InputError, match="at least one self and one cross"):
            read_lags(write("lags.csv", "kind,r,r_tol\nself,1,0.5\n"))

    def test_invalid_lag(self, write):
        text = "kind,r,r_tol\nself,1,0\ncross,1,0.5\n"
        with pytest.raises(InputError, match="invalid lag"):
            read_lags(write("lags.csv", text))

    def test_aligned(self, write):
        text = "id,x_km,y_km,r,y,ctrl_1\n" + "".join(f"a{k},{k},0,{k},{2 * k},1\n" for k in range(5))
        aligned = ingest_aligned(write("aligned.csv", text))
        assert aligned.coords.shape == (5, 2)

    def test_aligned_too_small(self, write):
        text = "id,x_km,y_km,r,y,ctrl_1\na1,0,0,1,2,1\n"
        with pytest.raises(InputError, match="at least four"):
            ingest_aligned(write("aligned.csv", text))
