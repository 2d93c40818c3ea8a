import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smartmrt.design import Trajectory, TrialData
from smartmrt.errors import PositivityError, ValidationError
from smartmrt.io import ingest_csv, read_trial_csv, write_trial_csv

from conftest import make_trial

HEADER = "id,t,z1,r,z2,i,a,p,y_next\n"


def _write(tmp_path, body, header=HEADER):
    path = tmp_path / "d.csv"
    path.write_text(header + body)
    return path


def test_round_trip_is_bit_exact(tmp_path):
    data, design = make_trial(n=15, T=6, eligible_rate=0.7, x0=True, seed=3)
    path = write_trial_csv(data, tmp_path / "a.csv")
    back = read_trial_csv(path, design)
    for a, b in zip(data.trajectories(), back.trajectories()):
        assert a.equals(b)
    write_trial_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=2,
                max_size=2), st.floats(0.01, 0.99))
def test_round_trip_preserves_arbitrary_floats(tmp_path_factory, ys, p):
    tr = Trajectory("a", 1, 0, -1, [1, 2], [1, 1], [1.0, 0.0], [p, p], ys)
    path = write_trial_csv(TrialData.from_trajectories([tr]),
                           tmp_path_factory.mktemp("rt") / "x.csv")
    back = ingest_csv(path)[0]
    assert back.equals(tr)


def test_missing_column_is_named(tmp_path):
    path = _write(tmp_path, "a,1,1,0,1,1,1,0.5,0\n", header="id,t,z1,r,z2,i,a,p\n")
    with pytest.raises(ValidationError, match="y_next"):
        read_trial_csv(path)


def test_duplicate_time_reports_line(tmp_path):
    path = _write(tmp_path, "a,1,1,0,1,1,1,0.5,0\na,1,1,0,1,1,0,0.5,0\n")
    with pytest.raises(ValidationError, match="line 3"):
        read_trial_csv(path)


def test_non_monotone_time(tmp_path):
    path = _write(tmp_path, "a,2,1,0,1,1,1,0.5,0\na,1,1,0,1,1,0,0.5,0\n")
    with pytest.raises(ValidationError, match="non-monotone"):
        read_trial_csv(path)


def test_eligibility_sentinel(tmp_path):
    path = _write(tmp_path, "a,1,1,0,1,0,1,0.5,0\n")
    with pytest.raises(ValidationError, match="empty exactly"):
        read_trial_csv(path)
    path = _write(tmp_path, "a,1,1,0,1,1,,0.5,0\n")
    with pytest.raises(ValidationError, match="line 2"):
        read_trial_csv(path)


def test_positivity_violation(tmp_path):
    path = _write(tmp_path, "a,1,1,0,1,1,1,1.0,0\n")
    with pytest.raises(PositivityError, match="id=a,t=1"):
        read_trial_csv(path)


def test_inconsistent_smart_record(tmp_path):
    from smartmrt.design import DesignSpec

    path = _write(tmp_path, "a,1,1,1,1,1,1,0.5,0\n")
    with pytest.raises(ValidationError, match="inconsistent record at id=a"):
        read_trial_csv(path, DesignSpec(t_star=1, t_max=1))


def test_missing_outcome_is_not_imputed(tmp_path):
    path = _write(tmp_path, "a,1,1,0,1,1,1,0.5,\n")
    with pytest.raises(ValidationError, match="y_next"):
        read_trial_csv(path)


def test_ineligible_p_is_warning(tmp_path):
    path = _write(tmp_path, "a,1,1,0,1,1,1,0.5,0\na,2,1,0,1,0,,0.5,0\n")
    data = read_trial_csv(path)
    assert data.warnings and "ineligible" in data.warnings[0]
    assert np.isnan(data.p[1])


def test_empty_and_missing_file(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ValidationError):
        read_trial_csv(tmp_path / "e.csv")
    with pytest.raises(ValidationError, match="no such file"):
        read_trial_csv(tmp_path / "nope.csv")
