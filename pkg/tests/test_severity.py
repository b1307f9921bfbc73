import numpy as np
import pytest
from hypothesis import given, strategies as st

from clepcast.ingest import HospitalTable
from clepcast.severity import allocate_deaths, rank_percentile, severity_index, tercile_categories


def table(rows):
    ids, counties, emp = zip(*rows)
    return HospitalTable(tuple(ids), tuple(counties), np.array(emp, dtype=float))


def test_allocation_proportional_to_employees():
    np.testing.assert_allclose(allocate_deaths(40, [100, 300]), [10, 30])
    np.testing.assert_allclose(allocate_deaths(40, [250]), [40])


def test_allocation_equal_split_without_employee_counts():
    np.testing.assert_allclose(allocate_deaths(10, [0, 0]), [5, 5])


def test_allocation_rejects_bad_input():
    with pytest.raises(ValueError):
        allocate_deaths(5, [])
    with pytest.raises(ValueError):
        allocate_deaths(5, [-1, 2])


@given(st.floats(0, 1e6), st.lists(st.integers(0, 5000), min_size=1, max_size=10))
def test_allocation_conserves_county_total(total, emp):
    out = allocate_deaths(total, emp)
    assert out.sum() == pytest.approx(total, rel=1e-9, abs=1e-9)
    assert np.all(out >= 0)


def test_rank_percentile_examples():
    np.testing.assert_allclose(rank_percentile([10, 30, 20]), [0, 100, 50])
    np.testing.assert_allclose(rank_percentile([5, 5, 7]), [0, 0, 100])


def test_terciles_on_six_scores():
    cats, degenerate = tercile_categories([1, 2, 3, 4, 5, 6])
    assert cats.tolist() == ["low", "low", "medium", "medium", "high", "high"]
    assert not degenerate


def test_three_distinct_scores_one_per_category():
    cats, degenerate = tercile_categories([40.0, 10.0, 75.0])
    assert cats.tolist() == ["medium", "low", "high"] and not degenerate


def test_hospital_leading_both_rankings_scores_100():
    hosp = table([("A", "01001", 1), ("B", "01002", 1), ("C", "01003", 1), ("D", "01004", 1)])
    df, _ = severity_index(hosp, {"01001": 5, "01002": 9, "01003": 50, "01004": 1},
                           {"01001": 2, "01002": 1, "01003": 7, "01004": 3})
    top = df.set_index("hospital_id").loc["C"]
    assert top.score == 100 and top.category == "high"


def test_orphan_county_logs_warning(caplog):
    hosp = table([("A", "01001", 10)])
    with caplog.at_level("WARNING"):
        severity_index(hosp, {"01001": 5, "01999": 3}, {"01001": 1, "01999": 1})
    assert "no hospitals" in caplog.text


def test_terciles_degenerate_cases():
    _, degenerate = tercile_categories([1, 2])
    assert degenerate
    cats, degenerate = tercile_categories([4, 4, 4, 4])
    assert degenerate and set(cats) == {"low"}


def test_three_hospital_index():
    hosp = table([("A", "01001", 100), ("B", "01001", 300), ("C", "01003", 50)])
    df, degenerate = severity_index(hosp, {"01001": 100, "01003": 10}, {"01001": 20, "01003": 8})
    df = df.set_index("hospital_id")
    np.testing.assert_allclose(df.alloc_total, [25, 75, 10])
    np.testing.assert_allclose(df.alloc_new7, [5, 15, 8])
    np.testing.assert_allclose(df.pct_total, [50, 100, 0])
    np.testing.assert_allclose(df.pct_new, [0, 100, 50])
    np.testing.assert_allclose(df.score, [25, 100, 25])
    assert df.category.tolist() == ["low", "high", "low"]
    assert degenerate  # the tie leaves "medium" empty


def test_hospitals_without_forecast_are_skipped():
    hosp = table([("A", "01001", 10), ("B", "09999", 10)])
    df, _ = severity_index(hosp, {"01001": 5}, {"01001": 1})
    assert df.hospital_id.tolist() == ["A"]


@given(st.integers(0, 10_000), st.floats(0.1, 100))
def test_index_invariant_to_common_scaling(seed, a):
    rng = np.random.default_rng(seed)
    counties = [f"{1001 + i:05d}" for i in range(5)]
    rows = [(f"H{i}", counties[i % 5], int(rng.integers(1, 500))) for i in range(12)]
    hosp = table(rows)
    tot = {c: float(rng.integers(0, 1000)) for c in counties}
    new = {c: float(rng.integers(0, 100)) for c in counties}
    d1, _ = severity_index(hosp, tot, new)
    d2, _ = severity_index(hosp, {c: a * v for c, v in tot.items()}, {c: a * v for c, v in new.items()})
    assert d1.category.tolist() == d2.category.tolist()
    np.testing.assert_allclose(d1.score, d2.score)
