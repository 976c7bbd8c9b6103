import json
import random

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import CITIES, PARTNERS, REPORTERS, panel_from_rows, raw_design
from oracles import gauss_rank, independent_columns
from portgrav.design import (
    build_baseline_design,
    build_timevarying_design,
    detect_collinear,
)
from portgrav.errors import AllColumnsDropped, InputError, MissingDistance, SingleYearPanel, UnassignedReporter
from portgrav.geo import DistanceTable, GeoPoint, build_distance_table
from portgrav.panel import assign_groups

BASE_NAMES = ["ln_dist_x_ASEAN", "ln_dist_x_OECD", "ln_dist_x_ROW"]


def _multi_year(years, reporters=REPORTERS, partners=PARTNERS, seed=1):
    rng = np.random.default_rng(seed)
    rows = [
        (r, c, t, "Debt", float(rng.integers(1, 20)))
        for t in years
        for r in reporters
        for c in partners
    ]
    panel = panel_from_rows(rows)
    return panel, build_distance_table(CITIES), assign_groups(panel, list(reporters.items()))


def test_single_asean_reporter():
    panel = panel_from_rows([("AAA", "DDD", 2010, "Debt", 3.0), ("AAA", "EEE", 2010, "Debt", 1.0)])
    dist = build_distance_table(CITIES)
    d = build_baseline_design(panel, dist, assign_groups(panel, [("AAA", "ASEAN")]))
    assert d.names == BASE_NAMES
    assert_allclose(d.column("ln_dist_x_ASEAN"), np.log([dist.get("AAA", "DDD"), dist.get("AAA", "EEE")]))
    assert not d.column("ln_dist_x_OECD").any()
    assert not d.column("ln_dist_x_ROW").any()
    assert d.fixed_effects.names == ["reporter_year", "counterparty_year"]


def test_singapore_excluded_from_asean_column():
    rows = [("SGP", "USA", 2010, "Debt", 5.0), ("MYS", "USA", 2010, "Debt", 2.0), ("MYS", "JPN", 2010, "Debt", 1.0)]
    panel = panel_from_rows(rows)
    cities = {"SGP": GeoPoint(1.35, 103.82), "MYS": GeoPoint(3.14, 101.69), "USA": GeoPoint(40.71, -74.01), "JPN": GeoPoint(35.68, 139.69)}
    groups = assign_groups(panel, [("SGP", "ASEAN"), ("MYS", "ASEAN")], exclude_singapore=True)
    d = build_baseline_design(panel, build_distance_table(cities), groups)
    sgp = (d.frame["reporter"] == "SGP").to_numpy()
    assert not d.column("ln_dist_x_ASEAN")[sgp].any()
    assert d.column("ln_dist_x_EXCLUDED")[sgp].all()
    assert d.nuisance == ["ln_dist_x_EXCLUDED"]
    assert d.reported == BASE_NAMES


def test_rows_have_exactly_one_nonzero_equal_to_log_distance(small_case):
    _, dist, _, d = small_case
    for row, (r, c) in zip(d.X, zip(d.frame["reporter"], d.frame["counterparty"])):
        nz = np.flatnonzero(row)
        assert len(nz) == 1
        assert row[nz[0]] == np.log(dist.get(r, c))
    assert_array_equal(d.X.sum(axis=1), d.frame["ln_dist"].to_numpy())


def test_distance_floor():
    panel = panel_from_rows([("AAA", "BBB", 2010, "Debt", 1.0)])
    d = build_baseline_design(panel, DistanceTable({("AAA", "BBB"): 0.2}), assign_groups(panel, [("AAA", "OECD")]))
    assert d.column("ln_dist_x_OECD")[0] == 0.0


def test_errors():
    panel = panel_from_rows([("AAA", "BBB", 2010, "Debt", 1.0)])
    with pytest.raises(MissingDistance):
        build_baseline_design(panel, DistanceTable({("AAA", "CCC"): 5.0}), assign_groups(panel, [("AAA", "OECD")]))
    groups = assign_groups(panel, [("AAA", "OECD")])
    object.__setattr__(groups, "groups", {})
    with pytest.raises(UnassignedReporter):
        build_baseline_design(panel, DistanceTable({("AAA", "BBB"): 5.0}), groups)
    mixed = panel_from_rows([("AAA", "BBB", 2010, "Debt", 1.0), ("AAA", "BBB", 2010, "Equity", 1.0)])
    with pytest.raises(InputError):
        build_baseline_design(mixed, DistanceTable({("AAA", "BBB"): 5.0}), assign_groups(mixed, [("AAA", "OECD")]))
    d = build_baseline_design(mixed, DistanceTable({("AAA", "BBB"): 5.0}), assign_groups(mixed, [("AAA", "OECD")]), instrument="equity")
    assert d.instrument == "Equity"


def test_timevarying_two_years():
    panel, dist, groups = _multi_year([2007, 2008], {"AAA": "ASEAN", "BBB": "OECD"})
    d = build_timevarying_design(panel, dist, groups, 2007)
    assert d.names == ["ln_dist_x_2008_x_ASEAN", "ln_dist_x_2008_x_OECD"]
    assert d.fixed_effects.names == ["reporter_year", "counterparty_year", "pair"]


def test_timevarying_full_window():
    panel, dist, groups = _multi_year(range(2007, 2018))
    d = build_timevarying_design(panel, dist, groups, 2007)
    assert len(d.names) == 20
    assert d.names[0] == "ln_dist_x_2008_x_ASEAN" and d.names[-1] == "ln_dist_x_2017_x_OECD"
    assert not d.X[(d.frame["year"] == 2007).to_numpy()].any()
    with_row = build_timevarying_design(panel, dist, groups, 2007, include_row=True)
    assert len(with_row.names) == 30


def test_timevarying_requires_years():
    panel, dist, groups = _multi_year([2010])
    with pytest.raises(SingleYearPanel):
        build_timevarying_design(panel, dist, groups, 2010)
    panel, dist, groups = _multi_year([2008, 2009])
    with pytest.raises(InputError):
        build_timevarying_design(panel, dist, groups, 2007)


def test_timevarying_column_matches_baseline_on_non_base_rows():
    reps = {"AAA": "ASEAN"}
    panel, dist, groups = _multi_year([2007, 2008], reps)
    tv = build_timevarying_design(panel, dist, groups, 2007)
    base = build_baseline_design(panel, dist, groups)
    later = (tv.frame["year"] == 2008).to_numpy()
    assert_array_equal(tv.column("ln_dist_x_2008_x_ASEAN")[later], base.column("ln_dist_x_ASEAN")[later])
    assert not tv.column("ln_dist_x_2008_x_OECD").any()


def test_permuted_panel_gives_same_columns_per_key(small_case):
    panel, dist, groups, d = small_case
    rows = [tuple(r) for r in panel.frame.itertuples(index=False)]
    random.Random(9).shuffle(rows)
    again = build_baseline_design(panel_from_rows(rows), dist, groups)
    a = dict(zip(d.keys(), map(tuple, d.X)))
    b = dict(zip(again.keys(), map(tuple, again.X)))
    assert a == b


def test_plain_log_distance_dropped_under_pair_fe(small_case):
    _, _, _, d = small_case
    design = raw_design(d.frame, d.frame["ln_dist"].to_numpy()[:, None], ["ln_dist"], ["reporter_year", "counterparty_year", "pair"])
    extra = raw_design(
        d.frame,
        np.column_stack([d.frame["ln_dist"], np.random.default_rng(0).normal(size=d.n_obs)]),
        ["ln_dist", "noise"],
        ["reporter_year", "counterparty_year", "pair"],
    )
    assert detect_collinear(extra).collinearity_report == ["ln_dist"]
    with pytest.raises(AllColumnsDropped):
        detect_collinear(design)


def test_baseline_columns_retained(small_case):
    _, _, _, d = small_case
    checked = detect_collinear(d)
    assert checked.names == BASE_NAMES
    assert checked.collinearity_report == []


def test_duplicate_column_matches_rank_oracle(small_case):
    _, _, _, d = small_case
    X = np.column_stack([d.X, d.X[:, 1], d.X[:, 0] + 2 * d.X[:, 2]])
    names = BASE_NAMES + ["dup_oecd", "combo"]
    checked = detect_collinear(raw_design(d.frame, X, names))
    assert checked.collinearity_report == ["dup_oecd", "combo"]

    f = d.frame
    fe = np.column_stack(
        [
            np.array([[float(k == lv) for lv in sorted(set(keys))] for k in keys])
            for keys in (list(zip(f["reporter"], f["year"])), list(zip(f["counterparty"], f["year"])))
        ]
    )
    base_rank = gauss_rank(fe)
    full = np.column_stack([fe, X])
    assert gauss_rank(full) - base_rank == len(checked.names)
    kept = [j - fe.shape[1] for j in independent_columns(full) if j >= fe.shape[1]]
    assert [names[j] for j in kept] == checked.names


def test_diagnostics_json(small_case):
    _, _, _, d = small_case
    info = json.loads(d.to_json())
    assert info["regressors"] == BASE_NAMES
    assert info["fixed_effects"] == {"reporter_year": 6, "counterparty_year": 8}
    assert info["n_obs"] == 24
