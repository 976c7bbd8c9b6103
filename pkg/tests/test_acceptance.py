"""Acceptance checks with pinned tolerances, one PASS/FAIL line per criterion."""

import os
import shutil
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from mc import NAMES, recovery_runs, truth_vector
from oracles import dense_sandwich, fe_dummy_matrix, newton_poisson
from portgrav.design import build_baseline_design, detect_collinear
from portgrav.estimator import fit_ppml
from portgrav.geo import DistanceTable, GeoPoint, bin_holdings, bin_index, haversine_km
from portgrav.inference import cluster_vcov, confidence_interval
from portgrav.restatement import passthrough_estimate
from portgrav.synth import DgpConfig, generate_panel
from conftest import panel_from_rows

ORACLE_TOL = 1e-6
ORACLE_SECONDS = 1.0
VCOV_RTOL = 1e-8
MIN_COVERED = 16
SUITE_SECONDS = 300.0
INVARIANCE_TOL = 1e-8


def _dummies(design):
    f = design.frame
    return np.column_stack(
        [design.X, fe_dummy_matrix([list(zip(f.reporter, f.year)), list(zip(f.counterparty, f.year))])]
    )


def test_oracle_equivalence(small_case, acceptance):
    _, _, _, design = small_case
    start = time.perf_counter()
    fit = fit_ppml(design)
    elapsed = time.perf_counter() - start
    oracle = newton_poisson(_dummies(design), design.y)[: design.X.shape[1]]
    diff = float(np.max(np.abs(fit.beta - oracle)))
    ok = diff < ORACLE_TOL and elapsed < ORACLE_SECONDS
    assert acceptance(1, ok, f"max |beta - oracle| = {diff:.2e} (< {ORACLE_TOL:g}), fit {elapsed:.3f}s (< {ORACLE_SECONDS:g}s)")


def test_clustered_vcov_oracle(small_case, acceptance):
    _, _, _, design = small_case
    fit = fit_ppml(design)
    f = design.frame
    labels = list(zip(f.reporter, f.counterparty))
    Z = _dummies(design)
    oracle = dense_sandwich(Z, design.y, newton_poisson(Z, design.y), labels, design.X.shape[1])
    V = cluster_vcov(fit, "pair").matrix
    rel = float(np.max(np.abs(V - oracle) / np.abs(oracle)))
    assert acceptance(2, rel < VCOV_RTOL, f"max relative vcov error = {rel:.2e} (< {VCOV_RTOL:g})")


def test_dgp_recovery(acceptance):
    start = time.perf_counter()
    beta, se = recovery_runs(20, 0.4)
    elapsed = time.perf_counter() - start
    truth = truth_vector()
    covered = []
    for j in range(len(NAMES)):
        hits = 0
        for b, s in zip(beta[:, j], se[:, j]):
            lo, hi = confidence_interval(b, s, 0.95)
            hits += lo <= truth[j] <= hi
        covered.append(int(hits))
    ok = min(covered) >= MIN_COVERED and elapsed < SUITE_SECONDS
    detail = ", ".join(f"{n}: {c}/20" for n, c in zip(NAMES, covered))
    assert acceptance(3, ok, f"95% CI coverage {detail} (>= {MIN_COVERED}), 20 fits in {elapsed:.1f}s (< {SUITE_SECONDS:g}s)")


@pytest.fixture(scope="module")
def synth_fit():
    data = generate_panel(DgpConfig(n_reporters=10, n_counterparties=25, years=(2007, 2008, 2009), zero_inflation=0.3, seed=4))
    design = detect_collinear(build_baseline_design(data.panel, data.distances, data.groups))
    return data, design, fit_ppml(design)


def test_reporter_year_scaling_invariance(synth_fit, acceptance):
    _, design, base = synth_fit
    f = design.frame
    reporter = sorted(set(f["reporter"]))[0]
    cell = ((f["reporter"] == reporter) & (f["year"] == 2008)).to_numpy()
    y = design.y.copy()
    y[cell] *= 3.7
    moved = fit_ppml(design.with_outcome(y))
    diff = float(np.max(np.abs(moved.beta - base.beta)))
    ok = diff < INVARIANCE_TOL
    assert acceptance("4a", ok, f"one reporter-year cell scaled by 3.7: max |delta beta| = {diff:.2e} (< {INVARIANCE_TOL:g})")


def test_distance_scaling_invariance(synth_fit, acceptance):
    data, _, base = synth_fit
    worst = 0.0
    for c in (0.5, 7.3, 1000.0):
        design = detect_collinear(build_baseline_design(data.panel, data.distances.scaled(c), data.groups))
        worst = max(worst, float(np.max(np.abs(fit_ppml(design).beta - base.beta))))
    ok = worst < INVARIANCE_TOL
    assert acceptance("4b", ok, f"distances scaled by 0.5, 7.3, 1000: max |delta beta| = {worst:.2e} (< {INVARIANCE_TOL:g})")


def test_singapore_new_york_distance(acceptance):
    km = haversine_km(GeoPoint(1.352, 103.820), GeoPoint(40.713, -74.006))
    b = bin_index(km)
    ok = 14000.0 <= km <= 16000.0 and b == 7
    assert acceptance(5, ok, f"SGP-NYC = {km:.1f} km (in [14000, 16000]), 2000-km bin {b} (== 7)")


def test_binning_conservation(acceptance):
    rng = np.random.default_rng(11)
    counterparties = [f"Q{a}{b}" for a in "ABCDEF" for b in "ABCDEF"]
    km = rng.uniform(1.0, 20000.0, len(counterparties))
    km[0] = 2000.0
    values = np.round(rng.exponential(500.0, len(counterparties)), 3)
    table = DistanceTable({("AAA", c): float(d) for c, d in zip(counterparties, km)})
    panel = panel_from_rows([("AAA", c, 2015, "Debt", float(v)) for c, v in zip(counterparties, values)])
    hist = bin_holdings(panel, table)
    total = sum((Fraction(float(v)) for v in values), Fraction(0))
    boundary = bin_index(2000.0)
    ok = hist.total() == total and boundary == 1
    assert acceptance(6, ok, f"sum over bins == total holdings exactly: {hist.total() == total}, 2000.0 km -> bin {boundary} (== 1)")


def test_restatement_arithmetic(acceptance):
    hypothesis = [("HKG", "CHN"), ("CYM", "CHN")]
    sgp = passthrough_estimate({"HKG": -20.0, "CYM": -30.0, "CHN": 50.0}, hypothesis)
    mys = passthrough_estimate({"HKG": -2.5, "CYM": -1.0, "CHN": 5.5}, hypothesis)["CHN"]
    ok = sgp["CHN"].attributed == 50.0 and mys.residual == 2.0 and mys.trail == "5.5 - 2.5 - 1 = 2"
    assert acceptance(7, ok, f"SGP attribution {sgp['CHN'].attributed:g} (== 50), MYS residual {mys.residual:g} (== 2), trail '{mys.trail}'")


REPLICATION_DIR = os.environ.get("GRAVITY_REPLICATION_DIR")


def _cli(*argv, env=None):
    cmd = [sys.executable, "-m", "portgrav", *map(str, argv)]
    return subprocess.run(cmd, env=env, capture_output=True, text=True)


def test_published_ordering(tmp_path, acceptance):
    if not REPLICATION_DIR:
        acceptance(8, None, "data-gated; set GRAVITY_REPLICATION_DIR to a folder with panel.csv, groups.csv and cities.csv")
        pytest.skip("replication data not supplied")
    d = Path(REPLICATION_DIR)
    inputs = ["--panel", d / "panel.csv", "--groups", d / "groups.csv", "--cities", d / "cities.csv", "--instrument", "debt"]
    betas = {}
    for label, extra in (("ASEAN", []), ("ASEAN_exSGP", ["--exclude-singapore"])):
        out = tmp_path / label
        done = _cli("estimate", *inputs, *extra, "--out", out)
        assert done.returncode == 0, done.stderr
        table = pd.read_csv(out / "coefficients.csv").set_index("name")["beta"]
        betas[label] = table["ln_dist_x_ASEAN"]
        betas["OECD"] = table["ln_dist_x_OECD"]
    ok = betas["ASEAN_exSGP"] < betas["ASEAN"] < betas["OECD"]
    detail = f"beta ASEAN ex-SGP {betas['ASEAN_exSGP']:.3f} < ASEAN {betas['ASEAN']:.3f} < OECD {betas['OECD']:.3f}"
    assert acceptance(8, ok, detail)


THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _all_commands(work, env):
    """Run every CLI command into ``work`` and return the produced bytes by relative path."""
    s = work / "synth"
    steps = [
        ("synth", "--n-reporters", 8, "--n-counterparties", 20, "--years", "2007-2010", "--zero-inflation", 0.4, "--seed", 5, "--out", s),
        ("ingest", "--input", s / "panel.csv", "--out", work / "ingest"),
        ("distance", "--cities", s / "cities.csv", "--out", work / "distance"),
        ("estimate", "--panel", s / "panel.csv", "--groups", s / "groups.csv", "--cities", s / "cities.csv", "--out", work / "baseline"),
        ("estimate", "--panel", s / "panel.csv", "--groups", s / "groups.csv", "--cities", s / "cities.csv", "--spec", "timevarying", "--out", work / "timevarying"),
        ("bins", "--panel", s / "panel.csv", "--groups", s / "groups.csv", "--cities", s / "cities.csv", "--out", work / "bins"),
        ("shares", "--panel", s / "panel.csv", "--groups", s / "groups.csv", "--year", 2009, "--out", work / "shares"),
        ("topk", "--panel", s / "panel.csv", "--year", 2009, "--k", 5, "--out", work / "topk"),
        ("restate-diff", "--residency", s / "panel.csv", "--nationality", work / "ingest" / "panel.csv", "--year", 2009, "--out", work / "restate"),
    ]
    for argv in steps:
        done = _cli(*argv, env=env)
        assert done.returncode == 0, f"{argv[0]}: {done.stderr}"
    return {str(p.relative_to(work)): p.read_bytes() for p in sorted(work.rglob("*")) if p.is_file()}


def test_determinism_across_thread_counts(tmp_path, acceptance):
    # same paths for both runs so the manifests are identical
    work = tmp_path / "work"
    runs = []
    for threads in ("1", "4"):
        shutil.rmtree(work, ignore_errors=True)
        env = {**os.environ, **{v: threads for v in THREAD_VARS}}
        runs.append(_all_commands(work, env))
    differing = sorted(k for k in set(runs[0]) | set(runs[1]) if runs[0].get(k) != runs[1].get(k))
    ok = not differing and len(runs[0]) > 0
    detail = f"{len(runs[0])} artifacts from 9 command runs byte-identical at 1 vs 4 threads" if ok else f"differing: {differing}"
    assert acceptance(9, ok, detail)
