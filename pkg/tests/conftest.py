import io
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from portgrav.design import DesignSpec, build_baseline_design  # noqa: E402
from portgrav.geo import GeoPoint, build_distance_table  # noqa: E402
from portgrav.hdfe import layout_from_frame  # noqa: E402
from portgrav.panel import Basis, Panel, assign_groups  # noqa: E402

REPORTERS = {"AAA": "ASEAN", "BBB": "OECD", "CCC": "ROW"}
PARTNERS = ["DDD", "EEE", "FFF", "GGG"]
CITIES = {
    "AAA": GeoPoint(1.35, 103.82),
    "BBB": GeoPoint(48.86, 2.35),
    "CCC": GeoPoint(-33.87, 151.21),
    "DDD": GeoPoint(40.71, -74.01),
    "EEE": GeoPoint(35.68, 139.69),
    "FFF": GeoPoint(-23.55, -46.63),
    "GGG": GeoPoint(19.08, 72.88),
}
# reporter -> outcomes against PARTNERS, per year
OUTCOMES = {
    2007: {"AAA": [12, 5, 0, 3], "BBB": [7, 9, 4, 1], "CCC": [2, 0, 6, 11]},
    2008: {"AAA": [10, 6, 2, 0], "BBB": [8, 7, 5, 2], "CCC": [3, 1, 4, 9]},
}


def panel_from_rows(rows, basis=Basis.NATIONALITY):
    frame = pd.DataFrame(rows, columns=["reporter", "counterparty", "year", "instrument", "value"])
    return Panel(frame, basis)


def panel_csv(rows, header="year,reporter,counterparty,instrument,value_usd_mn"):
    lines = [header] + [",".join(str(v) for v in r) for r in rows]
    return io.BytesIO(("\n".join(lines) + "\n").encode("utf-8"))


def raw_design(frame, X, names, fe_names=("reporter_year", "counterparty_year")):
    frame = frame.reset_index(drop=True)
    layout = layout_from_frame(frame, list(fe_names))
    X = np.asarray(X, dtype=float).reshape(len(frame), len(names))
    return DesignSpec(frame=frame, names=list(names), X=X, fixed_effects=layout, spec="custom", instrument="Debt")


def generic_frame(n_rep, n_cp, years, rng):
    rows = [(f"R{chr(65 + i)}{chr(65 + i)}", f"C{chr(65 + j)}{chr(65 + j)}", t) for t in years for i in range(n_rep) for j in range(n_cp)]
    f = pd.DataFrame(rows, columns=["reporter", "counterparty", "year"])
    f["instrument"] = "Debt"
    f["ln_dist"] = 0.0
    f["group"] = "ROW"
    return f


@pytest.fixture
def small_case():
    """3 reporters x 4 partners x 2 years, one reporter per group."""
    rows = [
        (r, c, t, "Debt", float(v))
        for t, block in OUTCOMES.items()
        for r, vals in block.items()
        for c, v in zip(PARTNERS, vals)
    ]
    panel = panel_from_rows(rows)
    distances = build_distance_table(CITIES)
    groups = assign_groups(panel, list(REPORTERS.items()))
    design = build_baseline_design(panel, distances, groups)
    return panel, distances, groups, design


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion (``ok=None`` marks a skip)."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion, ok, detail):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"[{status}] criterion {criterion}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
