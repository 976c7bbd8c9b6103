"""Regressor columns and fixed-effect layouts for the gravity specifications.

Two layouts are supported:

* baseline: log distance interacted with each reporter group, with
  reporter-year and counterparty-year effects;
* time-varying: log distance x year x group (base year omitted) with
  reporter-year, counterparty-year and pair effects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import AllColumnsDropped, InputError, SingleYearPanel
from .geo import DistanceTable
from .hdfe import (
    COUNTERPARTY_YEAR,
    PAIR,
    REPORTER_YEAR,
    FixedEffectLayout,
    absorb_fixed_effects,
    layout_from_frame,
)
from .panel import ASEAN, CORE_GROUPS, ESTIMABLE, OECD, ROW, GroupAssignment, Instrument, Panel

MIN_DISTANCE_KM = 1.0
BASELINE = "baseline"
TIMEVARYING = "timevarying"


@dataclass(frozen=True)
class RegressorColumn:
    name: str
    values: np.ndarray


@dataclass(eq=False)
class DesignSpec:
    """Estimation-ready layout for one panel slice.

    ``frame`` holds one row per observation (keys, outcome ``y`` and
    ``ln_dist``) aligned with the rows of ``X``.
    """

    frame: pd.DataFrame
    names: list[str]
    X: np.ndarray
    fixed_effects: FixedEffectLayout
    spec: str
    instrument: str
    base_year: int | None = None
    nuisance: list[str] = field(default_factory=list)
    collinearity_report: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.X.shape != (len(self.frame), len(self.names)):
            raise ValueError("X does not match frame rows / names")
        if len(set(self.names)) != len(self.names):
            raise ValueError("regressor names must be unique")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("regressor values must be finite")

    @property
    def y(self) -> np.ndarray:
        return self.frame["y"].to_numpy(dtype=np.float64)

    @property
    def n_obs(self) -> int:
        return len(self.frame)

    @property
    def regressors(self) -> list[RegressorColumn]:
        return [RegressorColumn(n, self.X[:, k]) for k, n in enumerate(self.names)]

    @property
    def reported(self) -> list[str]:
        return [n for n in self.names if n not in self.nuisance]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def keys(self) -> list[tuple]:
        f = self.frame
        return list(zip(f["reporter"], f["counterparty"], f["year"].astype(int), f["instrument"]))

    def subset(self, mask: np.ndarray) -> DesignSpec:
        mask = np.asarray(mask, dtype=bool)
        return replace(
            self,
            frame=self.frame[mask].reset_index(drop=True),
            X=self.X[mask],
            fixed_effects=self.fixed_effects.subset(mask),
        )

    def drop_columns(self, names: list[str]) -> DesignSpec:
        keep = [k for k, n in enumerate(self.names) if n not in names]
        return replace(
            self,
            names=[self.names[k] for k in keep],
            X=self.X[:, keep],
            nuisance=[n for n in self.nuisance if n not in names],
            collinearity_report=self.collinearity_report + [n for n in self.names if n in names],
        )

    def with_outcome(self, y: np.ndarray) -> DesignSpec:
        frame = self.frame.copy()
        frame["y"] = np.asarray(y, dtype=np.float64)
        return replace(self, frame=frame)

    def diagnostics(self) -> dict:
        return {
            "spec": self.spec,
            "instrument": self.instrument,
            "base_year": self.base_year,
            "n_obs": self.n_obs,
            "regressors": list(self.names),
            "nuisance": list(self.nuisance),
            "fixed_effects": self.fixed_effects.level_counts,
            "dropped_columns": list(self.collinearity_report),
        }

    def to_json(self) -> str:
        return json.dumps(self.diagnostics(), indent=2, sort_keys=True)


def _slice(panel: Panel, instrument: Instrument | str | None) -> tuple[pd.DataFrame, str]:
    if instrument is None:
        present = [i for i in panel.instruments if i in ESTIMABLE]
        if len(present) != 1:
            raise InputError(
                f"panel holds instruments {[i.value for i in present]}; pass instrument= to choose one"
            )
        instrument = present[0]
    instrument = Instrument.parse(instrument)
    if instrument not in ESTIMABLE:
        raise InputError(f"{instrument.value} rows are not estimated; use Debt or Equity")
    frame = panel.select(instrument=instrument)
    if frame.empty:
        raise InputError(f"panel has no {instrument.value} observations")
    return frame, instrument.value


def _base_frame(panel, distances, groups, instrument):
    frame, inst = _slice(panel, instrument)
    d = distances.lookup(frame["reporter"], frame["counterparty"])
    out = pd.DataFrame(
        {
            "reporter": frame["reporter"],
            "counterparty": frame["counterparty"],
            "year": frame["year"].astype(np.int64),
            "instrument": frame["instrument"],
            "y": frame["value"].astype(np.float64),
            "ln_dist": np.log(np.maximum(d, MIN_DISTANCE_KM)),
        }
    )
    out["group"] = [groups.reporter_group(r) for r in out["reporter"]]
    return out, inst


def _group_order(core: tuple[str, ...], present: set[str]) -> tuple[list[str], list[str]]:
    buckets = sorted(g for g in present if g not in CORE_GROUPS)
    return list(core), buckets


def build_baseline_design(
    panel: Panel,
    distances: DistanceTable,
    groups: GroupAssignment,
    *,
    instrument: Instrument | str | None = None,
) -> DesignSpec:
    """ln(distance) x group dummies with reporter-year and counterparty-year effects.

    Always carries the three core group columns; each exclusion bucket
    present among the reporters adds a nuisance column.
    """
    frame, inst = _base_frame(panel, distances, groups, instrument)
    core, buckets = _group_order(CORE_GROUPS, set(frame["group"]))
    names, cols = [], []
    for g in core + buckets:
        names.append(f"ln_dist_x_{g}")
        cols.append(np.where(frame["group"] == g, frame["ln_dist"], 0.0))
    X = np.column_stack(cols)
    layout = layout_from_frame(frame, [REPORTER_YEAR, COUNTERPARTY_YEAR])
    return DesignSpec(
        frame=frame,
        names=names,
        X=X,
        fixed_effects=layout,
        spec=BASELINE,
        instrument=inst,
        nuisance=[f"ln_dist_x_{g}" for g in buckets],
    )


def build_timevarying_design(
    panel: Panel,
    distances: DistanceTable,
    groups: GroupAssignment,
    base_year: int = 2007,
    *,
    include_row: bool = False,
    instrument: Instrument | str | None = None,
) -> DesignSpec:
    """ln(distance) x year x group interactions relative to ``base_year``, plus pair effects.

    Groups are ASEAN and OECD (and ROW when ``include_row``); exclusion
    buckets get their own nuisance interactions.
    """
    frame, inst = _base_frame(panel, distances, groups, instrument)
    years = sorted(set(frame["year"]))
    if len(years) < 2:
        raise SingleYearPanel(f"time-varying design needs at least two years, got {years}")
    if base_year not in years:
        raise InputError(f"base year {base_year} not in panel years {years}")
    core = (ASEAN, OECD, ROW) if include_row else (ASEAN, OECD)
    core, buckets = _group_order(core, set(frame["group"]))
    names, cols, nuisance = [], [], []
    year = frame["year"].to_numpy()
    group = frame["group"].to_numpy()
    lnd = frame["ln_dist"].to_numpy()
    for g in core + buckets:
        for t in years:
            if t == base_year:
                continue
            name = f"ln_dist_x_{t}_x_{g}"
            names.append(name)
            cols.append(np.where((year == t) & (group == g), lnd, 0.0))
            if g in buckets:
                nuisance.append(name)
    layout = layout_from_frame(frame, [REPORTER_YEAR, COUNTERPARTY_YEAR, PAIR])
    return DesignSpec(
        frame=frame,
        names=names,
        X=np.column_stack(cols),
        fixed_effects=layout,
        spec=TIMEVARYING,
        instrument=inst,
        base_year=base_year,
        nuisance=nuisance,
    )


def detect_collinear(design: DesignSpec, tolerance: float = 1e-8, demean_tol: float = 1e-12) -> DesignSpec:
    """Drop regressors that the fixed effects (or earlier regressors) already span.

    A column goes when its norm after absorbing the fixed effects, and
    after projecting out the previously retained columns, falls below
    ``tolerance`` times its raw norm. Dropped names are appended to
    ``collinearity_report``.
    """
    if not design.names:
        raise AllColumnsDropped("design has no regressors")
    Xt = absorb_fixed_effects(design.X, None, design.fixed_effects, tol=demean_tol, max_iter=100000)
    drop, basis = [], []
    for k, name in enumerate(design.names):
        raw = float(np.linalg.norm(design.X[:, k]))
        v = Xt[:, k].copy()
        if basis:
            Q = np.column_stack(basis)
            v -= Q @ (Q.T @ v)
            v -= Q @ (Q.T @ v)
        resid = float(np.linalg.norm(v))
        if raw == 0.0 or resid < tolerance * raw:
            drop.append(name)
            continue
        basis.append(v / resid)
    if len(drop) == len(design.names):
        raise AllColumnsDropped(f"every regressor is spanned by the fixed effects: {drop}")
    return design.drop_columns(drop) if drop else design
