"""Allocation shares, top destinations and residency-to-nationality restatement diffs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import pandas as pd

from .errors import YearAbsent
from .panel import ASEAN, ESTIMABLE, OECD, ROW, GroupAssignment, Instrument, Panel

HEURISTIC = "heuristic"


def _slice_values(panel: Panel, year: int, instrument: Instrument | str | None) -> pd.DataFrame:
    """Observed rows for one year; ``instrument=None`` sums debt and equity per pair."""
    if instrument is not None:
        return panel.select(year=year, instrument=instrument)
    f = panel.select(year=year)
    f = f[f["instrument"].isin([i.value for i in ESTIMABLE])]
    out = f.groupby(["reporter", "counterparty"], as_index=False, sort=True)["value"].sum()
    out["year"] = year
    out["instrument"] = "Debt+Equity"
    return out


def allocation_shares(
    panel: Panel,
    groups: GroupAssignment,
    year: int,
    instrument: Instrument | str | None,
    reporters: Iterable[str] | None = None,
) -> pd.DataFrame:
    """Share of each reporter's holdings placed in OECD, ASEAN and ROW destinations.

    Destinations are classified by their natural membership. Reporters
    whose slice total is zero get NaN shares and ``defined=False``.
    ``instrument=None`` pools debt and equity.
    """
    f = _slice_values(panel, year, instrument)
    if reporters is not None:
        f = f[f["reporter"].isin(set(reporters))]
    label = Instrument.parse(instrument).value if instrument is not None else "Debt+Equity"
    f = f.assign(dest=[groups.counterparty_group(c) for c in f["counterparty"]])
    rows = []
    for reporter, part in f.groupby("reporter", sort=True):
        total = math.fsum(part["value"])
        sums = {g: math.fsum(part.loc[part["dest"] == g, "value"]) for g in (OECD, ASEAN, ROW)}
        if total > 0:
            shares = [sums[OECD] / total, sums[ASEAN] / total, sums[ROW] / total]
        else:
            shares = [math.nan] * 3
        rows.append((reporter, year, label, total, *shares, total > 0))
    return pd.DataFrame(
        rows,
        columns=["reporter", "year", "instrument", "total", "share_oecd", "share_asean", "share_row", "defined"],
    )


def top_destinations(
    panel: Panel,
    year: int,
    instrument: Instrument | str | None,
    k: int = 10,
    reporters: Iterable[str] | None = None,
) -> pd.DataFrame:
    """Counterparties ranked by holdings summed over reporters.

    Ties are broken by country code. ``share`` is each destination's
    fraction of the whole slice (all destinations, not only the top ``k``).
    """
    f = _slice_values(panel, year, instrument)
    if reporters is not None:
        f = f[f["reporter"].isin(set(reporters))]
    sums = {c: math.fsum(part["value"]) for c, part in f.groupby("counterparty", sort=True)}
    total = math.fsum(sums.values())
    ranked = sorted(sums.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    rows = [
        (rank, c, v, v / total if total > 0 else math.nan)
        for rank, (c, v) in enumerate(ranked, start=1)
    ]
    return pd.DataFrame(rows, columns=["rank", "counterparty", "value_usd_mn", "share"])


def destination_edges(
    panel: Panel,
    year: int,
    instrument: Instrument | str | None,
    k: int = 10,
    reporters: Iterable[str] | None = None,
) -> pd.DataFrame:
    """Network-chart edge list: every reporter's nonzero holding in the top-``k`` destinations."""
    top = top_destinations(panel, year, instrument, k, reporters)
    f = _slice_values(panel, year, instrument)
    if reporters is not None:
        f = f[f["reporter"].isin(set(reporters))]
    f = f[f["counterparty"].isin(set(top["counterparty"])) & (f["value"] > 0)]
    f = f.sort_values(["reporter", "counterparty"], kind="mergesort")
    return pd.DataFrame(
        {
            "source": f["reporter"].to_numpy(),
            "destination": f["counterparty"].to_numpy(),
            "value_usd_mn": f["value"].to_numpy(),
        }
    )


@dataclass
class DiffRanking:
    """Nationality-minus-residency differences.

    ``full`` holds every key of the union (absent values count as 0);
    ``ranking`` keeps, per unit (reporter or destination), the ``k``
    largest nonzero differences by absolute size with the sign retained.
    """

    full: pd.DataFrame
    ranking: dict[str, list[tuple[str, float]]]
    year: int
    k: int
    by: str = "reporter"

    def diffs_for(self, unit: str) -> dict[str, float]:
        other = "counterparty" if self.by == "reporter" else "reporter"
        part = self.full[self.full[self.by] == unit]
        return dict(zip(part[other], part["diff"]))

    def table(self) -> pd.DataFrame:
        rows = []
        for unit in sorted(self.ranking):
            for other, d in self.ranking[unit]:
                r, c = (unit, other) if self.by == "reporter" else (other, unit)
                rows.append((r, c, d))
        return pd.DataFrame(rows, columns=["reporter", "counterparty", "diff_usd_mn"])


def restatement_diff(
    residency: Panel,
    nationality: Panel,
    year: int,
    k: int = 10,
    *,
    instrument: Instrument | str | None = None,
    by: str = "reporter",
) -> DiffRanking:
    """Top-``k`` changes (nationality minus residency) for every reporter.

    ``instrument=None`` compares debt plus equity; ``by="counterparty"``
    ranks changes in investment *into* each destination instead.
    """
    if by not in ("reporter", "counterparty"):
        raise ValueError("by must be 'reporter' or 'counterparty'")
    if year not in residency.years and year not in nationality.years:
        raise YearAbsent(year)
    res = _slice_values(residency, year, instrument)[["reporter", "counterparty", "value"]]
    nat = _slice_values(nationality, year, instrument)[["reporter", "counterparty", "value"]]
    full = res.merge(nat, on=["reporter", "counterparty"], how="outer", suffixes=("_res", "_nat"))
    full = full.fillna({"value_res": 0.0, "value_nat": 0.0})
    full = full.rename(columns={"value_res": "residency", "value_nat": "nationality"})
    full["diff"] = full["nationality"] - full["residency"]
    full = full.sort_values(["reporter", "counterparty"], kind="mergesort").reset_index(drop=True)

    other = "counterparty" if by == "reporter" else "reporter"
    ranking = {}
    for unit, part in full.groupby(by, sort=True):
        items = [(c, float(d)) for c, d in zip(part[other], part["diff"]) if d != 0.0]
        items.sort(key=lambda cd: (-abs(cd[1]), cd[0]))
        ranking[unit] = items[:k]
    return DiffRanking(full=full, ranking=ranking, year=year, k=k, by=by)


@dataclass(frozen=True)
class Attribution:
    target: str
    haven_drops: dict[str, float]
    total_drop: float
    target_rise: float
    attributed: float
    residual: float
    trail: str
    label: str = HEURISTIC


@dataclass
class PassthroughEstimate:
    attributions: list[Attribution] = field(default_factory=list)
    label: str = HEURISTIC

    @property
    def total(self) -> float:
        return math.fsum(a.attributed for a in self.attributions)

    def __getitem__(self, target: str) -> Attribution:
        for a in self.attributions:
            if a.target == target:
                return a
        raise KeyError(target)


def _fmt(x: float) -> str:
    return f"{x:g}"


def passthrough_estimate(
    diffs: Mapping[str, float] | DiffRanking,
    hypothesis: Sequence[tuple],
    unit: str | None = None,
) -> PassthroughEstimate:
    """Back-of-envelope attribution of haven drops to target rises.

    ``hypothesis`` lists ``(haven, target)`` or ``(haven, target,
    fraction)``: the given fraction of the haven's drop is assumed to be
    holdings of target-country issuers. For each target the attribution is
    ``min(sum of assumed drops, target rise)``; the residual ``rise -
    drops`` is what the havens cannot explain. Always labelled heuristic.
    """
    if isinstance(diffs, DiffRanking):
        if unit is None:
            raise ValueError("unit is required when passing a DiffRanking")
        diffs = diffs.diffs_for(unit)
    per_target: dict[str, dict[str, float]] = {}
    for entry in hypothesis:
        haven, target = entry[0], entry[1]
        fraction = float(entry[2]) if len(entry) > 2 else 1.0
        drop = max(-float(diffs.get(haven, 0.0)), 0.0) * fraction
        per_target.setdefault(target, {})
        per_target[target][haven] = per_target[target].get(haven, 0.0) + drop

    out = PassthroughEstimate()
    for target, drops in per_target.items():
        total_drop = math.fsum(drops.values())
        rise = max(float(diffs.get(target, 0.0)), 0.0)
        residual = rise - total_drop
        terms = " - ".join(_fmt(v) for v in drops.values())
        trail = f"{_fmt(rise)} - {terms} = {_fmt(residual)}" if drops else f"{_fmt(rise)} = {_fmt(residual)}"
        out.attributions.append(
            Attribution(
                target=target,
                haven_drops=dict(drops),
                total_drop=total_drop,
                target_rise=rise,
                attributed=min(total_drop, rise),
                residual=residual,
                trail=trail,
            )
        )
    return out
