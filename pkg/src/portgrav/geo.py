"""Great-circle distances between countries and distance-bin histograms."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import InputError, MalformedRow, MissingCity, MissingDistance
from .panel import ASEAN, GroupAssignment, Instrument, Panel, is_country_code

EARTH_RADIUS_KM = 6371.0
HALF_CIRCUMFERENCE_KM = math.pi * EARTH_RADIUS_KM


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 < self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} outside (-180, 180]")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance on a sphere of radius 6371 km.

    Symmetric bit-for-bit: swapping the arguments only flips the sign of
    the differences, which the squared sines discard exactly.
    """
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon) - math.radians(a.lon)
    h = math.sin(dphi / 2) ** 2 + (math.cos(phi1) * math.cos(phi2)) * math.sin(dlam / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


class DistanceTable:
    """Pairwise distances in km, looked up in either orientation."""

    def __init__(self, entries: Mapping[tuple[str, str], float], computed: bool = False):
        self._d: dict[tuple[str, str], float] = {}
        for (i, j), km in entries.items():
            if i == j:
                continue
            km = float(km)
            if not math.isfinite(km) or km <= 0:
                raise InputError(f"distance {i}-{j} must be positive, got {km}")
            self._d[(i, j)] = km
        for (i, j), km in list(self._d.items()):
            self._d.setdefault((j, i), km)
        self.computed = computed

    def __len__(self) -> int:
        return len(self.pairs())

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return tuple(pair) in self._d

    def get(self, i: str, j: str) -> float:
        try:
            return self._d[(i, j)]
        except KeyError:
            raise MissingDistance((i, j)) from None

    def pairs(self) -> list[tuple[str, str]]:
        return sorted({(min(i, j), max(i, j)) for i, j in self._d})

    def countries(self) -> list[str]:
        return sorted({i for i, _ in self._d})

    def lookup(self, reporters: Iterable[str], counterparties: Iterable[str]) -> np.ndarray:
        return np.array([self.get(i, j) for i, j in zip(reporters, counterparties)], dtype=np.float64)

    def scaled(self, factor: float) -> DistanceTable:
        return DistanceTable({k: v * factor for k, v in self._d.items()}, computed=self.computed)

    def to_frame(self) -> pd.DataFrame:
        rows = [(i, j, self._d[(i, j)]) for i, j in sorted(self._d)]
        return pd.DataFrame(rows, columns=["reporter", "counterparty", "dist_km"])

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["reporter", "counterparty", "dist_km"])
            for i, j in sorted(self._d):
                w.writerow([i, j, repr(self._d[(i, j)])])


def build_distance_table(
    cities: Mapping[str, GeoPoint], countries: Iterable[str] | None = None
) -> DistanceTable:
    """Distances between the largest cities of every pair of countries.

    ``countries`` lists the codes that must be covered (e.g. every country in
    a panel); defaults to all keys of ``cities``.
    """
    codes = sorted(countries) if countries is not None else sorted(cities)
    for code in codes:
        if code not in cities:
            raise MissingCity(code)
    entries = {}
    for a in range(len(codes)):
        for b in range(a + 1, len(codes)):
            i, j = codes[a], codes[b]
            km = haversine_km(cities[i], cities[j])
            if km <= 0:
                raise InputError(f"{i} and {j} share the same city coordinates")
            entries[(i, j)] = km
    return DistanceTable(entries, computed=True)


def read_cities(path: str | os.PathLike) -> dict[str, GeoPoint]:
    """Read a ``country,lat,lon`` file."""
    out = {}
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"country", "lat", "lon"} <= set(reader.fieldnames):
            raise MalformedRow(1, "city file needs columns country,lat,lon")
        for row in reader:
            code = row["country"].strip()
            if not is_country_code(code):
                raise MalformedRow(reader.line_num, f"bad country code {code!r}")
            try:
                out[code] = GeoPoint(float(row["lat"]), float(row["lon"]))
            except ValueError as exc:
                raise MalformedRow(reader.line_num, str(exc)) from None
    return out


def write_cities(path: str | os.PathLike, cities: Mapping[str, GeoPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "lat", "lon"])
        for code in sorted(cities):
            w.writerow([code, repr(cities[code].lat), repr(cities[code].lon)])


def read_distances(path: str | os.PathLike) -> DistanceTable:
    """Load a precomputed ``reporter,counterparty,dist_km`` file as given."""
    entries = {}
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"reporter", "counterparty", "dist_km"} <= set(reader.fieldnames):
            raise MalformedRow(1, "distance file needs columns reporter,counterparty,dist_km")
        for row in reader:
            try:
                entries[(row["reporter"].strip(), row["counterparty"].strip())] = float(row["dist_km"])
            except ValueError:
                raise MalformedRow(reader.line_num, f"bad distance {row['dist_km']!r}") from None
    return DistanceTable(entries, computed=False)


def bin_index(km: float, bin_width_km: float = 2000.0, n_bins: int = 10) -> int:
    """Left-closed bins ``[b*w, (b+1)*w)``; anything past the last edge clamps into it."""
    return min(int(km // bin_width_km), n_bins - 1)


@dataclass(frozen=True)
class Tagging:
    """Partition of counterparties into labelled colour groups."""

    mapping: Mapping[str, str] = field(default_factory=dict)
    default: str = "Other"

    def tag(self, code: str) -> str:
        return self.mapping.get(code, self.default)

    @property
    def labels(self) -> list[str]:
        return list(dict.fromkeys(list(self.mapping.values()) + [self.default]))


def default_tagging(groups: GroupAssignment | None = None) -> Tagging:
    """US, China, ASEAN destinations and everything else."""
    mapping = {"USA": "US", "CHN": "China"}
    if groups is not None:
        for code, g in sorted(groups.base.items()):
            if g == ASEAN and code not in mapping:
                mapping[code] = "ASEAN"
    return Tagging(mapping)


@dataclass
class Histogram:
    """Summed holdings by (group, year, instrument, bin, tag).

    ``exact`` keeps each cell as an exact rational so that mass
    conservation can be checked without rounding; ``table`` carries the
    same cells rounded to float USD million.
    """

    table: pd.DataFrame
    exact: dict[tuple, Fraction]
    bin_width_km: float
    n_bins: int

    def total(self) -> Fraction:
        return sum(self.exact.values(), Fraction(0))

    def slices(self) -> list[tuple[str, int, str]]:
        return sorted({(g, y, i) for g, y, i, _, _ in self.exact})


def bin_holdings(
    panel: Panel,
    distances: DistanceTable,
    groups: GroupAssignment | None = None,
    bin_width_km: float = 2000.0,
    n_bins: int = 10,
    tagging: Tagging | None = None,
    *,
    year: int | None = None,
    instrument: Instrument | str | None = None,
) -> Histogram:
    """Histogram of holdings over distance bins for every reporter group, year and instrument.

    Reporters are grouped with ``groups.reporter_group`` (all under ``"ALL"``
    when no groups are given). Zero holdings need no distance.
    """
    if bin_width_km <= 0 or n_bins < 1:
        raise ValueError("bin_width_km must be positive and n_bins >= 1")
    tagging = tagging or default_tagging(groups)
    labels = tagging.labels
    frame = panel.select(year=year, instrument=instrument)

    exact: dict[tuple, Fraction] = {}
    slices = set()
    for r, c, y, inst, v in frame[["reporter", "counterparty", "year", "instrument", "value"]].itertuples(index=False):
        g = groups.reporter_group(r) if groups is not None else "ALL"
        s = (g, int(y), inst)
        slices.add(s)
        if v == 0.0:
            continue
        b = bin_index(distances.get(r, c), bin_width_km, n_bins)
        k = s + (b, tagging.tag(c))
        exact[k] = exact.get(k, Fraction(0)) + Fraction(v)

    rows = []
    for g, y, inst in sorted(slices):
        for b in range(n_bins):
            for t in labels:
                k = (g, y, inst, b, t)
                exact.setdefault(k, Fraction(0))
                rows.append((g, y, inst, b, b * bin_width_km, (b + 1) * bin_width_km, t, float(exact[k])))
    table = pd.DataFrame(
        rows, columns=["group", "year", "instrument", "bin", "km_lo", "km_hi", "tag", "usd_mn"]
    )
    return Histogram(table=table, exact=exact, bin_width_km=bin_width_km, n_bins=n_bins)
