"""Bilateral portfolio panels: data model, ingestion, zero filling, groups."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import os
import re
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Iterator

import numpy as np
import pandas as pd

from .errors import (
    DuplicateKey,
    InputError,
    MalformedRow,
    NegativeValue,
    UnassignedReporter,
    UniverseSmallerThanPanel,
    UnknownCountry,
)

log = logging.getLogger(__name__)

ASEAN = "ASEAN"
OECD = "OECD"
ROW = "ROW"
EXCLUDED = "EXCLUDED"
CORE_GROUPS = (ASEAN, OECD, ROW)

SINGAPORE = "SGP"

# full-scale CPIS restated coverage; exceeding it is only worth a warning
MAX_REPORTERS = 86
MAX_COUNTERPARTIES = 241

KEY = ["reporter", "counterparty", "year", "instrument"]
DEFAULT_WINDOW = (2007, 2017)

_CODE_RE = re.compile(r"^[A-Z]{3}$")
_DECIMAL_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


class Instrument(str, Enum):
    DEBT = "Debt"
    EQUITY = "Equity"
    TOTAL = "Total"

    @classmethod
    def parse(cls, text: str | Instrument) -> Instrument:
        if isinstance(text, Instrument):
            return text
        for member in cls:
            if text.strip().lower() == member.value.lower():
                return member
        raise ValueError(f"unknown instrument {text!r}")


ESTIMABLE = (Instrument.DEBT, Instrument.EQUITY)


class Basis(str, Enum):
    RESIDENCY = "ResidencyRestated"
    NATIONALITY = "NationalityRestated"
    CPIS = "ResidencyCPIS"

    @classmethod
    def parse(cls, text: str | Basis) -> Basis:
        if isinstance(text, Basis):
            return text
        aliases = {"residency": cls.RESIDENCY, "nationality": cls.NATIONALITY, "cpis": cls.CPIS}
        low = text.strip().lower()
        if low in aliases:
            return aliases[low]
        for member in cls:
            if low == member.value.lower():
                return member
        raise ValueError(f"unknown basis {text!r}")


def is_country_code(code: str) -> bool:
    return bool(_CODE_RE.match(code))


@dataclass(frozen=True)
class Observation:
    reporter: str
    counterparty: str
    year: int
    instrument: Instrument
    basis: Basis
    value: float

    @property
    def key(self) -> tuple[str, str, int, Instrument]:
        return (self.reporter, self.counterparty, self.year, self.instrument)


@dataclass(frozen=True)
class ColumnMap:
    """Names of the source columns holding each canonical field."""

    year: str = "year"
    reporter: str = "reporter"
    counterparty: str = "counterparty"
    instrument: str = "instrument"
    value: str = "value_usd_mn"


@dataclass(frozen=True)
class IngestReport:
    rows: int = 0
    observations: int = 0
    missing: int = 0
    confidential: int = 0
    negative_placeholders: int = 0
    out_of_window: int = 0


def _empty_keys() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "reporter": pd.Series([], dtype=object),
            "counterparty": pd.Series([], dtype=object),
            "year": pd.Series([], dtype=np.int64),
            "instrument": pd.Series([], dtype=object),
        }
    )


def _canonical(frame: pd.DataFrame, with_value: bool) -> pd.DataFrame:
    cols = KEY + (["value"] if with_value else [])
    out = frame[cols].copy()
    out["year"] = out["year"].astype(np.int64)
    out["instrument"] = [Instrument.parse(v).value for v in out["instrument"]]
    if with_value:
        out["value"] = out["value"].astype(np.float64)
    out = out.sort_values(["year", "reporter", "counterparty", "instrument"], kind="mergesort")
    return out.reset_index(drop=True)


class Panel:
    """Validated, immutable collection of bilateral holdings for one basis.

    Observed values live in :attr:`frame` (columns ``reporter, counterparty,
    year, instrument, value``; zeros kept). Keys that the source listed with
    no value are kept separately in :attr:`missing` so that "not reported"
    never silently becomes 0.
    """

    def __init__(
        self,
        frame: pd.DataFrame,
        basis: Basis | str,
        missing: pd.DataFrame | None = None,
        report: IngestReport | None = None,
    ):
        self._basis = Basis.parse(basis)
        self._frame = _canonical(frame, with_value=True)
        self._missing = _canonical(missing if missing is not None else _empty_keys(), with_value=False)
        self.report = report or IngestReport(observations=len(self._frame), missing=len(self._missing))
        self._validate()

    def _validate(self) -> None:
        f = self._frame
        if (f["value"] < 0).any() or f["value"].isna().any():
            raise InputError("panel values must be finite and non-negative")
        if (f["reporter"] == f["counterparty"]).any():
            raise InputError("panel contains reporter == counterparty rows")
        both = pd.concat([f[KEY], self._missing[KEY]], ignore_index=True)
        dup = both.duplicated(KEY)
        if dup.any():
            row = both[dup].iloc[0]
            raise DuplicateKey(tuple(row[KEY]))
        for code in set(both["reporter"]) | set(both["counterparty"]):
            if not isinstance(code, str) or not is_country_code(code):
                raise UnknownCountry(str(code))
        if len(self.reporters) > MAX_REPORTERS or len(self.counterparties) > MAX_COUNTERPARTIES:
            log.warning(
                "panel has %d reporters / %d counterparties, above the %d / %d of the full CPIS sample",
                len(self.reporters), len(self.counterparties), MAX_REPORTERS, MAX_COUNTERPARTIES,
            )

    @property
    def basis(self) -> Basis:
        return self._basis

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame.copy()

    @property
    def missing(self) -> pd.DataFrame:
        return self._missing.copy()

    @property
    def reporters(self) -> frozenset[str]:
        return frozenset(self._frame["reporter"]) | frozenset(self._missing["reporter"])

    @property
    def counterparties(self) -> frozenset[str]:
        return frozenset(self._frame["counterparty"]) | frozenset(self._missing["counterparty"])

    @property
    def years(self) -> list[int]:
        return sorted({int(y) for y in self._frame["year"]} | {int(y) for y in self._missing["year"]})

    @property
    def instruments(self) -> list[Instrument]:
        found = set(self._frame["instrument"]) | set(self._missing["instrument"])
        return [i for i in Instrument if i.value in found]

    def __len__(self) -> int:
        return len(self._frame)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Panel):
            return NotImplemented
        return (
            self._basis == other._basis
            and self._frame.equals(other._frame)
            and self._missing.equals(other._missing)
        )

    def __repr__(self) -> str:
        return (
            f"Panel(basis={self._basis.value}, observations={len(self._frame)}, "
            f"missing={len(self._missing)}, reporters={len(self.reporters)})"
        )

    def observations(self) -> Iterator[Observation]:
        for r, c, y, i, v in self._frame[KEY + ["value"]].itertuples(index=False):
            yield Observation(r, c, int(y), Instrument(i), self._basis, float(v))

    def keys(self) -> set[tuple]:
        return {(r, c, int(y), Instrument(i)) for r, c, y, i in self._frame[KEY].itertuples(index=False)}

    def missing_keys(self) -> set[tuple]:
        return {(r, c, int(y), Instrument(i)) for r, c, y, i in self._missing[KEY].itertuples(index=False)}

    def select(
        self,
        *,
        year: int | None = None,
        instrument: Instrument | str | None = None,
        reporters: Iterable[str] | None = None,
    ) -> pd.DataFrame:
        """Observed rows restricted to a year / instrument / reporter set."""
        f = self._frame
        mask = np.ones(len(f), dtype=bool)
        if year is not None:
            mask &= (f["year"] == year).to_numpy()
        if instrument is not None:
            mask &= (f["instrument"] == Instrument.parse(instrument).value).to_numpy()
        if reporters is not None:
            mask &= f["reporter"].isin(set(reporters)).to_numpy()
        return f[mask].reset_index(drop=True)

    def filter(self, *, exclude_reporters: Iterable[str] = ()) -> Panel:
        drop = set(exclude_reporters)
        f = self._frame[~self._frame["reporter"].isin(drop)]
        m = self._missing[~self._missing["reporter"].isin(drop)]
        return Panel(f, self._basis, m)

    def to_csv(self, dest: str | os.PathLike | IO[str], delimiter: str = ",") -> None:
        """Write the canonical ingestion format; recorded-missing keys get an empty value."""
        rows = [
            (int(y), r, c, i, repr(float(v)))
            for r, c, y, i, v in self._frame[KEY + ["value"]].itertuples(index=False)
        ]
        rows += [(int(y), r, c, i, "") for r, c, y, i in self._missing[KEY].itertuples(index=False)]
        rows.sort(key=lambda t: (t[0], t[1], t[2], t[3]))
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                _write_rows(fh, rows, delimiter)
        else:
            _write_rows(dest, rows, delimiter)


def _write_rows(fh: IO[str], rows: list, delimiter: str) -> None:
    w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    w.writerow(["year", "reporter", "counterparty", "instrument", "value_usd_mn"])
    w.writerows(rows)


def _open_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", newline="", encoding="utf-8-sig"), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8-sig"), newline=""), False
    if isinstance(source, io.TextIOBase):
        return source, False
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8-sig", newline=""), False


def ingest_panel(
    source,
    basis: Basis | str,
    schema: ColumnMap | None = None,
    *,
    delimiter: str = ",",
    window: tuple[int, int] | None = DEFAULT_WINDOW,
    known_countries: Iterable[str] | None = None,
    confidential_markers: Iterable[str] = ("C",),
    negative_as_missing: bool = False,
) -> Panel:
    """Parse a delimiter-separated holdings table into a :class:`Panel`.

    Parameters
    ----------
    source : path, bytes, text stream or binary stream
        UTF-8 text with a header row.
    basis : Basis or str
        Attribution basis of every row in the source.
    schema : ColumnMap, optional
        Source column names; defaults to the canonical
        ``year,reporter,counterparty,instrument,value_usd_mn``.
    window : (first, last) or None
        Inclusive year window. Rows outside it are skipped and counted.
    known_countries : iterable of str, optional
        When given, any code outside this set raises :class:`UnknownCountry`.
    confidential_markers : iterable of str
        Value cells treated as recorded-missing (raw CPIS suppressions).
    negative_as_missing : bool
        Treat negative values as suppression placeholders instead of raising
        :class:`NegativeValue`.

    Blank value cells are recorded as missing, never as zero.
    """
    schema = schema or ColumnMap()
    basis = Basis.parse(basis)
    known = set(known_countries) if known_countries is not None else None
    markers = {m.strip() for m in confidential_markers}

    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(1, "empty input, header row expected") from None
        wanted = {
            "year": schema.year,
            "reporter": schema.reporter,
            "counterparty": schema.counterparty,
            "instrument": schema.instrument,
            "value": schema.value,
        }
        pos = {}
        for canon, name in wanted.items():
            if name not in header:
                raise MalformedRow(1, f"missing required column {name!r}")
            pos[canon] = header.index(name)

        seen: set[tuple] = set()
        obs: list[tuple] = []
        missing: list[tuple] = []
        counts = dict(rows=0, confidential=0, negative_placeholders=0, out_of_window=0)

        for fields in reader:
            line = reader.line_num
            if not fields or all(not f.strip() for f in fields):
                continue
            counts["rows"] += 1
            if len(fields) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, got {len(fields)}")

            try:
                year = int(fields[pos["year"]].strip())
            except ValueError:
                raise MalformedRow(line, f"bad year {fields[pos['year']]!r}") from None
            reporter = fields[pos["reporter"]].strip()
            counterparty = fields[pos["counterparty"]].strip()
            for code in (reporter, counterparty):
                if not is_country_code(code) or (known is not None and code not in known):
                    raise UnknownCountry(code, line)
            if reporter == counterparty:
                raise MalformedRow(line, f"reporter equals counterparty ({reporter})")
            try:
                instrument = Instrument.parse(fields[pos["instrument"]])
            except ValueError as exc:
                raise MalformedRow(line, str(exc)) from None

            key = (reporter, counterparty, year, instrument.value)
            if key in seen:
                raise DuplicateKey(key, line)
            seen.add(key)

            if window is not None and not (window[0] <= year <= window[1]):
                counts["out_of_window"] += 1
                continue

            raw = fields[pos["value"]].strip()
            if raw == "":
                missing.append(key)
                continue
            if raw in markers:
                counts["confidential"] += 1
                missing.append(key)
                continue
            if not _DECIMAL_RE.match(raw):
                raise MalformedRow(line, f"value {raw!r} is not a plain decimal")
            value = float(raw)
            if value < 0:
                if negative_as_missing:
                    counts["negative_placeholders"] += 1
                    missing.append(key)
                    continue
                raise NegativeValue(line, value)
            obs.append(key + (value,))
    finally:
        if owned:
            fh.close()

    if counts["confidential"] or counts["negative_placeholders"]:
        log.info(
            "treated %d confidential and %d negative-placeholder cells as missing",
            counts["confidential"], counts["negative_placeholders"],
        )
    if counts["out_of_window"]:
        log.info("skipped %d rows outside the %s year window", counts["out_of_window"], window)

    frame = pd.DataFrame(obs, columns=KEY + ["value"]) if obs else _empty_keys().assign(value=np.float64(0))[:0]
    miss = pd.DataFrame(missing, columns=KEY) if missing else _empty_keys()
    report = IngestReport(observations=len(obs), missing=len(missing), **counts)
    return Panel(frame, basis, miss, report)


def full_universe(panel: Panel, instruments: Iterable[Instrument | str] | None = None) -> set[tuple]:
    """All (reporter, counterparty, year, instrument) combinations spanned by the panel.

    Counterparties range over every country seen on either side; self pairs are excluded.
    """
    if instruments is None:
        instruments = [i for i in panel.instruments if i in ESTIMABLE]
    instruments = [Instrument.parse(i) for i in instruments]
    partners = sorted(panel.counterparties | panel.reporters)
    return {
        (r, c, y, i)
        for r, c, y, i in itertools.product(sorted(panel.reporters), partners, panel.years, instruments)
        if r != c
    }


def merge_zero_fill(panel: Panel, universe: Iterable[tuple], missing_as_zero: bool = False) -> Panel:
    """Complete ``panel`` over ``universe`` with explicit zero holdings.

    Keys recorded as missing stay missing unless ``missing_as_zero``.
    """
    universe = {(r, c, int(y), Instrument.parse(i)) for r, c, y, i in universe}
    present = panel.keys()
    outside = present - universe
    if outside:
        raise UniverseSmallerThanPanel(sorted(outside, key=str))
    recorded_missing = panel.missing_keys()

    new_zero = universe - present
    if not missing_as_zero:
        new_zero -= recorded_missing
    still_missing = recorded_missing - new_zero

    zeros = pd.DataFrame(
        [(r, c, y, i.value, 0.0) for r, c, y, i in sorted(new_zero, key=str)],
        columns=KEY + ["value"],
    )
    frame = pd.concat([panel.frame, zeros], ignore_index=True) if len(zeros) else panel.frame
    miss = pd.DataFrame([(r, c, y, i.value) for r, c, y, i in still_missing], columns=KEY)
    if miss.empty:
        miss = _empty_keys()
    return Panel(frame, panel.basis, miss)


@dataclass(frozen=True)
class GroupAssignment:
    """Country-group map used for the distance interactions.

    ``base`` is the membership as supplied (used to classify destinations).
    ``groups`` is the reporter map after exclusions: excluded reporters sit
    in ``bucket``, which gets its own nuisance regressor and is never
    reported as a headline coefficient.
    """

    base: dict[str, str]
    groups: dict[str, str]
    exclude_singapore: bool = False
    excluded: tuple[str, ...] = ()
    bucket: str = EXCLUDED

    def reporter_group(self, code: str) -> str:
        try:
            return self.groups[code]
        except KeyError:
            raise UnassignedReporter(code) from None

    def counterparty_group(self, code: str) -> str:
        group = self.base.get(code, ROW)
        return group if group in CORE_GROUPS else ROW

    def members(self, group: str) -> list[str]:
        return sorted(c for c, g in self.groups.items() if g == group)

    @property
    def labels(self) -> list[str]:
        """Reporter groups in regressor order: core groups first, then buckets."""
        present = set(self.groups.values())
        extra = sorted(present - set(CORE_GROUPS))
        return [g for g in CORE_GROUPS if g in present] + extra


def assign_groups(
    panel: Panel,
    membership: Iterable[tuple[str, str]],
    exclude_singapore: bool = False,
    *,
    exclude: Iterable[str] = (),
    bucket: str = EXCLUDED,
) -> GroupAssignment:
    """Build the group map and check every panel reporter is covered."""
    base: dict[str, str] = {}
    for code, group in membership:
        code, group = code.strip(), group.strip().upper()
        if not is_country_code(code):
            raise UnknownCountry(code)
        if group not in CORE_GROUPS and group != bucket:
            raise InputError(f"unknown group {group!r} for {code}")
        if code in base and base[code] != group:
            raise InputError(f"{code} assigned to both {base[code]} and {group}")
        base[code] = group

    for code in sorted(panel.reporters):
        if code not in base:
            raise UnassignedReporter(code)

    excluded = list(dict.fromkeys(exclude))
    if exclude_singapore and SINGAPORE not in excluded:
        excluded.append(SINGAPORE)
    groups = dict(base)
    for code in excluded:
        if code in groups:
            groups[code] = bucket
    return GroupAssignment(
        base=base,
        groups=groups,
        exclude_singapore=exclude_singapore,
        excluded=tuple(sorted(excluded)),
        bucket=bucket,
    )


def read_membership(path: str | os.PathLike) -> list[tuple[str, str]]:
    """Read a two-column ``country,group`` file."""
    out = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"country", "group"} <= set(reader.fieldnames):
            raise MalformedRow(1, "group file needs columns country,group")
        for row in reader:
            if not (row["country"] or "").strip():
                continue
            out.append((row["country"].strip(), row["group"].strip()))
    return out


def write_membership(path: str | os.PathLike, membership: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["country", "group"])
        w.writerows(sorted(membership))
