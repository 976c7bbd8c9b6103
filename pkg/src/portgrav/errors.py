"""Exception types raised across the toolkit.

Everything derived from :class:`InputError` signals bad or inconsistent
input and maps to CLI exit code 1. :class:`NotConverged` maps to exit code 2.
"""

from __future__ import annotations

from typing import Any


class GravityError(Exception):
    pass


class InputError(GravityError):
    pass


class MalformedRow(InputError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class DuplicateKey(InputError):
    def __init__(self, key: tuple, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}duplicate key {key}")


class NegativeValue(InputError):
    def __init__(self, line: int, value: float):
        self.line = line
        self.value = value
        super().__init__(f"line {line}: negative value {value!r}")


class UnknownCountry(InputError):
    def __init__(self, code: str, line: int | None = None):
        self.code = code
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}unknown country code {code!r}")


class UniverseSmallerThanPanel(InputError):
    def __init__(self, missing: list):
        self.missing = missing
        super().__init__(f"{len(missing)} panel keys are not in the universe, e.g. {missing[:3]}")


class UnassignedReporter(InputError):
    def __init__(self, code: str):
        self.code = code
        super().__init__(f"reporter {code} has no group assignment")


class MissingCity(InputError):
    def __init__(self, code: str):
        self.code = code
        super().__init__(f"no city coordinates for {code}")


class MissingDistance(InputError):
    def __init__(self, pair: tuple[str, str]):
        self.pair = pair
        super().__init__(f"no distance for pair {pair[0]}-{pair[1]}")


class SingleYearPanel(InputError):
    pass


class AllColumnsDropped(InputError):
    pass


class NoPositiveOutcome(InputError):
    pass


class SeparationDetected(InputError):
    def __init__(self, keys: list):
        self.keys = keys
        super().__init__(f"{len(keys)} observations are perfectly predicted zeros")


class YearAbsent(InputError):
    def __init__(self, year: int):
        self.year = year
        super().__init__(f"year {year} not present in either panel")


class TooFewClusters(InputError):
    pass


class SingularBread(InputError):
    pass


class NotConverged(GravityError):
    """Raised when an iterative routine hits its iteration cap.

    ``partial`` carries whatever the routine had computed so far (a
    :class:`~portgrav.estimator.FitResult` for the IRLS loop, the current
    array for demeaning).
    """

    def __init__(self, message: str, partial: Any = None):
        self.partial = partial
        super().__init__(message)
