"""Fixed-effect layouts and weighted alternating-projection demeaning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import NotConverged

REPORTER_YEAR = "reporter_year"
COUNTERPARTY_YEAR = "counterparty_year"
PAIR = "pair"
INTERCEPT = "intercept"


@dataclass(frozen=True, eq=False)
class FixedEffect:
    """One categorical dimension: an integer level code per observation."""

    name: str
    codes: np.ndarray
    labels: tuple

    @property
    def n_levels(self) -> int:
        return len(self.labels)

    @classmethod
    def from_keys(cls, name: str, keys: Sequence) -> FixedEffect:
        codes, uniques = pd.factorize(pd.Series(list(keys), dtype=object), sort=True)
        return cls(name, codes.astype(np.intp), tuple(uniques))

    def subset(self, mask: np.ndarray) -> FixedEffect:
        codes = self.codes[mask]
        used, new = np.unique(codes, return_inverse=True)
        return FixedEffect(self.name, new.astype(np.intp), tuple(self.labels[k] for k in used))

    def counts(self) -> np.ndarray:
        return np.bincount(self.codes, minlength=self.n_levels)


@dataclass(frozen=True, eq=False)
class FixedEffectLayout:
    dims: tuple[FixedEffect, ...]

    def __post_init__(self):
        for d in self.dims:
            if d.n_levels == 0:
                raise ValueError(f"fixed effect {d.name} has no levels")

    def __iter__(self):
        return iter(self.dims)

    def __len__(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def level_counts(self) -> dict[str, int]:
        return {d.name: d.n_levels for d in self.dims}

    def subset(self, mask: np.ndarray) -> FixedEffectLayout:
        return FixedEffectLayout(tuple(d.subset(mask) for d in self.dims))

    def effective(self, n_obs: int) -> FixedEffectLayout:
        """The layout actually absorbed: an intercept when there are no dimensions."""
        if self.dims:
            return self
        return FixedEffectLayout((FixedEffect(INTERCEPT, np.zeros(n_obs, dtype=np.intp), ("all",)),))


def layout_from_frame(frame: pd.DataFrame, names: Sequence[str]) -> FixedEffectLayout:
    keys = {
        REPORTER_YEAR: lambda f: zip(f["reporter"], f["year"]),
        COUNTERPARTY_YEAR: lambda f: zip(f["counterparty"], f["year"]),
        PAIR: lambda f: zip(f["reporter"], f["counterparty"]),
    }
    dims = []
    for name in names:
        if name not in keys:
            raise ValueError(f"unknown fixed effect {name!r}")
        dims.append(FixedEffect.from_keys(name, [tuple(k) for k in keys[name](frame)]))
    return FixedEffectLayout(tuple(dims))


def _weighted_means(x: np.ndarray, w: np.ndarray, fe: FixedEffect, wsum: np.ndarray) -> np.ndarray:
    out = np.empty((fe.n_levels, x.shape[1]))
    for j in range(x.shape[1]):
        out[:, j] = np.bincount(fe.codes, weights=w * x[:, j], minlength=fe.n_levels)
    return out / wsum[:, None]


def absorb_fixed_effects(
    columns: np.ndarray,
    weights: np.ndarray | None,
    layout: FixedEffectLayout,
    tol: float = 1e-10,
    max_iter: int = 10000,
    return_iterations: bool = False,
):
    """Weighted within-transformation of ``columns`` over every FE dimension.

    Cycles through the dimensions subtracting weighted group means until,
    over a full sweep, no group mean exceeds ``tol`` times the column's
    largest absolute value. A single dimension is demeaned exactly in one
    pass. The result equals the residual of a weighted least-squares
    projection on the full dummy set.

    Raises
    ------
    NotConverged
        After ``max_iter`` sweeps; ``partial`` holds the current array.
    """
    x = np.array(columns, dtype=np.float64, copy=True)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or not np.all(w > 0):
        raise ValueError("weights must be positive, one per observation")
    layout = layout.effective(n)
    for d in layout:
        if d.codes.shape != (n,):
            raise ValueError(f"fixed effect {d.name} does not match the column length")

    wsums = [np.bincount(d.codes, weights=w, minlength=d.n_levels) for d in layout]
    scale = np.max(np.abs(x), axis=0) if n else np.zeros(x.shape[1])
    scale[scale == 0] = 1.0

    def done(result, it):
        result = result[:, 0] if squeeze else result
        return (result, it) if return_iterations else result

    if len(layout) == 1:
        d = layout.dims[0]
        x -= _weighted_means(x, w, d, wsums[0])[d.codes]
        return done(x, 1)

    for it in range(1, max_iter + 1):
        worst = 0.0
        for d, ws in zip(layout, wsums):
            means = _weighted_means(x, w, d, ws)
            worst = max(worst, float(np.max(np.abs(means) / scale)))
            x -= means[d.codes]
        if worst < tol:
            return done(x, it)
    raise NotConverged(f"demeaning did not converge in {max_iter} sweeps", partial=x[:, 0] if squeeze else x)


def singleton_mask(layout: FixedEffectLayout) -> np.ndarray:
    """Observations surviving iterative removal of single-observation FE levels."""
    if not layout.dims:
        return np.ones(0, dtype=bool)
    n = layout.dims[0].codes.shape[0]
    keep = np.ones(n, dtype=bool)
    while True:
        changed = False
        for d in layout:
            counts = np.bincount(d.codes[keep], minlength=d.n_levels)
            lone = keep & (counts[d.codes] == 1)
            if lone.any():
                keep &= ~lone
                changed = True
        if not changed:
            return keep
