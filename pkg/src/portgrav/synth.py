"""Synthetic gravity panels with known elasticities, for validation runs."""

from __future__ import annotations

import itertools
import json
import math
import os
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .geo import DistanceTable, GeoPoint, build_distance_table, write_cities
from .panel import ASEAN, OECD, ROW, Basis, GroupAssignment, Panel, assign_groups, write_membership


@dataclass(frozen=True)
class DgpConfig:
    n_reporters: int = 50
    n_counterparties: int = 100
    years: tuple[int, ...] = (2007, 2008, 2009, 2010, 2011)
    true_beta: dict[str, float] = field(default_factory=lambda: {ASEAN: -1.0, OECD: -0.5, ROW: -0.8})
    fe_scales: dict[str, float] = field(default_factory=lambda: {"reporter_year": 0.5, "counterparty_year": 0.5})
    zero_inflation: float = 0.0
    seed: int = 0
    group_shares: tuple[float, float, float] = (0.2, 0.4, 0.4)
    mean_count: float = 2.0
    reference_km: float = 5000.0
    unit_usd_mn: float = 1.0
    instrument: str = "Debt"
    basis: str = "nationality"

    def __post_init__(self):
        if self.n_reporters < 2 or self.n_counterparties < 2:
            raise ValueError("need at least 2 reporters and 2 counterparties")
        if self.n_reporters > self.n_counterparties:
            raise ValueError("reporters are drawn from the counterparty list, so n_reporters <= n_counterparties")
        if not 0 <= self.zero_inflation < 1:
            raise ValueError("zero_inflation must lie in [0, 1)")
        if len(self.years) < 1:
            raise ValueError("need at least one year")


@dataclass
class SynthData:
    panel: Panel
    distances: DistanceTable
    groups: GroupAssignment
    membership: list[tuple[str, str]]
    cities: dict[str, GeoPoint]
    truth: dict

    def write(self, out_dir: str | os.PathLike) -> dict[str, Path]:
        """Write panel, cities, groups and truth in the CLI input formats."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "panel": out / "panel.csv",
            "cities": out / "cities.csv",
            "groups": out / "groups.csv",
            "truth": out / "truth.json",
        }
        self.panel.to_csv(paths["panel"])
        write_cities(paths["cities"], self.cities)
        write_membership(paths["groups"], self.membership)
        paths["truth"].write_text(json.dumps(self.truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def synthetic_codes(n: int) -> list[str]:
    letters = string.ascii_uppercase
    return ["".join(t) for t in itertools.islice(itertools.product(letters, repeat=3), n)]


def _uniform_sphere(rng: np.random.Generator, n: int) -> list[GeoPoint]:
    lat = np.degrees(np.arcsin(rng.uniform(-1.0, 1.0, n)))
    lon = 180.0 - 360.0 * rng.uniform(0.0, 1.0, n)  # (-180, 180]
    return [GeoPoint(float(a), float(b)) for a, b in zip(lat, lon)]


def generate_panel(config: DgpConfig) -> SynthData:
    """Draw a Poisson gravity panel with group-specific distance elasticities.

    Mean of holdings (in counts of ``unit_usd_mn``) for reporter i,
    counterparty j, year t is ``exp(log(mean_count) + beta_g * ln(d_ij /
    reference_km) + delta_it + theta_jt)``; a fraction ``zero_inflation``
    of cells is then zeroed independently of everything else.
    """
    rng = np.random.default_rng(config.seed)
    codes = synthetic_codes(config.n_counterparties)
    reporters = codes[: config.n_reporters]
    cities = dict(zip(codes, _uniform_sphere(rng, len(codes))))
    distances = build_distance_table(cities)

    shares = np.asarray(config.group_shares, dtype=float)
    counts = np.floor(shares / shares.sum() * config.n_reporters).astype(int)
    counts[-1] = config.n_reporters - counts[:-1].sum()
    labels = [g for g, c in zip((ASEAN, OECD, ROW), counts) for _ in range(c)]
    membership = list(zip(reporters, labels))
    group_of = dict(membership)

    years = list(config.years)
    s_rep = float(config.fe_scales.get("reporter_year", 0.0))
    s_cp = float(config.fe_scales.get("counterparty_year", 0.0))
    delta = {(i, t): float(v) for (i, t), v in zip(itertools.product(reporters, years), rng.normal(0, 1, len(reporters) * len(years)) * s_rep)}
    theta = {(j, t): float(v) for (j, t), v in zip(itertools.product(codes, years), rng.normal(0, 1, len(codes) * len(years)) * s_cp)}

    keys = [(i, j, t) for t in years for i in reporters for j in codes if i != j]
    log_mean = np.array(
        [
            math.log(config.mean_count)
            + config.true_beta.get(group_of[i], 0.0) * math.log(distances.get(i, j) / config.reference_km)
            + delta[(i, t)]
            + theta[(j, t)]
            for i, j, t in keys
        ]
    )
    draws = rng.poisson(np.exp(log_mean)).astype(np.float64)
    if config.zero_inflation > 0:
        draws[rng.uniform(size=len(draws)) < config.zero_inflation] = 0.0
    values = draws * config.unit_usd_mn

    frame = pd.DataFrame(
        {
            "reporter": [k[0] for k in keys],
            "counterparty": [k[1] for k in keys],
            "year": [k[2] for k in keys],
            "instrument": config.instrument,
            "value": values,
        }
    )
    panel = Panel(frame, Basis.parse(config.basis))
    groups = assign_groups(panel, membership)
    truth = {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
        "true_beta": dict(config.true_beta),
        "mean_log_mean": float(log_mean.mean()),
        "zero_share": float(np.mean(values == 0)),
    }
    return SynthData(panel, distances, groups, membership, cities, truth)
