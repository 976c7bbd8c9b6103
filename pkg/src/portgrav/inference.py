"""Cluster-robust covariance and normal confidence intervals for PPML fits."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import SingularBread, TooFewClusters
from .estimator import FitResult

PAIR = "pair"
REPORTER = "reporter"
COUNTERPARTY = "counterparty"
CLUSTER_DIMENSIONS = (PAIR, REPORTER, COUNTERPARTY)

TABLE_COLUMNS = ["name", "beta", "se", "ci_lo", "ci_hi", "n_obs", "n_clusters"]


@dataclass(frozen=True, eq=False)
class ClusteredVcov:
    matrix: np.ndarray
    names: tuple[str, ...]
    cluster_dimension: str
    n_clusters: int
    dof_correction: float

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.matrix), 0.0))


def cluster_labels(frame: pd.DataFrame, cluster: str) -> list:
    if cluster == PAIR:
        # directed pair, matching the pair fixed effect
        return list(zip(frame["reporter"], frame["counterparty"]))
    if cluster == REPORTER:
        return list(frame["reporter"])
    if cluster == COUNTERPARTY:
        return list(frame["counterparty"])
    raise ValueError(f"cluster must be one of {CLUSTER_DIMENSIONS}, got {cluster!r}")


def sandwich(
    X_tilde: np.ndarray, y: np.ndarray, mu: np.ndarray, labels: list, sort_keys: list | None = None
) -> tuple[np.ndarray, int]:
    """``G/(G-1) A^-1 B A^-1`` with Poisson bread and cluster-summed scores.

    Rows are put in a canonical order (cluster label, then ``sort_keys``)
    before any reduction so the result does not depend on input order.
    """
    n, k = X_tilde.shape
    tiebreak = sort_keys if sort_keys is not None else list(range(n))
    order = sorted(range(n), key=lambda i: (labels[i], tiebreak[i]))
    X = X_tilde[order]
    r = (y - mu)[order]
    m = mu[order]
    lab = [labels[i] for i in order]

    codes = np.empty(n, dtype=np.intp)
    G = 0
    for i in range(n):
        if i == 0 or lab[i] != lab[i - 1]:
            G += 1
        codes[i] = G - 1
    if G < 2:
        raise TooFewClusters(f"need at least 2 clusters, got {G}")

    A = np.einsum("ij,i,ik->jk", X, m, X)
    try:
        if np.linalg.matrix_rank(A) < k:
            raise np.linalg.LinAlgError
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise SingularBread("Poisson information matrix is singular") from None

    scores = X * r[:, None]
    S = np.empty((G, k))
    for j in range(k):
        S[:, j] = np.bincount(codes, weights=scores[:, j], minlength=G)
    B = np.einsum("gj,gk->jk", S, S)
    factor = G / (G - 1)
    V = factor * (A_inv @ B @ A_inv)
    return (V + V.T) / 2, G


def cluster_vcov(fit: FitResult, cluster: str = PAIR) -> ClusteredVcov:
    """Cluster-robust sandwich covariance for the retained coefficients of ``fit``."""
    labels = cluster_labels(fit.frame, cluster)
    keys = list(zip(fit.frame["reporter"], fit.frame["counterparty"], fit.frame["year"], fit.frame["instrument"]))
    V, G = sandwich(fit.X_tilde, fit.y, fit.mu, labels, keys)
    return ClusteredVcov(
        matrix=V,
        names=tuple(fit.names),
        cluster_dimension=cluster,
        n_clusters=G,
        dof_correction=G / (G - 1),
    )


def confidence_interval(beta: float, se: float, level: float = 0.95) -> tuple[float, float]:
    if se < 0:
        raise ValueError("standard error must be non-negative")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = float(norm.ppf(0.5 + level / 2))
    return beta - z * se, beta + z * se


def coefficient_table(
    fit: FitResult, vcov: ClusteredVcov, level: float = 0.95, include_nuisance: bool = False
) -> pd.DataFrame:
    rows = []
    for name, b, se in zip(fit.names, fit.beta, vcov.se):
        if name in fit.nuisance and not include_nuisance:
            continue
        lo, hi = confidence_interval(float(b), float(se), level)
        rows.append((name, float(b), float(se), lo, hi, fit.n_obs, vcov.n_clusters))
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def write_coefficient_table(table: pd.DataFrame, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for row in table.itertuples(index=False):
            w.writerow([row.name, repr(row.beta), repr(row.se), repr(row.ci_lo), repr(row.ci_hi), row.n_obs, row.n_clusters])
