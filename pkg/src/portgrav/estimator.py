"""Poisson pseudo-maximum-likelihood with absorbed high-dimensional fixed effects."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .design import DesignSpec, detect_collinear
from .errors import AllColumnsDropped, NoPositiveOutcome, NotConverged, SeparationDetected
from .hdfe import FixedEffectLayout, absorb_fixed_effects, singleton_mask

__all__ = [
    "FitConfig",
    "FitResult",
    "absorb_fixed_effects",
    "detect_separation",
    "fit_ppml",
    "poisson_deviance",
]

log = logging.getLogger(__name__)

DROP_AND_REFIT = "drop"
ERROR = "error"

# weight pinning the separation fit to zero on positive outcomes; the
# residual leakage on zeros scales as 1/weight
_PIN_WEIGHT = 1e10
# the 1e10 weight spread puts a rounding floor near 1e-10 under the weighted
# demeaning, so the separation fits aim above it
_RECTIFIER_DEMEAN_TOL = 1e-9


@dataclass(frozen=True)
class FitConfig:
    tol_deviance: float = 1e-9
    tol_coef: float = 1e-8
    tol_demean: float = 1e-10
    max_iter_irls: int = 200
    max_iter_demean: int = 10000
    separation_policy: str = DROP_AND_REFIT
    drop_singletons: bool = True
    separation_tol: float = 1e-6
    max_iter_separation: int = 1000

    def __post_init__(self):
        if min(self.tol_deviance, self.tol_coef, self.tol_demean, self.separation_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if min(self.max_iter_irls, self.max_iter_demean, self.max_iter_separation) < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.separation_policy not in (DROP_AND_REFIT, ERROR):
            raise ValueError(f"separation_policy must be {DROP_AND_REFIT!r} or {ERROR!r}")


@dataclass(eq=False)
class FitResult:
    """Estimates plus everything inference needs.

    ``X_tilde`` is the regressor matrix demeaned with the final Poisson
    weights ``mu``; rows align with ``frame`` (the retained observations).
    """

    names: list[str]
    beta: np.ndarray
    deviance: float
    iterations: int
    converged: bool
    dropped: list[tuple[tuple, str]]
    history: list[dict]
    frame: pd.DataFrame
    y: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    X_tilde: np.ndarray
    fixed_effects: FixedEffectLayout
    nuisance: list[str] = field(default_factory=list)
    dropped_columns: list[str] = field(default_factory=list)
    spec: str = ""
    instrument: str = ""
    X_raw: np.ndarray | None = None

    @property
    def coefficients(self) -> dict[str, float]:
        return {n: float(b) for n, b in zip(self.names, self.beta)}

    @property
    def n_obs(self) -> int:
        return len(self.y)

    @property
    def fe_sum(self) -> np.ndarray:
        """Sum of all fixed effects for each retained observation."""
        return self.eta - self.X_raw @ self.beta

    def summary(self) -> dict:
        return {
            "spec": self.spec,
            "instrument": self.instrument,
            "coefficients": self.coefficients,
            "nuisance": list(self.nuisance),
            "deviance": self.deviance,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_obs": self.n_obs,
            "fixed_effects": self.fixed_effects.level_counts,
            "dropped_columns": list(self.dropped_columns),
            "dropped_observations": {
                reason: sum(1 for _, r in self.dropped if r == reason)
                for reason in sorted({r for _, r in self.dropped})
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def poisson_deviance(y: np.ndarray, mu: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def _wcross(A: np.ndarray, w: np.ndarray, B: np.ndarray) -> np.ndarray:
    # einsum keeps the reduction order fixed (no threaded BLAS)
    return np.einsum("ij,i,ik->jk", A, w, B)


def _zero_fe_levels(y: np.ndarray, layout: FixedEffectLayout) -> np.ndarray:
    """Observations in a FE level whose outcomes are all zero."""
    bad = np.zeros(len(y), dtype=bool)
    for d in layout:
        pos = np.bincount(d.codes, weights=(y > 0).astype(float), minlength=d.n_levels)
        bad |= pos[d.codes] == 0
    return bad


def _rectifier(y, X, layout, tol, demean_tol, max_iter_demean, max_iter) -> np.ndarray:
    """Zero-outcome observations separated through the regressors (and FE).

    Repeatedly regresses a rectified target on the regressors and fixed
    effects, with heavy weight pinning the fit to zero on positive outcomes.
    A non-negative fit that is positive only on zeros certifies separation.
    """
    zero = y == 0
    if not zero.any():
        return zero
    w = np.where(zero, 1.0, _PIN_WEIGHT)
    u = zero.astype(float)
    for _ in range(max_iter):
        cols = np.column_stack([u, X]) if X.shape[1] else u[:, None]
        try:
            ct = absorb_fixed_effects(cols, w, layout, tol=demean_tol, max_iter=max_iter_demean)
        except NotConverged as exc:
            # only the sign pattern is needed and the threshold adapts to the leakage
            log.debug("separation fit stopped early: %s", exc)
            ct = exc.partial
        ut, Xt = ct[:, 0], ct[:, 1:]
        if Xt.shape[1]:
            coef, *_ = np.linalg.lstsq(Xt * np.sqrt(w)[:, None], ut * np.sqrt(w), rcond=None)
            resid = ut - Xt @ coef
        else:
            resid = ut
        fit = u - resid
        # positive outcomes should fit exactly zero; whatever they show is leakage
        leak = float(np.max(np.abs(fit[~zero]))) if (~zero).any() else 0.0
        fit[np.abs(fit) < max(tol, 100.0 * leak)] = 0.0
        fit[~zero] = 0.0
        if np.all(fit >= 0):
            return fit > 0
        u = np.where(zero, np.maximum(fit, 0.0), 0.0)
    log.warning("separation check stopped after %d iterations", max_iter)
    return np.zeros(len(y), dtype=bool)


def detect_separation(design: DesignSpec, config: FitConfig | None = None) -> list[tuple]:
    """Keys of observations whose zero outcome is perfectly predicted.

    Covers both fixed-effect levels with only zero outcomes and
    separation through linear combinations of regressors and fixed effects.
    """
    config = config or FitConfig()
    y = design.y
    layout = design.fixed_effects.effective(design.n_obs)
    has_fe = bool(design.fixed_effects.dims)
    flagged = _zero_fe_levels(y, layout) if has_fe else np.zeros(len(y), dtype=bool)
    keep = ~flagged
    if keep.any():
        sub = design.subset(keep)
        extra = _rectifier(
            sub.y,
            sub.X,
            sub.fixed_effects.effective(sub.n_obs),
            config.separation_tol,
            _RECTIFIER_DEMEAN_TOL,
            config.max_iter_demean,
            config.max_iter_separation,
        )
        flagged[np.flatnonzero(keep)[extra]] = True
    keys = design.keys()
    return [keys[i] for i in np.flatnonzero(flagged)]


def _prune(design: DesignSpec, config: FitConfig) -> tuple[np.ndarray, list[tuple[int, str]]]:
    """Mask of observations kept for estimation and (row, reason) for the rest."""
    n = design.n_obs
    keep = np.ones(n, dtype=bool)
    reasons: list[tuple[int, str]] = []
    has_fe = bool(design.fixed_effects.dims)
    y = design.y

    def mark(rows: np.ndarray, reason: str):
        nonlocal keep
        for i in rows:
            reasons.append((int(i), reason))
        keep[rows] = False

    while True:
        changed = False
        if has_fe:
            while True:
                idx = np.flatnonzero(keep)
                lay = design.fixed_effects.subset(keep)
                step = False
                if config.drop_singletons:
                    lone = ~singleton_mask(lay)
                    if lone.any():
                        mark(idx[lone], "singleton")
                        step = True
                        continue
                zero = _zero_fe_levels(y[keep], lay)
                if zero.any():
                    if config.separation_policy == ERROR:
                        raise SeparationDetected([design.keys()[i] for i in idx[zero]])
                    mark(idx[zero], "separation")
                    step = True
                if not step:
                    break
                changed = True
        idx = np.flatnonzero(keep)
        if len(idx) == 0:
            break
        sub = design.subset(keep)
        sep = _rectifier(
            sub.y,
            sub.X,
            sub.fixed_effects.effective(sub.n_obs),
            config.separation_tol,
            _RECTIFIER_DEMEAN_TOL,
            config.max_iter_demean,
            config.max_iter_separation,
        )
        if sep.any():
            if config.separation_policy == ERROR:
                raise SeparationDetected([design.keys()[i] for i in idx[sep]])
            mark(idx[sep], "separation")
            changed = True
        if not changed:
            break
    return keep, reasons


def fit_ppml(design: DesignSpec, config: FitConfig | None = None) -> FitResult:
    """Fit the exponential-mean gravity model by Poisson PML.

    IRLS on the log link; at every step the working outcome and the
    regressors are demeaned over all fixed-effect dimensions with the
    current Poisson weights, so no dummy matrix is ever formed. Singleton
    levels and separated observations are dropped first (or, with
    ``separation_policy="error"``, separation raises).

    Raises
    ------
    NoPositiveOutcome
        When no retained outcome is positive.
    NotConverged
        When the IRLS cap is reached; ``partial`` is the last FitResult.
    """
    config = config or FitConfig()
    y_all = design.y
    if np.any(y_all < 0) or not np.all(np.isfinite(y_all)):
        raise ValueError("outcomes must be finite and non-negative")
    if not np.any(y_all > 0):
        raise NoPositiveOutcome("no positive outcome in the estimation sample")

    keep, reasons = _prune(design, config)
    keys = design.keys()
    dropped = [(keys[i], r) for i, r in sorted(reasons)]
    if dropped:
        log.info("dropped %d observations before estimation", len(dropped))
    work = design.subset(keep)
    if not np.any(work.y > 0):
        raise NoPositiveOutcome("no positive outcome left after dropping separated observations")
    try:
        checked = detect_collinear(work)
    except AllColumnsDropped:
        raise
    dropped_columns = [n for n in checked.collinearity_report if n not in design.collinearity_report]
    work = checked

    y = work.y
    X = work.X
    k = X.shape[1]
    layout = work.fixed_effects.effective(work.n_obs)

    eta = np.log(np.maximum(y, 0.1))
    eta = eta - eta.mean() + math.log(y.mean())
    mu = np.exp(eta)
    dev = poisson_deviance(y, mu)
    beta = np.zeros(k)
    history = []
    converged = False
    it = 0

    for it in range(1, config.max_iter_irls + 1):
        z = eta + (y - mu) / mu
        cols = np.column_stack([z, X])
        ct = absorb_fixed_effects(cols, mu, layout, tol=config.tol_demean, max_iter=config.max_iter_demean)
        zt, Xt = ct[:, 0], ct[:, 1:]
        if k:
            beta_new = np.linalg.solve(_wcross(Xt, mu, Xt), _wcross(Xt, mu, zt[:, None])[:, 0])
            resid = zt - Xt @ beta_new
        else:
            beta_new = beta
            resid = zt
        eta_new = z - resid

        step = 1.0
        while True:
            eta_try = eta + step * (eta_new - eta)
            with np.errstate(over="ignore"):
                mu_try = np.exp(eta_try)
            dev_try = poisson_deviance(y, mu_try) if np.all(np.isfinite(mu_try)) else math.inf
            # the start point is off the model manifold, so the first step is always taken
            if it == 1 or dev_try <= dev * (1 + 1e-12) or step < 1e-3:
                break
            step /= 2
        beta_step = step * (beta_new - beta)
        beta = beta + beta_step
        eta, mu = eta_try, np.maximum(mu_try, 1e-300)
        rel = abs(dev_try - dev) / max(min(dev_try, dev), 0.1)
        dbeta = float(np.max(np.abs(beta_step))) if k else 0.0
        dev = dev_try
        history.append({"iteration": it, "deviance": dev, "rel_change": rel, "max_step": dbeta, "step": step})
        if rel < config.tol_deviance and dbeta < config.tol_coef:
            converged = True
            break

    Xt_final = absorb_fixed_effects(X, mu, layout, tol=config.tol_demean, max_iter=config.max_iter_demean) if k else X
    result = FitResult(
        names=list(work.names),
        beta=beta,
        deviance=dev,
        iterations=it,
        converged=converged,
        dropped=dropped,
        history=history,
        frame=work.frame,
        y=y,
        mu=mu,
        eta=eta,
        X_tilde=np.asarray(Xt_final).reshape(len(y), k),
        fixed_effects=work.fixed_effects,
        nuisance=list(work.nuisance),
        dropped_columns=dropped_columns,
        spec=work.spec,
        instrument=work.instrument,
        X_raw=X,
    )
    if not converged:
        raise NotConverged(f"IRLS did not converge in {config.max_iter_irls} iterations", partial=result)
    return result
