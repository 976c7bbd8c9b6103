"""Cached Monte Carlo recovery runs shared by the synth and acceptance tests."""

from functools import lru_cache

import numpy as np

from portgrav.design import build_baseline_design, detect_collinear
from portgrav.estimator import fit_ppml
from portgrav.inference import cluster_vcov
from portgrav.synth import DgpConfig, generate_panel

TRUE_BETA = {"ASEAN": -1.0, "OECD": -0.5, "ROW": -0.8}
NAMES = ["ln_dist_x_ASEAN", "ln_dist_x_OECD", "ln_dist_x_ROW"]


@lru_cache(maxsize=None)
def recovery_runs(n_seeds=20, zero_inflation=0.4):
    """(beta, se) arrays of shape (n_seeds, 3) for 50 x 100 x 5 synth panels."""
    betas, ses = [], []
    for seed in range(n_seeds):
        data = generate_panel(DgpConfig(true_beta=TRUE_BETA, zero_inflation=zero_inflation, seed=seed))
        fit = fit_ppml(detect_collinear(build_baseline_design(data.panel, data.distances, data.groups)))
        assert fit.names == NAMES
        betas.append(fit.beta)
        ses.append(cluster_vcov(fit, "pair").se)
    return np.array(betas), np.array(ses)


def truth_vector():
    return np.array([TRUE_BETA[n.rsplit("_", 1)[1]] for n in NAMES])
