"""Brute-force reference computations used only by the tests.

Nothing here calls into the package's estimation code paths: fixed
effects are explicit dummy columns, the Poisson fit is plain
Newton-Raphson and the sandwich is built with explicit cluster loops.
"""

import math
from itertools import product

import numpy as np


def dummies(labels):
    labels = list(labels)
    levels = sorted(set(labels))
    return np.array([[1.0 if lab == lv else 0.0 for lv in levels] for lab in labels])


def gauss_rank(M, tol=1e-9):
    """Rank by Gaussian elimination with partial pivoting."""
    A = np.array(M, dtype=float, copy=True)
    rows, cols = A.shape
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        piv = rank + int(np.argmax(np.abs(A[rank:, c])))
        if abs(A[piv, c]) <= tol * scale:
            continue
        A[[rank, piv]] = A[[piv, rank]]
        for r in range(rows):
            if r != rank:
                A[r] -= A[r, c] / A[rank, c] * A[rank]
        rank += 1
    return rank


def independent_columns(M, tol=1e-9):
    """Greedy left-to-right selection of linearly independent columns."""
    keep = []
    for j in range(M.shape[1]):
        trial = keep + [j]
        if gauss_rank(M[:, trial], tol) == len(trial):
            keep = trial
    return keep


def fe_dummy_matrix(fe_code_lists):
    """Full-rank dummy block spanning every fixed-effect dimension."""
    D = np.column_stack([dummies(c) for c in fe_code_lists])
    return D[:, independent_columns(D)]


def newton_poisson(Z, y, tol=1e-13, max_iter=200):
    """Poisson MLE by Newton-Raphson with step halving on the log-likelihood."""
    n, p = Z.shape
    b, *_ = np.linalg.lstsq(Z, np.log(y + 1.0), rcond=None)

    def loglik(b):
        eta = Z @ b
        return float(np.sum(y * eta - np.exp(eta)))

    ll = loglik(b)
    for _ in range(max_iter):
        mu = np.exp(Z @ b)
        grad = Z.T @ (y - mu)
        hess = (Z * mu[:, None]).T @ Z
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while loglik(b + t * step) < ll - 1e-12 * abs(ll) and t > 1e-8:
            t /= 2
        b = b + t * step
        new = loglik(b)
        if np.max(np.abs(t * step)) < tol:
            ll = new
            break
        ll = new
    return b


def dense_sandwich(Z, y, b, cluster_labels, k):
    """Cluster-robust covariance of the first ``k`` coefficients of a dense Poisson fit."""
    mu = np.exp(Z @ b)
    A = np.zeros((Z.shape[1], Z.shape[1]))
    for i in range(len(y)):
        A += mu[i] * np.outer(Z[i], Z[i])
    clusters = sorted(set(cluster_labels))
    B = np.zeros_like(A)
    for c in clusters:
        s = np.zeros(Z.shape[1])
        for i in range(len(y)):
            if cluster_labels[i] == c:
                s += (y[i] - mu[i]) * Z[i]
        B += np.outer(s, s)
    Ainv = np.linalg.inv(A)
    G = len(clusters)
    V = G / (G - 1) * Ainv @ B @ Ainv
    return V[:k, :k]


def projection_residual(X, W, D):
    """Residual of weighted least squares of each column of X on D."""
    sw = np.sqrt(W)
    coef, *_ = np.linalg.lstsq(D * sw[:, None], X * sw[:, None], rcond=None)
    return X - D @ coef


def spherical_cosines_km(lat1, lon1, lat2, lon2, radius=6371.0):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return radius * math.acos(max(-1.0, min(1.0, c)))


def certificate_union(X, y, grid=(-1, 0, 1)):
    """Union of zero observations separated by any integer certificate on ``grid``."""
    flagged = np.zeros(len(y), dtype=bool)
    for z in product(grid, repeat=X.shape[1]):
        z = np.array(z, dtype=float)
        if not z.any():
            continue
        s = X @ z
        if np.all(s >= -1e-12) and np.all(np.abs(s[y > 0]) <= 1e-12):
            flagged |= s > 1e-12
    return flagged
