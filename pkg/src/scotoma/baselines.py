"""Competing matchers: Euclidean, Mahalanobis, propensity-score, and
chunklet-whitened (RCA-style) scorers.

Every scorer exposes the same contract as the learned quadratic score: a
callable (xi, xj) -> nonnegative score plus a vectorized .pairwise(Xc, Xt),
so all of them plug into the greedy matcher unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import SemiDataset

_SINGULAR_RIDGE = 1e-8


class BaselineError(ValueError):
    pass


@dataclass
class QuadFormScorer:
    """Score d' M d for difference d, with M symmetric PSD."""

    M: np.ndarray
    ridged: bool = False

    def __call__(self, xi, xj) -> float:
        d = np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float)
        if d.shape[0] != self.M.shape[0]:
            raise BaselineError("dimension mismatch")
        return float(d @ self.M @ d)

    def pairwise(self, Xc: np.ndarray, Xt: np.ndarray) -> np.ndarray:
        # d'Md = ||Fd||^2 with M = F'F (symmetric square root)
        vals, vecs = np.linalg.eigh(self.M)
        F = (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T
        A = Xc @ F
        B = Xt @ F
        sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2 * A @ B.T
        return np.clip(sq, 0, None)


def euclidean_scorer() -> "EuclideanScorer":
    return EuclideanScorer()


@dataclass
class EuclideanScorer:
    def __call__(self, xi, xj) -> float:
        xi = np.asarray(xi, dtype=float)
        xj = np.asarray(xj, dtype=float)
        if xi.shape != xj.shape:
            raise BaselineError("dimension mismatch")
        d = xi - xj
        return float(d @ d)

    def pairwise(self, Xc, Xt) -> np.ndarray:
        sq = (Xc * Xc).sum(axis=1)[:, None] + (Xt * Xt).sum(axis=1)[None, :] \
            - 2 * Xc @ Xt.T
        return np.clip(sq, 0, None)


def _inverse_with_ridge(C: np.ndarray, what: str) -> tuple[np.ndarray, bool]:
    p = C.shape[0]
    ridged = False
    if np.linalg.matrix_rank(C, hermitian=True) < p or np.linalg.cond(C) > 1e12:
        C = C + _SINGULAR_RIDGE * (np.trace(C) / p) * np.eye(p)
        ridged = True
        if np.linalg.cond(C) > 1e14:
            raise BaselineError(f"{what} matrix singular even after ridge")
    return np.linalg.inv(C), ridged


def mahalanobis_scorer(sample) -> QuadFormScorer:
    """d' S^{-1} d with S the sample covariance of all given observations."""
    X = np.array([o.x for o in sample], dtype=float)
    if X.shape[0] < 2:
        raise BaselineError("need at least 2 observations for a covariance")
    C = np.cov(X, rowvar=False, ddof=1)
    C = np.atleast_2d(C)
    inv, ridged = _inverse_with_ridge(C, "covariance")
    return QuadFormScorer(M=(inv + inv.T) / 2, ridged=ridged)


def rca_scorer(paired) -> QuadFormScorer:
    """Whitening by the within-pair difference covariance of training pairs."""
    pairs = list(paired)
    if not pairs:
        raise BaselineError("need at least one training pair")
    D = np.array([c.x - t.x for c, t in pairs], dtype=float)
    C = (D.T @ D) / len(pairs)
    inv, ridged = _inverse_with_ridge(C, "chunklet")
    return QuadFormScorer(M=(inv + inv.T) / 2, ridged=ridged)


@dataclass
class PropensityScorer:
    """Pairwise |logit(p_i) - logit(p_j)| from a ridge logistic model."""

    coef: np.ndarray  # includes intercept at position 0
    converged: bool = True
    n_iter: int = 0
    separation_suspected: bool = False
    diagnostics: dict = field(default_factory=dict)

    def logit(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.coef[0] + x @ self.coef[1:])

    def __call__(self, xi, xj) -> float:
        return abs(self.logit(xi) - self.logit(xj))

    def pairwise(self, Xc, Xt) -> np.ndarray:
        lc = self.coef[0] + Xc @ self.coef[1:]
        lt = self.coef[0] + Xt @ self.coef[1:]
        return np.abs(lc[:, None] - lt[None, :])


def propensity_scorer(d: SemiDataset, ridge: float = 1e-4,
                      tol: float = 1e-8, max_passes: int = 100) -> PropensityScorer:
    """Fit treatment-vs-control ridge logistic regression by Newton steps.

    The intercept is unpenalized.  Perfect separation is absorbed by the
    ridge and flagged in diagnostics.
    """
    obs = d.all_observations()
    y = np.array([1.0 if o.group == "t" else 0.0 for o in obs])
    if y.min() == y.max():
        raise BaselineError("both groups must be nonempty")
    X = np.column_stack([np.ones(len(obs)), np.array([o.x for o in obs])])
    k = X.shape[1]
    P = ridge * np.eye(k)
    P[0, 0] = 0.0
    theta = np.zeros(k)
    converged = False
    it = 0
    for it in range(1, max_passes + 1):
        eta = X @ theta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = np.clip(mu * (1 - mu), 1e-12, None)
        grad = X.T @ (y - mu) - P @ theta
        H = (X * w[:, None]).T @ X + P
        step = np.linalg.solve(H, grad)
        theta = theta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    eta = X @ theta
    separation = bool(np.max(np.abs(eta)) > 30)
    return PropensityScorer(
        coef=theta, converged=converged, n_iter=it,
        separation_suspected=separation,
        diagnostics={"converged": converged, "n_iter": it,
                     "separation_suspected": separation})
