"""Quadratic score function, pair adjacency, and scatter matrices.

The learned dissimilarity between observations x_i, x_j is the quadratic
score (beta . (x_i - x_j))^2, with beta a unit-norm variable-importance
vector.  The training objective is the ratio of the between-pair scatter
quadratic form to the ridge-penalized within-pair one; both scatter
matrices are built here.

Convention: cross-group non-pairs are counted once each (unordered-edge
convention).  The literature sometimes sums over ordered index pairs, which
doubles both quadratic forms; the maximizer is unchanged and only the
effective ridge rescales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class WeightVector:
    """Unit-norm variable-importance vector with a fixed sign convention.

    The largest-magnitude entry is nonnegative (ties broken by lowest
    index), so any two runs producing the same direction produce the same
    vector.
    """

    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        if b.ndim != 1:
            raise ScoreError("beta must be a vector")
        nrm = np.linalg.norm(b)
        if abs(nrm - 1.0) > 1e-10:
            raise ScoreError(f"beta must be unit norm, got {nrm!r}")
        k = int(np.argmax(np.abs(b)))
        if b[k] < 0:
            raise ScoreError("sign convention violated: largest-magnitude entry negative")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)

    @classmethod
    def from_array(cls, v) -> "WeightVector":
        """Normalize and apply the sign convention."""
        v = np.asarray(v, dtype=float)
        nrm = np.linalg.norm(v)
        if nrm == 0 or not np.isfinite(nrm):
            raise ScoreError("cannot normalize zero or non-finite vector")
        b = v / nrm
        if b[int(np.argmax(np.abs(b)))] < 0:
            b = -b
        return cls(beta=b)

    @property
    def p(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class ScatterPair:
    """Within-pair (ridge-stabilized) and between-pair scatter matrices."""

    sigma_w: np.ndarray
    sigma_b: np.ndarray
    ell_dot: int
    lam: float

    def __post_init__(self):
        sw = np.asarray(self.sigma_w, dtype=float)
        sb = np.asarray(self.sigma_b, dtype=float)
        if sw.shape != sb.shape or sw.ndim != 2 or sw.shape[0] != sw.shape[1]:
            raise ScoreError("scatter matrices must be square and same shape")
        if np.max(np.abs(sw - sw.T)) > 1e-12 * max(1.0, np.max(np.abs(sw))):
            raise ScoreError("sigma_w not symmetric")
        if np.max(np.abs(sb - sb.T)) > 1e-10 * max(1.0, np.max(np.abs(sb))):
            raise ScoreError("sigma_b not symmetric")
        if self.lam < 0:
            raise ScoreError("lambda must be >= 0")
        sw.setflags(write=False)
        sb.setflags(write=False)
        object.__setattr__(self, "sigma_w", sw)
        object.__setattr__(self, "sigma_b", sb)

    @property
    def p(self) -> int:
        return self.sigma_w.shape[0]


@dataclass(frozen=True)
class HyperParams:
    """Tuning knobs for the fitting loops.

    lam=None resolves to a scale-aware default at fit time
    (1e-3 * trace of the unridged within scatter / p); tau1=None resolves
    to max(1, n_paired // 5).  epsilon may be a positive float or "auto"
    (loosest threshold accepting every final training pair).
    """

    lam: float | None = None
    tau1: int | None = None
    tau2: int = 0
    delta0: float = 1e-4
    epsilon: float | str = "auto"
    max_iters: int = 100
    exclusion_enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ScoreError("lambda must be >= 0")
        if self.tau1 is not None and self.tau1 < 1:
            raise ScoreError("tau1 must be >= 1")
        if self.tau2 < 0:
            raise ScoreError("tau2 must be >= 0")
        if not self.delta0 > 0 and self.delta0 != 0.0:
            raise ScoreError("delta0 must be >= 0")
        if isinstance(self.epsilon, str):
            if self.epsilon != "auto":
                raise ScoreError("epsilon must be a positive number or 'auto'")
        elif not self.epsilon > 0:
            raise ScoreError("epsilon must be a positive number or 'auto'")
        if self.max_iters < 1:
            raise ScoreError("max_iters must be >= 1")
        if self.exclusion_enabled and self.tau1 is not None and self.tau1 < 2:
            raise ScoreError("exclusion requires tau1 >= 2")


def score(beta: WeightVector | np.ndarray, xi: np.ndarray, xj: np.ndarray) -> float:
    """Quadratic score (beta . (xi - xj))^2; symmetric and nonnegative."""
    b = beta.beta if isinstance(beta, WeightVector) else np.asarray(beta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape or xi.shape != b.shape:
        raise ScoreError("dimension mismatch")
    d = float(b @ (xi - xj))
    return d * d


def build_adjacency(ell_dot: int) -> tuple[np.ndarray, np.ndarray]:
    """0/1 adjacency over the 2*ell_dot training rows (controls then treatments).

    W_w connects each control to its paired treatment; W_b connects every
    cross-group non-pair.  Both symmetric with zero diagonal.
    """
    if ell_dot < 1:
        raise ScoreError("ell_dot must be >= 1")
    n = 2 * ell_dot
    i = np.arange(n)
    W_w = (np.abs(i[:, None] - i[None, :]) == ell_dot).astype(float)
    cross = ((i[:, None] < ell_dot) & (i[None, :] >= ell_dot)) | \
            ((i[:, None] >= ell_dot) & (i[None, :] < ell_dot))
    W_b = (cross & (np.abs(i[:, None] - i[None, :]) != ell_dot)).astype(float)
    return W_w, W_b


def build_scatter(paired, lam: float) -> ScatterPair:
    """Scatter matrices from the expert-paired training block.

    sigma_w = lam*I + (1/ell) * sum of paired-difference outer products;
    sigma_b = sum over all cross-group non-pairs (i != j) of difference
    outer products, each counted once.  The cross sum is expanded in closed
    form, which matches the brute-force double loop exactly.
    """
    pairs = list(paired)
    ell = len(pairs)
    if ell == 0:
        raise ScoreError("need at least one training pair")
    Xc = np.array([_xvec(c) for c, _ in pairs], dtype=float)
    Xt = np.array([_xvec(t) for _, t in pairs], dtype=float)
    p = Xc.shape[1]
    D = Xc - Xt
    sigma_w = lam * np.eye(p) + (D.T @ D) / ell
    sc = Xc.sum(axis=0)
    st = Xt.sum(axis=0)
    full = ell * (Xc.T @ Xc) + ell * (Xt.T @ Xt) - np.outer(sc, st) - np.outer(st, sc)
    sigma_b = full - D.T @ D
    sigma_w = (sigma_w + sigma_w.T) / 2
    sigma_b = (sigma_b + sigma_b.T) / 2
    return ScatterPair(sigma_w=sigma_w, sigma_b=sigma_b, ell_dot=ell, lam=lam)


def default_lambda(paired) -> float:
    """Scale-aware ridge: 1e-3 * trace of the unridged within scatter / p."""
    pairs = list(paired)
    D = np.array([_xvec(c) - _xvec(t) for c, t in pairs], dtype=float)
    p = D.shape[1]
    tr = float(np.sum(D * D)) / len(pairs)
    return 1e-3 * tr / p if tr > 0 else 1e-3


def objective_g(beta, sp: ScatterPair) -> float:
    """Ratio (beta' sigma_b beta) / (beta' sigma_w beta); scale invariant."""
    b = beta.beta if isinstance(beta, WeightVector) else np.asarray(beta, dtype=float)
    if not np.any(b):
        raise ScoreError("beta must be nonzero")
    num = float(b @ sp.sigma_b @ b)
    den = float(b @ sp.sigma_w @ b)
    return num / den


def _xvec(o) -> np.ndarray:
    return o.x if hasattr(o, "x") else np.asarray(o, dtype=float)
