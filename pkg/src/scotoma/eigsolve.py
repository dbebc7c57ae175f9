"""Top generalized eigenvector of the scatter ratio, and subspace distance.

The maximizer of the objective ratio is the top eigenvector of
sigma_w^{-1} sigma_b.  For numerical stability we solve the symmetric
reduction instead: factor sigma_w = R' R (Cholesky), take the top
eigenvector eta of R^{-T} sigma_b R^{-1}, and map back beta = R^{-1} eta.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.linalg import cholesky, eigh, solve_triangular

from .score_core import ScatterPair, WeightVector

_DEGENERATE_GAP = 1e-10
_MAX_CONDITION = 1e12


class EigenSolveError(RuntimeError):
    pass


class EigResult(NamedTuple):
    beta: WeightVector
    eigenvalue: float
    degenerate: bool


def top_generalized_eigvec(sp: ScatterPair) -> EigResult:
    """Unit-norm maximizer of the scatter ratio and its eigenvalue.

    Raises EigenSolveError when sigma_w is numerically singular
    (condition number above 1e12); a larger ridge fixes that.
    """
    cond = np.linalg.cond(sp.sigma_w)
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise EigenSolveError(
            f"sigma_w numerically singular (cond={cond:.3e}); increase lambda")
    try:
        R = cholesky(sp.sigma_w, lower=False)  # sigma_w = R' R
    except np.linalg.LinAlgError as exc:  # pragma: no cover - cond check first
        raise EigenSolveError(f"sigma_w not positive definite: {exc}") from exc
    B1 = solve_triangular(R.T, sp.sigma_b, lower=True)          # R^{-T} sigma_b
    M = solve_triangular(R.T, B1.T, lower=True).T               # R^{-T} sigma_b R^{-1}
    M = (M + M.T) / 2
    vals, vecs = eigh(M)
    top = float(vals[-1])
    eta = vecs[:, -1]
    beta = solve_triangular(R, eta, lower=False)                # R^{-1} eta
    wv = WeightVector.from_array(beta)
    gap_degenerate = False
    if len(vals) > 1:
        gap = top - float(vals[-2])
        gap_degenerate = gap < _DEGENERATE_GAP * max(abs(top), 1e-300)
    return EigResult(beta=wv, eigenvalue=max(top, 0.0), degenerate=gap_degenerate)


def eigen_residual(sp: ScatterPair, res: EigResult) -> float:
    """Relative residual ||sigma_w^{-1} sigma_b beta - lam1 beta|| / max(1, lam1).

    Normalized by the eigenvalue magnitude so the tolerance does not depend
    on the scale of the scatter matrices.
    """
    b = res.beta.beta
    v = np.linalg.solve(sp.sigma_w, sp.sigma_b @ b) - res.eigenvalue * b
    return float(np.linalg.norm(v) / max(1.0, abs(res.eigenvalue)))


def subspace_dist(b1: WeightVector, b2: WeightVector) -> float:
    """sin of the angle between the two weight directions, in [0, 1].

    Equals the spectral norm of the difference of the rank-one projectors,
    so it is invariant to sign flips.
    """
    v1, v2 = _unit(b1), _unit(b2)
    if v1.shape != v2.shape:
        raise EigenSolveError("weight vectors must have equal length")
    c = float(v1 @ v2)
    s2 = 1.0 - c * c
    return float(np.sqrt(min(max(s2, 0.0), 1.0)))


def _unit(b) -> np.ndarray:
    v = b.beta if isinstance(b, WeightVector) else np.asarray(b, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-6:
        raise EigenSolveError("subspace_dist requires unit vectors")
    return v
