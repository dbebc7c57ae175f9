"""Iterative fitting loops for the semisupervised matcher.

Three entry points: fit_initial estimates the weight vector from the
expert-paired block alone; fit_canonical iteratively absorbs the lowest
score pairs from the unpaired training pools; fit_self_taught additionally
absorbs pairs from the object set each iteration and finishes by matching
the remaining object observations.  An optional leave-one-out exclusion
step filters unstable candidate pairs before they are absorbed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataset import Observation, SemiDataset
from .eigsolve import EigResult, top_generalized_eigvec
from .matcher import Matching, greedy_match, score_matrix
from .score_core import (HyperParams, ScatterPair, WeightVector, build_scatter,
                         default_lambda, score)


class FitError(RuntimeError):
    pass


@dataclass
class FitState:
    iterations: int = 0
    lam: float = 0.0
    stop_reason: str = "initial"
    converged: bool = False
    degenerate: bool = False
    warnings: list[str] = field(default_factory=list)
    # (iteration, delta_inf, pairs added, pairs excluded) per update
    trajectory: list[tuple[int, float, int, int]] = field(default_factory=list)
    paired: list[tuple[Observation, Observation]] = field(default_factory=list)
    pool_control: list[Observation] = field(default_factory=list)
    pool_treatment: list[Observation] = field(default_factory=list)
    object_control: list[Observation] = field(default_factory=list)
    object_treatment: list[Observation] = field(default_factory=list)
    absorbed_object: list[tuple[Observation, Observation]] = field(default_factory=list)
    object_matching: Matching | None = None
    epsilon: float | None = None

    def trajectory_to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "delta_inf", "added", "excluded"])
            for row in self.trajectory:
                writer.writerow([row[0], repr(row[1]), row[2], row[3]])


def _resolve_lambda(hp: HyperParams, paired) -> float:
    return default_lambda(paired) if hp.lam is None else hp.lam


def _resolve_tau1(hp: HyperParams, n_paired: int) -> int:
    tau1 = hp.tau1 if hp.tau1 is not None else max(1, n_paired // 5)
    if hp.exclusion_enabled and tau1 < 2:
        raise FitError("exclusion requires tau1 >= 2")
    return tau1


def _solve_beta(paired, lam: float) -> EigResult:
    if len(paired) < 2:
        raise FitError("insufficient pairs: need at least 2 expert pairs")
    return top_generalized_eigvec(build_scatter(paired, lam))


def fit_initial(d: SemiDataset, hp: HyperParams | None = None
                ) -> tuple[WeightVector, FitState]:
    """Weight vector from the expert-paired block only."""
    hp = hp or HyperParams()
    lam = _resolve_lambda(hp, d.paired)
    res = _solve_beta(list(d.paired), lam)
    state = FitState(lam=lam, stop_reason="initial", degenerate=res.degenerate,
                     paired=list(d.paired),
                     pool_control=list(d.unpaired_control),
                     pool_treatment=list(d.unpaired_treatment),
                     object_control=list(d.object_control),
                     object_treatment=list(d.object_treatment))
    state.epsilon = _resolve_epsilon(hp, res.beta, state.paired)
    return res.beta, state


def _select_min_pairs(beta: WeightVector, pool_c: list[Observation],
                      pool_t: list[Observation], tau: int
                      ) -> list[tuple[int, int, float]]:
    """Up to tau sequential global-minimum picks (pool indices, with removal)."""
    if tau == 0 or not pool_c or not pool_t:
        return []
    S = score_matrix(beta, pool_c, pool_t).copy()
    picks = []
    cap = min(tau, len(pool_c), len(pool_t))
    for _ in range(cap):
        flat = int(np.argmin(S))
        i, j = divmod(flat, S.shape[1])
        picks.append((i, j, float(S[i, j])))
        S[i, :] = np.inf
        S[:, j] = np.inf
    return picks


def exclusion_step(candidates: list[tuple[Observation, Observation]],
                   pool_c: list[Observation], pool_t: list[Observation],
                   lam: float) -> list[bool]:
    """Leave-one-out reciprocal-nearest-neighbor filter.

    For each candidate pair, a weight vector is refit on the other
    candidates alone: the ratio maximized has the within-candidate paired
    scores in the numerator and the ridge plus cross-candidate non-pair
    scores in the denominator.  The candidate survives only if, under that
    vector, its control's nearest pool treatment and its treatment's
    nearest pool control are both its own partner.  Pools here are the
    pools at the start of the iteration, candidates included.

    Returns an accept flag per candidate.
    """
    tau = len(candidates)
    if tau < 2:
        raise FitError("exclusion requires tau1 >= 2")
    p = candidates[0][0].x.shape[0]
    diffs = np.array([c.x - t.x for c, t in candidates])
    idx_c = {id(o): k for k, o in enumerate(pool_c)}
    idx_t = {id(o): k for k, o in enumerate(pool_t)}
    accepted = []
    for s in range(tau):
        keep = [k for k in range(tau) if k != s]
        num = np.zeros((p, p))
        for k in keep:
            num += np.outer(diffs[k], diffs[k])
        den = lam * np.eye(p)
        for a in keep:
            for b in keep:
                if a == b:
                    continue
                d = candidates[a][0].x - candidates[b][1].x
                den += np.outer(d, d)
        sp = ScatterPair(sigma_w=(den + den.T) / 2, sigma_b=(num + num.T) / 2,
                         ell_dot=tau - 1, lam=lam)
        beta_s = top_generalized_eigvec(sp).beta
        cand_c, cand_t = candidates[s]
        proj_t = np.array([o.x for o in pool_t]) @ beta_s.beta
        proj_c = np.array([o.x for o in pool_c]) @ beta_s.beta
        nn_t = int(np.argmin((proj_t - float(cand_c.x @ beta_s.beta)) ** 2))
        nn_c = int(np.argmin((proj_c - float(cand_t.x @ beta_s.beta)) ** 2))
        ok = nn_t == idx_t[id(cand_t)] and nn_c == idx_c[id(cand_c)]
        accepted.append(ok)
    return accepted


def _aligned_delta_inf(new: WeightVector, old: WeightVector) -> float:
    d_plus = float(np.max(np.abs(new.beta - old.beta)))
    d_minus = float(np.max(np.abs(-new.beta - old.beta)))
    return min(d_plus, d_minus)


def _resolve_epsilon(hp: HyperParams, beta: WeightVector, paired) -> float | None:
    if hp.epsilon == "auto":
        return max(score(beta, c.x, t.x) for c, t in paired)
    return float(hp.epsilon)


def _fit_loop(d: SemiDataset, hp: HyperParams, self_taught: bool
              ) -> tuple[WeightVector, FitState]:
    lam = _resolve_lambda(hp, d.paired)
    tau1 = _resolve_tau1(hp, d.n_paired)
    tau2 = hp.tau2 if self_taught else 0
    res = _solve_beta(list(d.paired), lam)
    beta = res.beta
    state = FitState(lam=lam, degenerate=res.degenerate,
                     paired=list(d.paired),
                     pool_control=list(d.unpaired_control),
                     pool_treatment=list(d.unpaired_treatment),
                     object_control=list(d.object_control),
                     object_treatment=list(d.object_treatment))

    stop = None
    k = 0
    while True:
        can_pool = bool(state.pool_control and state.pool_treatment)
        can_obj = tau2 > 0 and bool(state.object_control and state.object_treatment)
        if not can_pool and not can_obj:
            stop = "pools_exhausted"
            break
        if k >= hp.max_iters:
            stop = "max_iters"
            state.warnings.append(f"stopped at max_iters={hp.max_iters} before convergence")
            break

        picks = _select_min_pairs(beta, state.pool_control, state.pool_treatment, tau1) \
            if can_pool else []
        candidates = [(state.pool_control[i], state.pool_treatment[j]) for i, j, _ in picks]
        n_excluded = 0
        if hp.exclusion_enabled and candidates:
            if len(candidates) >= 2:
                flags = exclusion_step(candidates, state.pool_control,
                                       state.pool_treatment, lam)
            else:
                flags = [True] * len(candidates)
            n_excluded = flags.count(False)
            candidates = [cand for cand, ok in zip(candidates, flags) if ok]

        obj_picks = _select_min_pairs(beta, state.object_control,
                                      state.object_treatment, tau2) if can_obj else []
        obj_pairs = [(state.object_control[i], state.object_treatment[j])
                     for i, j, _ in obj_picks]

        if not candidates and not obj_pairs:
            stop = "all_excluded"
            break

        for c, t in candidates:
            state.pool_control.remove(c)
            state.pool_treatment.remove(t)
            state.paired.append((c, t))
        for c, t in obj_pairs:
            state.object_control.remove(c)
            state.object_treatment.remove(t)
            state.paired.append((c, t))
            state.absorbed_object.append((c, t))

        res = _solve_beta(state.paired, lam)
        delta = _aligned_delta_inf(res.beta, beta)
        beta = res.beta
        state.degenerate = state.degenerate or res.degenerate
        k += 1
        state.trajectory.append((k, delta, len(candidates) + len(obj_pairs), n_excluded))
        if delta <= hp.delta0:
            stop = "converged"
            state.converged = True
            break

    state.iterations = k
    state.stop_reason = stop
    state.epsilon = _resolve_epsilon(hp, beta, state.paired)
    if self_taught:
        state.object_matching = greedy_match(
            beta, state.object_control, state.object_treatment, epsilon=state.epsilon)
    return beta, state


def fit_canonical(d: SemiDataset, hp: HyperParams | None = None
                  ) -> tuple[WeightVector, FitState]:
    """Iterative inclusion from the unpaired training pools."""
    hp = hp or HyperParams()
    if hp.tau2 > 0:
        raise FitError("tau2 requires self_taught mode")
    return _fit_loop(d, hp, self_taught=False)


def fit_self_taught(d: SemiDataset, hp: HyperParams | None = None
                    ) -> tuple[WeightVector, FitState]:
    """Inclusion from both the unpaired pools and the object set.

    Each iteration absorbs up to tau1 pool pairs and tau2 object pairs,
    chosen separately; cross-pool pairs are never formed.  After the loop
    the remaining object observations are matched with the acceptance
    threshold, and the absorbed object pairs prepend that matching's output.
    """
    hp = hp or HyperParams()
    return _fit_loop(d, hp, self_taught=True)
