"""Greedy sequential minimum-score one-to-one matching and accuracy metrics.

Each round picks the globally minimal-score (control, treatment) pair among
the remaining observations and removes both; matching stops when a pool is
empty, an optional pair cap is hit, or the minimal score exceeds the
acceptance threshold.  Ties break lexicographically on (control load-order
index, treatment load-order index) so reruns are deterministic.
"""

from __future__ import annotations

import csv
import heapq
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .dataset import Observation
from .score_core import WeightVector


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[str, str, float], ...]  # (control_id, treatment_id, score)
    unmatched_control: tuple[str, ...]
    unmatched_treatment: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        object.__setattr__(self, "unmatched_control", tuple(self.unmatched_control))
        object.__setattr__(self, "unmatched_treatment", tuple(self.unmatched_treatment))
        ids = [p[0] for p in self.pairs] + [p[1] for p in self.pairs]
        if len(ids) != len(set(ids)):
            raise MatchingError("matching is not one-to-one")
        scores = [p[2] for p in self.pairs]
        if any(b < a - 1e-12 for a, b in zip(scores, scores[1:])):
            raise MatchingError("pair scores must be nondecreasing in inclusion order")

    def pair_set(self) -> set[tuple[str, str]]:
        return {(c, t) for c, t, _ in self.pairs}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["control_id", "treatment_id", "score", "rank"])
            for rank, (c, t, s) in enumerate(self.pairs, start=1):
                writer.writerow([c, t, repr(s), rank])


def score_matrix(scorer, controls: Sequence[Observation],
                 treatments: Sequence[Observation]) -> np.ndarray:
    """Dense pairwise score matrix, rows = controls, cols = treatments."""
    if isinstance(scorer, WeightVector):
        pc = np.array([o.x for o in controls]) @ scorer.beta
        pt = np.array([o.x for o in treatments]) @ scorer.beta
        diff = pc[:, None] - pt[None, :]
        return diff * diff
    if hasattr(scorer, "pairwise"):
        Xc = np.array([o.x for o in controls])
        Xt = np.array([o.x for o in treatments])
        return np.asarray(scorer.pairwise(Xc, Xt), dtype=float)
    out = np.empty((len(controls), len(treatments)))
    for i, c in enumerate(controls):
        for j, t in enumerate(treatments):
            out[i, j] = scorer(c.x, t.x)
    return out


def greedy_match(scorer, controls: Sequence[Observation],
                 treatments: Sequence[Observation],
                 epsilon: float | None = None,
                 max_pairs: int | None = None,
                 use_heap: bool = False) -> Matching:
    """Sequential global-minimum matching without replacement.

    `scorer` is a WeightVector, a callable (xi, xj) -> score, or an object
    with a .pairwise(Xc, Xt) method.  `use_heap` switches to an incremental
    lazy-deletion heap with identical output.
    """
    if epsilon is not None and not epsilon > 0:
        raise MatchingError("epsilon must be > 0 when given")
    if not controls or not treatments:
        return Matching(pairs=(), unmatched_control=tuple(o.id for o in controls),
                        unmatched_treatment=tuple(o.id for o in treatments))
    S = score_matrix(scorer, controls, treatments)
    n, m = S.shape
    cap = min(n, m) if max_pairs is None else min(n, m, max_pairs)
    pairs = []
    used_c = np.zeros(n, dtype=bool)
    used_t = np.zeros(m, dtype=bool)
    if use_heap:
        heap = [(S[i, j], i, j) for i in range(n) for j in range(m)]
        heapq.heapify(heap)
        while len(pairs) < cap and heap:
            s, i, j = heapq.heappop(heap)
            if used_c[i] or used_t[j]:
                continue
            if not np.isfinite(s) or (epsilon is not None and s > epsilon):
                break
            used_c[i] = used_t[j] = True
            pairs.append((controls[i].id, treatments[j].id, float(s)))
    else:
        work = S.copy()
        while len(pairs) < cap:
            flat = int(np.argmin(work))
            i, j = divmod(flat, m)
            s = float(work[i, j])
            if not np.isfinite(s) or (epsilon is not None and s > epsilon):
                break
            used_c[i] = used_t[j] = True
            work[i, :] = np.inf
            work[:, j] = np.inf
            pairs.append((controls[i].id, treatments[j].id, s))
    return Matching(
        pairs=tuple(pairs),
        unmatched_control=tuple(controls[i].id for i in range(n) if not used_c[i]),
        unmatched_treatment=tuple(treatments[j].id for j in range(m) if not used_t[j]),
    )


def matching_accuracy(predicted: Matching, truth: Mapping[str, str],
                      universe: set[str] | None = None) -> float:
    """Fraction of expert pairs exactly recovered by the predicted matching.

    `truth` maps control id -> treatment id; its pairs are the denominator,
    so predictions withheld by the threshold count as misses.
    """
    if not truth:
        raise MatchingError("truth pairing is empty")
    if universe is None:
        universe = set(truth.keys()) | set(truth.values())
    for c, t, _ in predicted.pairs:
        if c not in universe or t not in universe:
            missing = c if c not in universe else t
            raise MatchingError(f"predicted id not in truth universe: {missing}")
    truth_pairs = set(truth.items())
    hit = sum(1 for c, t, _ in predicted.pairs if (c, t) in truth_pairs)
    return hit / len(truth_pairs)


def random_matching_stats(n_pairs: int, replicates: int,
                          seed: int | np.random.Generator = 0
                          ) -> tuple[float, float]:
    """Monte-Carlo reference under independent uniform assignment.

    Each control is independently assigned a uniformly random treatment, so
    expected accuracy is 1/n and P(no correct match) is (1 - 1/n)^n.
    Returns (mean accuracy, fraction of replicates with zero correct).
    """
    if n_pairs < 1 or replicates < 1:
        raise MatchingError("n_pairs and replicates must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    correct_counts = np.zeros(replicates, dtype=np.int64)
    chunk = max(1, min(replicates, 10_000_000 // max(n_pairs, 1)))
    done = 0
    while done < replicates:
        k = min(chunk, replicates - done)
        draws = rng.integers(0, n_pairs, size=(k, n_pairs))
        correct_counts[done:done + k] = (draws == np.arange(n_pairs)).sum(axis=1)
        done += k
    mean_accuracy = float(correct_counts.mean() / n_pairs)
    prob_no_correct = float(np.mean(correct_counts == 0))
    return mean_accuracy, prob_no_correct
