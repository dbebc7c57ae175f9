"""Synthetic data-generating processes with expert oracles and the
evaluation protocols used to benchmark the matchers.

The expert oracle pairs controls to treatments greedily (sequential global
minimum) under a weighted Euclidean distance, optionally with unobserved
interaction features or a conjunctive feasibility gate on the principal
confounders.  The learner only ever sees the raw covariates.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import baselines
from .dataset import Observation, SemiDataset
from .fitting import fit_canonical, fit_initial, fit_self_taught
from .matcher import greedy_match, matching_accuracy
from .score_core import HyperParams, WeightVector, build_scatter, default_lambda
from .eigsolve import subspace_dist, top_generalized_eigvec


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DgpConfig:
    p: int = 12
    n_train_pairs: int = 15
    n_unpaired: int = 0          # per group
    n_test_pairs: int = 20
    b: float = 0.5               # treatment mean shift on coordinate 1
    sigma2: float = 0.25
    expert: str = "weighted_euclidean"  # or "conjunctive"
    principal_idx: tuple[int, int] = (0, 1)
    w_principal: float = 0.9
    w_noise: float = 0.05
    c: float = 1.5               # conjunctive threshold
    rho: float | None = None     # equicorrelation
    interactions: tuple[tuple[int, int, float], ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.expert not in ("weighted_euclidean", "conjunctive"):
            raise SimulationError(f"unknown expert oracle: {self.expert}")
        k1, k2 = self.principal_idx
        if k1 == k2 or not (0 <= k1 < self.p and 0 <= k2 < self.p):
            raise SimulationError("principal indices must be distinct and < p")
        if self.w_principal <= 0 or self.w_noise < 0:
            raise SimulationError("weights must be positive")
        if self.rho is not None and not (0 <= self.rho < 1):
            raise SimulationError("rho must be in [0, 1)")
        for k1_, kn, w in self.interactions:
            if k1_ not in self.principal_idx:
                raise SimulationError("interaction must involve a principal confounder")
            if kn in self.principal_idx or not (0 <= kn < self.p):
                raise SimulationError("interaction partner must be a noise coordinate")
            if w <= 0:
                raise SimulationError("weights must be positive")
        object.__setattr__(self, "principal_idx", tuple(self.principal_idx))
        object.__setattr__(self, "interactions",
                           tuple(tuple(t) for t in self.interactions))

    def weights(self) -> np.ndarray:
        w = np.full(self.p, self.w_noise, dtype=float)
        w[list(self.principal_idx)] = self.w_principal
        return w

    def true_beta(self) -> WeightVector | None:
        if self.expert != "weighted_euclidean" or self.interactions:
            return None
        return WeightVector.from_array(self.weights())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["principal_idx"] = list(self.principal_idx)
        d["interactions"] = [list(t) for t in self.interactions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        d = dict(d)
        if "principal_idx" in d:
            d["principal_idx"] = tuple(d["principal_idx"])
        if "interactions" in d:
            d["interactions"] = tuple(tuple(t) for t in d["interactions"])
        return cls(**d)


def _expert_projection(X: np.ndarray, cfg: DgpConfig) -> np.ndarray:
    """Weighted feature projection the oracle scores with, including any
    unobserved product features."""
    proj = X @ cfg.weights()
    for k1, kn, wi in cfg.interactions:
        proj = proj + wi * (X[:, k1] * X[:, kn])
    return proj


def expert_distance_matrix(Xc: np.ndarray, Xt: np.ndarray, cfg: DgpConfig) -> np.ndarray:
    """Oracle distance: squared difference of the weighted feature
    projections (the weighted-Euclidean criterion ||w'(x_i - x_j)||^2);
    conjunctive gating sets entries with a principal-confounder difference
    at or beyond the threshold to +inf."""
    dproj = _expert_projection(Xc, cfg)[:, None] - _expert_projection(Xt, cfg)[None, :]
    D = dproj * dproj
    if cfg.expert == "conjunctive":
        k1, k2 = cfg.principal_idx
        ok = (np.abs(Xc[:, k1][:, None] - Xt[:, k1][None, :]) < cfg.c) & \
             (np.abs(Xc[:, k2][:, None] - Xt[:, k2][None, :]) < cfg.c)
        D = np.where(ok, D, np.inf)
    return D


def _oracle_pairing(Xc: np.ndarray, Xt: np.ndarray, cfg: DgpConfig
                    ) -> list[tuple[int, int]]:
    """Greedy sequential global-minimum pairing; stops at infeasible entries."""
    D = expert_distance_matrix(Xc, Xt, cfg).copy()
    n, m = D.shape
    out = []
    for _ in range(min(n, m)):
        flat = int(np.argmin(D))
        i, j = divmod(flat, m)
        if not np.isfinite(D[i, j]):
            break
        out.append((i, j))
        D[i, :] = np.inf
        D[:, j] = np.inf
    return out


def _draw_cohort(n: int, cfg: DgpConfig, offset: float, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    if n == 0:
        empty = np.zeros((0, cfg.p))
        return empty, empty.copy()
    if cfg.rho:
        cov = cfg.sigma2 * ((1 - cfg.rho) * np.eye(cfg.p)
                            + cfg.rho * np.ones((cfg.p, cfg.p)))
    else:
        cov = cfg.sigma2 * np.eye(cfg.p)
    L = np.linalg.cholesky(cov)
    mu_c = np.full(cfg.p, offset)
    mu_t = mu_c.copy()
    mu_t[0] += cfg.b
    Xc = mu_c + rng.standard_normal((n, cfg.p)) @ L.T
    Xt = mu_t + rng.standard_normal((n, cfg.p)) @ L.T
    return Xc, Xt


def generate(cfg: DgpConfig, rng: np.random.Generator | None = None
             ) -> tuple[SemiDataset, dict[str, str], WeightVector | None]:
    """Draw a semisupervised dataset, its object-set truth pairing, and the
    normalized expert weight vector when one exists.

    The expert reviews a training cohort twice as large as requested and
    endorses only its n_train_pairs most confident pairs (greedy order
    is increasing oracle distance); the rejected remainder never enters the
    dataset.  The unpaired pools are a separate cohort of n_unpaired per
    group whose latent oracle pairing exists but is withheld.  When the
    oracle leaves no feasible train or test pair, the draw is repeated up
    to 100 times before erroring.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    last_err = "empty configuration"
    for _ in range(100):
        offset = rng.uniform(0.0, 5.0)
        slack = max(cfg.n_train_pairs, 4) if cfg.n_train_pairs else 0
        trc, trt = _draw_cohort(cfg.n_train_pairs + slack, cfg, offset, rng)
        unc, unt = _draw_cohort(cfg.n_unpaired, cfg, offset, rng)
        obc, obt = _draw_cohort(cfg.n_test_pairs, cfg, offset, rng)
        train_pairs = _oracle_pairing(trc, trt, cfg)[:cfg.n_train_pairs] \
            if cfg.n_train_pairs else []
        object_pairs = _oracle_pairing(obc, obt, cfg) if cfg.n_test_pairs else []
        if cfg.n_train_pairs and not train_pairs:
            last_err = "oracle left zero feasible training pairs"
            continue
        if cfg.n_test_pairs and not object_pairs:
            last_err = "oracle left zero feasible test pairs"
            continue

        obs_trc = [Observation(f"tr_c{i}", "c", trc[i]) for i in range(len(trc))]
        obs_trt = [Observation(f"tr_t{j}", "t", trt[j]) for j in range(len(trt))]
        paired = tuple((obs_trc[i], obs_trt[j]) for i, j in train_pairs)
        pool_c = [Observation(f"un_c{i}", "c", unc[i]) for i in range(len(unc))]
        pool_t = [Observation(f"un_t{j}", "t", unt[j]) for j in range(len(unt))]
        obj_c = [Observation(f"ob_c{i}", "c", obc[i]) for i in range(len(obc))]
        obj_t = [Observation(f"ob_t{j}", "t", obt[j]) for j in range(len(obt))]
        truth = {obj_c[i].id: obj_t[j].id for i, j in object_pairs}
        d = SemiDataset(paired=paired, unpaired_control=tuple(pool_c),
                        unpaired_treatment=tuple(pool_t),
                        object_control=tuple(obj_c), object_treatment=tuple(obj_t))
        return d, truth, cfg.true_beta()
    raise SimulationError(f"{last_err} after 100 attempts")


KNOWN_METHODS = ("scotoma", "scotoma_initial", "scotoma_self_taught",
                 "euclidean", "mahalanobis", "propensity", "rca")


def _object_accuracy(method: str, d: SemiDataset, truth: dict[str, str],
                     hp: HyperParams) -> float:
    universe = {o.id for o in d.object_control} | {o.id for o in d.object_treatment}
    if method == "scotoma_self_taught":
        beta, state = fit_self_taught(d, hp)
        pred = {(c.id, t.id) for c, t in state.absorbed_object}
        rest = greedy_match(beta, state.object_control, state.object_treatment)
        pred |= rest.pair_set()
        hit = sum(1 for pair in truth.items() if pair in pred)
        return hit / len(truth)
    if method == "scotoma":
        scorer, _ = fit_canonical(d, hp)
    elif method == "scotoma_initial":
        scorer, _ = fit_initial(d, hp)
    elif method == "euclidean":
        scorer = baselines.euclidean_scorer()
    elif method == "mahalanobis":
        scorer = baselines.mahalanobis_scorer(d.all_observations())
    elif method == "propensity":
        scorer = baselines.propensity_scorer(d)
    elif method == "rca":
        scorer = baselines.rca_scorer(d.paired)
    else:
        raise SimulationError(f"unknown method: {method}")
    matching = greedy_match(scorer, list(d.object_control), list(d.object_treatment))
    return matching_accuracy(matching, truth, universe=universe)


@dataclass
class ExperimentResult:
    records: list[dict] = field(default_factory=list)
    configs: list[dict] = field(default_factory=list)

    def accuracies(self, cell: int, method: str) -> np.ndarray:
        return np.array([r["accuracy"] for r in self.records
                         if r["cell"] == cell and r["method"] == method
                         and r["accuracy"] is not None])

    def summary(self) -> dict:
        cells = sorted({r["cell"] for r in self.records})
        methods = sorted({r["method"] for r in self.records})
        out = {"cells": []}
        for cell in cells:
            entry = {"cell": cell, "config": self.configs[cell], "methods": {}}
            for method in methods:
                rows = [r for r in self.records
                        if r["cell"] == cell and r["method"] == method]
                if not rows:
                    continue
                acc = self.accuracies(cell, method)
                n_failed = sum(1 for r in rows if r["accuracy"] is None)
                stats = {
                    "n": len(rows),
                    "n_failed": n_failed,
                    "failed_cell": n_failed > 0.1 * len(rows),
                }
                if acc.size:
                    stats.update(
                        median=float(np.median(acc)),
                        q25=float(np.quantile(acc, 0.25)),
                        q75=float(np.quantile(acc, 0.75)),
                        mean=float(acc.mean()),
                    )
                entry["methods"][method] = stats
            out["cells"].append(entry)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell", "replicate", "method", "accuracy", "error"])
            for r in self.records:
                writer.writerow([r["cell"], r["replicate"], r["method"],
                                 "" if r["accuracy"] is None else repr(r["accuracy"]),
                                 r.get("error", "")])

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2)


def _run_replicate(cfg: DgpConfig, methods, hp: HyperParams,
                   stream: np.random.SeedSequence, cell: int, rep: int
                   ) -> list[dict]:
    rng = np.random.default_rng(stream)
    records = []
    try:
        d, truth, _ = generate(cfg, rng)
    except SimulationError as exc:
        return [{"cell": cell, "replicate": rep, "method": m,
                 "accuracy": None, "error": str(exc)} for m in methods]
    for method in methods:
        try:
            acc = _object_accuracy(method, d, truth, hp)
            records.append({"cell": cell, "replicate": rep, "method": method,
                            "accuracy": acc, "error": ""})
        except Exception as exc:
            records.append({"cell": cell, "replicate": rep, "method": method,
                            "accuracy": None, "error": str(exc)})
    return records


def run_experiment(cfgs, methods, replicates: int, seed: int = 0,
                   hp: HyperParams | None = None,
                   threads: int = 1) -> ExperimentResult:
    """Grid runner: generate, fit every method, match the object block, and
    score against the oracle pairing.  Per-replicate errors are recorded,
    not fatal.  Replicates use independent spawned RNG streams and results
    aggregate in index order, so parallel and serial runs agree."""
    cfgs = list(cfgs)
    methods = list(methods)
    if not methods or replicates < 1:
        raise SimulationError("need at least one method and one replicate")
    for m in methods:
        if m not in KNOWN_METHODS:
            raise SimulationError(f"unknown method: {m}")
    hp = hp or HyperParams()
    result = ExperimentResult(configs=[c.to_dict() for c in cfgs])
    streams = np.random.SeedSequence(seed).spawn(len(cfgs) * replicates)
    tasks = [(cfg, methods, hp, streams[cell * replicates + rep], cell, rep)
             for cell, cfg in enumerate(cfgs) for rep in range(replicates)]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(_run_replicate_star, tasks))
    else:
        batches = [_run_replicate(*t) for t in tasks]
    for batch in batches:
        result.records.extend(batch)
    return result


def _run_replicate_star(args):
    return _run_replicate(*args)


def draw_interactions(cfg: DgpConfig, n_interactions: int,
                      rng: np.random.Generator, weight: float = 0.2
                      ) -> DgpConfig:
    """Randomly attach n order-two interactions (principal x noise)."""
    noise = [k for k in range(cfg.p) if k not in cfg.principal_idx]
    if n_interactions > len(noise):
        raise SimulationError("more interactions than noise coordinates")
    chosen = rng.choice(len(noise), size=n_interactions, replace=False)
    inter = tuple((int(rng.choice(cfg.principal_idx)), noise[int(k)], weight)
                  for k in chosen)
    return replace(cfg, interactions=inter)


def interaction_weight_diff(betas, cfgs) -> float:
    """Mean over fits of (mean |beta| on interacting noise coordinates)
    minus (mean |beta| on the remaining noise coordinates)."""
    betas = list(betas)
    if isinstance(cfgs, DgpConfig):
        cfgs = [cfgs] * len(betas)
    diffs = []
    for beta, cfg in zip(betas, cfgs, strict=True):
        b = np.abs(beta.beta if isinstance(beta, WeightVector) else np.asarray(beta))
        noise = [k for k in range(cfg.p) if k not in cfg.principal_idx]
        in_int = sorted({kn for _, kn, _ in cfg.interactions})
        out_int = [k for k in noise if k not in in_int]
        if not in_int:
            raise SimulationError("config has no interactions")
        if not out_int:
            raise SimulationError("no noise variables outside interactions")
        diffs.append(b[in_int].mean() - b[out_int].mean())
    return float(np.mean(diffs))


def run_interaction_protocol(n_pairs_list, n_interactions_list, p: int = 12,
                             replicates: int = 100, seed: int = 0,
                             weight: float = 0.2) -> dict[tuple[int, int], float]:
    """Averaged weight-difference table over (training pairs, interactions)."""
    out = {}
    ss = np.random.SeedSequence(seed)
    for ell in n_pairs_list:
        for n_int in n_interactions_list:
            rng = np.random.default_rng(ss.spawn(1)[0])
            base = DgpConfig(p=p, n_train_pairs=ell, n_test_pairs=0)
            fits = []
            cfg_list = []
            for _ in range(replicates):
                cfg = draw_interactions(base, n_int, rng, weight=weight)
                d, _, _ = generate(cfg, rng)
                beta, _ = fit_initial(d)
                fits.append(beta)
                cfg_list.append(cfg)
            out[(ell, n_int)] = interaction_weight_diff(fits, cfg_list)
    return out


def self_taught_gain_protocol(cfg: DgpConfig, replicates: int = 50,
                              iterations: int = 10, seed: int = 0,
                              hp: HyperParams | None = None
                              ) -> list[tuple[float, float]]:
    """Per replicate: test accuracy before self-taught learning and the gain
    after the given number of iterations.  Pairs absorbed from the object
    set during learning count as the algorithm's own matching decisions.

    The default hyperparameters are deliberately conservative (one absorbed
    pair per source per iteration, early stop once the weight vector is
    stable) because aggressive absorption from a large pool risks negative
    learning."""
    base_hp = hp or HyperParams(tau1=1, tau2=1, delta0=0.03)
    run_hp = HyperParams(lam=base_hp.lam, tau1=base_hp.tau1, tau2=base_hp.tau2,
                         delta0=base_hp.delta0, epsilon=base_hp.epsilon,
                         max_iters=iterations,
                         exclusion_enabled=base_hp.exclusion_enabled,
                         seed=base_hp.seed)
    streams = np.random.SeedSequence(seed).spawn(replicates)
    out = []
    for rep in range(replicates):
        rng = np.random.default_rng(streams[rep])
        d, truth, _ = generate(cfg, rng)
        universe = {o.id for o in d.object_control} | {o.id for o in d.object_treatment}
        beta0, _ = fit_initial(d, run_hp)
        m0 = greedy_match(beta0, list(d.object_control), list(d.object_treatment))
        acc0 = matching_accuracy(m0, truth, universe=universe)
        beta1, state = fit_self_taught(d, run_hp)
        pred = {(c.id, t.id) for c, t in state.absorbed_object}
        rest = greedy_match(beta1, state.object_control, state.object_treatment)
        pred |= rest.pair_set()
        acc1 = sum(1 for pair in truth.items() if pair in pred) / len(truth)
        out.append((acc0, acc1 - acc0))
    return out


def quadratic_gain_fit(pairs) -> np.ndarray:
    """Least-squares quadratic of gain on initial accuracy; returns
    coefficients highest degree first."""
    pairs = np.asarray(pairs, dtype=float)
    return np.polyfit(pairs[:, 0], pairs[:, 1], 2)


def weight_error_vs_pairs(ells, p: int = 6, replicates: int = 100,
                          master_factor: int = 50, chunk: int = 100,
                          seed: int = 0) -> tuple[np.ndarray, float]:
    """Mean subspace distance between the paired-block estimate and a
    master-sample reference, per training size, plus the log-log slope.

    The reference weight vector is fit on a master sample master_factor
    times the largest training size, built from independent expert-paired
    cohorts of the same generating process.
    """
    ells = sorted(int(e) for e in ells)
    cfg = DgpConfig(p=p, n_train_pairs=chunk, n_test_pairs=0, n_unpaired=chunk)
    n_master = master_factor * ells[-1]
    streams = np.random.SeedSequence(seed).spawn(replicates)
    dists = np.zeros((replicates, len(ells)))
    for rep in range(replicates):
        rng = np.random.default_rng(streams[rep])
        offset = rng.uniform(0.0, 5.0)
        pairs = []
        while len(pairs) < n_master:
            # each cohort is drawn with 25% slack and only the best `chunk`
            # greedy pairs are kept: enough selection to avoid the ruinous
            # forced tail of an exact pairing, enough noise that the
            # estimator error is not floored at the smallest subset size
            Xc, Xt = _draw_cohort(chunk * 5 // 4, cfg, offset, rng)
            for i, j in _oracle_pairing(Xc, Xt, cfg)[:chunk]:
                pairs.append((Xc[i], Xt[j]))
        pairs = pairs[:n_master]
        # subsets must be random draws from the master pairing, not the
        # greedy pairing order, which sorts cleaner pairs first
        perm = rng.permutation(len(pairs))
        pairs = [pairs[k] for k in perm]
        lam_master = default_lambda(pairs)
        beta_star = top_generalized_eigvec(build_scatter(pairs, lam_master)).beta
        for col, ell in enumerate(ells):
            sub = pairs[:ell]
            beta_hat = top_generalized_eigvec(
                build_scatter(sub, default_lambda(sub))).beta
            dists[rep, col] = subspace_dist(beta_hat, beta_star)
    means = dists.mean(axis=0)
    slope = float(np.polyfit(np.log(ells), np.log(means), 1)[0])
    return means, slope
