"""Command-line entry point: fit, match, simulate, evaluate.

Exit codes are stable: 1 for configuration problems, 2 for data validation
failures, 3 for numerical failures.  All randomness derives from a single
named seed expanded through spawned RNG streams, so rerunning a config
reproduces its outputs byte for byte in single-threaded mode.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import report, simlab
from .baselines import BaselineError
from .dataset import DatasetError, load_dataset, standardize
from .eigsolve import EigenSolveError
from .fitting import FitError, fit_canonical, fit_initial, fit_self_taught
from .matcher import Matching, MatchingError, greedy_match, matching_accuracy, \
    random_matching_stats
from .score_core import HyperParams, ScoreError, WeightVector

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_DATA_ERRORS = (DatasetError, MatchingError)
_NUMERIC_ERRORS = (EigenSolveError, FitError, ScoreError, BaselineError,
                   simlab.SimulationError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, diag: dict, files: list[Path]) -> None:
    diag["manifest"] = {f.name: _sha256(f) for f in files}
    path = outdir / "diagnostics.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(diag, fh, indent=2)


def _hyperparams_from_config(cfg: dict) -> tuple[HyperParams, str, bool]:
    allowed = {"lambda", "tau1", "tau2", "delta0", "epsilon", "max_iters",
               "exclusion", "mode", "seed", "standardize"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    mode = cfg.get("mode", "initial")
    if mode not in ("initial", "canonical", "self_taught"):
        raise ConfigError(f"mode must be initial|canonical|self_taught, got {mode!r}")
    tau2 = int(cfg.get("tau2", 0))
    if tau2 > 0 and mode != "self_taught":
        raise ConfigError("tau2 requires self_taught mode")
    eps = cfg.get("epsilon", "auto")
    if isinstance(eps, str) and eps not in ("auto",):
        raise ConfigError(f"epsilon must be a positive number or 'auto', got {eps!r}")
    try:
        hp = HyperParams(
            lam=cfg.get("lambda"),
            tau1=cfg.get("tau1"),
            tau2=tau2,
            delta0=float(cfg.get("delta0", 1e-4)),
            epsilon=eps,
            max_iters=int(cfg.get("max_iters", 100)),
            exclusion_enabled=bool(cfg.get("exclusion", False)),
            seed=int(cfg.get("seed", 0)),
        )
    except (ScoreError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return hp, mode, bool(cfg.get("standardize", False))


def _write_beta(beta: WeightVector, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["coordinate", "weight"])
        for k, w in enumerate(beta.beta, start=1):
            writer.writerow([f"x{k}", repr(float(w))])


def _read_beta(path) -> WeightVector:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["coordinate", "weight"]:
                raise DatasetError(f"unexpected beta header: {header}")
            vals = [float(row[1]) for row in reader if row]
    except OSError as exc:
        raise DatasetError(f"cannot read beta file: {exc}") from exc
    except (ValueError, IndexError, StopIteration) as exc:
        raise DatasetError(f"malformed beta file {path}: {exc}") from exc
    return WeightVector.from_array(np.array(vals))


def cmd_fit(args) -> int:
    cfg = _load_json(args.config)
    hp, mode, do_standardize = _hyperparams_from_config(cfg)
    d = load_dataset(args.data, ignore_columns=tuple(args.ignore_columns or ()))
    if do_standardize:
        d, _ = standardize(d)
    if mode == "initial":
        beta, state = fit_initial(d, hp)
    elif mode == "canonical":
        beta, state = fit_canonical(d, hp)
    else:
        beta, state = fit_self_taught(d, hp)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    beta_path = outdir / "beta.csv"
    traj_path = outdir / "trajectory.csv"
    _write_beta(beta, beta_path)
    state.trajectory_to_csv(traj_path)
    diag = {
        "mode": mode,
        "iterations": state.iterations,
        "stop_reason": state.stop_reason,
        "converged": state.converged,
        "degenerate": state.degenerate,
        "lambda": state.lam,
        "epsilon": state.epsilon,
        "n_paired_final": len(state.paired),
        "warnings": state.warnings,
    }
    files = [beta_path, traj_path]
    if state.object_matching is not None:
        m_path = outdir / "object_matching.csv"
        state.object_matching.to_csv(m_path)
        files.append(m_path)
    _write_manifest(outdir, diag, files)
    return 0


def cmd_match(args) -> int:
    beta = _read_beta(args.beta)
    d = load_dataset(args.data, ignore_columns=tuple(args.ignore_columns or ()))
    if args.epsilon is None:
        epsilon = None
    else:
        try:
            epsilon = float(args.epsilon)
        except ValueError:
            raise ConfigError(f"epsilon must be a number, got {args.epsilon!r}") from None
        if not epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if np.isinf(epsilon):
            epsilon = None
    controls = list(d.object_control)
    treatments = list(d.object_treatment)
    if controls and controls[0].x.shape[0] != beta.p:
        raise DatasetError(
            f"beta has {beta.p} coordinates but data has {controls[0].x.shape[0]}")
    matching = greedy_match(beta, controls, treatments, epsilon=epsilon)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    m_path = outdir / "matching.csv"
    u_path = outdir / "unmatched.csv"
    matching.to_csv(m_path)
    with open(u_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "group"])
        for oid in matching.unmatched_control:
            writer.writerow([oid, "c"])
        for oid in matching.unmatched_treatment:
            writer.writerow([oid, "t"])
    diag = {"n_pairs": len(matching.pairs),
            "n_unmatched_control": len(matching.unmatched_control),
            "n_unmatched_treatment": len(matching.unmatched_treatment),
            "epsilon": epsilon}
    _write_manifest(outdir, diag, [m_path, u_path])
    return 0


def _dgp_from_overrides(overrides: dict, **forced) -> simlab.DgpConfig:
    try:
        return simlab.DgpConfig.from_dict({**overrides, **forced})
    except (TypeError, simlab.SimulationError) as exc:
        raise ConfigError(f"bad dgp config: {exc}") from exc


def _simulate_grid(cfg: dict, outdir: Path, threads: int) -> list[Path]:
    protocol = cfg["protocol"]
    replicates = int(cfg.get("replicates", 100))
    seed = int(cfg.get("seed", 0))
    methods = cfg.get("methods", ["scotoma", "euclidean", "propensity"])
    if protocol == "correlation_sweep":
        base = cfg.get("dgp", {})
        rhos = cfg.get("rho_values", [0.0, 0.2, 0.4, 0.6])
        cells = [{**base, "rho": (None if r == 0 else r)} for r in rhos]
    else:
        cells = cfg.get("cells") or [cfg.get("dgp", {})]
    forced = {"expert": "conjunctive"} if protocol == "conjunctive_grid" else {}
    dgps = [_dgp_from_overrides(c, **forced) for c in cells]
    hp_cfg = cfg.get("hyperparams", {})
    hp, _, _ = _hyperparams_from_config({**hp_cfg, "mode": "canonical"}) \
        if hp_cfg else (HyperParams(), None, None)
    result = simlab.run_experiment(dgps, methods, replicates, seed=seed,
                                   hp=hp, threads=threads)
    csv_path = outdir / "results.csv"
    json_path = outdir / "summary.json"
    result.to_csv(csv_path)
    result.to_json(json_path)
    files = [csv_path, json_path]
    if not cfg.get("no_figures"):
        fig_path = outdir / "accuracy_boxplot.png"
        report.save_accuracy_boxplot(result, fig_path, title=protocol)
        files.append(fig_path)
    return files


def _simulate_random_table(cfg: dict, outdir: Path) -> list[Path]:
    ns = cfg.get("n_pairs", [5, 10, 15, 20, 30, 50])
    replicates = int(cfg.get("replicates", 100_000))
    seed = int(cfg.get("seed", 0))
    streams = np.random.SeedSequence(seed).spawn(len(ns))
    rows = []
    for n, stream in zip(ns, streams):
        mean_acc, p_none = random_matching_stats(
            int(n), replicates, np.random.default_rng(stream))
        rows.append({"n_pairs": int(n), "mean_accuracy": mean_acc,
                     "prob_no_correct": p_none})
    csv_path = outdir / "results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["n_pairs", "mean_accuracy",
                                                "prob_no_correct"])
        writer.writeheader()
        writer.writerows(rows)
    json_path = outdir / "summary.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"protocol": "random_table", "replicates": replicates,
                   "rows": rows}, fh, indent=2)
    files = [csv_path, json_path]
    if not cfg.get("no_figures"):
        fig_path = outdir / "random_table.png"
        report.save_random_table_plot(rows, fig_path)
        files.append(fig_path)
    return files


def _simulate_interaction_table(cfg: dict, outdir: Path) -> list[Path]:
    table = simlab.run_interaction_protocol(
        cfg.get("n_pairs", [15, 24]),
        cfg.get("n_interactions", [1, 2, 3, 5]),
        p=int(cfg.get("p", 12)),
        replicates=int(cfg.get("replicates", 100)),
        seed=int(cfg.get("seed", 0)))
    csv_path = outdir / "results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_pairs", "n_interactions", "avg_weight_diff"])
        for (ell, n_int), diff in sorted(table.items()):
            writer.writerow([ell, n_int, repr(diff)])
    json_path = outdir / "summary.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"protocol": "interaction_table",
                   "rows": [{"n_pairs": k[0], "n_interactions": k[1],
                             "avg_weight_diff": v}
                            for k, v in sorted(table.items())]}, fh, indent=2)
    return [csv_path, json_path]


def _simulate_self_taught(cfg: dict, outdir: Path) -> list[Path]:
    dgp = _dgp_from_overrides(cfg.get("dgp", {}))
    pairs = simlab.self_taught_gain_protocol(
        dgp,
        replicates=int(cfg.get("replicates", 50)),
        iterations=int(cfg.get("iterations", 10)),
        seed=int(cfg.get("seed", 0)))
    csv_path = outdir / "results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["initial_accuracy", "gain"])
        for a0, g in pairs:
            writer.writerow([repr(a0), repr(g)])
    coeffs = simlab.quadratic_gain_fit(pairs).tolist() if len(pairs) >= 3 else None
    json_path = outdir / "summary.json"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"protocol": "self_taught_gain",
                   "mean_gain": float(np.mean([g for _, g in pairs])),
                   "quadratic_coefficients": coeffs}, fh, indent=2)
    files = [csv_path, json_path]
    if not cfg.get("no_figures"):
        fig_path = outdir / "gain_scatter.png"
        report.save_gain_scatter(pairs, fig_path)
        files.append(fig_path)
    return files


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    if args.no_figures:
        cfg["no_figures"] = True
    protocol = cfg.get("protocol")
    threads = args.threads or int(os.environ.get("SCOTOMA_THREADS", "1"))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if protocol == "random_table":
        files = _simulate_random_table(cfg, outdir)
    elif protocol in ("grid", "linear_grid", "conjunctive_grid", "correlation_sweep"):
        files = _simulate_grid(cfg, outdir, threads)
    elif protocol == "interaction_table":
        files = _simulate_interaction_table(cfg, outdir)
    elif protocol == "self_taught_gain":
        files = _simulate_self_taught(cfg, outdir)
    else:
        raise ConfigError(f"unknown protocol: {protocol!r}")
    _write_manifest(outdir, {"protocol": protocol}, files)
    return 0


def cmd_evaluate(args) -> int:
    try:
        with open(args.matching, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            pairs = [(row["control_id"], row["treatment_id"],
                      float(row.get("score", 0.0) or 0.0)) for row in reader]
        with open(args.truth, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            truth = {row["control_id"]: row["treatment_id"] for row in reader}
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"cannot read matching/truth files: {exc}") from exc
    pairs.sort(key=lambda pr: pr[2])
    matching = Matching(pairs=tuple(pairs), unmatched_control=(),
                        unmatched_treatment=())
    # a prediction involving ids outside the truth pairing is a miss, not
    # a malformed input
    universe = set(truth) | set(truth.values())
    universe |= {c for c, _, _ in pairs} | {t for _, t, _ in pairs}
    acc = matching_accuracy(matching, truth, universe=universe)
    payload = {"accuracy": acc, "n_predicted": len(pairs), "n_truth": len(truth)}
    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scotoma",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="learn the weight vector from a dataset")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--ignore-columns", nargs="*", dest="ignore_columns")
    p_fit.set_defaults(func=cmd_fit)

    p_match = sub.add_parser("match", help="match the object set with a weight vector")
    p_match.add_argument("--beta", required=True)
    p_match.add_argument("--data", required=True)
    p_match.add_argument("--epsilon", default=None)
    p_match.add_argument("--out", required=True)
    p_match.add_argument("--ignore-columns", nargs="*", dest="ignore_columns")
    p_match.set_defaults(func=cmd_match)

    p_sim = sub.add_parser("simulate", help="run a simulation protocol")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.add_argument("--no-figures", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("evaluate", help="score a matching against a truth pairing")
    p_eval.add_argument("--matching", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
