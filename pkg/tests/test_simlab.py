import numpy as np
import pytest

from scotoma.baselines import QuadFormScorer, euclidean_scorer
from scotoma.matcher import greedy_match, matching_accuracy
from scotoma.score_core import HyperParams
from scotoma.simlab import (DgpConfig, ExperimentResult, SimulationError,
                            draw_interactions, expert_distance_matrix,
                            generate, interaction_weight_diff,
                            quadratic_gain_fit, run_experiment,
                            run_interaction_protocol,
                            self_taught_gain_protocol, weight_error_vs_pairs)


class TestDgpConfig:
    @pytest.mark.parametrize("kwargs", [
        {"expert": "psychic"},
        {"principal_idx": (0, 0)},
        {"principal_idx": (0, 99)},
        {"w_principal": 0.0},
        {"rho": 1.0},
        {"interactions": ((5, 7, 0.2),)},   # 5 is not principal
        {"interactions": ((0, 1, 0.2),)},   # 1 is principal, not noise
        {"interactions": ((0, 7, 0.0),)},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(SimulationError):
            DgpConfig(**kwargs)

    def test_weights(self):
        cfg = DgpConfig(p=4, principal_idx=(1, 3), w_principal=0.8, w_noise=0.1)
        np.testing.assert_allclose(cfg.weights(), [0.1, 0.8, 0.1, 0.8])

    def test_true_beta_only_without_hidden_structure(self):
        assert DgpConfig().true_beta() is not None
        assert DgpConfig(expert="conjunctive").true_beta() is None
        assert DgpConfig(interactions=((0, 5, 0.2),)).true_beta() is None

    def test_dict_roundtrip(self):
        cfg = DgpConfig(p=6, rho=0.3, interactions=((0, 4, 0.2),))
        assert DgpConfig.from_dict(cfg.to_dict()) == cfg


class TestExpertDistance:
    def test_weighted_projection_closed_form(self):
        cfg = DgpConfig(p=3, principal_idx=(0, 1), w_principal=1.0, w_noise=0.0)
        Xc = np.array([[1.0, 2.0, 9.0]])
        Xt = np.array([[0.0, 1.0, -4.0]])
        # projections 3 and 1; squared gap 4; noise coordinate ignored
        assert expert_distance_matrix(Xc, Xt, cfg)[0, 0] == pytest.approx(4.0)

    def test_interaction_term(self):
        cfg = DgpConfig(p=3, w_principal=1.0, w_noise=0.0,
                        interactions=((0, 2, 0.5),))
        Xc = np.array([[1.0, 0.0, 2.0]])   # proj 1 + 0.5*2 = 2
        Xt = np.array([[0.0, 0.0, 5.0]])   # proj 0 + 0 = 0
        assert expert_distance_matrix(Xc, Xt, cfg)[0, 0] == pytest.approx(4.0)

    def test_conjunctive_gate(self):
        cfg = DgpConfig(p=2, expert="conjunctive", c=1.5)
        Xc = np.array([[0.0, 0.0]])
        far = np.array([[2.0, 0.0]])
        near = np.array([[1.0, 0.0]])
        assert np.isinf(expert_distance_matrix(Xc, far, cfg)[0, 0])
        assert np.isfinite(expert_distance_matrix(Xc, near, cfg)[0, 0])


class TestGenerate:
    def test_shapes_and_counts(self):
        cfg = DgpConfig(p=5, n_train_pairs=8, n_unpaired=6, n_test_pairs=7,
                        seed=1)
        d, truth, beta = generate(cfg)
        assert d.counts() == {
            "n_paired": 8, "n_unpaired_control": 6, "n_unpaired_treatment": 6,
            "n_object_control": 7, "n_object_treatment": 7, "p": 5}
        assert beta is not None and beta.p == 5
        obj_c = {o.id for o in d.object_control}
        obj_t = {o.id for o in d.object_treatment}
        assert set(truth) <= obj_c
        assert set(truth.values()) <= obj_t
        assert len(set(truth.values())) == len(truth)  # bijection

    def test_deterministic_given_seed(self):
        cfg = DgpConfig(seed=7, n_train_pairs=5, n_test_pairs=5)
        d1, t1, _ = generate(cfg)
        d2, t2, _ = generate(cfg)
        assert t1 == t2
        for (c1, u1), (c2, u2) in zip(d1.paired, d2.paired):
            np.testing.assert_array_equal(c1.x, c2.x)
            np.testing.assert_array_equal(u1.x, u2.x)

    def test_mean_shift_on_first_coordinate(self):
        cfg = DgpConfig(p=3, n_train_pairs=0, n_unpaired=4000, n_test_pairs=2,
                        b=0.5, seed=2)
        d, _, _ = generate(cfg)
        Xc = np.array([o.x for o in d.unpaired_control])
        Xt = np.array([o.x for o in d.unpaired_treatment])
        gap = Xt.mean(axis=0) - Xc.mean(axis=0)
        assert gap[0] == pytest.approx(0.5, abs=0.06)
        np.testing.assert_allclose(gap[1:], 0.0, atol=0.06)

    def test_equicorrelation(self):
        cfg = DgpConfig(p=4, n_train_pairs=0, n_unpaired=6000, n_test_pairs=2,
                        rho=0.6, seed=3)
        d, _, _ = generate(cfg)
        X = np.array([o.x for o in d.unpaired_control])
        corr = np.corrcoef(X, rowvar=False)
        off = corr[~np.eye(4, dtype=bool)]
        np.testing.assert_allclose(off, 0.6, atol=0.06)

    def test_zero_noise_weight_supported(self):
        cfg = DgpConfig(p=4, w_noise=0.0, n_train_pairs=4, n_test_pairs=4, seed=4)
        d, truth, _ = generate(cfg)
        assert d.n_paired == 4 and len(truth) == 4

    def test_conjunctive_truth_respects_gate(self):
        cfg = DgpConfig(p=4, expert="conjunctive", c=1.5, n_train_pairs=6,
                        n_test_pairs=10, seed=5)
        d, truth, _ = generate(cfg)
        by_id = {o.id: o for o in d.object_control + d.object_treatment}
        for cid, tid in truth.items():
            dx = np.abs(by_id[cid].x - by_id[tid].x)
            assert dx[0] < 1.5 and dx[1] < 1.5

    def test_oracle_weights_replicate_truth(self):
        cfg = DgpConfig(p=3, sigma2=1.0, n_train_pairs=2, n_test_pairs=10,
                        seed=6)
        # scoring with the oracle's own projection reproduces its greedy
        # pairing of the object block exactly
        d, truth, _ = generate(cfg)
        w = cfg.weights()
        m = greedy_match(QuadFormScorer(M=np.outer(w, w)),
                         list(d.object_control), list(d.object_treatment))
        assert matching_accuracy(m, truth) == 1.0

    def test_infeasible_conjunctive_raises(self):
        cfg = DgpConfig(p=4, expert="conjunctive", c=1e-9, n_train_pairs=3,
                        n_test_pairs=3, seed=7)
        with pytest.raises(SimulationError, match="100 attempts"):
            generate(cfg)


class TestRunExperiment:
    CFG = DgpConfig(p=6, n_train_pairs=8, n_unpaired=6, n_test_pairs=8)

    def test_records_complete(self):
        res = run_experiment([self.CFG], ["euclidean", "scotoma_initial"],
                             replicates=3, seed=0)
        assert len(res.records) == 6
        assert all(r["accuracy"] is not None for r in res.records)
        summary = res.summary()
        stats = summary["cells"][0]["methods"]["euclidean"]
        assert stats["n"] == 3 and not stats["failed_cell"]
        assert 0.0 <= stats["median"] <= 1.0

    def test_serial_equals_parallel(self):
        kw = dict(cfgs=[self.CFG], methods=["euclidean", "scotoma_initial"],
                  replicates=4, seed=1)
        a = run_experiment(**kw, threads=1)
        b = run_experiment(**kw, threads=2)
        assert a.records == b.records

    def test_unknown_method(self):
        with pytest.raises(SimulationError, match="unknown method"):
            run_experiment([self.CFG], ["kriging"], replicates=1)

    def test_failed_replicates_recorded_not_fatal(self):
        bad = DgpConfig(p=4, expert="conjunctive", c=1e-9, n_train_pairs=3,
                        n_test_pairs=3)
        res = run_experiment([bad], ["euclidean"], replicates=2, seed=0)
        assert len(res.records) == 2
        assert all(r["accuracy"] is None and r["error"] for r in res.records)
        assert res.summary()["cells"][0]["methods"]["euclidean"]["failed_cell"]

    def test_csv_and_json_outputs(self, tmp_path):
        res = run_experiment([self.CFG], ["euclidean"], replicates=2, seed=2)
        csv_path = tmp_path / "r.csv"
        json_path = tmp_path / "s.json"
        res.to_csv(csv_path)
        res.to_json(json_path)
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "cell,replicate,method,accuracy,error"
        assert len(lines) == 3
        import json
        summary = json.loads(json_path.read_text())
        assert summary["cells"][0]["config"]["p"] == 6

    def test_learned_score_beats_euclidean(self):
        # weighted oracle with weak noise coordinates: the learned weight
        # vector should dominate the unweighted Euclidean baseline
        cfg = DgpConfig(p=12, n_train_pairs=15, n_unpaired=0, n_test_pairs=20)
        res = run_experiment([cfg], ["scotoma_initial", "euclidean"],
                             replicates=20, seed=42)
        med_s = np.median(res.accuracies(0, "scotoma_initial"))
        med_e = np.median(res.accuracies(0, "euclidean"))
        assert med_s > med_e + 0.2


class TestInteractions:
    def test_draw_interactions(self):
        cfg = DgpConfig(p=6)
        rng = np.random.default_rng(0)
        out = draw_interactions(cfg, 2, rng)
        assert len(out.interactions) == 2
        for k1, kn, w in out.interactions:
            assert k1 in cfg.principal_idx and kn not in cfg.principal_idx
            assert w == 0.2

    def test_too_many_interactions(self):
        with pytest.raises(SimulationError, match="noise coordinates"):
            draw_interactions(DgpConfig(p=4), 3, np.random.default_rng(0))

    def test_weight_diff_closed_form(self):
        cfg = DgpConfig(p=5, principal_idx=(0, 1),
                        interactions=((0, 2, 0.2),))
        beta = np.array([0.9, 0.9, 0.4, 0.1, 0.1])
        beta = beta / np.linalg.norm(beta)
        # interacting noise coord: x3; remaining noise: x4, x5
        expected = beta[2] - (beta[3] + beta[4]) / 2
        assert interaction_weight_diff([beta], cfg) == pytest.approx(expected)

    def test_weight_diff_requires_interactions(self):
        with pytest.raises(SimulationError, match="no interactions"):
            interaction_weight_diff([np.array([1.0, 0, 0, 0]) ],
                                    DgpConfig(p=4))

    def test_protocol_smoke(self):
        table = run_interaction_protocol([8], [1, 2], p=6, replicates=5, seed=0)
        assert set(table) == {(8, 1), (8, 2)}
        assert all(np.isfinite(v) for v in table.values())


class TestSelfTaughtProtocol:
    def test_output_shape_and_ranges(self):
        cfg = DgpConfig(p=6, n_train_pairs=6, n_unpaired=6, n_test_pairs=8)
        pairs = self_taught_gain_protocol(cfg, replicates=5, iterations=3, seed=0)
        assert len(pairs) == 5
        for a0, g in pairs:
            assert 0.0 <= a0 <= 1.0
            assert -1.0 <= g <= 1.0

    def test_quadratic_fit_matches_polyfit(self):
        pairs = [(0.1, 0.02), (0.5, 0.1), (0.9, -0.05), (0.3, 0.06)]
        arr = np.asarray(pairs)
        np.testing.assert_allclose(quadratic_gain_fit(pairs),
                                   np.polyfit(arr[:, 0], arr[:, 1], 2))


class TestWeightErrorVsPairs:
    def test_error_decreases_with_more_pairs(self):
        means, slope = weight_error_vs_pairs([10, 80], p=6, replicates=8,
                                             master_factor=10, chunk=40, seed=0)
        assert means[0] > means[1] > 0
        assert slope < -0.2
