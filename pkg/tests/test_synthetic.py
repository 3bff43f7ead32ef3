import math

import numpy as np
import pytest

from metriclab.errors import DomainError, ParameterError
from metriclab.synthetic import (
    PairSample,
    SyntheticTask,
    atom_marginal,
    bayes_risk_hinge,
    conditional_probs,
    constant_model,
    cosine_model,
    counterexample_model,
    estimate_noise_exponent,
    eta,
    eta_pairs,
    hinge_metric_values,
    make_task,
    sample_dataset,
    sample_inputs,
    true_metric_hinge,
    two_value_model,
    write_dataset_csv,
)


def constant_task(p_vec, seed=0):
    return SyntheticTask(p=1, model=constant_model(np.asarray(p_vec)), seed=seed)


class TestEta:
    def test_paper_cross_example(self):
        # <[3/5,1/5,1/5], [1,0,0]> = 3/5
        task = make_task("counterexample", seed=0)
        assert eta(task, [0.2], [0.8]) == pytest.approx(0.6, abs=1e-15)

    def test_paper_self_example(self):
        # <[3/5,1/5,1/5], same> = 11/25
        task = make_task("counterexample", seed=0)
        assert eta(task, [0.2], [0.2]) == pytest.approx(11.0 / 25.0, abs=1e-15)

    def test_unit_vector_inner_product(self):
        task = constant_task([1.0, 0.0])
        other = constant_task([0.3, 0.7])
        # eta = q for P_x=[1,0], P_x'=[q, 1-q]; emulate by mixing models
        px = conditional_probs(task, np.array([[0.5]]))[0]
        pq = conditional_probs(other, np.array([[0.5]]))[0]
        assert float(px @ pq) == pytest.approx(0.3)

    def test_symmetry_bitwise(self):
        task = make_task("cosine", p=2, seed=1, A=0.05, k=1, r=1)
        rng = np.random.default_rng(0)
        for _ in range(50):
            x, xp = rng.random(2), rng.random(2)
            assert eta(task, x, xp) == eta(task, xp, x)

    def test_range_and_simplex_at_many_points(self):
        for family, kwargs in [("linear", {}), ("three_label_ramp", {}),
                               ("counterexample", {}), ("two_value", {})]:
            task = make_task(family, seed=0, **kwargs)
            rng = np.random.default_rng(2)
            X = sample_inputs(task, 100_000, rng)
            P = conditional_probs(task, X)  # validates rows internally
            e = eta_pairs(task, X, X[::-1])
            assert np.all(e >= 0.0) and np.all(e <= 1.0)
            assert np.max(np.abs(P.sum(axis=1) - 1.0)) <= 1e-12

    def test_duplicated_conditional_laws(self):
        task = make_task("two_value", seed=0)
        # x' and x'' on the same side share the conditional law
        assert eta(task, [0.1], [0.6]) == eta(task, [0.1], [0.9])

    def test_domain_error(self):
        task = make_task("linear", seed=0)
        with pytest.raises(DomainError):
            eta(task, [1.5], [0.5])


class TestTrueMetric:
    def test_paper_sign_values(self):
        task = make_task("counterexample", seed=0)
        assert true_metric_hinge(task, [0.2], [0.8]) == -1.0  # eta = 3/5
        assert true_metric_hinge(task, [0.2], [0.2]) == 1.0   # eta = 11/25

    def test_conventions_at_half(self):
        assert hinge_metric_values(np.array([0.5]), "theorem")[0] == 0.0
        assert hinge_metric_values(np.array([0.5]), "infimum")[0] == -1.0

    def test_self_distance_violation_regression(self):
        # the three-label model makes self-similarity non-minimal by design
        task = make_task("counterexample", seed=0)
        d_self = true_metric_hinge(task, [0.2], [0.2])
        d_cross = true_metric_hinge(task, [0.2], [0.8])
        assert d_self > d_cross


class TestBayesRisk:
    def test_separable_constant(self):
        est, se = bayes_risk_hinge(constant_task([1.0, 0.0]), 1000, seed=1)
        assert est == 0.0 and se == 0.0

    def test_maximal_noise_constant(self):
        est, se = bayes_risk_hinge(constant_task([0.5, 0.5]), 1000, seed=1)
        assert est == pytest.approx(1.0, abs=1e-12)
        assert se == pytest.approx(0.0, abs=1e-12)

    def test_linear_family_vs_quadrature_oracle(self):
        # midpoint quadrature of E[2 min(eta, 1-eta)], eta = xx' + (1-x)(1-x')
        n = 4000
        g = (np.arange(n) + 0.5) / n
        xx, yy = np.meshgrid(g, g)
        e = xx * yy + (1 - xx) * (1 - yy)
        oracle = float(np.mean(2 * np.minimum(e, 1 - e)))
        assert oracle == pytest.approx(0.75, abs=1e-3)
        est, se = bayes_risk_hinge(make_task("linear", seed=9), 100_000, seed=3)
        assert abs(est - oracle) <= 3 * se


class TestSampling:
    def test_degenerate_categorical(self):
        X, y = sample_dataset(constant_task([1.0, 0.0]), 500)
        assert np.all(y == 0)

    def test_binomial_frequency(self):
        X, y = sample_dataset(constant_task([0.3, 0.7], seed=5), 100_000)
        freq = float(np.mean(y == 0))
        stderr = math.sqrt(0.3 * 0.7 / 100_000)
        assert abs(freq - 0.3) <= 3 * stderr

    def test_seed_determinism(self):
        task = make_task("linear", seed=44)
        X1, y1 = sample_dataset(task, 200)
        X2, y2 = sample_dataset(task, 200)
        assert np.array_equal(X1, X2) and np.array_equal(y1, y2)

    def test_minimum_size(self):
        with pytest.raises(ParameterError):
            sample_dataset(make_task("linear", seed=0), 1)

    def test_atom_marginal_stays_on_atoms(self):
        task = SyntheticTask(p=1, model=two_value_model(), seed=0,
                             marginal=atom_marginal([[0.25], [0.75]]))
        rng = np.random.default_rng(1)
        X = sample_inputs(task, 1000, rng)
        assert set(np.unique(X)) <= {0.25, 0.75}


class TestNoiseExponent:
    def test_hard_margin_sentinel(self):
        # eta constant at 0.82: every |eta - 1/2| = 0.32 > max(t_grid)
        fit = estimate_noise_exponent(constant_task([0.9, 0.1]), 20_000,
                                      [0.05, 0.1, 0.2, 0.3], seed=0)
        assert fit.hard_margin
        assert fit.theta_hat == math.inf

    def test_ramp_family_theta_near_one(self):
        # margin density is triangular, approximately uniform near zero
        task = make_task("three_label_ramp", seed=2)
        fit = estimate_noise_exponent(task, 1_000_000, np.geomspace(0.003, 0.02, 8), seed=11)
        assert abs(fit.theta_hat - 1.0) <= 0.15
        assert fit.r_squared > 0.99

    def test_doubling_stability(self):
        task = make_task("three_label_ramp", seed=2)
        grid = np.geomspace(0.003, 0.02, 8)
        f1 = estimate_noise_exponent(task, 500_000, grid, seed=11)
        f2 = estimate_noise_exponent(task, 1_000_000, grid, seed=12)
        assert abs(f1.theta_hat - f2.theta_hat) <= 2 * (f1.theta_se + f2.theta_se)

    def test_grid_validation(self):
        task = make_task("linear", seed=0)
        with pytest.raises(ParameterError):
            estimate_noise_exponent(task, 20_000, [0.1, 0.2, 0.6, 0.3], seed=0)
        with pytest.raises(ParameterError):
            estimate_noise_exponent(task, 20_000, [0.1, 0.2, 0.3], seed=0)
        with pytest.raises(ParameterError):
            estimate_noise_exponent(task, 100, [0.05, 0.1, 0.2, 0.3], seed=0)


class TestFamilies:
    def test_cosine_smoothness_validation(self):
        with pytest.raises(ParameterError):
            cosine_model(p=1, A=0.4, k=1, r=1)  # 0.4 * 2pi > 1/2
        model = cosine_model(p=1, A=0.05, k=1, r=1)
        assert model.sobolev_budget <= 1.0

    def test_cosine_probabilities_valid(self):
        task = make_task("cosine", p=3, seed=1, A=0.07, k=1, r=1)
        rng = np.random.default_rng(0)
        conditional_probs(task, sample_inputs(task, 10_000, rng))

    def test_counterexample_values(self):
        model = counterexample_model()
        P = model.prob(np.array([[0.1], [0.9]]))
        assert np.allclose(P[0], [0.6, 0.2, 0.2])
        assert np.allclose(P[1], [1.0, 0.0, 0.0])

    def test_unknown_family(self):
        with pytest.raises(ParameterError):
            make_task("gaussian", seed=0)

    def test_linear_requires_p1(self):
        with pytest.raises(ParameterError):
            make_task("linear", p=2, seed=0)


class TestPairSample:
    def test_tau_reduces_labels(self):
        same = PairSample(np.array([0.1]), np.array([0.9]), y=2, yp=2)
        diff = PairSample(np.array([0.1]), np.array([0.9]), y=2, yp=0)
        assert same.tau == 1
        assert diff.tau == -1


class TestCsvExport:
    def test_round_trip(self, tmp_path):
        task = make_task("linear", seed=8)
        X, y = sample_dataset(task, 50)
        path = tmp_path / "data.csv"
        write_dataset_csv(path, X, y, comments=["seed=8"])
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=8"
        assert lines[1] == "x_1,y"
        assert len(lines) == 52
        x_back = np.array([float(line.split(",")[0]) for line in lines[2:]])
        assert np.array_equal(x_back, X[:, 0])
