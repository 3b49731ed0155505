#include <doctest.h>

#include <cmath>

#include "modcon/errors.hpp"
#include "modcon/probe.hpp"
#include "modcon/rng.hpp"
#include "reference_solver.hpp"

using namespace modcon;

namespace {

Eigen::MatrixXd to_matrix(const testsupport::Problem& p) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(p.n), static_cast<Eigen::Index>(p.d));
    for (std::size_t i = 0; i < p.n; ++i) {
        for (std::size_t j = 0; j < p.d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p.at(i, j);
    }
    return X;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

TEST_CASE("soft threshold") {
    CHECK(soft_threshold(3.0f, 1.0f) == 2.0f);
    CHECK(soft_threshold(-0.5f, 1.0f) == 0.0f);
    CHECK(soft_threshold(-3.0f, 1.0f) == -2.0f);
    for (float x : {-7.5f, -1e-20f, 0.0f, 3.25f, 1e30f}) CHECK(soft_threshold(x, 0.0f) == x);
    CHECK(soft_threshold(1.0, 1.0) == 0.0);
}

TEST_CASE("null model loss is log 2") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(6, 3);
    Eigen::VectorXd y(6);
    y << 0, 1, 0, 1, 1, 0;
    const auto lg = logistic_loss_grad(Eigen::VectorXd::Zero(3), 0.0, X, y);
    CHECK(lg.loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("single zero sample has bias gradient -1/2") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(1, 2);
    Eigen::VectorXd y(1);
    y << 1;
    const auto lg = logistic_loss_grad(Eigen::VectorXd::Zero(2), 0.0, X, y);
    CHECK(lg.grad_b == doctest::Approx(-0.5));
    CHECK(lg.grad_w.isZero());
}

TEST_CASE("analytic gradient matches central differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto p = testsupport::random_problem(100 + seed, 10, 5);
        const auto X = to_matrix(p);
        const auto y = to_vector(p.y);
        Rng rng(seed);
        Eigen::VectorXd w(5);
        for (auto& v : w) v = rng.normal();
        const double b = rng.normal();
        const auto lg = logistic_loss_grad(w, b, X, y);
        const double h = 1e-4;
        Eigen::VectorXd fd(6), an(6);
        for (int j = 0; j < 5; ++j) {
            Eigen::VectorXd wp = w, wm = w;
            wp[j] += h;
            wm[j] -= h;
            fd[j] = (logistic_loss_grad(wp, b, X, y).loss - logistic_loss_grad(wm, b, X, y).loss) / (2 * h);
            an[j] = lg.grad_w[j];
        }
        fd[5] = (logistic_loss_grad(w, b + h, X, y).loss - logistic_loss_grad(w, b - h, X, y).loss) / (2 * h);
        an[5] = lg.grad_b;
        CHECK((an - fd).norm() / std::max(1e-12, fd.norm()) < 1e-5);
    }
}

TEST_CASE("lambda above lambda_max gives the zero solution with logit-mean bias") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto p = testsupport::random_problem(seed, 30, 4);
        const auto X = to_matrix(p);
        const auto y = to_vector(p.y);
        // Independent lambda_max: ||X^T (ybar - y)||_inf / n.
        const double ybar = y.mean();
        double lmax = 0.0;
        for (std::size_t j = 0; j < p.d; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < p.n; ++i) s += p.at(i, j) * (ybar - p.y[i]);
            lmax = std::max(lmax, std::abs(s) / static_cast<double>(p.n));
        }
        CHECK(lambda_max(X, y) == doctest::Approx(lmax));
        for (double scale : {1.0, 1.5}) {
            TrainConfig cfg;
            cfg.lambda = lmax * scale;
            const auto fit = train_lasso_logistic(X, y, cfg);
            CHECK(fit.weights.isZero(0.0));
            CHECK(fit.bias == doctest::Approx(std::log(ybar / (1 - ybar))));
        }
    }
}

TEST_CASE("objective matches the coordinate-descent reference") {
    const auto p = testsupport::random_problem(42, 20, 3);
    const auto ref = testsupport::reference_lasso_logistic(p, 0.01);
    TrainConfig cfg;
    cfg.lambda = 0.01;
    cfg.tol = 1e-12;
    cfg.max_iters = 100000;
    const auto fit = train_lasso_logistic(to_matrix(p), to_vector(p.y), cfg);
    CHECK(std::abs(fit.objective - ref.objective) < 1e-4);
    CHECK(lasso_objective(fit.weights, fit.bias, to_matrix(p), to_vector(p.y), 0.01) ==
          doctest::Approx(testsupport::reference_objective(p, {fit.weights.data(), fit.weights.data() + 3}, fit.bias, 0.01)));
}

TEST_CASE("objective history is non-increasing") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = testsupport::random_problem(seed + 7, 40, 6);
        const auto X = to_matrix(p);
        const auto y = to_vector(p.y);
        TrainConfig cfg;
        cfg.lambda = 0.1 * lambda_max(X, y);
        cfg.record_history = true;
        const auto fit = train_lasso_logistic(X, y, cfg);
        REQUIRE(fit.history.size() >= 2);
        for (std::size_t i = 1; i < fit.history.size(); ++i) CHECK(fit.history[i] <= fit.history[i - 1]);
    }
}

TEST_CASE("planted separable feature is the only survivor") {
    Rng rng(9);
    const int n = 400, d = 8;
    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
        y[i] = X(i, 0) > 0 ? 1.0 : 0.0;
    }
    TrainConfig cfg;
    cfg.lambda = 0.05;
    const auto fit = train_lasso_logistic(X, y, cfg);
    CHECK(fit.weights[0] > 0);
    for (int j = 1; j < d; ++j) CHECK(fit.weights[j] == 0.0);
}

TEST_CASE("predict_proba") {
    ProbeModel m;
    m.weights = {0.0f, 0.0f};
    m.stats.means = {0.0f, 0.0f};
    m.stats.stds = {1.0f, 1.0f};
    const std::vector<float> x{3.0f, -2.0f};
    CHECK(predict_proba(m, x) == 0.5);
    m.bias = 10.0f;
    CHECK(predict_proba(m, x) > 0.9999);
    CHECK(predict_proba(m, x) < 1.0);
    m.bias = -1000.0f;
    CHECK(predict_proba(m, x) > 0.0);
}

TEST_CASE("fitted probe puts signal-side samples above one half") {
    Rng rng(4);
    const int n = 300, d = 10;
    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        y[i] = i % 2;
        for (int j = 0; j < d; ++j) X(i, j) = rng.normal() + (j == 3 ? (y[i] ? 3.0 : -3.0) : 0.0) + 5.0;
    }
    const auto probe = fit_probe(X, y, std::nullopt, TrainConfig{}, 1);
    Eigen::VectorXd x = Eigen::VectorXd::Constant(d, 5.0);
    x[3] = 9.0;
    CHECK(predict_proba(probe, x) > 0.5);
    x[3] = 1.0;
    CHECK(predict_proba(probe, x) < 0.5);
    const auto ev = evaluate(probe, X, y);
    CHECK(ev.accuracy > 0.95);
    CHECK(ev.true_pos + ev.true_neg + ev.false_pos + ev.false_neg == static_cast<std::size_t>(n));
}

TEST_CASE("standardization floors zero variance") {
    Eigen::MatrixXd X(3, 2);
    X << 1, 5, 2, 5, 3, 5;
    const auto s = StandardizationStats::compute(X);
    CHECK(s.stds[1] >= static_cast<float>(kStdFloor));
    CHECK(s.apply(X).allFinite());
}

TEST_CASE("training rejects invalid inputs") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(4, 2);
    Eigen::VectorXd y(4);
    y << 0, 1, 2, 1;
    CHECK_THROWS_AS(train_lasso_logistic(X, y, TrainConfig{}), ArgumentError);
    y << 0, 1, 0, 1;
    TrainConfig neg;
    neg.lambda = -1;
    CHECK_THROWS_AS(train_lasso_logistic(X, y, neg), ArgumentError);
    X(0, 0) = std::nan("");
    CHECK_THROWS(train_lasso_logistic(X, y, TrainConfig{}));
}

TEST_CASE("probe model JSON round-trip") {
    testsupport::TempDir dir("probe-json");
    ProbeModel m;
    m.layer = 12;
    m.kind = ActivationKind::mlp_out;
    m.weights = {0.1f, -2.5f, 0.0f};
    m.bias = 0.3f;
    m.lambda = 0.0123;
    m.stats.means = {1.0f, 2.0f, 3.0f};
    m.stats.stds = {1.5f, 0.5f, 2.0f};
    save_probe(m, dir / "p.json");
    const auto back = load_probe(dir / "p.json");
    CHECK(back.layer == 12);
    CHECK(back.kind == ActivationKind::mlp_out);
    CHECK(back.weights == m.weights);
    CHECK(back.bias == m.bias);
    CHECK(back.stats.means == m.stats.means);
    CHECK(back.stats.stds == m.stats.stds);
    CHECK(back.lambda == m.lambda);
    CHECK(probe_filename(12, ActivationKind::mlp_out) == "probe_12_mlp_out.json");
}

TEST_CASE("L1 norm of the solution shrinks as lambda grows") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = testsupport::random_problem(300 + seed, 50, 8);
        const auto X = to_matrix(p);
        const auto y = to_vector(p.y);
        const double lmax = lambda_max(X, y);
        double prev = INFINITY;
        for (double frac : {0.001, 0.01, 0.05, 0.1, 0.3, 0.6, 1.0}) {
            TrainConfig cfg;
            cfg.lambda = frac * lmax;
            cfg.tol = 1e-12;
            cfg.max_iters = 200000;
            const double l1 = train_lasso_logistic(X, y, cfg).weights.lpNorm<1>();
            CHECK(l1 <= prev + 1e-6);
            prev = l1;
        }
    }
}

TEST_CASE("stopping at tol lands within 10 tol of a longer run") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto p = testsupport::random_problem(500 + seed, 50, 8);
        const auto X = to_matrix(p);
        const auto y = to_vector(p.y);
        TrainConfig cfg;
        cfg.lambda = 0.05 * lambda_max(X, y);
        const auto fit = train_lasso_logistic(X, y, cfg);
        cfg.tol = 1e-14;
        cfg.max_iters = 500000;
        const auto longer = train_lasso_logistic(X, y, cfg);
        CHECK(fit.objective - longer.objective <= 10 * 1e-7 * std::abs(longer.objective));
    }
}
