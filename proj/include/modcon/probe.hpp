#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "modcon/activation_store.hpp"
#include "modcon/dataset.hpp"

namespace modcon {

inline constexpr double kStdFloor = 1e-8;

// Per-feature z-scoring statistics, computed on the training split only.
struct StandardizationStats {
    std::vector<float> means;
    std::vector<float> stds;  // each >= kStdFloor

    static StandardizationStats compute(const Eigen::MatrixXd& X);
    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
    double standardized(std::size_t j, double x) const { return (x - means[j]) / stds[j]; }
};

struct TrainConfig {
    double lambda = 0.0;
    int max_iters = 5000;
    double tol = 1e-7;  // relative objective change
    bool backtracking = true;
    bool accelerate = true;
    bool record_history = false;
};

struct LassoFit {
    Eigen::VectorXd weights;
    double bias = 0.0;
    int iterations = 0;
    double objective = 0.0;
    bool converged = false;
    std::vector<double> history;  // objective after each iteration, when recorded
};

struct ProbeModel {
    int layer = 0;
    ActivationKind kind = ActivationKind::residual;
    std::vector<float> weights;
    float bias = 0.0f;
    double lambda = 0.0;
    StandardizationStats stats;
    int iterations = 0;
    double final_objective = 0.0;
};

float soft_threshold(float v, float t);
double soft_threshold(double v, double t);

struct LossGrad {
    double loss = 0.0;
    Eigen::VectorXd grad_w;
    double grad_b = 0.0;
};

// Mean logistic loss (1/n) sum[log(1 + e^z) - y z], z = Xw + b, and its exact gradient.
LossGrad logistic_loss_grad(const Eigen::VectorXd& weights, double bias, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& y);

// (1/n) * logistic loss + lambda * ||w||_1.
double lasso_objective(const Eigen::VectorXd& weights, double bias, const Eigen::MatrixXd& X,
                       const Eigen::VectorXd& y, double lambda);

// Smallest lambda at which w = 0 is optimal: ||X^T (mean(y) 1 - y)||_inf / n.
double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// Proximal gradient (monotone FISTA when config.accelerate) on the lasso
// objective with an unpenalized bias. X is expected standardized.
LassoFit train_lasso_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TrainConfig& config,
                              const LassoFit* warm_start = nullptr);

struct LambdaSelection {
    double lambda = 0.0;
    std::vector<double> grid;
    std::vector<double> holdout_loss;
};

// Chooses lambda from {lambda_max * 10^-k, k = 1..5} by holdout log-loss on a
// seeded stratified 80/20 split of the (standardized) training data.
LambdaSelection select_lambda(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TrainConfig& base,
                              std::uint64_t seed);

// Standardizes raw activations, trains, and packages the model. lambda =
// nullopt selects lambda automatically.
ProbeModel fit_probe(const Eigen::MatrixXd& X_raw, const Eigen::VectorXd& y, std::optional<double> lambda,
                     const TrainConfig& base, std::uint64_t seed, int layer = 0,
                     ActivationKind kind = ActivationKind::residual);

double sigmoid(double z);

// Probability of conflict for one raw activation vector; strictly inside (0, 1).
double predict_proba(const ProbeModel& model, std::span<const float> x);
double predict_proba(const ProbeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);

struct Evaluation {
    double accuracy = 0.0;
    std::size_t n = 0;
    std::size_t true_pos = 0;
    std::size_t true_neg = 0;
    std::size_t false_pos = 0;
    std::size_t false_neg = 0;
};

Evaluation evaluate(const ProbeModel& model, const Eigen::MatrixXd& X_test, const Eigen::VectorXd& y_test);

struct SweepConfig {
    std::vector<ColorName> train_colors = default_train_colors();
    std::vector<ColorName> test_colors = default_test_colors();
    std::optional<double> lambda;  // nullopt: automatic selection per cell
    TrainConfig train;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool balance_classes = true;
};

struct SweepCell {
    int layer = 0;
    ActivationKind kind = ActivationKind::residual;
    double accuracy = 0.0;
    std::size_t n_test = 0;
    std::size_t n_train = 0;
    double lambda = 0.0;
    Evaluation eval;
};

struct SweepResult {
    std::vector<SweepCell> cells;  // ordered by (layer, kind)
    std::vector<ProbeModel> models;

    const SweepCell& cell(int layer, ActivationKind kind) const;
    const ProbeModel& model(int layer, ActivationKind kind) const;
    // Highest test accuracy; ties go to the earliest (layer, kind).
    const SweepCell& best() const;
};

// Gathers the rows of one (layer, kind) cell for the given samples.
Eigen::MatrixXd gather_matrix(const Dump& dump, const std::vector<std::size_t>& samples, int layer,
                              ActivationKind kind);

SweepResult layerwise_sweep(const Dump& dump, const DatasetManifest& manifest, const SweepConfig& config);

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path);
std::vector<SweepCell> read_sweep_csv(const std::filesystem::path& path);

std::filesystem::path probe_filename(int layer, ActivationKind kind);
void save_probe(const ProbeModel& model, const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);

}  // namespace modcon
