#include "modcon/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "modcon/errors.hpp"
#include "modcon/parallel.hpp"
#include "modcon/rng.hpp"

namespace modcon {

namespace {

constexpr int kStopWindow = 10;

// Mean logistic loss; with `residual`, also stores (sigmoid(z) - y) / n from the same exponentials.
double smooth_loss(const Eigen::VectorXd& z, const Eigen::VectorXd& y, Eigen::VectorXd* residual = nullptr) {
    const auto n = static_cast<double>(z.size());
    const Eigen::ArrayXd e = (-z.array().abs()).exp();
    const double loss = (z.array().max(0.0) + e.log1p() - y.array() * z.array()).sum() / n;
    if (residual) {
        const Eigen::ArrayXd p = (z.array() >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e));
        *residual = (p - y.array()) / n;
    }
    return loss;
}

Eigen::VectorXd sigmoid_vec(const Eigen::VectorXd& z) {
    Eigen::VectorXd p(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) p[i] = sigmoid(z[i]);
    return p;
}

void check_problem(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (X.rows() == 0) throw ArgumentError("empty training data");
    if (X.rows() != y.size())
        throw ArgumentError("X has " + std::to_string(X.rows()) + " rows but " + std::to_string(y.size()) + " labels");
}

// Squared spectral norm of [X 1] by power iteration.
double squared_norm_with_bias(const Eigen::MatrixXd& X) {
    const auto d = X.cols();
    Eigen::VectorXd v = Eigen::VectorXd::Ones(d + 1) / std::sqrt(static_cast<double>(d + 1));
    double est = 0.0;
    for (int it = 0; it < 60; ++it) {
        Eigen::VectorXd u = X * v.head(d);
        u.array() += v[d];
        Eigen::VectorXd next(d + 1);
        next.head(d) = X.transpose() * u;
        next[d] = u.sum();
        const double norm = next.norm();
        if (norm == 0.0) return 1.0;
        const double prev = est;
        est = norm;  // ||A^T A v|| with ||v|| = 1
        v = next / norm;
        if (it > 5 && std::abs(est - prev) <= 1e-10 * est) break;
    }
    return est;
}

double label_mean(const Eigen::VectorXd& y) { return y.mean(); }

}  // namespace

// ---------------------------------------------------------------------------

StandardizationStats StandardizationStats::compute(const Eigen::MatrixXd& X) {
    StandardizationStats s;
    const auto n = static_cast<double>(X.rows());
    s.means.resize(static_cast<std::size_t>(X.cols()));
    s.stds.resize(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double mean = X.col(j).mean();
        const double var = (X.col(j).array() - mean).square().sum() / n;
        s.means[static_cast<std::size_t>(j)] = static_cast<float>(mean);
        s.stds[static_cast<std::size_t>(j)] = static_cast<float>(std::max(std::sqrt(var), kStdFloor));
    }
    return s;
}

Eigen::MatrixXd StandardizationStats::apply(const Eigen::MatrixXd& X) const {
    if (static_cast<std::size_t>(X.cols()) != means.size())
        throw ArgumentError("standardization expects " + std::to_string(means.size()) + " features, got " +
                            std::to_string(X.cols()));
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double m = means[static_cast<std::size_t>(j)];
        const double s = stds[static_cast<std::size_t>(j)];
        out.col(j) = (X.col(j).array() - m) / s;
    }
    return out;
}

float soft_threshold(float v, float t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0f;
}

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

LossGrad logistic_loss_grad(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    check_problem(X, y);
    if (w.size() != X.cols()) throw ArgumentError("weight length does not match feature count");
    Eigen::VectorXd z = X * w;
    z.array() += b;
    const Eigen::VectorXd r = (sigmoid_vec(z) - y) / static_cast<double>(X.rows());
    return {smooth_loss(z, y), X.transpose() * r, r.sum()};
}

double lasso_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double lambda) {
    Eigen::VectorXd z = X * w;
    z.array() += b;
    return smooth_loss(z, y) + lambda * w.lpNorm<1>();
}

double lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    check_problem(X, y);
    const Eigen::VectorXd r = Eigen::VectorXd::Constant(y.size(), label_mean(y)) - y;
    if (X.cols() == 0) return 0.0;
    return (X.transpose() * r).cwiseAbs().maxCoeff() / static_cast<double>(X.rows());
}

LassoFit train_lasso_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TrainConfig& config,
                              const LassoFit* warm_start) {
    check_problem(X, y);
    if (X.rows() < 2) throw TrainingError("need at least 2 samples to train");
    if (config.lambda < 0) throw ArgumentError("lambda must be >= 0");
    if (config.max_iters < 1 || !(config.tol > 0)) throw ArgumentError("need max_iters >= 1 and tol > 0");
    if (!X.allFinite()) throw DataError("training matrix contains non-finite values");
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw ArgumentError("labels must be 0 or 1");
    }
    const double ybar = label_mean(y);
    if (ybar == 0.0 || ybar == 1.0) throw TrainingError("training labels contain a single class");

    const auto n = static_cast<double>(X.rows());
    const auto d = X.cols();
    const double lambda = config.lambda;

    LassoFit fit;
    // Above lambda_max the all-zero solution with the intercept-only bias is optimal.
    if (lambda >= lambda_max(X, y) * (1.0 - 1e-12)) {
        fit.weights = Eigen::VectorXd::Zero(d);
        fit.bias = std::log(ybar / (1.0 - ybar));
        fit.objective = lasso_objective(fit.weights, fit.bias, X, y, lambda);
        fit.converged = true;
        if (config.record_history) fit.history.push_back(fit.objective);
        return fit;
    }

    Eigen::VectorXd w = warm_start ? warm_start->weights : Eigen::VectorXd::Zero(d);
    double b = warm_start ? warm_start->bias : std::log(ybar / (1.0 - ybar));
    Eigen::VectorXd zx = X * w;
    zx.array() += b;
    double F = smooth_loss(zx, y) + lambda * w.lpNorm<1>();

    double L = 1.02 * squared_norm_with_bias(X) / (4.0 * n);
    if (!(L > 0)) L = 1.0;

    // Extrapolated point (v, c) with z_v = X v + c maintained alongside.
    Eigen::VectorXd v = w, zv = zx;
    double c = b;
    double t = 1.0;
    if (config.record_history) fit.history.push_back(F);

    Eigen::VectorXd w_new(d), z_new(X.rows()), g(d), r(X.rows());
    std::array<double, kStopWindow> recent;
    recent.fill(F);
    int iter = 0;
    for (; iter < config.max_iters; ++iter) {
        const double fv = smooth_loss(zv, y, &r);
        g.noalias() = X.transpose() * r;
        const double gb = r.sum();

        double b_new = c;
        double f_new = 0.0;
        for (;;) {
            for (Eigen::Index j = 0; j < d; ++j) w_new[j] = soft_threshold(v[j] - g[j] / L, lambda / L);
            b_new = c - gb / L;
            z_new.noalias() = X * w_new;
            z_new.array() += b_new;
            f_new = smooth_loss(z_new, y);
            if (!config.backtracking) break;
            const Eigen::VectorXd dw = w_new - v;
            const double db = b_new - c;
            const double model = fv + g.dot(dw) + gb * db + 0.5 * L * (dw.squaredNorm() + db * db);
            if (f_new <= model + 1e-12 * std::abs(fv)) break;
            L *= 2.0;
        }
        const double F_new = f_new + lambda * w_new.lpNorm<1>();

        const bool accepted = !config.accelerate || F_new <= F;
        if (config.accelerate) {
            const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            // Monotone FISTA: the iterate only moves when the objective does not increase.
            Eigen::VectorXd w_next = accepted ? w_new : w;
            Eigen::VectorXd z_next = accepted ? z_new : zx;
            const double b_next = accepted ? b_new : b;
            const double a = t / t_next;
            const double m = (t - 1.0) / t_next;
            v = w_next + a * (w_new - w_next) + m * (w_next - w);
            c = b_next + a * (b_new - b_next) + m * (b_next - b);
            zv = z_next + a * (z_new - z_next) + m * (z_next - zx);
            w = std::move(w_next);
            zx = std::move(z_next);
            b = b_next;
            t = t_next;
            if (accepted) F = F_new;
        } else {
            w = w_new;
            b = b_new;
            zx = z_new;
            v = w;
            c = b;
            zv = zx;
            F = F_new;
        }
        if (config.record_history) fit.history.push_back(F);
        // Relative change across the last kStopWindow iterations; a single FISTA step can
        // stall well short of the optimum.
        const double F_back = recent[static_cast<std::size_t>(iter % kStopWindow)];
        recent[static_cast<std::size_t>(iter % kStopWindow)] = F;
        if (accepted && iter + 1 >= kStopWindow &&
            std::abs(F_back - F) <= config.tol * std::max(std::abs(F_back), 1e-300)) {
            fit.converged = true;
            ++iter;
            break;
        }
    }
    fit.weights = std::move(w);
    fit.bias = b;
    fit.iterations = iter;
    fit.objective = F;
    return fit;
}

LambdaSelection select_lambda(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TrainConfig& base,
                              std::uint64_t seed) {
    check_problem(X, y);
    std::vector<Eigen::Index> pos, neg;
    for (Eigen::Index i = 0; i < y.size(); ++i) (y[i] > 0.5 ? pos : neg).push_back(i);
    if (pos.size() < 2 || neg.size() < 2) throw TrainingError("lambda selection needs >= 2 samples per class");
    Rng rng(derive_seed(seed, "lambda-holdout"));
    shuffle(pos, rng);
    shuffle(neg, rng);
    std::vector<Eigen::Index> fit_rows, hold_rows;
    for (const auto* cls : {&pos, &neg}) {
        const auto n_hold = std::max<std::size_t>(1, cls->size() / 5);
        for (std::size_t i = 0; i < cls->size(); ++i) (i < n_hold ? hold_rows : fit_rows).push_back((*cls)[i]);
    }
    std::sort(fit_rows.begin(), fit_rows.end());
    std::sort(hold_rows.begin(), hold_rows.end());
    const Eigen::MatrixXd X_fit = X(fit_rows, Eigen::all);
    const Eigen::VectorXd y_fit = y(fit_rows);
    const Eigen::MatrixXd X_hold = X(hold_rows, Eigen::all);
    const Eigen::VectorXd y_hold = y(hold_rows);

    LambdaSelection sel;
    const double lmax = lambda_max(X_fit, y_fit);
    std::optional<LassoFit> prev;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 5; ++k) {
        TrainConfig cfg = base;
        cfg.lambda = lmax * std::pow(10.0, -k);
        cfg.record_history = false;
        LassoFit fit = train_lasso_logistic(X_fit, y_fit, cfg, prev ? &*prev : nullptr);
        Eigen::VectorXd z = X_hold * fit.weights;
        z.array() += fit.bias;
        const double loss = smooth_loss(z, y_hold);
        sel.grid.push_back(cfg.lambda);
        sel.holdout_loss.push_back(loss);
        if (loss < best) {  // strict: ties keep the larger lambda
            best = loss;
            sel.lambda = cfg.lambda;
        } else if (loss > sel.holdout_loss[sel.holdout_loss.size() - 2]) {
            break;  // holdout loss has turned upward along the path
        }
        prev = std::move(fit);
    }
    return sel;
}

ProbeModel fit_probe(const Eigen::MatrixXd& X_raw, const Eigen::VectorXd& y, std::optional<double> lambda,
                     const TrainConfig& base, std::uint64_t seed, int layer, ActivationKind kind) {
    ProbeModel m;
    m.layer = layer;
    m.kind = kind;
    m.stats = StandardizationStats::compute(X_raw);
    const Eigen::MatrixXd X = m.stats.apply(X_raw);
    TrainConfig cfg = base;
    cfg.lambda = lambda ? *lambda : select_lambda(X, y, base, seed).lambda;
    const LassoFit fit = train_lasso_logistic(X, y, cfg);
    m.lambda = cfg.lambda;
    m.weights.resize(static_cast<std::size_t>(fit.weights.size()));
    for (Eigen::Index j = 0; j < fit.weights.size(); ++j) m.weights[static_cast<std::size_t>(j)] = static_cast<float>(fit.weights[j]);
    m.bias = static_cast<float>(fit.bias);
    m.iterations = fit.iterations;
    m.final_objective = fit.objective;
    return m;
}

namespace {

double clamp_open(double p) {
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    const double hi = std::nextafter(1.0, 0.0);
    return std::clamp(p, lo, hi);
}

}  // namespace

double predict_proba(const ProbeModel& model, std::span<const float> x) {
    if (x.size() != model.weights.size())
        throw ArgumentError("activation length " + std::to_string(x.size()) + " != probe dimension " +
                            std::to_string(model.weights.size()));
    double z = model.bias;
    for (std::size_t j = 0; j < x.size(); ++j) z += model.weights[j] * model.stats.standardized(j, x[j]);
    return clamp_open(sigmoid(z));
}

double predict_proba(const ProbeModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    if (static_cast<std::size_t>(x.size()) != model.weights.size())
        throw ArgumentError("activation length " + std::to_string(x.size()) + " != probe dimension " +
                            std::to_string(model.weights.size()));
    double z = model.bias;
    for (std::size_t j = 0; j < model.weights.size(); ++j)
        z += model.weights[j] * model.stats.standardized(j, x[static_cast<Eigen::Index>(j)]);
    return clamp_open(sigmoid(z));
}

Evaluation evaluate(const ProbeModel& model, const Eigen::MatrixXd& X_test, const Eigen::VectorXd& y_test) {
    if (X_test.rows() == 0) throw ArgumentError("empty test set");
    if (X_test.rows() != y_test.size()) throw ArgumentError("test rows and labels differ in count");
    Evaluation e;
    e.n = static_cast<std::size_t>(X_test.rows());
    for (Eigen::Index i = 0; i < X_test.rows(); ++i) {
        const bool predicted = predict_proba(model, X_test.row(i).transpose()) >= 0.5;
        const bool actual = y_test[i] > 0.5;
        if (predicted && actual) ++e.true_pos;
        else if (!predicted && !actual) ++e.true_neg;
        else if (predicted) ++e.false_pos;
        else ++e.false_neg;
    }
    e.accuracy = static_cast<double>(e.true_pos + e.true_neg) / static_cast<double>(e.n);
    return e;
}

// ---------------------------------------------------------------------------
// Sweep

const SweepCell& SweepResult::cell(int layer, ActivationKind kind) const {
    for (const auto& c : cells) {
        if (c.layer == layer && c.kind == kind) return c;
    }
    throw DataError("sweep has no cell (layer " + std::to_string(layer) + ", " + std::string(to_string(kind)) + ")");
}

const ProbeModel& SweepResult::model(int layer, ActivationKind kind) const {
    for (const auto& m : models) {
        if (m.layer == layer && m.kind == kind) return m;
    }
    throw DataError("sweep has no model (layer " + std::to_string(layer) + ", " + std::string(to_string(kind)) + ")");
}

const SweepCell& SweepResult::best() const {
    if (cells.empty()) throw DataError("empty sweep");
    const SweepCell* best = &cells.front();
    for (const auto& c : cells) {
        if (c.accuracy > best->accuracy) best = &c;
    }
    return *best;
}

Eigen::MatrixXd gather_matrix(const Dump& dump, const std::vector<std::size_t>& samples, int layer,
                              ActivationKind kind) {
    const int d = dump.d_model(kind);
    Eigen::MatrixXd X(static_cast<Eigen::Index>(samples.size()), d);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto v = dump.activation(samples[i], layer, kind);
        for (int j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), j) = v[static_cast<std::size_t>(j)];
    }
    return X;
}

namespace {

struct Split {
    std::vector<std::size_t> rows;
    Eigen::VectorXd labels;
};

Split rows_for(const Dump& dump, const DatasetManifest& split) {
    Split s;
    s.labels.resize(static_cast<Eigen::Index>(split.samples.size()));
    for (std::size_t i = 0; i < split.samples.size(); ++i) {
        s.rows.push_back(dump.require_sample(split.samples[i].sample_id));
        s.labels[static_cast<Eigen::Index>(i)] = split.samples[i].conflict_label ? 1.0 : 0.0;
    }
    return s;
}

}  // namespace

SweepResult layerwise_sweep(const Dump& dump, const DatasetManifest& manifest, const SweepConfig& config) {
    if (dump.n_layers() <= 0) throw DataError("dump " + dump.path().string() + " declares no layers");
    for (auto k : kAllKinds) {
        if (!dump.has_kind(k))
            throw DataError("dump " + dump.path().string() + " is missing cell (layer 0, " + std::string(to_string(k)) +
                            "): no '" + std::string(to_string(k)) + "' activations");
    }
    auto [train, test] = split_disjoint_colors(manifest, config.train_colors, config.test_colors,
                                               {config.balance_classes, config.seed});
    check_color_disjoint(train, test);
    if (train.samples.empty() || test.samples.empty())
        throw DataError("color split leaves an empty train or test set");
    const Split tr = rows_for(dump, train);
    const Split te = rows_for(dump, test);

    struct Task {
        int layer;
        ActivationKind kind;
    };
    std::vector<Task> tasks;
    for (int l = 0; l < dump.n_layers(); ++l) {
        for (auto k : kAllKinds) tasks.push_back({l, k});
    }
    SweepResult result;
    result.cells.resize(tasks.size());
    result.models.resize(tasks.size());
    parallel_for(tasks.size(), config.threads, [&](std::size_t i) {
        const auto [layer, kind] = tasks[i];
        const auto seed = derive_seed(config.seed, static_cast<std::uint64_t>(layer) * 8 + static_cast<std::uint64_t>(kind));
        ProbeModel model;
        try {
            model = fit_probe(gather_matrix(dump, tr.rows, layer, kind), tr.labels, config.lambda, config.train,
                              seed, layer, kind);
        } catch (const Error& e) {
            throw DataError("cell (layer " + std::to_string(layer) + ", " + std::string(to_string(kind)) +
                            "): " + e.what());
        }
        const Evaluation ev = evaluate(model, gather_matrix(dump, te.rows, layer, kind), te.labels);
        result.cells[i] = {layer, kind, ev.accuracy, ev.n, tr.rows.size(), model.lambda, ev};
        result.models[i] = std::move(model);
    });
    return result;
}

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << "layer,kind,accuracy,n_test\n";
    char buf[64];
    for (const auto& c : result.cells) {
        std::snprintf(buf, sizeof buf, "%.6f", c.accuracy);
        f << c.layer << ',' << to_string(c.kind) << ',' << buf << ',' << c.n_test << '\n';
    }
}

std::vector<SweepCell> read_sweep_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open sweep CSV: " + path.string());
    std::string line;
    std::getline(f, line);
    if (line.rfind("layer,kind,accuracy,n_test", 0) != 0) throw DataError(path.string() + ": unexpected header");
    std::vector<SweepCell> cells;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string layer, kind, acc, n;
        std::getline(ss, layer, ',');
        std::getline(ss, kind, ',');
        std::getline(ss, acc, ',');
        std::getline(ss, n, ',');
        SweepCell c;
        try {
            c.layer = std::stoi(layer);
            c.kind = parse_activation_kind(kind);
            c.accuracy = std::stod(acc);
            c.n_test = static_cast<std::size_t>(std::stoull(n));
        } catch (const std::exception& e) {
            throw DataError(path.string() + ": malformed row '" + line + "'");
        }
        cells.push_back(c);
    }
    return cells;
}

std::filesystem::path probe_filename(int layer, ActivationKind kind) {
    return "probe_" + std::to_string(layer) + "_" + std::string(to_string(kind)) + ".json";
}

namespace {

nlohmann::json float_array(const std::vector<float>& v) {
    auto a = nlohmann::json::array();
    for (float x : v) a.push_back(static_cast<double>(x));
    return a;
}

std::vector<float> to_floats(const nlohmann::json& a) {
    std::vector<float> out;
    for (const auto& x : a) out.push_back(static_cast<float>(x.get<double>()));
    return out;
}

}  // namespace

void save_probe(const ProbeModel& m, const std::filesystem::path& path) {
    nlohmann::json j;
    j["layer"] = m.layer;
    j["kind"] = to_string(m.kind);
    j["weights"] = float_array(m.weights);
    j["bias"] = static_cast<double>(m.bias);
    j["lambda"] = m.lambda;
    j["stats"] = {{"means", float_array(m.stats.means)}, {"stds", float_array(m.stats.stds)}};
    j["train_meta"] = {{"iterations", m.iterations}, {"final_objective", m.final_objective}};
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << j.dump(1) << '\n';
}

ProbeModel load_probe(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open probe: " + path.string());
    ProbeModel m;
    try {
        const auto j = nlohmann::json::parse(f);
        m.layer = j.at("layer").get<int>();
        m.kind = parse_activation_kind(j.at("kind").get<std::string>());
        m.weights = to_floats(j.at("weights"));
        m.bias = static_cast<float>(j.at("bias").get<double>());
        m.lambda = j.at("lambda").get<double>();
        m.stats.means = to_floats(j.at("stats").at("means"));
        m.stats.stds = to_floats(j.at("stats").at("stds"));
        m.iterations = j.at("train_meta").at("iterations").get<int>();
        m.final_objective = j.at("train_meta").at("final_objective").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (m.stats.means.size() != m.weights.size() || m.stats.stds.size() != m.weights.size())
        throw DataError(path.string() + ": weights and standardization stats differ in length");
    return m;
}

}  // namespace modcon
