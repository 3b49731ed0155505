#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace testsupport {

// Dense row-major problem for the reference solver; labels are 0/1.
struct Problem {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> x;  // n * d
    std::vector<double> y;
    double at(std::size_t i, std::size_t j) const { return x[i * d + j]; }
};

struct ReferenceFit {
    std::vector<double> w;
    double b = 0.0;
    double objective = 0.0;
    std::size_t sweeps = 0;
};

// mean logistic loss + lambda * ||w||_1 with an unpenalized intercept.
double reference_objective(const Problem& p, const std::vector<double>& w, double b, double lambda);

// Cyclic coordinate descent on a quadratic majorizer (curvature bound 1/4),
// with soft-thresholding on each weight.
ReferenceFit reference_lasso_logistic(const Problem& p, double lambda, double tol = 1e-13,
                                      std::size_t max_sweeps = 2'000'000);

// Deterministic test instance: features N(0,1), labels from a sparse logistic model.
Problem random_problem(std::uint64_t seed, std::size_t n, std::size_t d);

class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

// Relative path -> file bytes for every regular file under `root`.
std::map<std::string, std::string> read_tree(const std::filesystem::path& root);

std::string read_file(const std::filesystem::path& path);

}  // namespace testsupport
