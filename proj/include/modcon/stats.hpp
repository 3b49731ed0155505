#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace modcon {

double mean(std::span<const double> x);
// Unbiased (n - 1) sample variance; 0 for fewer than two values.
double sample_variance(std::span<const double> x);

// 1-based ranks with ties assigned their average rank.
std::vector<double> average_ranks(std::span<const double> x);

double pearson(std::span<const double> x, std::span<const double> y);

// Spearman rank correlation with average-rank ties. Throws ArgumentError for
// fewer than 3 points or when either variable is constant.
double spearman(std::span<const double> x, std::span<const double> y);

double normal_cdf(double z);

// Exact two-sided binomial test p-value (sum of outcomes no more likely than k).
double binomial_two_sided_p(std::size_t k, std::size_t n, double p = 0.5);

}  // namespace modcon
