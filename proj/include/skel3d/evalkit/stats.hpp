#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace skel3d::evalkit {

enum class Alternative { less, greater };

std::string to_string(Alternative a);
Alternative alternative_from_string(const std::string& s);

struct UTestResult {
  double u = 0.0;
  double p = 1.0;
  Alternative alternative = Alternative::less;
  bool exact = false;
};

// One-sided Mann-Whitney U test. U = R_x - n_x (n_x + 1) / 2 with midranks.
// `less` tests whether x is stochastically smaller than y. The p-value is
// exact (full enumeration) when n_x + n_y <= 10 and there are no ties;
// otherwise a normal approximation with tie and continuity correction.
UTestResult mann_whitney_u(std::span<const double> x, std::span<const double> y, Alternative alternative);

// Exact null distribution tail for tie-free samples of any size (dynamic
// programming over rank subsets): P(U <= u) for less, P(U >= u) for greater.
double mann_whitney_exact_p(int nx, int ny, double u, Alternative alternative);

// Midranks (1-based) of the values.
std::vector<double> midranks(std::span<const double> v);

// Standard deviation of B resampled means.
double bootstrap_se(std::span<const double> values, int resamples, std::uint64_t seed);

double spearman(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> v);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev(std::span<const double> v);

double normal_cdf(double z);

}  // namespace skel3d::evalkit
