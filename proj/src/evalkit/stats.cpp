#include "skel3d/evalkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skel3d/core/error.hpp"
#include "skel3d/core/rng.hpp"

namespace skel3d::evalkit {

std::string to_string(Alternative a) { return a == Alternative::less ? "less" : "greater"; }

Alternative alternative_from_string(const std::string& s) {
  if (s == "less") return Alternative::less;
  if (s == "greater") return Alternative::greater;
  throw InputError("unknown alternative '" + s + "'");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double mann_whitney_exact_p(int nx, int ny, double u, Alternative alternative) {
  // counts[k][s]: number of k-subsets of the ranks seen so far with U-contribution s,
  // where choosing rank r (1-based) for the k-th x adds r - k to U.
  const int umax = nx * ny;
  std::vector<std::vector<double>> counts(static_cast<std::size_t>(nx + 1), std::vector<double>(static_cast<std::size_t>(umax + 1), 0.0));
  counts[0][0] = 1.0;
  const int n = nx + ny;
  for (int r = 1; r <= n; ++r) {
    for (int k = std::min(r, nx); k >= 1; --k) {
      const int add = r - k;  // number of y values ranked below this x
      if (add > ny) continue;
      auto& dst = counts[static_cast<std::size_t>(k)];
      const auto& src = counts[static_cast<std::size_t>(k - 1)];
      for (int s = umax - add; s >= 0; --s) dst[static_cast<std::size_t>(s + add)] += src[static_cast<std::size_t>(s)];
    }
  }
  const auto& dist = counts[static_cast<std::size_t>(nx)];
  double total = 0.0, tail = 0.0;
  for (int s = 0; s <= umax; ++s) {
    total += dist[static_cast<std::size_t>(s)];
    const bool in_tail = alternative == Alternative::less ? s <= u + 1e-9 : s >= u - 1e-9;
    if (in_tail) tail += dist[static_cast<std::size_t>(s)];
  }
  return tail / total;
}

UTestResult mann_whitney_u(std::span<const double> x, std::span<const double> y, Alternative alternative) {
  if (x.empty() || y.empty()) throw InputError("mann_whitney_u: both samples must be non-empty");
  for (double v : x)
    if (!std::isfinite(v)) throw InputError("mann_whitney_u: non-finite value");
  for (double v : y)
    if (!std::isfinite(v)) throw InputError("mann_whitney_u: non-finite value");
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  const auto ranks = midranks(pooled);
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  double rx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) rx += ranks[i];

  UTestResult res;
  res.alternative = alternative;
  res.u = rx - nx * (nx + 1.0) / 2.0;

  // Tie groups.
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    if (t > 1) ties = true;
    tie_term += t * t * t - t;
    i = j;
  }

  const std::size_t n = pooled.size();
  if (n <= 10 && !ties) {
    res.exact = true;
    res.p = mann_whitney_exact_p(static_cast<int>(x.size()), static_cast<int>(y.size()), res.u, alternative);
    return res;
  }
  const double nn = nx + ny;
  const double mu = nx * ny / 2.0;
  const double var = nx * ny / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (!(var > 0.0)) {
    res.p = 1.0;
    return res;
  }
  const double sd = std::sqrt(var);
  if (alternative == Alternative::less) {
    res.p = normal_cdf((res.u - mu + 0.5) / sd);
  } else {
    res.p = 1.0 - normal_cdf((res.u - mu - 0.5) / sd);
  }
  res.p = std::clamp(res.p, 0.0, 1.0);
  return res;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double bootstrap_se(std::span<const double> values, int resamples, std::uint64_t seed) {
  if (values.size() < 2) throw InputError("bootstrap_se needs at least 2 values");
  if (resamples < 2) throw InputError("bootstrap_se needs at least 2 resamples");
  Rng rng(mix_seed({seed, 0x626f6f74ULL}));
  const int n = static_cast<int>(values.size());
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += values[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    m = s / n;
  }
  return stddev(means);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InputError("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const auto rx = midranks(x), ry = midranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace skel3d::evalkit
