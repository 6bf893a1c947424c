#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skel3d/core/image.hpp"
#include "skel3d/evalkit/featnet.hpp"
#include "skel3d/evalkit/stats.hpp"

namespace skel3d::evalkit {

inline const std::array<std::string, 4> kMetricNames{"l1", "psnr", "ssim", "lpips_proxy"};
bool lower_is_better(const std::string& metric);

struct MetricRecord {
  std::string id;
  std::string model;
  double l1 = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double lpips_proxy = 0.0;
  double bbox_iou = 0.0;
  double degradation_level = 0.0;

  double metric(const std::string& name) const;
  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

MetricRecord evaluate_pair(const std::string& id, const std::string& model, const Image& generated,
                           const Image& target, const FeatureNet& net);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
  friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

struct MetricReport {
  std::string model;
  int count = 0;
  std::vector<std::pair<std::string, MetricSummary>> metrics;  // in kMetricNames order
  std::optional<double> fid_proxy;

  const MetricSummary& summary(const std::string& name) const;
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

// Records are sorted by id before reduction.
MetricReport summarize(std::vector<MetricRecord> records, const std::string& model, std::optional<double> fid);

struct MetricComparison {
  std::string metric;
  MetricSummary a, b;
  double mean_delta = 0.0;  // a - b
  UTestResult test;         // x = a, y = b, direction from the metric's polarity
  bool significant_05 = false;
  bool significant_01 = false;
  friend bool operator==(const MetricComparison& l, const MetricComparison& r) {
    return l.metric == r.metric && l.a == r.a && l.b == r.b && l.mean_delta == r.mean_delta && l.test.u == r.test.u &&
           l.test.p == r.test.p && l.test.alternative == r.test.alternative && l.test.exact == r.test.exact &&
           l.significant_05 == r.significant_05 && l.significant_01 == r.significant_01;
  }
};

struct ComparisonReport {
  std::string model_a, model_b;
  int count = 0;
  std::vector<MetricComparison> metrics;
  std::optional<double> fid_a, fid_b;
  friend bool operator==(const ComparisonReport&, const ComparisonReport&) = default;
};

// Requires both record sets to cover the same sample ids.
ComparisonReport compare_models(std::vector<MetricRecord> a, std::vector<MetricRecord> b, std::optional<double> fid_a = {},
                                 std::optional<double> fid_b = {});

// Per-sample improvement of the model over the baseline, sign-normalized so
// that positive is better: -dL1, -dLPIPS, 0.01 dPSNR, dSSIM; "composite" is
// the mean of the four.
inline const std::array<std::string, 5> kImprovementNames{"l1", "psnr", "ssim", "lpips_proxy", "composite"};
std::array<double, 5> improvement(const MetricRecord& model, const MetricRecord& baseline);

struct BinEntry {
  double lo = 0.0, hi = 0.0;
  int count = 0;
  double iou_mean = 0.0;
  std::array<double, 5> mean{};
  std::array<double, 5> se{};
  friend bool operator==(const BinEntry&, const BinEntry&) = default;
};

struct BinTable {
  std::vector<BinEntry> bins;
  std::array<double, 5> spearman{};  // bin centre vs mean improvement, over bins with >= 2 samples
  // Highest minus lowest populated bin, with the standard error of that difference.
  std::array<double, 5> high_minus_low{};
  std::array<double, 5> high_minus_low_se{};
  friend bool operator==(const BinTable&, const BinTable&) = default;
};

BinTable iou_binned_improvement(std::vector<MetricRecord> model, std::vector<MetricRecord> baseline, int num_bins = 5,
                                int resamples = 1000, std::uint64_t seed = 0);

void to_json(nlohmann::json& j, const MetricRecord& r);
void from_json(const nlohmann::json& j, MetricRecord& r);
void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);
void to_json(nlohmann::json& j, const ComparisonReport& r);
void from_json(const nlohmann::json& j, ComparisonReport& r);
void to_json(nlohmann::json& j, const BinTable& t);

void write_records_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_records_csv(const std::filesystem::path& path);
void write_bins_csv(const std::filesystem::path& path, const BinTable& table);
// Per-metric mean improvement against bin IoU with bootstrap-SE error bars.
void write_improvement_svg(const std::filesystem::path& path, const BinTable& table);

}  // namespace skel3d::evalkit
