#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "skel3d/core/image.hpp"
#include "skel3d/core/tensor.hpp"
#include "skel3d/nn/params.hpp"

namespace skel3d::evalkit {

// Frozen, seeded random conv net shared by the perceptual-distance and
// Frechet-distance proxies.
struct FeatureNetSpec {
  std::uint64_t seed = 2024;
  std::vector<int> widths{16, 32, 64};
  std::vector<int> strides{1, 2, 2};

  void validate() const;
  friend bool operator==(const FeatureNetSpec&, const FeatureNetSpec&) = default;
};

void to_json(nlohmann::json& j, const FeatureNetSpec& s);
void from_json(const nlohmann::json& j, FeatureNetSpec& s);

class FeatureNet {
 public:
  explicit FeatureNet(FeatureNetSpec spec = {});

  const FeatureNetSpec& spec() const noexcept { return spec_; }
  // One [C, h, w] map per level (after ReLU).
  std::vector<Tensor> features(const Image& img) const;
  // Spatial means of every level, concatenated.
  std::vector<double> pooled(const Image& img) const;
  int pooled_dim() const;

 private:
  FeatureNetSpec spec_;
  nn::ParameterStore params_;
};

double lpips_proxy(const Image& a, const Image& b, const FeatureNet& net);

// Frechet distance between the Gaussians fitted to two feature sets (one row per item).
double frechet_distance(const Eigen::MatrixXd& feats_a, const Eigen::MatrixXd& feats_b);
double fid_proxy(std::span<const Image> set_a, std::span<const Image> set_b, const FeatureNet& net);

}  // namespace skel3d::evalkit
