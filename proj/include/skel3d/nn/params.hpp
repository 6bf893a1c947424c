#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "skel3d/core/archive.hpp"
#include "skel3d/nn/graph.hpp"

namespace skel3d::nn {

enum class Init {
  zeros,
  uniform_fan_in,  // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  normal_fan_in,   // N(0, 1/fan_in)
};

// Named trainable parameters. Initial values are drawn from a stream keyed on
// (store seed, parameter name), so two models that share parameter names
// start with bit-identical shared weights regardless of what else they hold.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  Var add(const std::string& name, Shape shape, Init init, int fan_in = 0);
  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Var>>& entries() const noexcept { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();
  double grad_norm() const;

  void save_to(ArchiveWriter& writer, const std::string& prefix) const;
  // Loads every parameter found under prefix. Returns the names that were absent
  // from the archive (left at their initial values). Shape mismatches throw.
  std::vector<std::string> load_from(const Archive& archive, const std::string& prefix, bool allow_missing);

 private:
  std::uint64_t seed_;
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update using the accumulated gradients times grad_scale, then
  // clears them. Returns the (scaled, pre-clip) gradient norm.
  double step(ParameterStore& params, double grad_scale = 1.0);

  std::int64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  void save_to(ArchiveWriter& writer, nlohmann::json& meta) const;
  void load_from(const Archive& archive, const ParameterStore& params);

 private:
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

}  // namespace skel3d::nn
