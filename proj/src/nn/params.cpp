#include "skel3d/nn/params.hpp"

#include <cmath>

#include "skel3d/core/error.hpp"
#include "skel3d/core/rng.hpp"

namespace skel3d::nn {

Var ParameterStore::add(const std::string& name, Shape shape, Init init, int fan_in) {
  if (index_.count(name)) throw InputError("duplicate parameter name " + name);
  Tensor t(std::move(shape));
  if (init != Init::zeros) {
    if (fan_in <= 0) throw InputError("parameter " + name + " needs a positive fan_in");
    Rng rng(mix_seed({seed_, fnv1a(name)}));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.values()) {
      v = init == Init::uniform_fan_in ? rng.uniform(-bound, bound) : rng.normal() * bound;
    }
  }
  Var v = parameter(std::move(t));
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

Var ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("unknown parameter " + name);
  return entries_[it->second].second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : entries_) n += v.value().numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

double ParameterStore::grad_norm() const {
  double s = 0.0;
  for (const auto& [name, v] : entries_) {
    if (!v.grad().empty()) s += v.grad().squared_norm();
  }
  return std::sqrt(s);
}

void ParameterStore::save_to(ArchiveWriter& writer, const std::string& prefix) const {
  for (const auto& [name, v] : entries_) writer.add(prefix + name, v.value());
}

std::vector<std::string> ParameterStore::load_from(const Archive& archive, const std::string& prefix,
                                                   bool allow_missing) {
  std::vector<std::string> missing;
  for (auto& [name, v] : entries_) {
    const std::string key = prefix + name;
    if (!archive.has(key)) {
      if (!allow_missing) throw DataError("checkpoint is missing parameter " + name);
      missing.push_back(name);
      continue;
    }
    const Tensor& t = archive.tensor(key);
    if (t.shape() != v.shape()) {
      throw DataError("parameter " + name + " has shape " + shape_str(t.shape()) + " in checkpoint, expected " +
                      shape_str(v.shape()));
    }
    v.mutable_value() = t;
  }
  return missing;
}

double Adam::step(ParameterStore& params, double grad_scale) {
  double norm_sq = 0.0;
  for (const auto& [name, v] : params.entries()) {
    if (!v.grad().empty()) norm_sq += v.grad().squared_norm();
  }
  const double norm = std::sqrt(norm_sq) * std::abs(grad_scale);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  double factor = grad_scale;
  if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) factor *= cfg_.grad_clip / norm;

  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (const auto& [name, cv] : params.entries()) {
    Var v = cv;
    if (v.grad().empty()) continue;
    auto& [m, s] = moments_[name];
    if (m.shape() != v.shape()) {
      m = Tensor(v.shape());
      s = Tensor(v.shape());
    }
    Tensor& w = v.mutable_value();
    const Tensor& g = v.grad();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i] * factor;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      s[i] = cfg_.beta2 * s[i] + (1.0 - cfg_.beta2) * gi * gi;
      w[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(s[i] / bc2) + cfg_.epsilon);
    }
  }
  params.zero_grad();
  return norm;
}

void Adam::save_to(ArchiveWriter& writer, nlohmann::json& meta) const {
  meta["adam_steps"] = steps_;
  for (const auto& [name, ms] : moments_) {
    writer.add("adam.m." + name, ms.first);
    writer.add("adam.v." + name, ms.second);
  }
}

void Adam::load_from(const Archive& archive, const ParameterStore& params) {
  steps_ = archive.meta().value("adam_steps", std::int64_t{0});
  moments_.clear();
  for (const auto& [name, v] : params.entries()) {
    if (archive.has("adam.m." + name)) {
      moments_[name] = {archive.tensor("adam.m." + name), archive.tensor("adam.v." + name)};
    }
  }
}

}  // namespace skel3d::nn
