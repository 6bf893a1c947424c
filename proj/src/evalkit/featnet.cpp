#include "skel3d/evalkit/featnet.hpp"

#include <cmath>

#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"
#include "skel3d/nn/ops.hpp"

namespace skel3d::evalkit {

void FeatureNetSpec::validate() const {
  if (widths.size() != 3 || strides.size() != 3) throw ConfigError("feature net needs exactly 3 levels");
  for (int w : widths)
    if (w < 1) throw ConfigError("feature net widths must be positive");
  for (int s : strides)
    if (s < 1) throw ConfigError("feature net strides must be positive");
}

void to_json(nlohmann::json& j, const FeatureNetSpec& s) {
  j = {{"seed", s.seed}, {"widths", s.widths}, {"strides", s.strides}};
}

void from_json(const nlohmann::json& j, FeatureNetSpec& s) {
  require_known_keys(j, {"seed", "widths", "strides"}, "feature_net");
  s.seed = j.value("seed", s.seed);
  s.widths = j.value("widths", s.widths);
  s.strides = j.value("strides", s.strides);
}

FeatureNet::FeatureNet(FeatureNetSpec spec) : spec_(std::move(spec)), params_(spec_.seed) {
  spec_.validate();
  int in = 3;
  for (std::size_t l = 0; l < spec_.widths.size(); ++l) {
    const int out = spec_.widths[l];
    // He-style scale keeps ReLU activations from shrinking level to level.
    const nn::Var w = params_.add("feat" + std::to_string(l) + ".weight", {out, in, 3, 3}, nn::Init::normal_fan_in, in * 9);
    for (double& v : w.node()->value.values()) v *= std::sqrt(2.0);
    params_.add("feat" + std::to_string(l) + ".bias", {out}, nn::Init::uniform_fan_in, in * 9);
    in = out;
  }
}

std::vector<Tensor> FeatureNet::features(const Image& img) const {
  nn::NoGradGuard guard;
  Tensor x = img.to_chw();
  for (double& v : x.values()) v = 2.0 * v - 1.0;
  x.reshape({1, 3, img.height(), img.width()});
  nn::Var h = nn::constant(std::move(x));
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < spec_.widths.size(); ++l) {
    const std::string p = "feat" + std::to_string(l);
    h = nn::relu(nn::conv2d(h, params_.get(p + ".weight"), params_.get(p + ".bias"), spec_.strides[l], 1));
    const Tensor& v = h.value();
    out.push_back(v.reshaped({v.dim(1), v.dim(2), v.dim(3)}));
  }
  return out;
}

int FeatureNet::pooled_dim() const {
  int d = 0;
  for (int w : spec_.widths) d += w;
  return d;
}

std::vector<double> FeatureNet::pooled(const Image& img) const {
  std::vector<double> out;
  for (const Tensor& f : features(img)) {
    const int c = f.dim(0);
    const std::size_t hw = static_cast<std::size_t>(f.dim(1)) * f.dim(2);
    for (int k = 0; k < c; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += f[static_cast<std::size_t>(k) * hw + i];
      out.push_back(s / static_cast<double>(hw));
    }
  }
  return out;
}

double lpips_proxy(const Image& a, const Image& b, const FeatureNet& net) {
  if (!a.same_size(b)) throw InputError("lpips_proxy: images differ in size");
  const auto fa = net.features(a), fb = net.features(b);
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const int c = fa[l].dim(0);
    const std::size_t hw = static_cast<std::size_t>(fa[l].dim(1)) * fa[l].dim(2);
    double level = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      double na = 0.0, nb = 0.0;
      for (int k = 0; k < c; ++k) {
        const double va = fa[l][static_cast<std::size_t>(k) * hw + i], vb = fb[l][static_cast<std::size_t>(k) * hw + i];
        na += va * va;
        nb += vb * vb;
      }
      na = 1.0 / (std::sqrt(na) + 1e-10);
      nb = 1.0 / (std::sqrt(nb) + 1e-10);
      for (int k = 0; k < c; ++k) {
        const double d = fa[l][static_cast<std::size_t>(k) * hw + i] * na - fb[l][static_cast<std::size_t>(k) * hw + i] * nb;
        level += d * d;
      }
    }
    total += level / static_cast<double>(hw);
  }
  return total / static_cast<double>(fa.size());
}

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& f, const Eigen::VectorXd& mu) {
  const Eigen::MatrixXd centered = f.rowwise() - mu.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(f.rows() - 1);
  cov.diagonal().array() += 1e-6;
  return cov;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Eigen::MatrixXd& fa, const Eigen::MatrixXd& fb) {
  if (fa.rows() < 2 || fb.rows() < 2) throw InputError("frechet distance needs at least 2 items per set");
  if (fa.cols() != fb.cols()) throw InputError("frechet distance: feature dimensions differ");
  const Eigen::VectorXd ma = fa.colwise().mean(), mb = fb.colwise().mean();
  const Eigen::MatrixXd ca = covariance(fa, ma), cb = covariance(fb, mb);
  // Tr((Ca Cb)^1/2) = Tr((Ca^1/2 Cb Ca^1/2)^1/2), whose argument is symmetric PSD.
  const Eigen::MatrixXd sa = sqrt_psd(ca);
  const Eigen::MatrixXd cross = sqrt_psd(sa * cb * sa);
  const double d = (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2.0 * cross.trace();
  return std::max(0.0, d);
}

double fid_proxy(std::span<const Image> set_a, std::span<const Image> set_b, const FeatureNet& net) {
  if (set_a.size() < 2 || set_b.size() < 2) throw InputError("fid_proxy needs at least 2 images per set");
  auto stack = [&](std::span<const Image> set) {
    Eigen::MatrixXd f(static_cast<Eigen::Index>(set.size()), net.pooled_dim());
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto p = net.pooled(set[i]);
      for (std::size_t k = 0; k < p.size(); ++k) f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = p[k];
    }
    return f;
  };
  return frechet_distance(stack(set_a), stack(set_b));
}

}  // namespace skel3d::evalkit
