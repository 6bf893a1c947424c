#include "skel3d/diffusion/diffusion.hpp"

#include <cmath>

#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"
#include "skel3d/nn/ops.hpp"

namespace skel3d::diffusion {

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"T", c.T}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  require_known_keys(j, {"T", "beta_min", "beta_max"}, "diffusion.schedule");
  c.T = j.value("T", c.T);
  c.beta_min = j.value("beta_min", c.beta_min);
  c.beta_max = j.value("beta_max", c.beta_max);
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  if (T < 2) throw ConfigError("schedule needs T >= 2");
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw ConfigError("schedule needs 0 < beta_min < beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  double ab = 1.0;
  for (int t = 0; t < T; ++t) {
    const double b = beta_min + (beta_max - beta_min) * t / (T - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    ab *= 1.0 - b;
    s.alpha_bar.push_back(ab);
  }
  return s;
}

Tensor q_sample(const Tensor& z0, double alpha_bar, const Tensor& eps) {
  if (z0.shape() != eps.shape()) throw InputError("q_sample: z0 " + shape_str(z0.shape()) + " vs eps " + shape_str(eps.shape()));
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) throw InputError("q_sample: timestep " + std::to_string(t) + " out of range");
  return q_sample(z0, sched.alpha_bar[static_cast<std::size_t>(t)], eps);
}

Tensor standard_normal(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

void DiffusionBatch::validate(const NoiseSchedule& sched) const {
  const std::size_t n = z_tgt.size();
  if (n == 0) throw InputError("diffusion batch has no targets");
  if (skeleton.size() != n || t.size() != n || eps.size() != n || target_cameras.size() != n)
    throw InputError("diffusion batch: targets, skeletons, timesteps, noise and cameras must have equal counts");
  for (std::size_t j = 0; j < n; ++j) {
    if (z_tgt[j].shape() != z_src.shape()) throw InputError("diffusion batch: target latent shape differs from source");
    if (eps[j].shape() != z_src.shape()) throw InputError("diffusion batch: noise shape differs from latent");
    if (skeleton[j].shape() != skeleton[0].shape()) throw InputError("diffusion batch: skeleton shapes differ");
    if (t[j] < 0 || t[j] >= sched.T) throw InputError("diffusion batch: timestep out of range");
  }
}

namespace {

Tensor stack(const std::vector<const Tensor*>& parts) {
  Shape shape = parts.front()->shape();
  shape.insert(shape.begin(), static_cast<int>(parts.size()));
  Tensor out(shape);
  const std::size_t n = parts.front()->numel();
  for (std::size_t i = 0; i < parts.size(); ++i) std::copy(parts[i]->data(), parts[i]->data() + n, out.data() + i * n);
  return out;
}

}  // namespace

LossResult training_loss(std::span<const DiffusionBatch> batches, const NoisePredictor& model, const NoiseSchedule& sched) {
  if (batches.empty()) throw InputError("training_loss: empty batch");
  std::vector<const Tensor*> zt_parts, eps_parts, src_parts, skel_parts;
  std::vector<Tensor> noised;
  std::vector<int> ts;
  Conditioning cond;
  std::size_t rows = 0;
  for (const auto& b : batches) {
    b.validate(sched);
    rows += b.z_tgt.size();
  }
  noised.reserve(rows);
  std::vector<double> globals;
  for (const auto& b : batches) {
    for (std::size_t j = 0; j < b.z_tgt.size(); ++j) {
      noised.push_back(q_sample(b.z_tgt[j], b.t[j], b.eps[j], sched));
      zt_parts.push_back(&noised.back());
      eps_parts.push_back(&b.eps[j]);
      src_parts.push_back(&b.z_src);
      skel_parts.push_back(&b.skeleton[j]);
      ts.push_back(b.t[j]);
      globals.insert(globals.end(), b.global.begin(), b.global.end());
      cond.source_cameras.push_back(b.source_camera);
      cond.target_cameras.push_back(b.target_cameras[j]);
    }
  }
  cond.z_src = stack(src_parts);
  cond.skeleton = stack(skel_parts);
  const int e = static_cast<int>(batches.front().global.size());
  for (const auto& b : batches)
    if (static_cast<int>(b.global.size()) != e) throw InputError("training_loss: global embedding sizes differ");
  cond.global = Tensor({static_cast<int>(rows), e}, std::move(globals));

  const nn::Var eps = nn::constant(stack(eps_parts));
  const nn::Var pred = model.predict(nn::constant(stack(zt_parts)), ts, cond, nullptr);
  if (pred.shape() != eps.shape())
    throw InputError("denoiser output " + shape_str(pred.shape()) + " does not match noise " + shape_str(eps.shape()));

  LossResult res;
  res.loss = nn::mse(pred, eps);
  const std::size_t per = eps.value().numel() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = pred.value()[r * per + i] - eps.value()[r * per + i];
      s += d * d;
    }
    res.per_target.push_back(s / static_cast<double>(per));
  }
  return res;
}

void SamplerConfig::validate(const NoiseSchedule& sched) const {
  if (steps < 1) throw ConfigError("sampler steps must be >= 1");
  if (steps > sched.T) throw ConfigError("sampler steps (" + std::to_string(steps) + ") exceed T (" + std::to_string(sched.T) + ")");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("sampler eta must be in [0, 1]");
}

void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = {{"kind", c.kind == SamplerKind::ddim ? "ddim" : "ddpm"}, {"steps", c.steps}, {"eta", c.eta}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SamplerConfig& c) {
  require_known_keys(j, {"kind", "steps", "eta", "seed"}, "sampler");
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    if (k == "ddim") c.kind = SamplerKind::ddim;
    else if (k == "ddpm") c.kind = SamplerKind::ddpm;
    else throw ConfigError("sampler.kind must be 'ddim' or 'ddpm'");
  }
  c.steps = j.value("steps", c.steps);
  c.eta = j.value("eta", c.eta);
  c.seed = j.value("seed", c.seed);
}

std::vector<int> sampling_timesteps(int T, int steps) {
  std::vector<int> ts;
  for (int i = steps - 1; i >= 0; --i) ts.push_back(static_cast<int>(static_cast<long>(i) * T / steps));
  return ts;
}

std::uint64_t target_noise_seed(std::uint64_t seed, const Tensor& skeleton) {
  return mix_seed({seed, fnv1a(skeleton.data(), skeleton.numel() * sizeof(double))});
}

std::vector<Tensor> sample(const NoisePredictor& model, const Tensor& z_src, std::span<const Tensor> skeletons,
                           std::span<const double> global, const CameraPose& source_camera,
                           std::span<const CameraPose> target_cameras, const SamplerConfig& cfg, const NoiseSchedule& sched) {
  cfg.validate(sched);
  const std::size_t n = skeletons.size();
  if (n == 0) throw InputError("sample: no skeletons");
  if (target_cameras.size() != n) throw InputError("sample: need one target camera per skeleton");

  Conditioning cond;
  std::vector<const Tensor*> src_parts(n, &z_src), skel_parts;
  for (const auto& s : skeletons) skel_parts.push_back(&s);
  cond.z_src = stack(src_parts);
  cond.skeleton = stack(skel_parts);
  std::vector<double> g;
  for (std::size_t j = 0; j < n; ++j) g.insert(g.end(), global.begin(), global.end());
  cond.global = Tensor({static_cast<int>(n), static_cast<int>(global.size())}, std::move(g));
  cond.source_cameras.assign(n, source_camera);
  cond.target_cameras.assign(target_cameras.begin(), target_cameras.end());
  const auto prepared = model.prepare(cond);

  std::vector<Rng> rngs;
  for (const auto& s : skeletons) rngs.emplace_back(target_noise_seed(cfg.seed, s));
  const std::size_t per = z_src.numel();
  Shape bshape = z_src.shape();
  bshape.insert(bshape.begin(), static_cast<int>(n));
  Tensor x(bshape);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < per; ++i) x[j * per + i] = rngs[j].normal();

  const auto ts = sampling_timesteps(sched.T, cfg.steps);
  nn::NoGradGuard guard;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double ab_prev = k + 1 < ts.size() ? sched.alpha_bar[static_cast<std::size_t>(ts[k + 1])] : 1.0;
    const std::vector<int> tv(n, t);
    const Tensor eps = model.predict(nn::constant(x), tv, cond, prepared.get()).value();
    if (!eps.all_finite()) throw NumericError("denoiser produced non-finite output at t=" + std::to_string(t));
    const double sqrt_ab = std::sqrt(ab), sqrt_1ab = std::sqrt(1.0 - ab);
    if (cfg.kind == SamplerKind::ddpm) {
      // Ancestral step over the (possibly strided) interval: x_prev = (x - beta / sqrt(1 - ab) eps) / sqrt(alpha) + sigma z.
      const double alpha = ab / ab_prev, beta = 1.0 - alpha;
      const double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * beta);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < per; ++i) {
          const std::size_t idx = j * per + i;
          double v = (x[idx] - beta / sqrt_1ab * eps[idx]) / std::sqrt(alpha);
          if (k + 1 < ts.size()) v += sigma * rngs[j].normal();
          x[idx] = v;
        }
      continue;
    }
    const double sigma = cfg.eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(std::max(0.0, 1.0 - ab / ab_prev));
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < per; ++i) {
        const std::size_t idx = j * per + i;
        const double x0 = (x[idx] - sqrt_1ab * eps[idx]) / sqrt_ab;
        double v = std::sqrt(ab_prev) * x0 + dir * eps[idx];
        if (sigma > 0.0) v += sigma * rngs[j].normal();
        x[idx] = v;
      }
    }
  }
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < n; ++j) out.push_back(x.slice0(static_cast<int>(j)));
  return out;
}

}  // namespace skel3d::diffusion
