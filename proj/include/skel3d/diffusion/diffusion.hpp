#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "skel3d/core/geometry.hpp"
#include "skel3d/core/rng.hpp"
#include "skel3d/core/tensor.hpp"
#include "skel3d/nn/graph.hpp"

namespace skel3d::diffusion {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar;
};

struct ScheduleConfig {
  int T = 256;
  double beta_min = 1e-4;
  double beta_max = 2e-2;
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);

// Linearly spaced betas; alpha_bar by cumulative product.
NoiseSchedule make_schedule(int T, double beta_min, double beta_max);
inline NoiseSchedule make_schedule(const ScheduleConfig& c) { return make_schedule(c.T, c.beta_min, c.beta_max); }

// sqrt(ab) z0 + sqrt(1 - ab) eps.
Tensor q_sample(const Tensor& z0, double alpha_bar, const Tensor& eps);
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& sched);

Tensor standard_normal(const Shape& shape, Rng& rng);

// Per-row conditioning for a batch of targets; every tensor has the batch on axis 0.
struct Conditioning {
  Tensor z_src;     // [B, c, h, w]
  Tensor skeleton;  // [B, c_s, h_s, w_s]
  Tensor global;    // [B, e]
  std::vector<CameraPose> source_cameras, target_cameras;

  int rows() const { return z_src.rank() ? z_src.dim(0) : 0; }
};

// Conditioning-derived state reusable across timesteps of one sampling run.
struct PreparedConditioning {
  virtual ~PreparedConditioning() = default;
};

// The denoiser eps_theta. Each output row may depend only on the same row of its inputs.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual std::unique_ptr<PreparedConditioning> prepare(const Conditioning&) const { return nullptr; }
  virtual nn::Var predict(const nn::Var& z_t, std::span<const int> t, const Conditioning& cond,
                          const PreparedConditioning* prepared) const = 0;
};

// One source view with its N targets.
struct DiffusionBatch {
  Tensor z_src;                  // [c, h, w]
  std::vector<Tensor> z_tgt;     // N x [c, h, w]
  std::vector<Tensor> skeleton;  // N x [c_s, h_s, w_s]
  std::vector<double> global;    // [e]
  CameraPose source_camera;
  std::vector<CameraPose> target_cameras;
  std::vector<int> t;            // per target
  std::vector<Tensor> eps;       // per target

  void validate(const NoiseSchedule& sched) const;
};

struct LossResult {
  nn::Var loss;                    // mean over every target and element
  std::vector<double> per_target;  // per-target mean squared error, in batch order
};

// Flattens all targets of all batches into rows; target j is denoised from
// (its noised latent, t_j, s_j, z_src, g) only.
LossResult training_loss(std::span<const DiffusionBatch> batches, const NoisePredictor& model, const NoiseSchedule& sched);
inline LossResult training_loss(const DiffusionBatch& batch, const NoisePredictor& model, const NoiseSchedule& sched) {
  return training_loss(std::span<const DiffusionBatch>(&batch, 1), model, sched);
}

enum class SamplerKind { ddpm, ddim };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::ddim;
  int steps = 50;
  double eta = 0.0;
  std::uint64_t seed = 0;

  void validate(const NoiseSchedule& sched) const;
};

void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);

// Timesteps visited, descending.
std::vector<int> sampling_timesteps(int T, int steps);

// Generates one latent per skeleton. Each target's noise stream is seeded from
// (cfg.seed, hash of its skeleton embedding), so it follows the skeleton, not the slot.
std::vector<Tensor> sample(const NoisePredictor& model, const Tensor& z_src, std::span<const Tensor> skeletons,
                           std::span<const double> global, const CameraPose& source_camera,
                           std::span<const CameraPose> target_cameras, const SamplerConfig& cfg, const NoiseSchedule& sched);

std::uint64_t target_noise_seed(std::uint64_t seed, const Tensor& skeleton);

}  // namespace skel3d::diffusion
