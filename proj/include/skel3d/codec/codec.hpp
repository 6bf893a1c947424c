#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "skel3d/core/image.hpp"
#include "skel3d/core/tensor.hpp"
#include "skel3d/nn/graph.hpp"
#include "skel3d/nn/params.hpp"
#include "skel3d/scenegen/dataset.hpp"

namespace skel3d::codec {

enum class LatentMode { autoencoder, identity };

struct CodecConfig {
  LatentMode latent_mode = LatentMode::autoencoder;
  int latent_channels = 4;  // c (identity mode: 3)
  int downsample = 4;       // d, a power of two (identity mode: 1)
  std::vector<int> channels{16, 32, 64};  // encoder widths, finest first; one stride-2 stage per doubling of d
  int global_dim = 128;     // e
  int height = 64;
  int width = 64;
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 2e-3;
  double final_learning_rate = 2e-4;  // cosine decay target
  std::uint64_t seed = 11;

  void validate() const;
  int latent_c() const { return latent_mode == LatentMode::identity ? 3 : latent_channels; }
  int latent_d() const { return latent_mode == LatentMode::identity ? 1 : downsample; }
};

void to_json(nlohmann::json& j, const CodecConfig& c);
void from_json(const nlohmann::json& j, CodecConfig& c);

struct CodecTrainingInfo {
  int epochs = 0;
  std::int64_t steps = 0;
  int train_images = 0;
  double final_train_mse = 0.0;
  double final_train_psnr = 0.0;
};

class Codec {
 public:
  explicit Codec(CodecConfig cfg);

  const CodecConfig& config() const noexcept { return cfg_; }
  Shape latent_shape() const;  // [c, H/d, W/d]

  // [c, H/d, W/d], standardized per channel with training-set statistics.
  Tensor encode(const Image& img) const;
  // Output clamped to [0, 1].
  Image decode(const Tensor& latent) const;
  Tensor embed_skeleton(const Image& skeleton) const { return encode(skeleton); }
  // Spatial mean of encode(img) followed by a fixed seeded projection to global_dim.
  std::vector<double> embed_global(const Image& img) const;

  // Differentiable passes on [B, 3, H, W] / [B, c, h, w] without latent standardization.
  nn::Var encode_raw(const nn::Var& images) const;
  nn::Var decode_raw(const nn::Var& latents) const;

  nn::ParameterStore& params() noexcept { return params_; }
  const nn::ParameterStore& params() const noexcept { return params_; }
  void set_latent_stats(std::vector<double> mean, std::vector<double> std);
  const std::vector<double>& latent_mean() const noexcept { return latent_mean_; }
  const std::vector<double>& latent_std() const noexcept { return latent_std_; }
  const CodecTrainingInfo& training_info() const noexcept { return info_; }
  void set_training_info(CodecTrainingInfo info) { info_ = info; }

  void save(const std::filesystem::path& path) const;
  static Codec load(const std::filesystem::path& path);

  // Throws InputError unless the image matches the configured size.
  void check_image(const Image& img) const;

 private:

  CodecConfig cfg_;
  nn::ParameterStore params_;
  std::vector<double> latent_mean_, latent_std_;
  Tensor projection_;  // [global_dim, c]
  CodecTrainingInfo info_;
};

using CodecProgress = std::function<void(int epoch, double mean_loss)>;

// Trains on every train-split image (sources, targets and skeletons).
Codec train_codec(const scenegen::DatasetManifest& manifest, const CodecConfig& cfg, const CodecProgress& progress = {});
// Same, on images already in memory.
Codec train_codec(const std::vector<Image>& images, const CodecConfig& cfg, const CodecProgress& progress = {});

std::vector<Image> load_training_images(const scenegen::DatasetManifest& manifest);

}  // namespace skel3d::codec
