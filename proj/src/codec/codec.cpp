#include "skel3d/codec/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "skel3d/core/archive.hpp"
#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"
#include "skel3d/core/rng.hpp"
#include "skel3d/nn/ops.hpp"

namespace skel3d::codec {

namespace {

int stages(int d) {
  int s = 0;
  while ((1 << s) < d) ++s;
  return s;
}

std::string mode_name(LatentMode m) { return m == LatentMode::identity ? "identity" : "autoencoder"; }

LatentMode mode_from(const std::string& s) {
  if (s == "identity") return LatentMode::identity;
  if (s == "autoencoder") return LatentMode::autoencoder;
  throw ConfigError("codec.latent_mode must be 'autoencoder' or 'identity', got '" + s + "'");
}

Tensor images_to_batch(const std::vector<const Image*>& imgs) {
  const int h = imgs.front()->height(), w = imgs.front()->width();
  Tensor t({static_cast<int>(imgs.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    const Tensor chw = imgs[b]->to_chw();
    std::copy(chw.values().begin(), chw.values().end(), t.data() + b * 3 * plane);
  }
  return t;
}

}  // namespace

void CodecConfig::validate() const {
  if (height < 16 || width < 16) throw ConfigError("codec image size must be at least 16x16");
  if (global_dim < 1) throw ConfigError("codec.global_dim must be positive");
  if (latent_mode == LatentMode::identity) return;
  if (latent_channels < 1) throw ConfigError("codec.latent_channels must be positive");
  if (downsample < 1 || (downsample & (downsample - 1)) != 0) throw ConfigError("codec.downsample must be a power of two");
  if (height % downsample != 0 || width % downsample != 0) throw ConfigError("image size must be divisible by codec.downsample");
  if (static_cast<int>(channels.size()) != stages(downsample) + 1)
    throw ConfigError("codec.channels needs log2(downsample) + 1 entries");
  for (int c : channels)
    if (c < 1) throw ConfigError("codec.channels must be positive");
  if (epochs < 0 || batch_size < 1) throw ConfigError("codec epochs/batch_size invalid");
  if (!(learning_rate > 0.0) || final_learning_rate < 0.0) throw ConfigError("codec learning rates invalid");
}

void to_json(nlohmann::json& j, const CodecConfig& c) {
  j = {{"latent_mode", mode_name(c.latent_mode)},
       {"latent_channels", c.latent_channels},
       {"downsample", c.downsample},
       {"channels", c.channels},
       {"global_dim", c.global_dim},
       {"height", c.height},
       {"width", c.width},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"final_learning_rate", c.final_learning_rate},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, CodecConfig& c) {
  require_known_keys(j,
                     {"latent_mode", "latent_channels", "downsample", "channels", "global_dim", "height", "width",
                      "epochs", "batch_size", "learning_rate", "final_learning_rate", "seed"},
                     "codec");
  if (j.contains("latent_mode")) c.latent_mode = mode_from(j.at("latent_mode").get<std::string>());
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.downsample = j.value("downsample", c.downsample);
  c.channels = j.value("channels", c.channels);
  c.global_dim = j.value("global_dim", c.global_dim);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.final_learning_rate = j.value("final_learning_rate", c.final_learning_rate);
  c.seed = j.value("seed", c.seed);
}

Codec::Codec(CodecConfig cfg) : cfg_(std::move(cfg)), params_(cfg_.seed) {
  cfg_.validate();
  const int c = cfg_.latent_c();
  latent_mean_.assign(static_cast<std::size_t>(c), 0.0);
  latent_std_.assign(static_cast<std::size_t>(c), 1.0);

  // Fixed projection for the global embedding, scaled so a unit-variance input keeps unit variance.
  projection_ = Tensor({cfg_.global_dim, c});
  Rng rng(mix_seed({cfg_.seed, fnv1a("codec.global_projection")}));
  for (double& v : projection_.values()) v = rng.normal() / std::sqrt(static_cast<double>(c));

  if (cfg_.latent_mode == LatentMode::identity) return;
  using nn::Init;
  const auto& ch = cfg_.channels;
  const int s = stages(cfg_.downsample);
  auto conv = [&](const std::string& name, int in, int out) {
    params_.add(name + ".weight", {out, in, 3, 3}, Init::uniform_fan_in, in * 9);
    params_.add(name + ".bias", {out}, Init::uniform_fan_in, in * 9);
  };
  conv("enc.in", 3, ch[0]);
  for (int i = 0; i < s; ++i) conv("enc.down" + std::to_string(i), ch[static_cast<std::size_t>(i)], ch[static_cast<std::size_t>(i + 1)]);
  conv("enc.out", ch.back(), c);
  conv("dec.in", c, ch.back());
  for (int i = s - 1; i >= 0; --i) conv("dec.up" + std::to_string(i), ch[static_cast<std::size_t>(i + 1)], ch[static_cast<std::size_t>(i)]);
  conv("dec.out", ch[0], 3);
}

Shape Codec::latent_shape() const {
  return {cfg_.latent_c(), cfg_.height / cfg_.latent_d(), cfg_.width / cfg_.latent_d()};
}

nn::Var Codec::encode_raw(const nn::Var& x) const {
  if (cfg_.latent_mode == LatentMode::identity) return x;
  auto conv = [&](const nn::Var& h, const std::string& name, int stride) {
    return nn::conv2d(h, params_.get(name + ".weight"), params_.get(name + ".bias"), stride, 1);
  };
  nn::Var h = nn::silu(conv(x, "enc.in", 1));
  for (int i = 0; i < stages(cfg_.downsample); ++i) h = nn::silu(conv(h, "enc.down" + std::to_string(i), 2));
  return conv(h, "enc.out", 1);
}

nn::Var Codec::decode_raw(const nn::Var& z) const {
  if (cfg_.latent_mode == LatentMode::identity) return z;
  auto conv = [&](const nn::Var& h, const std::string& name) {
    return nn::conv2d(h, params_.get(name + ".weight"), params_.get(name + ".bias"), 1, 1);
  };
  nn::Var h = nn::silu(conv(z, "dec.in"));
  for (int i = stages(cfg_.downsample) - 1; i >= 0; --i)
    h = nn::silu(conv(nn::upsample_nearest(h, 2), "dec.up" + std::to_string(i)));
  return conv(h, "dec.out");
}

void Codec::check_image(const Image& img) const {
  if (img.height() != cfg_.height || img.width() != cfg_.width) {
    throw InputError("codec expects " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) + " images, got " +
                     std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
}

Tensor Codec::encode(const Image& img) const {
  check_image(img);
  nn::NoGradGuard guard;
  Tensor x = img.to_chw();
  x.reshape({1, 3, cfg_.height, cfg_.width});
  Tensor z = encode_raw(nn::constant(std::move(x))).value();
  const Shape shape = latent_shape();
  z.reshape(shape);
  const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
  for (int c = 0; c < shape[0]; ++c) {
    const double m = latent_mean_[static_cast<std::size_t>(c)], s = latent_std_[static_cast<std::size_t>(c)];
    if (m == 0.0 && s == 1.0) continue;
    for (std::size_t i = 0; i < plane; ++i) z[c * plane + i] = (z[c * plane + i] - m) / s;
  }
  return z;
}

Image Codec::decode(const Tensor& latent) const {
  const Shape shape = latent_shape();
  if (latent.shape() != shape) throw InputError("codec decode expects latent " + shape_str(shape) + ", got " + shape_str(latent.shape()));
  nn::NoGradGuard guard;
  Tensor z = latent;
  const std::size_t plane = static_cast<std::size_t>(shape[1]) * shape[2];
  for (int c = 0; c < shape[0]; ++c) {
    const double m = latent_mean_[static_cast<std::size_t>(c)], s = latent_std_[static_cast<std::size_t>(c)];
    if (m == 0.0 && s == 1.0) continue;
    for (std::size_t i = 0; i < plane; ++i) z[c * plane + i] = z[c * plane + i] * s + m;
  }
  z.reshape({1, shape[0], shape[1], shape[2]});
  Tensor x = decode_raw(nn::constant(std::move(z))).value();
  x.reshape({3, cfg_.height, cfg_.width});
  for (double& v : x.values()) v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
  return Image::from_chw(x);
}

std::vector<double> Codec::embed_global(const Image& img) const {
  const Tensor z = encode(img);
  const int c = z.dim(0);
  const std::size_t plane = static_cast<std::size_t>(z.dim(1)) * z.dim(2);
  std::vector<double> pooled(static_cast<std::size_t>(c), 0.0);
  for (int k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += z[k * plane + i];
    pooled[static_cast<std::size_t>(k)] = s / static_cast<double>(plane);
  }
  std::vector<double> out(static_cast<std::size_t>(cfg_.global_dim), 0.0);
  for (int e = 0; e < cfg_.global_dim; ++e)
    for (int k = 0; k < c; ++k) out[static_cast<std::size_t>(e)] += projection_[static_cast<std::size_t>(e * c + k)] * pooled[static_cast<std::size_t>(k)];
  return out;
}

void Codec::set_latent_stats(std::vector<double> mean, std::vector<double> std) {
  if (mean.size() != static_cast<std::size_t>(cfg_.latent_c()) || std.size() != mean.size())
    throw InputError("latent statistics must have one entry per latent channel");
  for (double s : std)
    if (!(s > 0.0)) throw NumericError("latent standard deviation must be positive");
  latent_mean_ = std::move(mean);
  latent_std_ = std::move(std);
}

void Codec::save(const std::filesystem::path& path) const {
  ArchiveWriter w;
  params_.save_to(w, "codec.");
  nlohmann::json meta = {{"kind", "codec"},
                         {"config", cfg_},
                         {"latent_mean", latent_mean_},
                         {"latent_std", latent_std_},
                         {"training",
                          {{"epochs", info_.epochs},
                           {"steps", info_.steps},
                           {"train_images", info_.train_images},
                           {"final_train_mse", info_.final_train_mse},
                           {"final_train_psnr", info_.final_train_psnr}}}};
  w.write(path, meta);
}

Codec Codec::load(const std::filesystem::path& path) {
  const Archive a = Archive::read(path);
  const auto& meta = a.meta();
  if (meta.value("kind", "") != "codec") throw DataError(path.string() + " is not a codec checkpoint");
  Codec c(meta.at("config").get<CodecConfig>());
  c.params_.load_from(a, "codec.", false);
  c.set_latent_stats(meta.at("latent_mean").get<std::vector<double>>(), meta.at("latent_std").get<std::vector<double>>());
  const auto& t = meta.at("training");
  c.info_ = {t.at("epochs").get<int>(), t.at("steps").get<std::int64_t>(), t.at("train_images").get<int>(),
             t.at("final_train_mse").get<double>(), t.at("final_train_psnr").get<double>()};
  return c;
}

std::vector<Image> load_training_images(const scenegen::DatasetManifest& manifest) {
  std::vector<Image> images;
  for (const auto* rec : manifest.split("train")) {
    const auto sample = scenegen::load_sample(manifest, *rec);
    images.push_back(sample.source);
    for (const auto& t : sample.targets) {
      images.push_back(t.image);
      images.push_back(t.skeleton);
    }
  }
  return images;
}

Codec train_codec(const scenegen::DatasetManifest& manifest, const CodecConfig& cfg, const CodecProgress& progress) {
  return train_codec(load_training_images(manifest), cfg, progress);
}

Codec train_codec(const std::vector<Image>& images, const CodecConfig& cfg, const CodecProgress& progress) {
  if (images.empty()) throw InputError("train_codec: no training images");
  Codec codec(cfg);
  for (const auto& img : images) codec.check_image(img);
  if (cfg.latent_mode == LatentMode::identity) {
    codec.set_training_info({0, 0, static_cast<int>(images.size()), 0.0, 99.0});
    return codec;
  }

  nn::Adam adam({cfg.learning_rate, 0.9, 0.999, 1e-8, 1.0});
  const int n = static_cast<int>(images.size());
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed({cfg.seed, 0x636f6465ULL, static_cast<std::uint64_t>(epoch)}));
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    double epoch_loss = 0.0;
    for (int b = 0; b < steps_per_epoch; ++b) {
      std::vector<const Image*> batch;
      for (int k = b * cfg.batch_size; k < std::min(n, (b + 1) * cfg.batch_size); ++k)
        batch.push_back(&images[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
      const double progress_frac = total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1) : 1.0;
      adam.set_learning_rate(cfg.final_learning_rate +
                             0.5 * (cfg.learning_rate - cfg.final_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress_frac)));
      const nn::Var x = nn::constant(images_to_batch(batch));
      const nn::Var loss = nn::mse(codec.decode_raw(codec.encode_raw(x)), x);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) throw NumericError("codec training loss is not finite at step " + std::to_string(step));
      nn::backward(loss);
      adam.step(codec.params());
      epoch_loss += lv * static_cast<double>(batch.size());
      ++step;
    }
    if (progress) progress(epoch, epoch_loss / n);
  }

  // Per-channel latent statistics and final reconstruction error over the training set.
  const Shape ls = codec.latent_shape();
  const std::size_t plane = static_cast<std::size_t>(ls[1]) * ls[2];
  std::vector<double> sum(static_cast<std::size_t>(ls[0]), 0.0), sq(static_cast<std::size_t>(ls[0]), 0.0);
  double mse_total = 0.0;
  {
    nn::NoGradGuard guard;
    for (int start = 0; start < n; start += cfg.batch_size) {
      std::vector<const Image*> batch;
      for (int k = start; k < std::min(n, start + cfg.batch_size); ++k) batch.push_back(&images[static_cast<std::size_t>(k)]);
      const nn::Var x = nn::constant(images_to_batch(batch));
      const nn::Var z = codec.encode_raw(x);
      Tensor rec = codec.decode_raw(z).value();
      for (double& v : rec.values()) v = std::clamp(v, 0.0, 1.0);
      for (std::size_t i = 0; i < rec.numel(); ++i) {
        const double d = rec[i] - x.value()[i];
        mse_total += d * d;
      }
      for (std::size_t b = 0; b < batch.size(); ++b)
        for (int c = 0; c < ls[0]; ++c)
          for (std::size_t i = 0; i < plane; ++i) {
            const double v = z.value()[(b * static_cast<std::size_t>(ls[0]) + static_cast<std::size_t>(c)) * plane + i];
            sum[static_cast<std::size_t>(c)] += v;
            sq[static_cast<std::size_t>(c)] += v * v;
          }
    }
  }
  std::vector<double> mean(sum.size()), stdv(sum.size());
  const double count = static_cast<double>(n) * static_cast<double>(plane);
  for (std::size_t c = 0; c < sum.size(); ++c) {
    mean[c] = sum[c] / count;
    stdv[c] = std::sqrt(std::max(sq[c] / count - mean[c] * mean[c], 1e-12));
  }
  codec.set_latent_stats(mean, stdv);
  const double mse = mse_total / (static_cast<double>(n) * 3.0 * cfg.height * cfg.width);
  codec.set_training_info({cfg.epochs, step, n, mse, mse > 0.0 ? 10.0 * std::log10(1.0 / mse) : 99.0});
  return codec;
}

}  // namespace skel3d::codec
