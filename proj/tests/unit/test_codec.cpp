#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "skel3d/codec/codec.hpp"
#include "skel3d/core/error.hpp"
#include "skel3d/core/rng.hpp"
#include "skel3d/scenegen/render.hpp"
#include "skel3d/scenegen/rig.hpp"

using namespace skel3d;
using namespace skel3d::codec;

namespace {

CodecConfig identity_config(int size = 16) {
  CodecConfig c;
  c.latent_mode = LatentMode::identity;
  c.height = c.width = size;
  c.global_dim = 8;
  return c;
}

CodecConfig tiny_config() {
  CodecConfig c;
  c.height = c.width = 32;
  c.channels = {4, 8, 8};
  c.latent_channels = 3;
  c.downsample = 4;
  c.global_dim = 16;
  c.epochs = 2;
  c.batch_size = 4;
  c.seed = 17;
  return c;
}

CameraPose small_cam(int size, double az) {
  CameraPose p;
  p.height = p.width = size;
  p.focal = 1.1 * size;
  p.azimuth = az;
  p.elevation = 0.2;
  return p;
}

// Skin and skeleton renders of a few objects, as the codec sees them in training.
std::vector<Image> render_set(int size, int objects) {
  std::vector<Image> out;
  for (int o = 0; o < objects; ++o) {
    const auto obj = scenegen::sample_object(100 + o, {});
    for (int f : {0, 8}) {
      out.push_back(scenegen::render_view(obj, f, small_cam(size, 0.7 * o + 0.1 * f), scenegen::RenderMode::skin));
      out.push_back(scenegen::render_view(obj, f, small_cam(size, 0.7 * o + 0.1 * f), scenegen::RenderMode::skeleton));
    }
  }
  return out;
}

double norm_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Image shifted(const Image& img, int dx) {
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (x - dx >= 0 && x - dx < img.width())
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x - dx, c);
  return out;
}

}  // namespace

TEST_CASE("identity codec is an exact pass-through") {
  const auto imgs = render_set(16, 2);
  const Codec codec = train_codec(imgs, identity_config());
  CHECK(codec.training_info().steps == 0);
  CHECK(codec.latent_shape() == Shape{3, 16, 16});
  for (const Image& img : imgs) {
    const Tensor z = codec.encode(img);
    CHECK(z.shape() == Shape{3, 16, 16});
    const Tensor chw = img.to_chw();
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == chw[i]);
    CHECK(codec.decode(z) == img);
    const Tensor s = codec.embed_skeleton(img);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(s[i] == z[i]);
  }
}

TEST_CASE("identity-mode global embedding is linear in a constant image") {
  const Codec codec(identity_config());
  const auto white = codec.embed_global(Image(16, 16, {1, 1, 1}));
  const auto grey = codec.embed_global(Image(16, 16, {0.5, 0.5, 0.5}));
  const auto red = codec.embed_global(Image(16, 16, {1, 0, 0}));
  const auto cyan = codec.embed_global(Image(16, 16, {0, 1, 1}));
  REQUIRE(white.size() == 8);
  for (std::size_t e = 0; e < white.size(); ++e) {
    CHECK(grey[e] == doctest::Approx(0.5 * white[e]).epsilon(1e-12));
    CHECK(red[e] + cyan[e] == doctest::Approx(white[e]).epsilon(1e-12));
    CHECK(std::isfinite(white[e]));
  }
  CHECK(codec.embed_global(Image(16, 16, {0.2, 0.4, 0.9})) == codec.embed_global(Image(16, 16, {0.2, 0.4, 0.9})));
}

TEST_CASE("shape mismatches are rejected") {
  const Codec codec(identity_config());
  CHECK_THROWS_AS(codec.encode(Image(8, 16)), InputError);
  CHECK_THROWS_AS(codec.embed_global(Image(16, 17)), InputError);
  CHECK_THROWS_AS(codec.decode(Tensor({3, 8, 8})), InputError);
  CodecConfig bad = tiny_config();
  bad.downsample = 3;
  CHECK_THROWS_AS(Codec{bad}, ConfigError);
  CHECK_THROWS_AS(train_codec(std::vector<Image>{}, tiny_config()), InputError);
  nlohmann::json j = tiny_config();
  j["latent_chanels"] = 4;
  CHECK_THROWS_AS(j.get<CodecConfig>(), ConfigError);
}

TEST_CASE("trained codec: determinism, contracts and checkpoint round-trip") {
  const auto imgs = render_set(32, 6);
  const Codec a = train_codec(imgs, tiny_config());
  const Codec b = train_codec(imgs, tiny_config());
  CHECK(a.training_info().steps > 0);
  CHECK(std::isfinite(a.training_info().final_train_psnr));
  for (std::size_t k = 0; k < a.params().entries().size(); ++k) {
    const Tensor& pa = a.params().entries()[k].second.value();
    const Tensor& pb = b.params().entries()[k].second.value();
    for (std::size_t i = 0; i < pa.numel(); ++i) REQUIRE(pa[i] == pb[i]);
  }
  CHECK(a.latent_mean() == b.latent_mean());

  const Tensor z = a.encode(imgs[0]);
  CHECK(z.shape() == Shape{3, 8, 8});
  const Tensor z2 = a.encode(imgs[0]);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == z2[i]);
  CHECK(a.decode(z) == a.decode(z));

  // All-zero latent decodes to a finite image in [0, 1].
  for (double v : a.decode(Tensor(a.latent_shape())).values()) CHECK((v >= 0.0 && v <= 1.0));

  // Empty-skeleton embedding is finite; different poses give different embeddings.
  for (double v : a.embed_skeleton(Image(32, 32, {1, 1, 1})).values()) CHECK(std::isfinite(v));
  const Tensor s0 = a.embed_skeleton(imgs[1]), s1 = a.embed_skeleton(imgs[3]);
  CHECK(norm_diff(s0.values(), s1.values()) > 1e-3);

  // Pooling contracts the change caused by a whole-latent-pixel translation.
  const Image moved = shifted(imgs[0], 4);
  const double latent_change = norm_diff(a.encode(imgs[0]).values(), a.encode(moved).values());
  const double global_change = norm_diff(a.embed_global(imgs[0]), a.embed_global(moved));
  CHECK(latent_change > 0.0);
  CHECK(global_change < latent_change);

  const auto path = std::filesystem::temp_directory_path() / "skel3d_test_codec.ckpt";
  a.save(path);
  const Codec c = Codec::load(path);
  CHECK(c.training_info().steps == a.training_info().steps);
  const Tensor zc = c.encode(imgs[2]), za = a.encode(imgs[2]);
  for (std::size_t i = 0; i < za.numel(); ++i) CHECK(zc[i] == za[i]);
  CHECK(c.decode(za) == a.decode(za));
  CHECK(c.embed_global(imgs[2]) == a.embed_global(imgs[2]));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Codec::load(path), DataError);
}
