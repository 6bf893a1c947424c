#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "skel3d/core/archive.hpp"
#include "skel3d/core/geometry.hpp"
#include "skel3d/diffusion/diffusion.hpp"
#include "skel3d/nn/params.hpp"

namespace skel3d::unet {

enum class Mode { baseline, scn, rcn, scn_rcn };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);
inline bool uses_scn(Mode m) { return m == Mode::scn || m == Mode::scn_rcn; }
inline bool uses_rcn(Mode m) { return m == Mode::rcn || m == Mode::scn_rcn; }

struct UNetConfig {
  Mode mode = Mode::scn;
  int latent_channels = 4;    // c; the input is concat(z_t, z_src)
  int skeleton_channels = 4;  // c_s
  int global_dim = 128;       // e
  int global_tokens = 4;      // e is split into this many cross-attention tokens
  int base_channels = 64;
  std::vector<int> channel_mult{1, 2, 2};
  int num_res_blocks = 1;
  int groups = 8;
  double eps = 1e-5;
  int mlp_hidden_mult = 4;   // modulation MLP hidden width = mult * c_i
  bool attention = true;     // cross-attention at the lowest level and in the middle block
  bool rcn_first = true;     // scn+rcn: RCN modulation, then SCN modulation of the result
  std::uint64_t seed = 5;

  void validate() const;
  int levels() const { return static_cast<int>(channel_mult.size()); }
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

// (F - mu) / sqrt(var + eps) per (sample, group).
nn::Var group_normalize(const nn::Var& f, int groups, double eps);

// Position-shared two-layer MLP (1x1 convolutions): c_in -> hidden -> 2 * channels.
struct ModulationMlp {
  nn::Var w1, b1, w2, b2;
  int channels = 0;
};
ModulationMlp add_modulation_mlp(nn::ParameterStore& params, const std::string& prefix, int in_channels, int hidden,
                                 int channels);
// Returns (gamma, beta), each [N, channels, h, w].
std::pair<nn::Var, nn::Var> modulation_mlp(const nn::Var& s, const ModulationMlp& mlp);
// group_normalize(F) * (1 + gamma) + beta with (gamma, beta) = MLP(s).
nn::Var scn_modulate(const nn::Var& f, const nn::Var& s, const ModulationMlp& mlp, int groups, double eps);

// Per-pixel Plucker rays (d, o x d), [6, h, w], for an image of cam.height x cam.width
// sampled on an h x w grid of pixel centres. Coordinates are expressed in
// `reference`'s camera frame (right, up, -forward) when given, otherwise in world space.
Tensor ray_map(const CameraPose& cam, int h, int w, const CameraPose* reference = nullptr);

class UNet : public diffusion::NoisePredictor {
 public:
  explicit UNet(UNetConfig cfg);

  const UNetConfig& config() const noexcept { return cfg_; }
  nn::ParameterStore& params() noexcept { return params_; }
  const nn::ParameterStore& params() const noexcept { return params_; }

  std::unique_ptr<diffusion::PreparedConditioning> prepare(const diffusion::Conditioning& cond) const override;
  nn::Var predict(const nn::Var& z_t, std::span<const int> t, const diffusion::Conditioning& cond,
                  const diffusion::PreparedConditioning* prepared) const override;

  // Parameter names belonging to the skeleton / ray modulation branches.
  static bool is_modulation_parameter(const std::string& name);

  void save_to(ArchiveWriter& w) const { params_.save_to(w, "unet."); }
  // Loads parameters. With warm_start, parameters absent from the archive are
  // allowed only if they are modulation parameters (they keep their zero init).
  std::vector<std::string> load_from(const Archive& a, bool warm_start);

 private:
  struct Site {
    std::string name;
    int channels;
    int level;
    ModulationMlp scn, rcn;
  };
  struct Prepared;
  struct Context;

  int add_site(const std::string& name, int channels, int level);
  nn::Var norm(int site, const nn::Var& x, Context& ctx) const;
  nn::Var res_block(const std::string& name, const nn::Var& x, Context& ctx) const;
  nn::Var cross_attention(const std::string& name, const nn::Var& x, Context& ctx) const;
  void build_res_block(const std::string& name, int in, int out, int level);
  void build_attention(const std::string& name, int channels, int level);
  std::pair<nn::Var, nn::Var> site_modulation(const Site& site, const nn::Var& input, bool rcn) const;

  UNetConfig cfg_;
  nn::ParameterStore params_;
  std::vector<Site> sites_;
  std::map<std::string, int> site_index_;
  std::map<std::string, std::pair<int, int>> block_channels_;
  int time_dim_ = 0;
};

}  // namespace skel3d::unet
