#include "skel3d/unet/unet.hpp"

#include <cmath>

#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"
#include "skel3d/nn/ops.hpp"

namespace skel3d::unet {

using nn::Init;
using nn::Var;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::scn: return "scn";
    case Mode::rcn: return "rcn";
    case Mode::scn_rcn: return "scn+rcn";
  }
  return "baseline";
}

Mode mode_from_string(const std::string& s) {
  if (s == "baseline") return Mode::baseline;
  if (s == "scn") return Mode::scn;
  if (s == "rcn") return Mode::rcn;
  if (s == "scn+rcn") return Mode::scn_rcn;
  throw ConfigError("unet.mode must be one of baseline, scn, rcn, scn+rcn; got '" + s + "'");
}

void UNetConfig::validate() const {
  if (latent_channels < 1 || skeleton_channels < 1) throw ConfigError("unet channel counts must be positive");
  if (global_dim < 1 || global_tokens < 1 || global_dim % global_tokens != 0)
    throw ConfigError("unet.global_tokens must divide unet.global_dim");
  if (base_channels < 1 || channel_mult.empty()) throw ConfigError("unet needs base_channels and channel_mult");
  if (num_res_blocks < 1) throw ConfigError("unet.num_res_blocks must be >= 1");
  if (groups < 1) throw ConfigError("unet.groups must be >= 1");
  for (int m : channel_mult) {
    if (m < 1) throw ConfigError("unet.channel_mult entries must be positive");
    if ((base_channels * m) % groups != 0)
      throw ConfigError("unet.groups (" + std::to_string(groups) + ") must divide every level width");
  }
  if (!(eps > 0.0)) throw ConfigError("unet.eps must be positive");
  if (mlp_hidden_mult < 1) throw ConfigError("unet.mlp_hidden_mult must be >= 1");
}

void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"mode", to_string(c.mode)},
       {"latent_channels", c.latent_channels},
       {"skeleton_channels", c.skeleton_channels},
       {"global_dim", c.global_dim},
       {"global_tokens", c.global_tokens},
       {"base_channels", c.base_channels},
       {"channel_mult", c.channel_mult},
       {"num_res_blocks", c.num_res_blocks},
       {"groups", c.groups},
       {"eps", c.eps},
       {"mlp_hidden_mult", c.mlp_hidden_mult},
       {"attention", c.attention},
       {"rcn_first", c.rcn_first},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
  require_known_keys(j,
                     {"mode", "latent_channels", "skeleton_channels", "global_dim", "global_tokens", "base_channels",
                      "channel_mult", "num_res_blocks", "groups", "eps", "mlp_hidden_mult", "attention", "rcn_first",
                      "seed"},
                     "unet");
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.latent_channels = j.value("latent_channels", c.latent_channels);
  c.skeleton_channels = j.value("skeleton_channels", c.skeleton_channels);
  c.global_dim = j.value("global_dim", c.global_dim);
  c.global_tokens = j.value("global_tokens", c.global_tokens);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.channel_mult = j.value("channel_mult", c.channel_mult);
  c.num_res_blocks = j.value("num_res_blocks", c.num_res_blocks);
  c.groups = j.value("groups", c.groups);
  c.eps = j.value("eps", c.eps);
  c.mlp_hidden_mult = j.value("mlp_hidden_mult", c.mlp_hidden_mult);
  c.attention = j.value("attention", c.attention);
  c.rcn_first = j.value("rcn_first", c.rcn_first);
  c.seed = j.value("seed", c.seed);
}

Var group_normalize(const Var& f, int groups, double eps) { return nn::group_norm(f, groups, eps); }

ModulationMlp add_modulation_mlp(nn::ParameterStore& params, const std::string& prefix, int in_channels, int hidden,
                                 int channels) {
  ModulationMlp m;
  m.channels = channels;
  m.w1 = params.add(prefix + ".fc1.weight", {hidden, in_channels, 1, 1}, Init::uniform_fan_in, in_channels);
  m.b1 = params.add(prefix + ".fc1.bias", {hidden}, Init::uniform_fan_in, in_channels);
  // Zero-initialized output layer: (gamma, beta) = (0, 0) until trained.
  m.w2 = params.add(prefix + ".fc2.weight", {2 * channels, hidden, 1, 1}, Init::zeros);
  m.b2 = params.add(prefix + ".fc2.bias", {2 * channels}, Init::zeros);
  return m;
}

std::pair<Var, Var> modulation_mlp(const Var& s, const ModulationMlp& mlp) {
  if (s.dim(1) != mlp.w1.dim(1))
    throw InputError("modulation_mlp: expected " + std::to_string(mlp.w1.dim(1)) + " input channels, got " +
                     std::to_string(s.dim(1)));
  const Var h = nn::silu(nn::conv2d(s, mlp.w1, mlp.b1, 1, 0));
  const Var out = nn::conv2d(h, mlp.w2, mlp.b2, 1, 0);
  return {nn::slice_channels(out, 0, mlp.channels), nn::slice_channels(out, mlp.channels, mlp.channels)};
}

Var scn_modulate(const Var& f, const Var& s, const ModulationMlp& mlp, int groups, double eps) {
  const auto [gamma, beta] = modulation_mlp(s, mlp);
  return nn::modulate(group_normalize(f, groups, eps), gamma, beta);
}

Tensor ray_map(const CameraPose& cam, int h, int w, const CameraPose* reference) {
  cam.validate();
  const CameraFrame f = camera_frame(cam);
  Vec3 rx{1, 0, 0}, ry{0, 1, 0}, rz{0, 0, 1}, origin{};
  if (reference) {
    const CameraFrame r = camera_frame(*reference);
    // Reference camera axes: x = right, y = up, z = -forward (camera looks down -z).
    rx = r.right;
    ry = r.up;
    rz = -r.forward;
    origin = r.position;
  }
  auto to_ref = [&](const Vec3& v) { return Vec3{v.dot(rx), v.dot(ry), v.dot(rz)}; };
  const Vec3 o = to_ref(f.position - origin);
  Tensor out({6, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) * cam.width / w, v = (y + 0.5) * cam.height / h;
      const Vec3 dw = (f.right * ((u - 0.5 * cam.width) / cam.focal) + f.up * ((0.5 * cam.height - v) / cam.focal) + f.forward)
                          .normalized();
      const Vec3 d = to_ref(dw);
      const Vec3 m = o.cross(d);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double vals[6] = {d.x, d.y, d.z, m.x, m.y, m.z};
      for (int k = 0; k < 6; ++k) out[k * plane + i] = vals[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct UNet::Prepared : diffusion::PreparedConditioning {
  // Per site: SCN and RCN (gamma, beta), as constants.
  std::vector<std::pair<Var, Var>> scn, rcn;
};

struct UNet::Context {
  const diffusion::Conditioning* cond = nullptr;
  const Prepared* prepared = nullptr;
  std::vector<Var> skeleton;  // per level
  std::vector<Var> rays;      // per level
  Var temb;                   // [N, time_dim]
  Var tokens;                 // [N, tokens, e / tokens]
};

bool UNet::is_modulation_parameter(const std::string& name) {
  return name.find(".scn.") != std::string::npos || name.find(".rcn.") != std::string::npos;
}

int UNet::add_site(const std::string& name, int channels, int level) {
  Site s;
  s.name = name;
  s.channels = channels;
  s.level = level;
  const int hidden = cfg_.mlp_hidden_mult * channels;
  if (uses_scn(cfg_.mode)) s.scn = add_modulation_mlp(params_, name + ".scn", cfg_.skeleton_channels, hidden, channels);
  if (uses_rcn(cfg_.mode)) s.rcn = add_modulation_mlp(params_, name + ".rcn", 6, hidden, channels);
  site_index_[name] = static_cast<int>(sites_.size());
  sites_.push_back(std::move(s));
  return static_cast<int>(sites_.size()) - 1;
}

void UNet::build_res_block(const std::string& name, int in, int out, int level) {
  add_site(name + ".norm1", in, level);
  params_.add(name + ".conv1.weight", {out, in, 3, 3}, Init::uniform_fan_in, in * 9);
  params_.add(name + ".conv1.bias", {out}, Init::uniform_fan_in, in * 9);
  params_.add(name + ".temb.weight", {out, time_dim_}, Init::uniform_fan_in, time_dim_);
  params_.add(name + ".temb.bias", {out}, Init::uniform_fan_in, time_dim_);
  add_site(name + ".norm2", out, level);
  params_.add(name + ".conv2.weight", {out, out, 3, 3}, Init::uniform_fan_in, out * 9);
  params_.add(name + ".conv2.bias", {out}, Init::uniform_fan_in, out * 9);
  if (in != out) {
    params_.add(name + ".skip.weight", {out, in, 1, 1}, Init::uniform_fan_in, in);
    params_.add(name + ".skip.bias", {out}, Init::uniform_fan_in, in);
  }
  block_channels_[name] = {in, out};
}

void UNet::build_attention(const std::string& name, int channels, int level) {
  const int td = cfg_.global_dim / cfg_.global_tokens;
  add_site(name + ".norm", channels, level);
  params_.add(name + ".q.weight", {channels, channels}, Init::uniform_fan_in, channels);
  params_.add(name + ".k.weight", {channels, td}, Init::uniform_fan_in, td);
  params_.add(name + ".v.weight", {channels, td}, Init::uniform_fan_in, td);
  params_.add(name + ".out.weight", {channels, channels}, Init::uniform_fan_in, channels);
  params_.add(name + ".out.bias", {channels}, Init::zeros);
}

UNet::UNet(UNetConfig cfg) : cfg_(std::move(cfg)), params_(cfg_.seed) {
  cfg_.validate();
  const int base = cfg_.base_channels;
  const int L = cfg_.levels();
  time_dim_ = 4 * base;
  params_.add("time.fc1.weight", {time_dim_, base}, Init::uniform_fan_in, base);
  params_.add("time.fc1.bias", {time_dim_}, Init::uniform_fan_in, base);
  params_.add("time.fc2.weight", {time_dim_, time_dim_}, Init::uniform_fan_in, time_dim_);
  params_.add("time.fc2.bias", {time_dim_}, Init::uniform_fan_in, time_dim_);
  const int cin = 2 * cfg_.latent_channels;
  params_.add("conv_in.weight", {base, cin, 3, 3}, Init::uniform_fan_in, cin * 9);
  params_.add("conv_in.bias", {base}, Init::uniform_fan_in, cin * 9);

  std::vector<int> skip_channels{base};
  int ch = base;
  for (int l = 0; l < L; ++l) {
    const int out = base * cfg_.channel_mult[static_cast<std::size_t>(l)];
    for (int r = 0; r < cfg_.num_res_blocks; ++r) {
      const std::string n = "down" + std::to_string(l) + ".res" + std::to_string(r);
      build_res_block(n, ch, out, l);
      ch = out;
      if (cfg_.attention && l == L - 1) build_attention("down" + std::to_string(l) + ".attn" + std::to_string(r), ch, l);
      skip_channels.push_back(ch);
    }
    if (l != L - 1) {
      params_.add("down" + std::to_string(l) + ".downsample.weight", {ch, ch, 3, 3}, Init::uniform_fan_in, ch * 9);
      params_.add("down" + std::to_string(l) + ".downsample.bias", {ch}, Init::uniform_fan_in, ch * 9);
      skip_channels.push_back(ch);
    }
  }
  build_res_block("mid.res0", ch, ch, L - 1);
  if (cfg_.attention) build_attention("mid.attn", ch, L - 1);
  build_res_block("mid.res1", ch, ch, L - 1);

  for (int l = L - 1; l >= 0; --l) {
    const int out = base * cfg_.channel_mult[static_cast<std::size_t>(l)];
    for (int r = 0; r <= cfg_.num_res_blocks; ++r) {
      const int skip = skip_channels.back();
      skip_channels.pop_back();
      const std::string n = "up" + std::to_string(l) + ".res" + std::to_string(r);
      build_res_block(n, ch + skip, out, l);
      ch = out;
      if (cfg_.attention && l == L - 1) build_attention("up" + std::to_string(l) + ".attn" + std::to_string(r), ch, l);
    }
    if (l != 0) {
      params_.add("up" + std::to_string(l) + ".upsample.weight", {ch, ch, 3, 3}, Init::uniform_fan_in, ch * 9);
      params_.add("up" + std::to_string(l) + ".upsample.bias", {ch}, Init::uniform_fan_in, ch * 9);
    }
  }
  add_site("out.norm", ch, 0);
  params_.add("conv_out.weight", {cfg_.latent_channels, ch, 3, 3}, Init::zeros);
  params_.add("conv_out.bias", {cfg_.latent_channels}, Init::zeros);
}

std::pair<Var, Var> UNet::site_modulation(const Site& site, const Var& input, bool rcn) const {
  return modulation_mlp(input, rcn ? site.rcn : site.scn);
}

Var UNet::norm(int idx, const Var& x, Context& ctx) const {
  const Site& site = sites_[static_cast<std::size_t>(idx)];
  Var y = group_normalize(x, cfg_.groups, cfg_.eps);
  auto apply = [&](bool rcn) {
    std::pair<Var, Var> gb;
    if (ctx.prepared) {
      gb = rcn ? ctx.prepared->rcn[static_cast<std::size_t>(idx)] : ctx.prepared->scn[static_cast<std::size_t>(idx)];
    } else {
      gb = site_modulation(site, rcn ? ctx.rays[static_cast<std::size_t>(site.level)] : ctx.skeleton[static_cast<std::size_t>(site.level)], rcn);
    }
    y = nn::modulate(y, gb.first, gb.second);
  };
  switch (cfg_.mode) {
    case Mode::baseline: break;
    case Mode::scn: apply(false); break;
    case Mode::rcn: apply(true); break;
    case Mode::scn_rcn:
      apply(!cfg_.rcn_first);
      apply(cfg_.rcn_first);
      break;
  }
  return y;
}

Var UNet::res_block(const std::string& name, const Var& x, Context& ctx) const {
  auto P = [&](const std::string& s) { return params_.get(name + s); };
  Var h = nn::silu(norm(site_index_.at(name + ".norm1"), x, ctx));
  h = nn::conv2d(h, P(".conv1.weight"), P(".conv1.bias"), 1, 1);
  h = nn::add_channel_bias(h, nn::linear(nn::silu(ctx.temb), P(".temb.weight"), P(".temb.bias")));
  h = nn::silu(norm(site_index_.at(name + ".norm2"), h, ctx));
  h = nn::conv2d(h, P(".conv2.weight"), P(".conv2.bias"), 1, 1);
  const auto [in, out] = block_channels_.at(name);
  const Var skip = in == out ? x : nn::conv2d(x, P(".skip.weight"), P(".skip.bias"), 1, 0);
  return nn::add(skip, h);
}

Var UNet::cross_attention(const std::string& name, const Var& x, Context& ctx) const {
  auto P = [&](const std::string& s) { return params_.get(name + s); };
  const int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Var q = nn::linear(nn::to_tokens(norm(site_index_.at(name + ".norm"), x, ctx)), P(".q.weight"), Var());
  const Var k = nn::linear(ctx.tokens, P(".k.weight"), Var());
  const Var v = nn::linear(ctx.tokens, P(".v.weight"), Var());
  const Var attn = nn::softmax(nn::scale(nn::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(c))));
  const Var o = nn::linear(nn::bmm(attn, v, false), P(".out.weight"), P(".out.bias"));
  return nn::add(x, nn::from_tokens(o, h, w));
}

namespace {

Tensor timestep_embedding(std::span<const int> t, int dim) {
  Tensor out({static_cast<int>(t.size()), dim});
  const int half = dim / 2;
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      out[n * dim + i] = std::cos(t[n] * freq);
      out[n * dim + half + i] = std::sin(t[n] * freq);
    }
  }
  return out;
}

}  // namespace

std::unique_ptr<diffusion::PreparedConditioning> UNet::prepare(const diffusion::Conditioning& cond) const {
  auto prep = std::make_unique<Prepared>();
  if (cfg_.mode == Mode::baseline) return prep;
  nn::NoGradGuard guard;
  Context ctx;
  ctx.cond = &cond;
  const int h = cond.z_src.dim(2), w = cond.z_src.dim(3);
  for (int l = 0; l < cfg_.levels(); ++l) {
    if (uses_scn(cfg_.mode)) ctx.skeleton.push_back(nn::avg_pool(nn::constant(cond.skeleton), cond.skeleton.dim(2) / (h >> l)));
    if (uses_rcn(cfg_.mode)) {
      std::vector<Tensor> rays;
      for (std::size_t n = 0; n < cond.target_cameras.size(); ++n)
        rays.push_back(ray_map(cond.target_cameras[n], h >> l, w >> l, &cond.source_cameras[n]));
      ctx.rays.push_back(nn::constant(Tensor::stack0(rays)));
    }
  }
  for (const Site& s : sites_) {
    if (uses_scn(cfg_.mode)) prep->scn.push_back(site_modulation(s, ctx.skeleton[static_cast<std::size_t>(s.level)], false));
    else prep->scn.emplace_back();
    if (uses_rcn(cfg_.mode)) prep->rcn.push_back(site_modulation(s, ctx.rays[static_cast<std::size_t>(s.level)], true));
    else prep->rcn.emplace_back();
  }
  return prep;
}

Var UNet::predict(const Var& z_t, std::span<const int> t, const diffusion::Conditioning& cond,
                  const diffusion::PreparedConditioning* prepared) const {
  const int N = z_t.dim(0), c = z_t.dim(1), h = z_t.dim(2), w = z_t.dim(3);
  if (c != cfg_.latent_channels) throw InputError("unet: expected " + std::to_string(cfg_.latent_channels) + " latent channels");
  if (cond.z_src.shape() != z_t.shape()) throw InputError("unet: z_src shape " + shape_str(cond.z_src.shape()) + " differs from z_t " + shape_str(z_t.shape()));
  if (static_cast<int>(t.size()) != N) throw InputError("unet: one timestep per row required");
  const int down = 1 << (cfg_.levels() - 1);
  if (h % down != 0 || w % down != 0) throw InputError("unet: latent size must be divisible by 2^(levels-1)");
  if (cond.global.shape() != Shape{N, cfg_.global_dim}) throw InputError("unet: global embedding must be [N, global_dim]");
  if (uses_scn(cfg_.mode)) {
    const Shape& s = cond.skeleton.shape();
    if (s.size() != 4 || s[0] != N || s[1] != cfg_.skeleton_channels || s[2] % h != 0 || s[3] % w != 0 || s[2] / h != s[3] / w)
      throw InputError("unet: skeleton embedding " + shape_str(s) + " incompatible with latent " + shape_str(z_t.shape()));
  }
  if (uses_rcn(cfg_.mode) && (static_cast<int>(cond.target_cameras.size()) != N || static_cast<int>(cond.source_cameras.size()) != N))
    throw InputError("unet: rcn mode requires source and target cameras for every row");

  Context ctx;
  ctx.cond = &cond;
  ctx.prepared = dynamic_cast<const Prepared*>(prepared);
  if (prepared && !ctx.prepared) throw InputError("unet: foreign prepared conditioning");
  if (ctx.prepared && cfg_.mode != Mode::baseline && ctx.prepared->scn.size() != sites_.size())
    throw InputError("unet: prepared conditioning does not match this model");
  if (!ctx.prepared) {
    for (int l = 0; l < cfg_.levels(); ++l) {
      if (uses_scn(cfg_.mode)) ctx.skeleton.push_back(nn::avg_pool(nn::constant(cond.skeleton), cond.skeleton.dim(2) / (h >> l)));
      if (uses_rcn(cfg_.mode)) {
        std::vector<Tensor> rays;
        for (int n = 0; n < N; ++n)
          rays.push_back(ray_map(cond.target_cameras[static_cast<std::size_t>(n)], h >> l, w >> l, &cond.source_cameras[static_cast<std::size_t>(n)]));
        ctx.rays.push_back(nn::constant(Tensor::stack0(rays)));
      }
    }
  }
  auto P = [&](const std::string& s) { return params_.get(s); };
  Var temb = nn::constant(timestep_embedding(t, cfg_.base_channels));
  temb = nn::linear(nn::silu(nn::linear(temb, P("time.fc1.weight"), P("time.fc1.bias"))), P("time.fc2.weight"), P("time.fc2.bias"));
  ctx.temb = temb;
  const int td = cfg_.global_dim / cfg_.global_tokens;
  ctx.tokens = nn::constant(cond.global.reshaped({N, cfg_.global_tokens, td}));

  const int L = cfg_.levels();
  Var x = nn::concat_channels(z_t, nn::constant(cond.z_src));
  Var hcur = nn::conv2d(x, P("conv_in.weight"), P("conv_in.bias"), 1, 1);
  std::vector<Var> skips{hcur};
  for (int l = 0; l < L; ++l) {
    for (int r = 0; r < cfg_.num_res_blocks; ++r) {
      hcur = res_block("down" + std::to_string(l) + ".res" + std::to_string(r), hcur, ctx);
      if (cfg_.attention && l == L - 1) hcur = cross_attention("down" + std::to_string(l) + ".attn" + std::to_string(r), hcur, ctx);
      skips.push_back(hcur);
    }
    if (l != L - 1) {
      const std::string n = "down" + std::to_string(l) + ".downsample";
      hcur = nn::conv2d(hcur, P(n + ".weight"), P(n + ".bias"), 2, 1);
      skips.push_back(hcur);
    }
  }
  hcur = res_block("mid.res0", hcur, ctx);
  if (cfg_.attention) hcur = cross_attention("mid.attn", hcur, ctx);
  hcur = res_block("mid.res1", hcur, ctx);
  for (int l = L - 1; l >= 0; --l) {
    for (int r = 0; r <= cfg_.num_res_blocks; ++r) {
      hcur = nn::concat_channels(hcur, skips.back());
      skips.pop_back();
      hcur = res_block("up" + std::to_string(l) + ".res" + std::to_string(r), hcur, ctx);
      if (cfg_.attention && l == L - 1) hcur = cross_attention("up" + std::to_string(l) + ".attn" + std::to_string(r), hcur, ctx);
    }
    if (l != 0) {
      const std::string n = "up" + std::to_string(l) + ".upsample";
      hcur = nn::conv2d(nn::upsample_nearest(hcur, 2), P(n + ".weight"), P(n + ".bias"), 1, 1);
    }
  }
  hcur = nn::silu(norm(site_index_.at("out.norm"), hcur, ctx));
  return nn::conv2d(hcur, P("conv_out.weight"), P("conv_out.bias"), 1, 1);
}

std::vector<std::string> UNet::load_from(const Archive& a, bool warm_start) {
  for (const auto& [key, t] : a.tensors()) {
    if (key.rfind("unet.", 0) == 0 && !params_.contains(key.substr(5)))
      throw DataError("checkpoint parameter '" + key.substr(5) + "' does not exist in unet mode " + to_string(cfg_.mode));
  }
  auto missing = params_.load_from(a, "unet.", true);
  for (const auto& m : missing) {
    if (!warm_start || !is_modulation_parameter(m))
      throw DataError("checkpoint is missing parameter '" + m + "' required by unet mode " + to_string(cfg_.mode));
  }
  return missing;
}

}  // namespace skel3d::unet
