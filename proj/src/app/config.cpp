#include "skel3d/app/config.hpp"

#include "skel3d/core/error.hpp"
#include "skel3d/core/json_util.hpp"

namespace skel3d::app {

void to_json(nlohmann::json& j, const DiffusionSection& c) { j = {{"schedule", c.schedule}, {"sampler", c.sampler}}; }

void from_json(const nlohmann::json& j, DiffusionSection& c) {
  require_known_keys(j, {"schedule", "sampler"}, "diffusion");
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<diffusion::ScheduleConfig>();
  if (j.contains("sampler")) c.sampler = j.at("sampler").get<diffusion::SamplerConfig>();
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"accumulation_steps", c.accumulation_steps},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"grad_clip", c.grad_clip},
       {"conditioning_dropout", c.conditioning_dropout},
       {"max_samples", c.max_samples},
       {"checkpoint_every", c.checkpoint_every},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  require_known_keys(j,
                     {"batch_size", "accumulation_steps", "epochs", "learning_rate", "grad_clip",
                      "conditioning_dropout", "max_samples", "checkpoint_every", "seed"},
                     "training");
  c.batch_size = j.value("batch_size", c.batch_size);
  c.accumulation_steps = j.value("accumulation_steps", c.accumulation_steps);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.conditioning_dropout = j.value("conditioning_dropout", c.conditioning_dropout);
  c.max_samples = j.value("max_samples", c.max_samples);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const EvaluationConfig& c) {
  j = {{"split", c.split},
       {"max_samples", c.max_samples},
       {"featnet", c.featnet},
       {"num_bins", c.num_bins},
       {"bootstrap_resamples", c.bootstrap_resamples},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EvaluationConfig& c) {
  require_known_keys(j, {"split", "max_samples", "featnet", "num_bins", "bootstrap_resamples", "seed"}, "evaluation");
  c.split = j.value("split", c.split);
  c.max_samples = j.value("max_samples", c.max_samples);
  if (j.contains("featnet")) c.featnet = j.at("featnet").get<evalkit::FeatureNetSpec>();
  c.num_bins = j.value("num_bins", c.num_bins);
  c.bootstrap_resamples = j.value("bootstrap_resamples", c.bootstrap_resamples);
  c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"scenegen", c.scenegen}, {"codec", c.codec},       {"unet", c.unet},
       {"diffusion", c.diffusion}, {"training", c.training}, {"evaluation", c.evaluation}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  require_known_keys(j, {"scenegen", "codec", "unet", "diffusion", "training", "evaluation"}, "config");
  if (j.contains("scenegen")) c.scenegen = j.at("scenegen").get<scenegen::DatasetConfig>();
  if (j.contains("codec")) c.codec = j.at("codec").get<codec::CodecConfig>();
  if (j.contains("unet")) c.unet = j.at("unet").get<unet::UNetConfig>();
  if (j.contains("diffusion")) c.diffusion = j.at("diffusion").get<DiffusionSection>();
  if (j.contains("training")) c.training = j.at("training").get<TrainingConfig>();
  if (j.contains("evaluation")) c.evaluation = j.at("evaluation").get<EvaluationConfig>();
}

void ExperimentConfig::validate() const {
  scenegen.validate();
  codec.validate();
  unet.validate();
  const diffusion::NoiseSchedule sched = diffusion::make_schedule(diffusion.schedule);
  diffusion.sampler.validate(sched);
  evaluation.featnet.validate();
  if (codec.height != scenegen.height || codec.width != scenegen.width)
    throw ConfigError("codec image size must match scenegen image size");
  if (unet.latent_channels != codec.latent_c() || unet.skeleton_channels != codec.latent_c())
    throw ConfigError("unet latent/skeleton channels must equal the codec latent channels (" +
                      std::to_string(codec.latent_c()) + ")");
  if (unet.global_dim != codec.global_dim) throw ConfigError("unet.global_dim must equal codec.global_dim");
  const int lh = codec.height / codec.latent_d(), lw = codec.width / codec.latent_d();
  const int down = 1 << (unet.levels() - 1);
  if (lh % down != 0 || lw % down != 0)
    throw ConfigError("latent size " + std::to_string(lh) + "x" + std::to_string(lw) + " is not divisible by 2^(levels-1)");
  if (training.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (training.accumulation_steps < 1) throw ConfigError("training.accumulation_steps must be >= 1");
  if (training.epochs < 0) throw ConfigError("training.epochs must be >= 0");
  if (!(training.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
  if (training.grad_clip < 0.0) throw ConfigError("training.grad_clip must be >= 0");
  if (training.conditioning_dropout < 0.0 || training.conditioning_dropout > 1.0)
    throw ConfigError("training.conditioning_dropout must be in [0, 1]");
  if (training.max_samples < 0 || evaluation.max_samples < 0) throw ConfigError("max_samples must be >= 0");
  if (training.checkpoint_every < 0) throw ConfigError("training.checkpoint_every must be >= 0");
  if (evaluation.split != "train" && evaluation.split != "test") throw ConfigError("evaluation.split must be train or test");
  if (evaluation.num_bins < 2) throw ConfigError("evaluation.num_bins must be >= 2");
  if (evaluation.bootstrap_resamples < 2) throw ConfigError("evaluation.bootstrap_resamples must be >= 2");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig c;
  if (!path.empty()) {
    nlohmann::json j;
    try {
      j = read_json_file(path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    try {
      c = j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("invalid config ") + path.string() + ": " + e.what());
    }
    // Channel counts that the file leaves unset follow the codec.
    const nlohmann::json u = j.value("unet", nlohmann::json::object());
    if (!u.contains("latent_channels")) c.unet.latent_channels = c.codec.latent_c();
    if (!u.contains("skeleton_channels")) c.unet.skeleton_channels = c.codec.latent_c();
    if (!u.contains("global_dim")) c.unet.global_dim = c.codec.global_dim;
  }
  c.validate();
  return c;
}

}  // namespace skel3d::app
