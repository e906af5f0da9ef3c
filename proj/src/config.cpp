#include "wsfc/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "wsfc/errors.hpp"

namespace wsfc {

using nlohmann::json;

std::string to_string(TrainMode m) { return m == TrainMode::kSfc ? "sfc" : "wsfc"; }

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kFull: return "full";
    case Strategy::kPretrainFreeze: return "pretrain_freeze";
    case Strategy::kRetrainWeights: return "retrain_weights";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "sfc") return TrainMode::kSfc;
  if (s == "wsfc") return TrainMode::kWsfc;
  throw ConfigError("unknown mode '" + s + "' (expected sfc or wsfc)");
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "full") return Strategy::kFull;
  if (s == "pretrain_freeze") return Strategy::kPretrainFreeze;
  if (s == "retrain_weights") return Strategy::kRetrainWeights;
  throw ConfigError("unknown strategy '" + s + "'");
}

void ExperimentConfig::validate() const {
  if (corpus.empty()) throw ConfigError("config: 'corpus' is required");
  training.validate();
  if (strategy == Strategy::kPretrainFreeze && pretrain_attitude.empty())
    throw ConfigError("config: pretrain_freeze needs 'pretrain_attitude'");
  if (strategy == Strategy::kRetrainWeights && !init_checkpoint)
    throw ConfigError("config: retrain_weights needs 'init_checkpoint'");
  if (mode == TrainMode::kSfc && strategy != Strategy::kFull)
    throw ConfigError("config: sfc mode only supports the full strategy");
  if (model.cg_hidden == 0 || model.wm_hidden == 0) throw ConfigError("config: hidden widths must be >= 1");
  if (!(model.init_scale > 0.0)) throw ConfigError("config: init_scale must be positive");
  if (std::any_of(sweep.reg_coeffs.begin(), sweep.reg_coeffs.end(), [](double r) { return !(r >= 0.0); }))
    throw ConfigError("config: sweep reg_coeffs must be >= 0");
  if (std::any_of(sweep.batch_sizes.begin(), sweep.batch_sizes.end(), [](std::size_t b) { return b == 0; }))
    throw ConfigError("config: sweep batch_sizes must be >= 1");
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_optional(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void read_training(const json& j, TrainingConfig& t) {
  reject_unknown(j,
                 {"batch_size", "reg_coeff", "learning_rate", "momentum", "max_outer_iterations",
                  "inner_epochs", "patience", "outer_tolerance", "seed", "frozen_cg", "pitch_loss_weight",
                  "duration_loss_weight"},
                 "training");
  read_optional(j, "batch_size", t.batch_size);
  read_optional(j, "reg_coeff", t.reg_coeff);
  read_optional(j, "learning_rate", t.learning_rate);
  read_optional(j, "momentum", t.momentum);
  read_optional(j, "max_outer_iterations", t.max_outer_iterations);
  read_optional(j, "inner_epochs", t.inner_epochs);
  read_optional(j, "patience", t.patience);
  read_optional(j, "outer_tolerance", t.outer_tolerance);
  read_optional(j, "seed", t.seed);
  read_optional(j, "pitch_loss_weight", t.pitch_loss_weight);
  read_optional(j, "duration_loss_weight", t.duration_loss_weight);
  if (j.contains("frozen_cg"))
    for (const auto& tag : j.at("frozen_cg").get<std::vector<std::string>>()) t.frozen_cg.emplace(tag);
}

void read_model(const json& j, ModelOptions& m) {
  reject_unknown(j, {"cg_hidden", "wm_hidden", "init_scale", "scope_extension_right", "weight_pitch_only"},
                 "model");
  read_optional(j, "cg_hidden", m.cg_hidden);
  read_optional(j, "wm_hidden", m.wm_hidden);
  read_optional(j, "init_scale", m.init_scale);
  read_optional(j, "weight_pitch_only", m.weight_pitch_only);
  if (j.contains("scope_extension_right"))
    for (const auto& [tag, ext] : j.at("scope_extension_right").items())
      m.scope_extension_right[FunctionType(tag)] = ext.get<std::size_t>();
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base) {
  try {
    reject_unknown(j,
                   {"version", "corpus", "val_corpus", "split", "ground_truth", "init_checkpoint",
                    "output_dir", "checkpoint", "mode", "strategy", "pretrain_attitude", "context_mode",
                    "model", "training", "sweep"},
                   "config");
    if (!j.contains("version")) throw ConfigError("config: missing 'version'");
    if (j.at("version").get<int>() != kConfigVersion)
      throw ConfigError("config: unsupported version " + j.at("version").dump());

    ExperimentConfig c;
    c.corpus = resolve(base, j.at("corpus").get<std::string>());
    if (j.contains("val_corpus")) c.val_corpus = resolve(base, j.at("val_corpus").get<std::string>());
    if (j.contains("ground_truth")) c.ground_truth = resolve(base, j.at("ground_truth").get<std::string>());
    if (j.contains("init_checkpoint"))
      c.init_checkpoint = resolve(base, j.at("init_checkpoint").get<std::string>());
    if (j.contains("split")) {
      const auto& s = j.at("split");
      reject_unknown(s, {"train", "val", "test"}, "split");
      c.split = {s.at("train").get<double>(), s.at("val").get<double>(), s.at("test").get<double>()};
    }
    if (j.contains("output_dir")) {
      c.output_dir = resolve(base, j.at("output_dir").get<std::string>());
    } else if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') {
      c.output_dir = env;
    } else {
      c.output_dir = "out";
    }
    read_optional(j, "checkpoint", c.checkpoint_name);
    if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    read_optional(j, "pretrain_attitude", c.pretrain_attitude);
    if (j.contains("context_mode"))
      c.training.context_mode = context_mode_from_string(j.at("context_mode").get<std::string>());
    if (j.contains("model")) read_model(j.at("model"), c.model);
    if (j.contains("training")) read_training(j.at("training"), c.training);
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      reject_unknown(s, {"batch_sizes", "reg_coeffs"}, "sweep");
      read_optional(s, "batch_sizes", c.sweep.batch_sizes);
      read_optional(s, "reg_coeffs", c.sweep.reg_coeffs);
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  Corpus corpus = load_corpus(config.corpus);
  if (!config.val_corpus) return split_corpus(corpus, config.split, config.training.seed);
  ExperimentData data;
  data.val = load_corpus(*config.val_corpus);
  if (data.val.registry != corpus.registry)
    throw ValidationError({"validation corpus registry differs from the training corpus"});
  data.train = std::move(corpus);
  data.test = data.val;
  data.test.utterances.clear();
  return data;
}

TrainResult run_experiment(const ExperimentConfig& config, const ExperimentData& data) {
  config.validate();
  const Registry& registry = data.train.registry;
  ModelSet initial;
  if (config.init_checkpoint) {
    initial = load_model(*config.init_checkpoint);
    if (initial.registry != registry)
      throw ValidationError({"checkpoint registry differs from the corpus registry"});
    if (initial.context_mode != config.training.context_mode)
      throw ConfigError("checkpoint context mode '" + to_string(initial.context_mode) +
                        "' differs from the configured '" + to_string(config.training.context_mode) + "'");
  } else {
    initial = make_model(registry, config.training.context_mode, config.model, config.training.seed);
  }

  switch (config.strategy) {
    case Strategy::kFull:
      if (config.mode == TrainMode::kSfc) initial = set_identity_weights(std::move(initial));
      return analysis_by_synthesis(std::move(initial), data.train, data.val, config.training);
    case Strategy::kPretrainFreeze: {
      const FunctionType attitude(config.pretrain_attitude);
      if (!registry.is_attitude(attitude))
        throw ConfigError("pretrain_attitude '" + config.pretrain_attitude + "' is not an attitude");
      const Corpus subset = filter_by_attitude(data.train, attitude);
      if (subset.utterances.empty())
        throw ConfigError("no training utterances with attitude '" + config.pretrain_attitude + "'");
      return pretrain_freeze(std::move(initial), subset, data.train, data.val, config.training);
    }
    case Strategy::kRetrainWeights:
      initial.identity_weights = false;
      return retrain_weights_only(std::move(initial), data.train, data.val, config.training);
  }
  throw ConfigError("unknown strategy");
}

}  // namespace wsfc
