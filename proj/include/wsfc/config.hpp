#pragma once

// Experiment configuration files and the train pipeline shared by the CLI
// subcommands.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsfc/corpus.hpp"
#include "wsfc/trainer.hpp"
#include "wsfc/wcg.hpp"

namespace wsfc {

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kOutputDirEnv = "WSFC_OUTPUT_DIR";

enum class TrainMode { kSfc, kWsfc };
enum class Strategy { kFull, kPretrainFreeze, kRetrainWeights };

std::string to_string(TrainMode m);
std::string to_string(Strategy s);
TrainMode train_mode_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);

struct SweepConfig {
  std::vector<std::size_t> batch_sizes;
  std::vector<double> reg_coeffs;
};

struct ExperimentConfig {
  /// Relative paths are resolved against the config file's directory.
  std::filesystem::path corpus;
  /// Without a validation corpus the main corpus is split by `split`.
  std::optional<std::filesystem::path> val_corpus;
  SplitRatios split{0.7, 0.15, 0.15};
  std::optional<std::filesystem::path> ground_truth;
  std::optional<std::filesystem::path> init_checkpoint;
  /// Empty means $WSFC_OUTPUT_DIR, else "out".
  std::filesystem::path output_dir;
  std::string checkpoint_name = "model.json";
  TrainMode mode = TrainMode::kWsfc;
  Strategy strategy = Strategy::kFull;
  std::string pretrain_attitude;
  ModelOptions model;
  TrainingConfig training;
  SweepConfig sweep;

  void validate() const;
};

/// Throws ConfigError on unknown keys, a missing or unsupported version,
/// or out-of-range values. `base` resolves relative paths.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                             const std::filesystem::path& base = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

using ExperimentData = CorpusSplit;

/// Loads the corpus (and validation corpus when given) or splits it with
/// the training seed.
ExperimentData load_experiment_data(const ExperimentConfig& config);

/// Builds or loads the initial model and runs the configured strategy.
TrainResult run_experiment(const ExperimentConfig& config, const ExperimentData& data);

}  // namespace wsfc
