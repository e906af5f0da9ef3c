#pragma once

// Analysis-by-synthesis training: superpose weighted contours, hand the
// residual back to the covering contours as regression targets, and fit
// every weighted contour generator on its own targets.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wsfc/corpus.hpp"
#include "wsfc/netcore.hpp"
#include "wsfc/rng.hpp"
#include "wsfc/wcg.hpp"

namespace wsfc {

struct TrainingConfig {
  std::size_t batch_size = 256;
  double reg_coeff = 10.0;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t max_outer_iterations = 20;
  std::size_t inner_epochs = 50;
  std::size_t patience = 5;
  double outer_tolerance = 0.01;
  std::uint64_t seed = 1;
  std::set<FunctionType> frozen_cg;
  double pitch_loss_weight = 1.0;
  double duration_loss_weight = 1.0;
  ContextMode context_mode = ContextMode::kAttitude;
  /// Worker cap for per-function training; 0 means hardware concurrency.
  std::size_t threads = 0;

  /// Throws ConfigError on out-of-range fields.
  void validate() const;
};

/// Sum of all contributions covering each RU; zero where nothing covers.
std::vector<ProsodyFrame> synthesize(const ModelSet& model, const Utterance& utterance);

struct InstanceTarget {
  std::size_t first_unit = 0;
  std::vector<ProsodyFrame> frames;
};

/// Per instance (utterance order): contribution + residual / coverage count.
/// Pitch residual is zeroed at RUs without a vocalic nucleus.
std::vector<InstanceTarget> distribute_residuals(const ModelSet& model, const Utterance& utterance);

/// One instance worth of training data for a single generator.
struct FunctionSample {
  Eigen::MatrixXd ramps;    // kRampDim x n
  Eigen::VectorXd context;  // context_size
  Eigen::MatrixXd targets;  // kFrameDim x n
};

struct EpochSettings {
  std::size_t batch_size = 256;
  double reg_coeff = 10.0;
  SgdConfig sgd;
  double pitch_loss_weight = 1.0;
  double duration_loss_weight = 1.0;
  bool train_contour = true;
  /// False when weights are bypassed: w = 1, no penalty, no weight updates.
  bool gated = true;
  bool weight_pitch_only = false;

  static EpochSettings from(const TrainingConfig& config, const ModelSet& model,
                            const FunctionType& function);
};

struct WcgOptimizer {
  OptimizerState contour;
  OptimizerState weight;
  static WcgOptimizer for_generator(const WeightedContourGenerator& wcg);
};

struct BatchGradients {
  double loss = 0.0;
  double mse = 0.0;
  double weight_mean = 1.0;
  Gradients contour;
  Gradients weight;
};

/// Loss of one batch and its exact gradients:
///   L = (1/R) sum_RU [ (pitch_w/3) sum_k (w c_k - t_k)^2 + dur_w (w c_d - t_d)^2 ]
///       + reg_coeff * (mean_batch(w) - 1)^2
/// with R the number of RUs in the batch.
BatchGradients batch_gradients(const WeightedContourGenerator& wcg,
                               std::span<const FunctionSample* const> batch,
                               const EpochSettings& settings);

/// ceil(n / batch_size): the number of batches one epoch over n samples uses.
inline std::size_t batch_count(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

/// Shuffles `samples`, splits them into batch_count() batches whose sizes
/// differ by at most one, takes one SGD step per batch and returns the
/// mean batch loss. Contour parameters are untouched when !train_contour.
double train_function_epoch(WeightedContourGenerator& wcg, WcgOptimizer& optimizer,
                            std::span<const FunctionSample> samples, const EpochSettings& settings,
                            Rng& rng);

struct FunctionStats {
  double loss = 0.0;
  double weight_mean = 1.0;
  double weight_std = 0.0;
  std::size_t instances = 0;
  bool operator==(const FunctionStats&) const = default;
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::string phase;
  double train_rmse = 0.0;
  double val_rmse = 0.0;
  std::map<FunctionType, FunctionStats> functions;
  bool operator==(const IterationRecord&) const = default;
};

struct TrainHistory {
  std::vector<IterationRecord> iterations;
  std::size_t best_iteration = 0;
  double best_monitor_rmse = 0.0;
  std::string stop_reason;
  bool operator==(const TrainHistory&) const = default;
};

struct TrainResult {
  ModelSet model;
  TrainHistory history;
};

/// Outer loop: distribute residuals, train each generator for inner_epochs,
/// score validation pitch RMSE; stop on patience, tolerance or iteration
/// cap and restore the best validation snapshot. With an empty validation
/// corpus the training RMSE is monitored instead.
TrainResult analysis_by_synthesis(ModelSet model, const Corpus& train, const Corpus& val,
                                  const TrainingConfig& config, const std::string& phase = "full");

/// Phase 1 trains contours with bypassed weights on `pretrain_subset`;
/// phase 2 freezes every contour net trained in phase 1 and trains weights
/// (plus any contour never seen in phase 1) on `full`.
TrainResult pretrain_freeze(ModelSet initial, const Corpus& pretrain_subset, const Corpus& full,
                            const Corpus& val, const TrainingConfig& config);

/// analysis_by_synthesis with every contour net frozen.
TrainResult retrain_weights_only(ModelSet model, const Corpus& corpus, const Corpus& val,
                                 const TrainingConfig& config);

/// Columns: iteration,phase,function,loss,weight_mean,weight_std,train_rmse,val_rmse
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace wsfc
