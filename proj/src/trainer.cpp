#include "wsfc/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "wsfc/errors.hpp"
#include "wsfc/eval.hpp"

namespace wsfc {

void TrainingConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(reg_coeff >= 0.0) || !std::isfinite(reg_coeff)) throw ConfigError("reg_coeff must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (max_outer_iterations < 1) throw ConfigError("max_outer_iterations must be >= 1");
  if (inner_epochs < 1) throw ConfigError("inner_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(outer_tolerance > 0.0)) throw ConfigError("outer_tolerance must be positive");
  if (!(pitch_loss_weight >= 0.0) || !(duration_loss_weight >= 0.0) ||
      pitch_loss_weight + duration_loss_weight <= 0.0)
    throw ConfigError("loss weights must be non-negative and not both zero");
}

std::vector<ProsodyFrame> synthesize(const ModelSet& model, const Utterance& utterance) {
  std::vector<ProsodyFrame> out(utterance.units.size());
  for (const auto& inst : utterance.instances) {
    const Contribution c = contribution(model, inst, utterance);
    for (std::size_t i = 0; i < c.frames.size(); ++i) out[c.first_unit + i] += c.frames[i];
  }
  return out;
}

std::vector<InstanceTarget> distribute_residuals(const ModelSet& model, const Utterance& utterance) {
  const std::size_t n = utterance.units.size();
  std::vector<Contribution> contributions;
  contributions.reserve(utterance.instances.size());
  std::vector<ProsodyFrame> synth(n);
  std::vector<std::size_t> coverage(n, 0);
  for (const auto& inst : utterance.instances) {
    contributions.push_back(contribution(model, inst, utterance));
    const auto& c = contributions.back();
    for (std::size_t i = 0; i < c.frames.size(); ++i) {
      synth[c.first_unit + i] += c.frames[i];
      ++coverage[c.first_unit + i];
    }
  }

  std::vector<ProsodyFrame> share(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (coverage[i] == 0) continue;
    ProsodyFrame r = utterance.units[i].observed - synth[i];
    if (!utterance.units[i].has_vocalic_nucleus)
      for (std::size_t k = 0; k < kPitchSamples; ++k) r.pitch(k) = 0.0;
    share[i] = (1.0 / static_cast<double>(coverage[i])) * r;
  }

  std::vector<InstanceTarget> targets;
  targets.reserve(contributions.size());
  for (const auto& c : contributions) {
    InstanceTarget t{c.first_unit, c.frames};
    for (std::size_t i = 0; i < t.frames.size(); ++i) t.frames[i] += share[c.first_unit + i];
    targets.push_back(std::move(t));
  }
  return targets;
}

EpochSettings EpochSettings::from(const TrainingConfig& config, const ModelSet& model,
                                  const FunctionType& function) {
  EpochSettings s;
  s.batch_size = config.batch_size;
  s.reg_coeff = config.reg_coeff;
  s.sgd = {config.learning_rate, config.momentum};
  s.pitch_loss_weight = config.pitch_loss_weight;
  s.duration_loss_weight = config.duration_loss_weight;
  s.train_contour = config.frozen_cg.count(function) == 0;
  s.gated = !model.identity_weights;
  s.weight_pitch_only = model.weight_pitch_only;
  return s;
}

WcgOptimizer WcgOptimizer::for_generator(const WeightedContourGenerator& wcg) {
  return {make_optimizer_state(wcg.contour_net), make_optimizer_state(wcg.weight_net)};
}

BatchGradients batch_gradients(const WeightedContourGenerator& wcg,
                               std::span<const FunctionSample* const> batch,
                               const EpochSettings& settings) {
  if (batch.empty()) throw Error("empty training batch");
  const auto n_batch = static_cast<Eigen::Index>(batch.size());
  Eigen::Index total = 0;
  for (const auto* s : batch) {
    if (s->ramps.cols() != s->targets.cols() || s->targets.rows() != static_cast<Eigen::Index>(kFrameDim))
      throw DimensionError("sample ramps and targets disagree");
    total += s->ramps.cols();
  }

  Eigen::MatrixXd ramps(static_cast<Eigen::Index>(kRampDim), total);
  Eigen::MatrixXd targets(static_cast<Eigen::Index>(kFrameDim), total);
  std::vector<Eigen::Index> owner(static_cast<std::size_t>(total));
  Eigen::Index col = 0;
  for (Eigen::Index b = 0; b < n_batch; ++b) {
    const auto* s = batch[static_cast<std::size_t>(b)];
    const auto w = s->ramps.cols();
    ramps.middleCols(col, w) = s->ramps;
    targets.middleCols(col, w) = s->targets;
    for (Eigen::Index i = 0; i < w; ++i) owner[static_cast<std::size_t>(col + i)] = b;
    col += w;
  }

  BatchGradients out;
  out.contour = wcg.contour_net.zero_gradients();
  out.weight = wcg.weight_net.zero_gradients();

  Eigen::VectorXd weights = Eigen::VectorXd::Ones(n_batch);
  ForwardCache wm_cache;
  if (settings.gated) {
    Eigen::MatrixXd contexts(batch.front()->context.size(), n_batch);
    for (Eigen::Index b = 0; b < n_batch; ++b) contexts.col(b) = batch[static_cast<std::size_t>(b)]->context;
    wm_cache = forward_cached(wcg.weight_net, contexts);
    weights = wm_cache.output().row(0).transpose().unaryExpr(&weight_from_gate);
  }

  const ForwardCache cg_cache = forward_cached(wcg.contour_net, ramps);
  const Eigen::MatrixXd& contours = cg_cache.output();
  const std::size_t weighted_rows = settings.weight_pitch_only ? kPitchSamples : kFrameDim;

  Eigen::VectorXd coef(static_cast<Eigen::Index>(kFrameDim));
  coef << settings.pitch_loss_weight / 3.0, settings.pitch_loss_weight / 3.0,
      settings.pitch_loss_weight / 3.0, settings.duration_loss_weight;

  const double inv_r = 1.0 / static_cast<double>(total);
  Eigen::MatrixXd upstream_contour(static_cast<Eigen::Index>(kFrameDim), total);
  Eigen::VectorXd dweight = Eigen::VectorXd::Zero(n_batch);
  double sse = 0.0;
  for (Eigen::Index j = 0; j < total; ++j) {
    const Eigen::Index b = owner[static_cast<std::size_t>(j)];
    const double w = weights(b);
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(kFrameDim); ++c) {
      const bool weighted = static_cast<std::size_t>(c) < weighted_rows;
      const double scale = weighted ? w : 1.0;
      const double diff = scale * contours(c, j) - targets(c, j);
      sse += coef(c) * diff * diff;
      const double g = 2.0 * inv_r * coef(c) * diff;
      upstream_contour(c, j) = scale * g;
      if (weighted) dweight(b) += g * contours(c, j);
    }
  }
  out.mse = sse * inv_r;
  out.loss = out.mse;

  if (settings.gated) {
    out.weight_mean = weights.mean();
    const double gap = out.weight_mean - 1.0;
    out.loss += settings.reg_coeff * gap * gap;
    dweight.array() += 2.0 * settings.reg_coeff * gap / static_cast<double>(n_batch);
    // w = 2 s, so dL/ds = 2 dL/dw.
    const Eigen::MatrixXd upstream_weight = (2.0 * dweight).transpose();
    backward_cached(wcg.weight_net, wm_cache, upstream_weight, out.weight);
  }
  if (settings.train_contour) backward_cached(wcg.contour_net, cg_cache, upstream_contour, out.contour);

  if (!std::isfinite(out.loss))
    throw NumericError("non-finite training loss for '" + wcg.function.tag() + "'");
  return out;
}

double train_function_epoch(WeightedContourGenerator& wcg, WcgOptimizer& optimizer,
                            std::span<const FunctionSample> samples, const EpochSettings& settings,
                            Rng& rng) {
  if (samples.empty()) throw Error("no samples for '" + wcg.function.tag() + "'");
  if (settings.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<const FunctionSample*> order(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) order[i] = &samples[i];
  rng.shuffle(order);

  // Near-equal batches: no remainder batch much smaller than the rest, whose
  // mean-weight penalty would be dominated by sampling noise.
  const std::size_t batches = batch_count(order.size(), settings.batch_size);
  double loss_sum = 0.0;
  std::size_t start = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t len = order.size() / batches + (b < order.size() % batches ? 1 : 0);
    const std::span<const FunctionSample* const> batch(order.data() + start, len);
    start += len;
    const BatchGradients g = batch_gradients(wcg, batch, settings);
    if (settings.train_contour) apply_update(wcg.contour_net, g.contour, optimizer.contour, settings.sgd);
    if (settings.gated) apply_update(wcg.weight_net, g.weight, optimizer.weight, settings.sgd);
    loss_sum += g.loss;
  }
  return loss_sum / static_cast<double>(batches);
}

namespace {

struct FunctionData {
  FunctionType function;
  std::vector<FunctionSample> samples;
  // (utterance, instance) of each sample in the training corpus
  std::vector<std::pair<std::size_t, std::size_t>> origin;
};

std::vector<FunctionData> collect_samples(const ModelSet& model, const Corpus& train) {
  std::vector<FunctionData> data;
  std::map<FunctionType, std::size_t> slot;
  for (const auto& f : model.registry.functions) {
    slot[f] = data.size();
    data.push_back({f, {}, {}});
  }
  for (std::size_t u = 0; u < train.utterances.size(); ++u) {
    const auto& utt = train.utterances[u];
    for (std::size_t k = 0; k < utt.instances.size(); ++k) {
      const auto& inst = utt.instances[k];
      auto it = slot.find(inst.function);
      if (it == slot.end()) throw Error("model has no generator for '" + inst.function.tag() + "'");
      const auto& wcg = model.at(inst.function);
      FunctionSample s;
      s.ramps = build_ramps(inst, wcg.scope_extension_right, utt.units.size()).as_matrix();
      s.context = encode_context(model.context_mode, utt, inst, model.registry);
      s.targets = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kFrameDim), s.ramps.cols());
      data[it->second].samples.push_back(std::move(s));
      data[it->second].origin.emplace_back(u, k);
    }
  }
  std::erase_if(data, [](const FunctionData& d) { return d.samples.empty(); });
  return data;
}

void refresh_targets(const ModelSet& model, const Corpus& train, std::vector<FunctionData>& data) {
  std::vector<std::vector<InstanceTarget>> per_utt(train.utterances.size());
  for (std::size_t u = 0; u < train.utterances.size(); ++u)
    per_utt[u] = distribute_residuals(model, train.utterances[u]);
  for (auto& d : data) {
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      const auto [u, k] = d.origin[i];
      const auto& frames = per_utt[u][k].frames;
      auto& t = d.samples[i].targets;
      for (std::size_t j = 0; j < frames.size(); ++j)
        for (std::size_t c = 0; c < kFrameDim; ++c)
          t(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = frames[j][c];
    }
  }
}

void weight_stats(const ModelSet& model, const FunctionData& d, FunctionStats& stats) {
  const auto& wcg = model.at(d.function);
  double sum = 0.0, sq = 0.0;
  for (const auto& s : d.samples) {
    const double w = instance_weight(model, wcg, s.context);
    sum += w;
    sq += w * w;
  }
  const double n = static_cast<double>(d.samples.size());
  stats.instances = d.samples.size();
  stats.weight_mean = sum / n;
  stats.weight_std = std::sqrt(std::max(0.0, sq / n - stats.weight_mean * stats.weight_mean));
}

// Runs job(i) for i in [0, count) on up to `threads` workers; rethrows the
// first failure.
template <typename Job>
void parallel_for(std::size_t count, std::size_t threads, Job job) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

TrainResult analysis_by_synthesis(ModelSet model, const Corpus& train, const Corpus& val,
                                  const TrainingConfig& config, const std::string& phase) {
  config.validate();
  if (train.utterances.empty()) throw Error("training corpus is empty");

  std::vector<FunctionData> data = collect_samples(model, train);
  std::vector<WcgOptimizer> optimizers;
  for (const auto& d : data) optimizers.push_back(WcgOptimizer::for_generator(model.at(d.function)));

  TrainHistory history;
  ModelSet best = model;
  double best_monitor = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  double previous_train = std::numeric_limits<double>::quiet_NaN();
  history.stop_reason = "max_iterations";

  for (std::size_t iter = 0; iter < config.max_outer_iterations; ++iter) {
    refresh_targets(model, train, data);

    IterationRecord rec;
    rec.iteration = iter;
    rec.phase = phase;
    std::vector<double> losses(data.size(), 0.0);
    parallel_for(data.size(), config.threads, [&](std::size_t i) {
      auto& d = data[i];
      auto& wcg = model.at(d.function);
      const EpochSettings settings = EpochSettings::from(config, model, d.function);
      if (!settings.train_contour && !settings.gated) return;
      Rng rng = Rng::derive(config.seed ^ (static_cast<std::uint64_t>(iter) << 32),
                            model.registry.index_of(d.function));
      for (std::size_t e = 0; e < config.inner_epochs; ++e)
        losses[i] = train_function_epoch(wcg, optimizers[i], d.samples, settings, rng);
    });

    for (std::size_t i = 0; i < data.size(); ++i) {
      FunctionStats stats;
      stats.loss = losses[i];
      weight_stats(model, data[i], stats);
      rec.functions.emplace(data[i].function, stats);
    }
    rec.train_rmse = rmse_vocalic(model, train).mean;
    rec.val_rmse = val.utterances.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : rmse_vocalic(model, val).mean;
    history.iterations.push_back(rec);

    const double monitor = val.utterances.empty() ? rec.train_rmse : rec.val_rmse;
    if (!std::isfinite(monitor)) throw NumericError("training diverged: monitored RMSE is not finite");
    if (monitor < best_monitor) {
      best_monitor = monitor;
      best = model;
      history.best_iteration = iter;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      history.stop_reason = "early_stopping";
      break;
    }
    if (std::isfinite(previous_train) && std::abs(previous_train - rec.train_rmse) < config.outer_tolerance) {
      history.stop_reason = "converged";
      break;
    }
    previous_train = rec.train_rmse;
  }

  history.best_monitor_rmse = best_monitor;
  return {std::move(best), std::move(history)};
}

TrainResult pretrain_freeze(ModelSet initial, const Corpus& pretrain_subset, const Corpus& full,
                            const Corpus& val, const TrainingConfig& config) {
  if (pretrain_subset.utterances.empty()) throw Error("pretraining subset is empty");

  std::set<FunctionType> seen_attitudes, seen_functions;
  for (const auto& u : pretrain_subset.utterances) {
    seen_attitudes.insert(u.attitude);
    for (const auto& inst : u.instances) seen_functions.insert(inst.function);
  }
  Corpus pretrain_val = val;
  std::erase_if(pretrain_val.utterances,
                [&](const Utterance& u) { return seen_attitudes.count(u.attitude) == 0; });

  TrainingConfig first = config;
  first.frozen_cg.clear();
  TrainResult phase1 =
      analysis_by_synthesis(set_identity_weights(std::move(initial)), pretrain_subset, pretrain_val, first, "pretrain");

  ModelSet gated = std::move(phase1.model);
  gated.identity_weights = false;
  TrainingConfig second = config;
  second.frozen_cg.insert(seen_functions.begin(), seen_functions.end());
  TrainResult phase2 = analysis_by_synthesis(std::move(gated), full, val, second, "weights");

  TrainHistory merged = phase1.history;
  const std::size_t offset = merged.iterations.size();
  for (auto rec : phase2.history.iterations) {
    rec.iteration += offset;
    merged.iterations.push_back(std::move(rec));
  }
  merged.best_iteration = phase2.history.best_iteration + offset;
  merged.best_monitor_rmse = phase2.history.best_monitor_rmse;
  merged.stop_reason = phase2.history.stop_reason;
  return {std::move(phase2.model), std::move(merged)};
}

TrainResult retrain_weights_only(ModelSet model, const Corpus& corpus, const Corpus& val,
                                 const TrainingConfig& config) {
  TrainingConfig frozen = config;
  for (const auto& f : model.registry.functions) frozen.frozen_cg.insert(f);
  model.identity_weights = false;
  return analysis_by_synthesis(std::move(model), corpus, val, frozen, "weights");
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history file '" + path.string() + "'");
  out << "iteration,phase,function,loss,weight_mean,weight_std,train_rmse,val_rmse\n";
  for (const auto& rec : history.iterations) {
    for (const auto& [f, s] : rec.functions) {
      out << rec.iteration << ',' << rec.phase << ',' << f.tag() << ',' << format_double(s.loss) << ','
          << format_double(s.weight_mean) << ',' << format_double(s.weight_std) << ','
          << format_double(rec.train_rmse) << ',' << format_double(rec.val_rmse) << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace wsfc
