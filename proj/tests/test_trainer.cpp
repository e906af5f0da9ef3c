#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "wsfc/errors.hpp"
#include "wsfc/eval.hpp"
#include "wsfc/trainer.hpp"

using namespace wsfc;
using namespace wsfc::testing;

namespace {

std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (const auto& l : g.layers) {
    out.insert(out.end(), l.weights.data(), l.weights.data() + l.weights.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

std::vector<FunctionSample> random_samples(std::size_t n, std::size_t ctx, Rng& rng) {
  std::vector<FunctionSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = static_cast<std::size_t>(rng.between(1, 5));
    const auto landmark = static_cast<std::size_t>(rng.between(static_cast<long long>(len) - 1, 9));
    FunctionSample s;
    s.ramps = build_ramps({F("XX"), landmark, len, 0}, 0, 10).as_matrix();
    s.context = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ctx));
    s.context(static_cast<Eigen::Index>(rng.index(ctx))) = 1.0;
    s.targets = Eigen::MatrixXd(static_cast<Eigen::Index>(kFrameDim), s.ramps.cols());
    for (Eigen::Index j = 0; j < s.targets.size(); ++j) s.targets.data()[j] = rng.uniform(-2.0, 2.0);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<const FunctionSample*> pointers(const std::vector<FunctionSample>& samples) {
  std::vector<const FunctionSample*> out;
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

/// Loss written out directly from weight() and contour().
double reference_loss(const WeightedContourGenerator& g, const std::vector<const FunctionSample*>& batch,
                      const EpochSettings& s) {
  double sse = 0.0, wsum = 0.0;
  std::size_t r = 0;
  for (const auto* x : batch) {
    const double w = s.gated ? weight(g, x->context) : 1.0;
    wsum += w;
    for (Eigen::Index j = 0; j < x->ramps.cols(); ++j) {
      const Eigen::VectorXd y = g.contour_net.forward(x->ramps.col(j));
      for (std::size_t c = 0; c < kFrameDim; ++c) {
        const bool pitch = c < kPitchSamples;
        const double scale = (pitch || !s.weight_pitch_only) ? w : 1.0;
        const double d = scale * y(static_cast<Eigen::Index>(c)) - x->targets(static_cast<Eigen::Index>(c), j);
        sse += (pitch ? s.pitch_loss_weight / 3.0 : s.duration_loss_weight) * d * d;
      }
      ++r;
    }
  }
  double loss = sse / static_cast<double>(r);
  if (s.gated) {
    const double gap = wsum / static_cast<double>(batch.size()) - 1.0;
    loss += s.reg_coeff * gap * gap;
  }
  return loss;
}

WeightedContourGenerator random_wcg(std::size_t ctx, std::uint64_t seed, double scale = 0.6) {
  Rng rng(seed);
  WeightedContourGenerator g;
  g.function = F("XX");
  g.contour_net = DenseNet::random({kRampDim, 17, kFrameDim}, OutputActivation::kLinear, rng, scale);
  g.weight_net = DenseNet::random({ctx, 8, 1}, OutputActivation::kSigmoid, rng, scale);
  return g;
}

double max_fd_error(const WeightedContourGenerator& g, const std::vector<const FunctionSample*>& batch,
                    const EpochSettings& s) {
  const BatchGradients bg = batch_gradients(g, batch, s);
  double worst = 0.0;
  auto check = [&](bool contour_side, const std::vector<double>& analytic) {
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      WeightedContourGenerator p = g, m = g;
      const double eps = 1e-6;
      (contour_side ? p.contour_net : p.weight_net).parameter(i) += eps;
      (contour_side ? m.contour_net : m.weight_net).parameter(i) -= eps;
      const double numeric = (batch_gradients(p, batch, s).loss - batch_gradients(m, batch, s).loss) / (2 * eps);
      const double err = std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, err);
    }
  };
  check(true, flatten(bg.contour));
  if (s.gated) check(false, flatten(bg.weight));
  return worst;
}

Corpus noisy_corpus(std::size_t n, std::uint64_t seed) {
  Corpus c = random_corpus(n, seed);
  for (auto& u : c.utterances)
    for (auto& ru : u.units) ru.observed.values = {1.0 * (u.attitude == F("DC")) - 0.5, 0.3, -0.2, 0.1};
  return c;
}

TrainingConfig quick_config() {
  TrainingConfig cfg;
  cfg.batch_size = 16;
  cfg.max_outer_iterations = 3;
  cfg.inner_epochs = 3;
  cfg.outer_tolerance = 1e-12;
  cfg.seed = 77;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST(Synthesize, SumsCoveringContours) {
  const ModelSet m = constant_model({{"DC", {1, 1, 1, 0.5}}, {"XX", {2, 0, -1, 0}}});
  const Utterance u = make_utterance("a", "DC", 4, {{F("XX"), 2, 2, 0}});
  const auto s = synthesize(m, u);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0], (ProsodyFrame{{1, 1, 1, 0.5}}));
  EXPECT_EQ(s[1], (ProsodyFrame{{3, 1, 0, 0.5}}));
  EXPECT_EQ(s[2], (ProsodyFrame{{3, 1, 0, 0.5}}));
  EXPECT_EQ(s[3], (ProsodyFrame{{1, 1, 1, 0.5}}));
}

TEST(Synthesize, UncoveredUnitIsZero) {
  const ModelSet m = constant_model({{"XX", {2, 2, 2, 2}}});
  Utterance u = make_utterance("a", "DC", 3, {{F("XX"), 0, 1, 0}});
  u.instances.erase(u.instances.begin());
  const auto s = synthesize(m, u);
  EXPECT_EQ(s[0], (ProsodyFrame{{2, 2, 2, 2}}));
  EXPECT_EQ(s[1], ProsodyFrame{});
  EXPECT_EQ(s[2], ProsodyFrame{});
}

TEST(Residuals, SplitEquallyAmongCoveringInstances) {
  const ModelSet m = constant_model({{"DC", {0.5, 0.5, 0.5, 0.5}}, {"XX", {0.5, 0.5, 0.5, 0.5}}});
  Utterance u = make_utterance("a", "DC", 1, {{F("XX"), 0, 1, 0}});
  u.units[0].observed.values = {2, 2, 2, 2};
  const auto t = distribute_residuals(m, u);
  ASSERT_EQ(t.size(), 2u);
  for (const auto& x : t) {
    ASSERT_EQ(x.frames.size(), 1u);
    EXPECT_EQ(x.frames[0], (ProsodyFrame{{1, 1, 1, 1}}));
  }
}

TEST(Residuals, ThreeWaySplitAndUncoveredRu) {
  const ModelSet m = constant_model({{"DC", {0, 0, 0, 0}}, {"XX", {1, 0, 0, 0}}, {"DG", {0, 0, 0, 0}}});
  Utterance u = make_utterance("a", "DC", 3, {{F("XX"), 1, 2, 0}, {F("DG"), 1, 1, 0}});
  u.units[1].observed.values = {4, 3, 0, 0};
  const auto t = distribute_residuals(m, u);
  // RU 1: synth 1, residual (3, 3, 0, 0), three covering instances
  EXPECT_EQ(t[0].frames[1], (ProsodyFrame{{1, 1, 0, 0}}));
  EXPECT_EQ(t[1].frames[1], (ProsodyFrame{{2, 1, 0, 0}}));
  EXPECT_EQ(t[2].frames[0], (ProsodyFrame{{1, 1, 0, 0}}));
  EXPECT_EQ(t[2].first_unit, 1u);
}

TEST(Residuals, PitchResidualZeroWithoutNucleus) {
  const ModelSet m = constant_model({{"DC", {0.5, 0.5, 0.5, 0.5}}, {"XX", {0.5, 0.5, 0.5, 0.5}}});
  Utterance u = make_utterance("a", "DC", 1, {{F("XX"), 0, 1, 0}});
  u.units[0].observed.values = {2, 2, 2, 2};
  u.units[0].has_vocalic_nucleus = false;
  for (const auto& x : distribute_residuals(m, u)) EXPECT_EQ(x.frames[0], (ProsodyFrame{{0.5, 0.5, 0.5, 1}}));
}

TEST(Residuals, TargetsTelescopeToObservation) {
  const Corpus c = random_corpus(60, 9);
  const ModelSet m = make_model(c.registry, ContextMode::kOverlap, {.init_scale = 0.7}, 4);
  for (const auto& u : c.utterances) {
    const auto targets = distribute_residuals(m, u);
    const auto synth = synthesize(m, u);
    std::vector<ProsodyFrame> sum(u.units.size());
    for (const auto& t : targets)
      for (std::size_t i = 0; i < t.frames.size(); ++i) sum[t.first_unit + i] += t.frames[i];
    for (std::size_t i = 0; i < u.units.size(); ++i) {
      for (std::size_t k = 0; k < kFrameDim; ++k) {
        const bool pitch = k < kPitchSamples;
        const double expected =
            (pitch && !u.units[i].has_vocalic_nucleus) ? synth[i][k] : u.units[i].observed[k];
        EXPECT_NEAR(sum[i][k], expected, 1e-12) << u.id << " RU " << i;
      }
    }
  }
}

TEST(BatchGradients, LossMatchesDirectEvaluation) {
  Rng rng(3);
  const auto samples = random_samples(12, 3, rng);
  const auto batch = pointers(samples);
  const auto g = random_wcg(3, 8);
  EpochSettings s;
  s.reg_coeff = 10.0;
  s.pitch_loss_weight = 0.7;
  s.duration_loss_weight = 1.3;
  EXPECT_NEAR(batch_gradients(g, batch, s).loss, reference_loss(g, batch, s), 1e-12);
  s.weight_pitch_only = true;
  EXPECT_NEAR(batch_gradients(g, batch, s).loss, reference_loss(g, batch, s), 1e-12);
  s.gated = false;
  EXPECT_NEAR(batch_gradients(g, batch, s).loss, reference_loss(g, batch, s), 1e-12);
}

TEST(BatchGradients, MatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Rng rng(seed);
    const auto samples = random_samples(6, 4, rng);
    const auto batch = pointers(samples);
    const auto g = random_wcg(4, 100 + seed);
    EpochSettings s;
    s.reg_coeff = 10.0;
    EXPECT_LT(max_fd_error(g, batch, s), 1e-5) << "seed " << seed;
    s.pitch_loss_weight = 0.4;
    s.duration_loss_weight = 2.0;
    s.weight_pitch_only = true;
    EXPECT_LT(max_fd_error(g, batch, s), 1e-5) << "seed " << seed;
    s.gated = false;
    EXPECT_LT(max_fd_error(g, batch, s), 1e-5) << "seed " << seed;
  }
}

TEST(BatchGradients, PenaltyOnlyGradientPullsMeanTowardOne) {
  Rng rng(5);
  auto samples = random_samples(5, 2, rng);
  auto g = random_wcg(2, 6);
  g.contour_net = DenseNet({kRampDim, 17, kFrameDim}, OutputActivation::kLinear);
  for (auto& s : samples) s.targets.setZero();
  g.weight_net.layers().back().bias(0) = 2.0;  // mean weight well above 1
  EpochSettings s;
  s.reg_coeff = 10.0;
  const BatchGradients bg = batch_gradients(g, pointers(samples), s);
  EXPECT_EQ(bg.mse, 0.0);
  EXPECT_GT(bg.weight_mean, 1.0);
  EXPECT_NEAR(bg.loss, 10.0 * (bg.weight_mean - 1.0) * (bg.weight_mean - 1.0), 1e-14);
  EXPECT_GT(bg.weight.layers.back().bias(0), 0.0);
  for (double v : flatten(bg.contour)) EXPECT_EQ(v, 0.0);
}

TEST(BatchGradients, Errors) {
  const auto g = random_wcg(2, 1);
  EpochSettings s;
  EXPECT_THROW(batch_gradients(g, std::span<const FunctionSample* const>(), s), Error);
  Rng rng(1);
  auto samples = random_samples(1, 2, rng);
  samples[0].targets.conservativeResize(Eigen::NoChange, samples[0].targets.cols() + 1);
  EXPECT_THROW(batch_gradients(g, pointers(samples), s), DimensionError);
}

TEST(Epoch, BatchCount) {
  EXPECT_EQ(batch_count(0, 256), 0u);
  EXPECT_EQ(batch_count(1, 256), 1u);
  EXPECT_EQ(batch_count(256, 256), 1u);
  EXPECT_EQ(batch_count(257, 256), 2u);
  EXPECT_EQ(batch_count(1000, 256), 4u);
  EXPECT_EQ(batch_count(10, 1), 10u);
}

TEST(Epoch, UsesNearEqualBatches) {
  // 10 samples, batch size 4: sizes 4, 3, 3 rather than 4, 4, 2
  Rng data_rng(21);
  const auto samples = random_samples(10, 3, data_rng);
  auto g = random_wcg(3, 22);
  EpochSettings s;
  s.batch_size = 4;
  s.sgd.learning_rate = 0.0;  // parameters stay put, so each batch loss is reproducible

  Rng rng(99), replay(99);
  WcgOptimizer opt = WcgOptimizer::for_generator(g);
  const double epoch_loss = train_function_epoch(g, opt, samples, s, rng);

  auto order = pointers(samples);
  replay.shuffle(order);
  auto mean_loss = [&](std::vector<std::size_t> sizes) {
    double sum = 0.0;
    std::size_t start = 0;
    for (auto len : sizes) {
      sum += batch_gradients(g, std::span<const FunctionSample* const>(order.data() + start, len), s).loss;
      start += len;
    }
    return sum / static_cast<double>(sizes.size());
  };
  EXPECT_EQ(epoch_loss, mean_loss({4, 3, 3}));
  EXPECT_NE(epoch_loss, mean_loss({4, 4, 2}));
}

TEST(Epoch, FrozenContourIsUntouched) {
  Rng data_rng(4);
  const auto samples = random_samples(30, 3, data_rng);
  auto g = random_wcg(3, 5);
  const auto before = g;
  EpochSettings s;
  s.batch_size = 8;
  s.train_contour = false;
  Rng rng(1);
  WcgOptimizer opt = WcgOptimizer::for_generator(g);
  for (int e = 0; e < 5; ++e) train_function_epoch(g, opt, samples, s, rng);
  EXPECT_EQ(g.contour_net, before.contour_net);
  EXPECT_NE(g.weight_net, before.weight_net);
}

TEST(Epoch, UngatedLeavesWeightNetAlone) {
  Rng data_rng(4);
  const auto samples = random_samples(30, 3, data_rng);
  auto g = random_wcg(3, 5);
  const auto before = g;
  EpochSettings s;
  s.gated = false;
  Rng rng(1);
  WcgOptimizer opt = WcgOptimizer::for_generator(g);
  train_function_epoch(g, opt, samples, s, rng);
  EXPECT_EQ(g.weight_net, before.weight_net);
  EXPECT_NE(g.contour_net, before.contour_net);
}

TEST(Epoch, ReducesLossOnFixedTargets) {
  Rng data_rng(12);
  const auto samples = random_samples(64, 2, data_rng);
  auto g = random_wcg(2, 13, 0.1);
  EpochSettings s;
  s.batch_size = 16;
  Rng rng(1);
  WcgOptimizer opt = WcgOptimizer::for_generator(g);
  const double first = train_function_epoch(g, opt, samples, s, rng);
  double last = first;
  for (int e = 0; e < 40; ++e) last = train_function_epoch(g, opt, samples, s, rng);
  EXPECT_LT(last, first);
}

TEST(Config, RejectsBadFields) {
  TrainingConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = [](auto mutate) {
    TrainingConfig x;
    mutate(x);
    return x;
  };
  EXPECT_THROW(bad([](auto& x) { x.batch_size = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](auto& x) { x.reg_coeff = -1; }).validate(), ConfigError);
  EXPECT_THROW(bad([](auto& x) { x.learning_rate = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](auto& x) { x.momentum = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](auto& x) { x.max_outer_iterations = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](auto& x) { x.inner_epochs = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](auto& x) { x.patience = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](auto& x) { x.outer_tolerance = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](auto& x) {
                 x.pitch_loss_weight = 0;
                 x.duration_loss_weight = 0;
               }).validate(),
               ConfigError);
}

TEST(OuterLoop, DeterministicAndThreadIndependent) {
  const Corpus train = noisy_corpus(80, 1), val = noisy_corpus(20, 2);
  const ModelSet init = make_model(train.registry, ContextMode::kOverlap, {}, 3);
  TrainingConfig cfg = quick_config();
  const TrainResult a = analysis_by_synthesis(init, train, val, cfg);
  const TrainResult b = analysis_by_synthesis(init, train, val, cfg);
  cfg.threads = 3;
  const TrainResult c = analysis_by_synthesis(init, train, val, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.model, c.model);
  EXPECT_EQ(a.history, c.history);
  cfg.seed = 78;
  EXPECT_NE(analysis_by_synthesis(init, train, val, cfg).model, a.model);
}

TEST(OuterLoop, FrozenContourBitIdentical) {
  const Corpus train = noisy_corpus(60, 1);
  const ModelSet init = make_model(train.registry, ContextMode::kAttitude, {}, 3);
  TrainingConfig cfg = quick_config();
  cfg.frozen_cg = {F("XX"), F("DC")};
  const TrainResult r = analysis_by_synthesis(init, train, Corpus{train.registry}, cfg);
  EXPECT_EQ(r.model.at(F("XX")).contour_net, init.at(F("XX")).contour_net);
  EXPECT_EQ(r.model.at(F("DC")).contour_net, init.at(F("DC")).contour_net);
  EXPECT_NE(r.model.at(F("DG")).contour_net, init.at(F("DG")).contour_net);
  EXPECT_NE(r.model.at(F("XX")).weight_net, init.at(F("XX")).weight_net);
}

TEST(OuterLoop, BestSnapshotIsRestored) {
  const Corpus train = noisy_corpus(80, 1), val = noisy_corpus(30, 5);
  const ModelSet init = make_model(train.registry, ContextMode::kAttitude, {}, 3);
  TrainingConfig cfg = quick_config();
  cfg.max_outer_iterations = 6;
  cfg.learning_rate = 0.05;
  const TrainResult r = analysis_by_synthesis(init, train, val, cfg);
  ASSERT_FALSE(r.history.iterations.empty());
  double lowest = INFINITY;
  for (const auto& rec : r.history.iterations) lowest = std::min(lowest, rec.val_rmse);
  EXPECT_EQ(r.history.best_monitor_rmse, lowest);
  EXPECT_EQ(r.history.iterations[r.history.best_iteration].val_rmse, lowest);
  EXPECT_LE(r.history.best_monitor_rmse, r.history.iterations.back().val_rmse);
  EXPECT_EQ(rmse_vocalic(r.model, val).mean, lowest);
}

TEST(OuterLoop, StopReasons) {
  const Corpus train = noisy_corpus(60, 1);
  const ModelSet init = make_model(train.registry, ContextMode::kAttitude, {}, 3);
  TrainingConfig cfg = quick_config();
  cfg.max_outer_iterations = 2;
  TrainResult r = analysis_by_synthesis(init, train, Corpus{train.registry}, cfg);
  EXPECT_EQ(r.history.stop_reason, "max_iterations");
  EXPECT_EQ(r.history.iterations.size(), 2u);

  cfg.max_outer_iterations = 10;
  cfg.learning_rate = 1e-12;
  cfg.outer_tolerance = 1e-6;
  r = analysis_by_synthesis(init, train, Corpus{train.registry}, cfg);
  EXPECT_EQ(r.history.stop_reason, "converged");
  EXPECT_EQ(r.history.iterations.size(), 2u);

  // Validation targets are the negated training targets: fitting one
  // drives the other away, so the monitor never improves after iteration 0.
  Corpus val = train;
  for (auto& u : val.utterances)
    for (auto& ru : u.units)
      for (auto& v : ru.observed.values) v = -v;
  cfg = quick_config();
  cfg.max_outer_iterations = 10;
  cfg.patience = 2;
  cfg.learning_rate = 0.05;
  r = analysis_by_synthesis(init, train, val, cfg);
  EXPECT_EQ(r.history.stop_reason, "early_stopping");
  EXPECT_EQ(r.history.iterations.size(), r.history.best_iteration + 1 + cfg.patience);
}

TEST(OuterLoop, RejectsMissingGeneratorAndEmptyCorpus) {
  const Corpus train = noisy_corpus(10, 1);
  ModelSet init = make_model(train.registry, ContextMode::kAttitude, {}, 3);
  EXPECT_THROW(analysis_by_synthesis(init, Corpus{train.registry}, Corpus{}, quick_config()), Error);
  init.generators.erase(F("XX"));
  EXPECT_THROW(analysis_by_synthesis(init, train, Corpus{}, quick_config()), Error);
}

TEST(Strategies, PretrainFreezeKeepsPhaseOneContours) {
  const Corpus full = noisy_corpus(80, 1);
  const Corpus subset = filter_by_attitude(full, F("DC"));
  const ModelSet init = make_model(full.registry, ContextMode::kAttitude, {}, 3);
  const TrainingConfig cfg = quick_config();
  const Corpus no_val{full.registry};

  const TrainResult r = pretrain_freeze(init, subset, full, no_val, cfg);
  const TrainResult phase1 = analysis_by_synthesis(set_identity_weights(init), subset, no_val, cfg, "pretrain");
  EXPECT_FALSE(r.model.identity_weights);
  for (const char* f : {"DC", "XX", "DG"})
    EXPECT_EQ(r.model.at(F(f)).contour_net, phase1.model.at(F(f)).contour_net) << f;
  // DI never occurs in the DC subset, so phase 2 still trains its contour
  EXPECT_NE(r.model.at(F("DI")).contour_net, init.at(F("DI")).contour_net);

  ASSERT_EQ(r.history.iterations.size(), 2 * cfg.max_outer_iterations);
  for (std::size_t i = 0; i < r.history.iterations.size(); ++i) {
    EXPECT_EQ(r.history.iterations[i].iteration, i);
    EXPECT_EQ(r.history.iterations[i].phase, i < cfg.max_outer_iterations ? "pretrain" : "weights");
  }
  EXPECT_GE(r.history.best_iteration, cfg.max_outer_iterations);
}

TEST(Strategies, RetrainWeightsOnlyTouchesWeights) {
  const Corpus train = noisy_corpus(60, 1);
  const ModelSet init = set_identity_weights(make_model(train.registry, ContextMode::kAttitude, {}, 3));
  const TrainResult r = retrain_weights_only(init, train, Corpus{train.registry}, quick_config());
  EXPECT_FALSE(r.model.identity_weights);
  for (const auto& [f, g] : r.model.generators) {
    EXPECT_EQ(g.contour_net, init.at(f).contour_net) << f.tag();
    if (f != F("EM") && f != F("WB")) EXPECT_NE(g.weight_net, init.at(f).weight_net) << f.tag();
  }
  for (const auto& rec : r.history.iterations) EXPECT_EQ(rec.phase, "weights");
}

TEST(History, CsvLayout) {
  const auto dir = scratch_dir("history_csv");
  const Corpus train = noisy_corpus(30, 1);
  const TrainResult r = analysis_by_synthesis(make_model(train.registry, ContextMode::kAttitude, {}, 3), train,
                                              Corpus{train.registry}, quick_config());
  write_history_csv(r.history, dir / "h.csv");
  std::ifstream in(dir / "h.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "iteration,phase,function,loss,weight_mean,weight_std,train_rmse,val_rmse");
  std::size_t rows = 0;
  std::size_t expected = 0;
  for (const auto& rec : r.history.iterations) expected += rec.functions.size();
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7);
  }
  EXPECT_EQ(rows, expected);
  EXPECT_THROW(write_history_csv(r.history, dir / "missing" / "h.csv"), IoError);
}

TEST(History, WeightStatsPerFunction) {
  const Corpus train = noisy_corpus(40, 1);
  TrainingConfig cfg = quick_config();
  const TrainResult r = analysis_by_synthesis(
      set_identity_weights(make_model(train.registry, ContextMode::kAttitude, {}, 3)), train, Corpus{train.registry}, cfg);
  std::size_t xx = 0;
  for (const auto& u : train.utterances)
    for (const auto& i : u.instances) xx += i.function == F("XX");
  for (const auto& rec : r.history.iterations) {
    EXPECT_EQ(rec.functions.at(F("XX")).instances, xx);
    for (const auto& [f, s] : rec.functions) {
      EXPECT_EQ(s.weight_mean, 1.0);
      EXPECT_EQ(s.weight_std, 0.0);
    }
    EXPECT_TRUE(std::isnan(rec.val_rmse));
  }
}
