#include <algorithm>
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "test_util.hpp"
#include "wsfc/errors.hpp"
#include "wsfc/wcg.hpp"

using namespace wsfc;
using namespace wsfc::testing;

namespace {

Registry six_attitudes() {
  return Registry::from_tags({"DC", "QS", "DI", "EX", "SC", "EV", "XX", "DG", "WB", "EM"},
                             {"DC", "QS", "DI", "EX", "SC", "EV"});
}

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace

TEST(Ramps, OneUnitScope) {
  const Ramps r = build_ramps({F("XX"), 3, 1, 0}, 0, 6);
  ASSERT_EQ(r.ramps.size(), 1u);
  EXPECT_EQ(r.first_unit, 3u);
  EXPECT_EQ(r.ramps[0].offset, 0.0);
  EXPECT_EQ(r.ramps[0].from_start, 0.0);
  EXPECT_EQ(r.ramps[0].to_end, 0.0);
  EXPECT_EQ(r.ramps[0].relative, 0.0);
}

TEST(Ramps, FourUnitScopeLandmarkThird) {
  // units 1..4, landmark 3
  const Ramps r = build_ramps({F("DG"), 3, 3, 1}, 0, 8);
  ASSERT_EQ(r.ramps.size(), 4u);
  EXPECT_EQ(r.first_unit, 1u);
  const double offsets[] = {-2, -1, 0, 1};
  const double rel[] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(r.ramps[i].offset, offsets[i] * kRampCountScale);
    EXPECT_DOUBLE_EQ(r.ramps[i].relative, rel[i]);
    EXPECT_DOUBLE_EQ(r.ramps[i].from_start, static_cast<double>(i) * kRampCountScale);
    EXPECT_DOUBLE_EQ(r.ramps[i].to_end, static_cast<double>(3 - i) * kRampCountScale);
  }
}

TEST(Ramps, ExtensionInsideUtterance) {
  // scope of 3 (units 2..4, landmark 3) extended by 1
  const Ramps r = build_ramps({F("C1"), 3, 2, 1}, 1, 10);
  ASSERT_EQ(r.ramps.size(), 4u);
  EXPECT_EQ(r.last_unit(), 5u);
  EXPECT_DOUBLE_EQ(r.ramps.back().offset, 2 * kRampCountScale);
  EXPECT_DOUBLE_EQ(r.ramps.back().relative, 1.0);
}

TEST(Ramps, ExtensionClippedAtUtteranceEnd) {
  const Ramps r = build_ramps({F("C1"), 4, 1, 0}, 2, 6);
  ASSERT_EQ(r.ramps.size(), 2u);
  EXPECT_EQ(r.last_unit(), 5u);
  const Ramps end = build_ramps({F("C1"), 5, 1, 0}, 2, 6);
  EXPECT_EQ(end.ramps.size(), 1u);
}

TEST(Ramps, MatrixLayout) {
  const Ramps r = build_ramps({F("DG"), 2, 3, 0}, 0, 5);
  const Eigen::MatrixXd m = r.as_matrix();
  ASSERT_EQ(m.rows(), static_cast<Eigen::Index>(kRampDim));
  ASSERT_EQ(m.cols(), 3);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(Eigen::VectorXd(m.col(i)), r.ramps[i].as_vector());
}

TEST(Context, AttitudeOneHot) {
  const Registry reg = six_attitudes();
  Utterance u = make_utterance("a", "DI", 4, {{F("XX"), 2, 1, 0}});
  const Eigen::VectorXd v = encode_context(ContextMode::kAttitude, u, u.instances[1], reg);
  EXPECT_EQ(v, vec({0, 0, 1, 0, 0, 0}));
}

TEST(Context, OverlapWithoutCooccurrence) {
  const Registry reg = six_attitudes();
  Utterance u = make_utterance("a", "QS", 4);
  const Eigen::VectorXd v = encode_context(ContextMode::kOverlap, u, u.instances[0], reg);
  EXPECT_EQ(v, vec({0, 1, 0, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(Context, OverlapFlagsFollowRegistryOrder) {
  const Registry reg = six_attitudes();
  // XX on unit 2, DG on units 1..2, WB on unit 4
  Utterance u = make_utterance("a", "DC", 6, {{F("XX"), 2, 1, 0}, {F("DG"), 2, 2, 0}, {F("WB"), 4, 1, 0}});
  EXPECT_EQ(encode_context(ContextMode::kOverlap, u, u.instances[1], reg), vec({1, 0, 0, 0, 0, 0, 0, 1, 0, 0}));
  EXPECT_EQ(encode_context(ContextMode::kOverlap, u, u.instances[2], reg), vec({1, 0, 0, 0, 0, 0, 1, 0, 0, 0}));
  // the attitude instance overlaps every local instance
  EXPECT_EQ(encode_context(ContextMode::kOverlap, u, u.instances[0], reg), vec({1, 0, 0, 0, 0, 0, 1, 1, 1, 0}));
  // a second XX sharing a unit flags XX
  u.instances.push_back({F("XX"), 2, 2, 0});
  EXPECT_EQ(encode_context(ContextMode::kOverlap, u, u.instances[1], reg), vec({1, 0, 0, 0, 0, 0, 1, 1, 0, 0}));
}

TEST(Context, OverlapIsSymmetricInInstanceOrder) {
  const Registry reg = six_attitudes();
  Utterance u = make_utterance("a", "EX", 8, {{F("XX"), 2, 1, 1}, {F("DG"), 3, 2, 0}, {F("WB"), 6, 2, 0}});
  Utterance rev = u;
  std::reverse(rev.instances.begin(), rev.instances.end());
  for (const auto& inst : u.instances)
    EXPECT_EQ(encode_context(ContextMode::kOverlap, u, inst, reg), encode_context(ContextMode::kOverlap, rev, inst, reg));
}

TEST(Context, EmphasisCategories) {
  // EM scope units 2..4, final emphasised RU 4
  Utterance u = make_utterance("a", "DC", 8, {{F("EM"), 4, 3, 0}});
  auto at = [&](std::size_t landmark) { return emphasis_category(u, {F("C1"), landmark, 1, 0}); };
  EXPECT_EQ(at(0), EmphasisCategory::kNone);
  EXPECT_EQ(at(1), EmphasisCategory::kNone);
  EXPECT_EQ(at(2), EmphasisCategory::kPre);
  EXPECT_EQ(at(3), EmphasisCategory::kPre);
  EXPECT_EQ(at(4), EmphasisCategory::kFinal);
  EXPECT_EQ(at(5), EmphasisCategory::kPost);
  EXPECT_EQ(at(7), EmphasisCategory::kPost);
  EXPECT_EQ(emphasis_category(make_utterance("b", "DC", 5), {F("C1"), 2, 1, 0}), EmphasisCategory::kNone);
}

TEST(Context, NearestEmphasisScopeWins) {
  // two EM scopes ending at 2 and 7
  Utterance u = make_utterance("a", "DC", 10, {{F("EM"), 2, 2, 0}, {F("EM"), 7, 2, 0}});
  EXPECT_EQ(emphasis_category(u, {F("C1"), 3, 1, 0}), EmphasisCategory::kPost);
  EXPECT_EQ(emphasis_category(u, {F("C1"), 6, 1, 0}), EmphasisCategory::kPre);
  EXPECT_EQ(emphasis_category(u, {F("C1"), 4, 1, 0}), EmphasisCategory::kPost);
  EXPECT_EQ(emphasis_category(u, {F("C1"), 9, 1, 0}), EmphasisCategory::kPost);
  // scopes ending at 2 and 6 are equidistant from 4: the earlier one wins
  Utterance tie = make_utterance("b", "DC", 8, {{F("EM"), 2, 2, 0}, {F("EM"), 6, 2, 0}});
  EXPECT_EQ(emphasis_category(tie, {F("C1"), 4, 1, 0}), EmphasisCategory::kPost);
  std::swap(tie.instances[1], tie.instances[2]);
  EXPECT_EQ(emphasis_category(tie, {F("C1"), 4, 1, 0}), EmphasisCategory::kPost);
}

TEST(Context, EmphasisEncoding) {
  const Registry reg = Registry::from_tags({"DC", "QS", "C1", "WB", "EM"}, {"DC", "QS"});
  Utterance u = make_utterance("a", "QS", 6, {{F("EM"), 3, 2, 0}, {F("WB"), 3, 2, 0}, {F("C1"), 3, 1, 0}});
  // QS one-hot, WB flag, {None, EMp, EM, EMc}
  EXPECT_EQ(encode_context(ContextMode::kEmphasis, u, u.instances[3], reg), vec({0, 1, 1, 0, 0, 1, 0}));
  const FunctionInstance later{F("C1"), 5, 1, 0};
  EXPECT_EQ(encode_context(ContextMode::kEmphasis, u, later, reg), vec({0, 1, 0, 0, 0, 0, 1}));
  EXPECT_EQ(context_size(ContextMode::kEmphasis, reg), 7u);
}

TEST(Context, UnknownFunctionOrAttitudeThrows) {
  const Registry reg = small_registry();
  Utterance u = make_utterance("a", "DC", 3);
  EXPECT_THROW(encode_context(ContextMode::kAttitude, u, {F("ZZ"), 0, 1, 0}, reg), Error);
  u.attitude = F("QQ");
  EXPECT_THROW(encode_context(ContextMode::kAttitude, u, u.instances[0], reg), Error);
}

TEST(Weight, ZeroWeightNetGivesOne) {
  WeightedContourGenerator g;
  g.weight_net = DenseNet({3, 8, 1}, OutputActivation::kSigmoid);
  EXPECT_EQ(weight(g, vec({1, 0, 0})), 1.0);
  EXPECT_EQ(weight(g, vec({0, 1, 1})), 1.0);
}

TEST(Weight, SaturatesBelowTwoAndAboveZero) {
  WeightedContourGenerator g;
  g.weight_net = DenseNet({1, 1}, OutputActivation::kSigmoid);
  g.weight_net.layers()[0].bias(0) = 30.0;
  const double hi = weight(g, vec({0}));
  EXPECT_LT(hi, 2.0);
  EXPECT_GT(hi, 2.0 - 1e-12);
  g.weight_net.layers()[0].bias(0) = -30.0;
  const double lo = weight(g, vec({0}));
  EXPECT_GT(lo, 0.0);
  EXPECT_LT(lo, 1e-12);
}

TEST(Weight, EnumeratedNetMatchesHandEvaluation) {
  // 2 -> 1 sigmoid, w = (0.8, -0.3), b = 0.1, context (1, 0)
  WeightedContourGenerator g;
  g.weight_net = DenseNet({2, 1}, OutputActivation::kSigmoid);
  g.weight_net.layers()[0].weights << 0.8, -0.3;
  g.weight_net.layers()[0].bias << 0.1;
  EXPECT_NEAR(weight(g, vec({1, 0})), 2.0 / (1.0 + std::exp(-0.9)), 1e-15);
  // 2*sigmoid(0.9), evaluated independently
  EXPECT_NEAR(weight(g, vec({1, 0})), 1.4218990052500078, 1e-12);
}

TEST(Weight, StrictlyInsideBoundsForRandomDraws) {
  Rng rng(2718);
  for (int draw = 0; draw < 10000; ++draw) {
    const auto ctx = static_cast<std::size_t>(rng.between(1, 12));
    const double scale = std::pow(10.0, rng.uniform(-2.0, 1.5));
    WeightedContourGenerator g;
    g.weight_net = DenseNet::random({ctx, 8, 1}, OutputActivation::kSigmoid, rng, scale);
    Eigen::VectorXd c(static_cast<Eigen::Index>(ctx));
    for (Eigen::Index i = 0; i < c.size(); ++i) c(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const double w = weight(g, c);
    ASSERT_GT(w, 0.0) << "draw " << draw;
    ASSERT_LT(w, 2.0) << "draw " << draw;
  }
}

TEST(Contour, ZeroNetGivesZeroFrames) {
  WeightedContourGenerator g;
  g.contour_net = DenseNet({kRampDim, 17, kFrameDim}, OutputActivation::kLinear);
  for (const auto& f : contour(g, build_ramps({F("XX"), 3, 3, 1}, 0, 6))) EXPECT_EQ(f, ProsodyFrame{});
}

TEST(Contour, MatchesNetForwardPerRamp) {
  Rng rng(5);
  WeightedContourGenerator g;
  g.contour_net = DenseNet::random({kRampDim, 17, kFrameDim}, OutputActivation::kLinear, rng, 0.8);
  const Ramps r = build_ramps({F("DG"), 4, 4, 1}, 1, 8);
  const auto frames = contour(g, r);
  ASSERT_EQ(frames.size(), r.ramps.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Eigen::VectorXd y = g.contour_net.forward(r.ramps[i].as_vector());
    for (std::size_t c = 0; c < kFrameDim; ++c) EXPECT_NEAR(frames[i][c], y(static_cast<Eigen::Index>(c)), 1e-14);
  }
}

TEST(Contribution, OneWeightPerInstance) {
  const Registry reg = small_registry();
  const ModelSet model = make_model(reg, ContextMode::kAttitude, {.init_scale = 0.8}, 3);
  Utterance u = make_utterance("a", "DI", 7, {{F("DG"), 4, 3, 1}});
  const Contribution c = contribution(model, u.instances[1], u);
  EXPECT_EQ(c.first_unit, 2u);
  ASSERT_EQ(c.frames.size(), 4u);
  EXPECT_NE(c.weight, 1.0);
  for (std::size_t i = 0; i < c.frames.size(); ++i)
    for (std::size_t k = 0; k < kFrameDim; ++k) EXPECT_EQ(c.frames[i][k], c.weight * c.unweighted[i][k]);
}

TEST(Contribution, ZeroWeightNetEqualsContour) {
  const Registry reg = small_registry();
  ModelSet model = make_model(reg, ContextMode::kAttitude, {}, 3);
  for (auto& [f, g] : model.generators) g.weight_net = DenseNet(g.weight_net.sizes(), OutputActivation::kSigmoid);
  Utterance u = make_utterance("a", "DC", 5, {{F("XX"), 2, 2, 0}});
  const Contribution c = contribution(model, u.instances[1], u);
  EXPECT_EQ(c.weight, 1.0);
  for (std::size_t i = 0; i < c.frames.size(); ++i) EXPECT_EQ(c.frames[i], c.unweighted[i]);
}

TEST(Contribution, SaturatedLowWeightSuppresses) {
  const Registry reg = small_registry();
  ModelSet model = make_model(reg, ContextMode::kAttitude, {.init_scale = 0.5}, 3);
  auto& g = model.at(F("XX"));
  g.weight_net.layers().back().bias(0) = -40.0;
  Utterance u = make_utterance("a", "DC", 5, {{F("XX"), 2, 2, 0}});
  const Contribution c = contribution(model, u.instances[1], u);
  for (const auto& f : c.frames)
    for (double v : f.values) EXPECT_LT(std::abs(v), 1e-12);
}

TEST(Contribution, PitchOnlyWeighting) {
  const Registry reg = small_registry();
  ModelSet model = make_model(reg, ContextMode::kAttitude, {.init_scale = 0.8, .weight_pitch_only = true}, 4);
  Utterance u = make_utterance("a", "DC", 5, {{F("XX"), 2, 2, 0}});
  const Contribution c = contribution(model, u.instances[1], u);
  for (std::size_t i = 0; i < c.frames.size(); ++i) {
    EXPECT_EQ(c.frames[i].pitch(0), c.weight * c.unweighted[i].pitch(0));
    EXPECT_EQ(c.frames[i].duration(), c.unweighted[i].duration());
  }
}

TEST(Identity, BypassGivesUnitWeights) {
  const Registry reg = small_registry();
  const ModelSet model = set_identity_weights(make_model(reg, ContextMode::kOverlap, {.init_scale = 1.0}, 9));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto& g = model.at(reg.functions[rng.index(reg.functions.size())]);
    Eigen::VectorXd ctx(static_cast<Eigen::Index>(context_size(ContextMode::kOverlap, reg)));
    for (Eigen::Index k = 0; k < ctx.size(); ++k) ctx(k) = rng.uniform() < 0.5;
    EXPECT_EQ(instance_weight(model, g, ctx), 1.0);
  }
}

TEST(Model, ShapesAndExtensions) {
  const Registry reg = small_registry();
  ModelOptions opt;
  opt.scope_extension_right[F("XX")] = 2;
  const ModelSet m = make_model(reg, ContextMode::kEmphasis, opt, 1);
  EXPECT_EQ(m.generators.size(), reg.functions.size());
  const auto& g = m.at(F("XX"));
  EXPECT_EQ(g.contour_net.sizes(), (std::vector<std::size_t>{kRampDim, 17, kFrameDim}));
  EXPECT_EQ(g.weight_net.sizes(), (std::vector<std::size_t>{2 + 1 + kEmphasisCategories, 8, 1}));
  EXPECT_EQ(g.scope_extension_right, 2u);
  EXPECT_EQ(m.at(F("DG")).scope_extension_right, 0u);
  EXPECT_EQ(make_model(reg, ContextMode::kEmphasis, opt, 1), m);
  EXPECT_NE(make_model(reg, ContextMode::kEmphasis, opt, 2), m);
  EXPECT_THROW(m.at(F("ZZ")), Error);
}

TEST(Model, CheckpointRoundTripIsBitExact) {
  const auto dir = scratch_dir("model_roundtrip");
  ModelOptions opt;
  opt.scope_extension_right[F("DG")] = 1;
  ModelSet m = make_model(small_registry(), ContextMode::kOverlap, opt, 42);
  m.at(F("XX")).contour_net.parameter(3) = 0.1 + 0.2;
  m.identity_weights = true;
  save_model(m, dir / "m.json");
  EXPECT_EQ(load_model(dir / "m.json"), m);
}

TEST(Model, CheckpointRejectsCorruption) {
  const auto dir = scratch_dir("model_corrupt");
  const ModelSet m = make_model(small_registry(), ContextMode::kAttitude, {}, 1);
  save_model(m, dir / "m.json");
  std::ifstream in(dir / "m.json");
  nlohmann::json j = nlohmann::json::parse(in);

  auto write_and_load = [&](const nlohmann::json& doc) {
    std::ofstream out(dir / "bad.json");
    out << doc.dump();
    out.close();
    return load_model(dir / "bad.json");
  };
  auto bad = j;
  bad["version"] = 99;
  EXPECT_THROW(write_and_load(bad), Error);
  bad = j;
  bad["context_mode"] = "emphasis";  // weight nets sized for attitude contexts
  EXPECT_THROW(write_and_load(bad), Error);
  bad = j;
  bad["ramp_encoding"] = "other";
  EXPECT_THROW(write_and_load(bad), Error);
}
