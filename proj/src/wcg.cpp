#include "wsfc/wcg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "wsfc/errors.hpp"

namespace wsfc {

using nlohmann::json;

Eigen::VectorXd RampVector::as_vector() const {
  Eigen::VectorXd v(kRampDim);
  v << offset, from_start, to_end, relative;
  return v;
}

Eigen::MatrixXd Ramps::as_matrix() const {
  Eigen::MatrixXd m(kRampDim, static_cast<Eigen::Index>(ramps.size()));
  for (std::size_t i = 0; i < ramps.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = ramps[i].as_vector();
  return m;
}

Ramps build_ramps(const FunctionInstance& instance, std::size_t scope_extension_right,
                  std::size_t utterance_length) {
  if (utterance_length == 0) return {};
  const long long start = std::max(0LL, instance.first());
  const long long end = std::min(instance.last() + static_cast<long long>(scope_extension_right),
                                 static_cast<long long>(utterance_length) - 1);
  const auto landmark = static_cast<long long>(instance.landmark);
  Ramps out;
  out.first_unit = static_cast<std::size_t>(start);
  for (long long i = start; i <= end; ++i) {
    RampVector r;
    r.offset = kRampCountScale * static_cast<double>(i - landmark);
    r.from_start = kRampCountScale * static_cast<double>(i - start);
    r.to_end = kRampCountScale * static_cast<double>(end - i);
    r.relative = end == start ? 0.0 : static_cast<double>(i - start) / static_cast<double>(end - start);
    out.ramps.push_back(r);
  }
  return out;
}

std::string to_string(ContextMode mode) {
  switch (mode) {
    case ContextMode::kAttitude: return "attitude";
    case ContextMode::kOverlap: return "overlap";
    case ContextMode::kEmphasis: return "emphasis";
  }
  return "?";
}

ContextMode context_mode_from_string(const std::string& s) {
  if (s == "attitude") return ContextMode::kAttitude;
  if (s == "overlap") return ContextMode::kOverlap;
  if (s == "emphasis") return ContextMode::kEmphasis;
  throw ConfigError("unknown context mode '" + s + "'");
}

std::string to_string(EmphasisCategory c) {
  switch (c) {
    case EmphasisCategory::kNone: return "None";
    case EmphasisCategory::kPre: return "EMp";
    case EmphasisCategory::kFinal: return "EM";
    case EmphasisCategory::kPost: return "EMc";
  }
  return "?";
}

EmphasisCategory emphasis_category_from_string(const std::string& s) {
  if (s == "None") return EmphasisCategory::kNone;
  if (s == "EMp") return EmphasisCategory::kPre;
  if (s == "EM") return EmphasisCategory::kFinal;
  if (s == "EMc") return EmphasisCategory::kPost;
  throw ConfigError("unknown emphasis category '" + s + "'");
}

EmphasisCategory emphasis_category(const Utterance& utterance, const FunctionInstance& instance) {
  const FunctionInstance* nearest = nullptr;
  long long best = std::numeric_limits<long long>::max();
  const auto landmark = static_cast<long long>(instance.landmark);
  for (const auto& other : utterance.instances) {
    if (other.function != kEmphasisFunction) continue;
    const long long d = std::abs(landmark - other.last());
    if (d < best || (d == best && other.last() < nearest->last())) {
      best = d;
      nearest = &other;
    }
  }
  if (nearest == nullptr) return EmphasisCategory::kNone;
  if (landmark == nearest->last()) return EmphasisCategory::kFinal;
  if (landmark > nearest->last()) return EmphasisCategory::kPost;
  if (landmark >= nearest->first()) return EmphasisCategory::kPre;
  return EmphasisCategory::kNone;
}

std::size_t context_size(ContextMode mode, const Registry& registry) {
  const std::size_t a = registry.attitudes.size();
  switch (mode) {
    case ContextMode::kAttitude: return a;
    case ContextMode::kOverlap: return a + registry.non_attitudes().size();
    case ContextMode::kEmphasis: return a + 1 + kEmphasisCategories;
  }
  throw ConfigError("unknown context mode");
}

namespace {

bool scopes_intersect(const FunctionInstance& a, const FunctionInstance& b) {
  return a.first() <= b.last() && b.first() <= a.last();
}

// Ignores the instance itself (first value-equal entry).
bool overlapped_by(const Utterance& utterance, const FunctionInstance& instance,
                   const FunctionType& function) {
  bool skipped_self = false;
  for (const auto& other : utterance.instances) {
    if (!skipped_self && other == instance) {
      skipped_self = true;
      continue;
    }
    if (other.function == function && scopes_intersect(instance, other)) return true;
  }
  return false;
}

}  // namespace

Eigen::VectorXd encode_context(ContextMode mode, const Utterance& utterance,
                               const FunctionInstance& instance, const Registry& registry) {
  if (!registry.contains(instance.function))
    throw Error("function '" + instance.function.tag() + "' absent from registry");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(context_size(mode, registry)));
  const auto att = static_cast<Eigen::Index>(registry.attitude_index(utterance.attitude));
  v(att) = 1.0;
  const auto base = static_cast<Eigen::Index>(registry.attitudes.size());

  switch (mode) {
    case ContextMode::kAttitude:
      break;
    case ContextMode::kOverlap: {
      const auto flags = registry.non_attitudes();
      for (std::size_t k = 0; k < flags.size(); ++k)
        if (overlapped_by(utterance, instance, flags[k])) v(base + static_cast<Eigen::Index>(k)) = 1.0;
      break;
    }
    case ContextMode::kEmphasis: {
      if (overlapped_by(utterance, instance, kWordBoundaryFunction)) v(base) = 1.0;
      const auto cat = static_cast<Eigen::Index>(emphasis_category(utterance, instance));
      v(base + 1 + cat) = 1.0;
      break;
    }
  }
  return v;
}

double weight(const WeightedContourGenerator& wcg, const Eigen::VectorXd& context) {
  return weight_from_gate(wcg.weight_net.forward(context)(0));
}

std::vector<ProsodyFrame> contour(const WeightedContourGenerator& wcg, const Ramps& ramps) {
  std::vector<ProsodyFrame> frames(ramps.ramps.size());
  if (ramps.ramps.empty()) return frames;
  const Eigen::MatrixXd out = wcg.contour_net.forward_batch(ramps.as_matrix());
  if (static_cast<std::size_t>(out.rows()) != kFrameDim)
    throw DimensionError("contour net must output " + std::to_string(kFrameDim) + " values");
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (std::size_t c = 0; c < kFrameDim; ++c)
      frames[i][c] = out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i));
  return frames;
}

const WeightedContourGenerator& ModelSet::at(const FunctionType& f) const {
  auto it = generators.find(f);
  if (it == generators.end()) throw Error("model has no generator for '" + f.tag() + "'");
  return it->second;
}

WeightedContourGenerator& ModelSet::at(const FunctionType& f) {
  auto it = generators.find(f);
  if (it == generators.end()) throw Error("model has no generator for '" + f.tag() + "'");
  return it->second;
}

ModelSet make_model(const Registry& registry, ContextMode mode, const ModelOptions& options,
                    std::uint64_t seed) {
  ModelSet model;
  model.registry = registry;
  model.context_mode = mode;
  model.weight_pitch_only = options.weight_pitch_only;
  const std::size_t ctx = context_size(mode, registry);
  for (std::size_t k = 0; k < registry.functions.size(); ++k) {
    const auto& f = registry.functions[k];
    Rng rng = Rng::derive(seed, k);
    WeightedContourGenerator g;
    g.function = f;
    g.contour_net = DenseNet::random({kRampDim, options.cg_hidden, kFrameDim}, OutputActivation::kLinear,
                                     rng, options.init_scale);
    g.weight_net = DenseNet::random({ctx, options.wm_hidden, 1}, OutputActivation::kSigmoid, rng,
                                    options.init_scale);
    if (auto it = options.scope_extension_right.find(f); it != options.scope_extension_right.end())
      g.scope_extension_right = it->second;
    model.generators.emplace(f, std::move(g));
  }
  return model;
}

double instance_weight(const ModelSet& model, const WeightedContourGenerator& wcg,
                       const Eigen::VectorXd& context) {
  if (model.identity_weights) return 1.0;
  return weight(wcg, context);
}

Contribution contribution(const ModelSet& model, const FunctionInstance& instance,
                          const Utterance& utterance) {
  const auto& wcg = model.at(instance.function);
  const Ramps ramps = build_ramps(instance, wcg.scope_extension_right, utterance.units.size());
  Contribution c;
  c.first_unit = ramps.first_unit;
  c.weight = model.identity_weights
                 ? 1.0
                 : weight(wcg, encode_context(model.context_mode, utterance, instance, model.registry));
  c.unweighted = contour(wcg, ramps);
  c.frames = c.unweighted;
  for (auto& f : c.frames) {
    const std::size_t scaled = model.weight_pitch_only ? kPitchSamples : kFrameDim;
    for (std::size_t k = 0; k < scaled; ++k) f[k] *= c.weight;
  }
  return c;
}

ModelSet set_identity_weights(ModelSet model) {
  model.identity_weights = true;
  return model;
}

void save_model(const ModelSet& model, const std::filesystem::path& path) {
  json gens = json::array();
  for (const auto& [f, g] : model.generators) {
    gens.push_back({{"function", f.tag()},
                    {"scope_extension_right", g.scope_extension_right},
                    {"contour_net", to_json(g.contour_net)},
                    {"weight_net", to_json(g.weight_net)}});
  }
  std::vector<std::string> functions, attitudes;
  for (const auto& f : model.registry.functions) functions.push_back(f.tag());
  for (const auto& f : model.registry.attitudes) attitudes.push_back(f.tag());
  json j{{"magic", kModelMagic},
         {"version", kModelVersion},
         {"ramp_encoding", kRampEncoding},
         {"registry", functions},
         {"attitudes", attitudes},
         {"context_mode", to_string(model.context_mode)},
         {"identity_weights", model.identity_weights},
         {"weight_pitch_only", model.weight_pitch_only},
         {"generators", gens}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model file '" + path.string() + "'");
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ModelSet load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what(), 0);
  }
  try {
    if (j.at("magic").get<std::string>() != kModelMagic) throw ParseError("not a model file", 0);
    if (j.at("version").get<int>() != kModelVersion)
      throw ParseError("unsupported model version " + std::to_string(j.at("version").get<int>()), 0);
    if (j.at("ramp_encoding").get<std::string>() != kRampEncoding)
      throw ParseError("model uses ramp encoding '" + j.at("ramp_encoding").get<std::string>() + "'", 0);
    ModelSet model;
    model.registry = Registry::from_tags(j.at("registry").get<std::vector<std::string>>(),
                                         j.at("attitudes").get<std::vector<std::string>>());
    model.context_mode = context_mode_from_string(j.at("context_mode").get<std::string>());
    model.identity_weights = j.at("identity_weights").get<bool>();
    model.weight_pitch_only = j.at("weight_pitch_only").get<bool>();
    const std::size_t ctx = context_size(model.context_mode, model.registry);
    for (const auto& gj : j.at("generators")) {
      WeightedContourGenerator g;
      g.function = FunctionType(gj.at("function").get<std::string>());
      g.scope_extension_right = gj.at("scope_extension_right").get<std::size_t>();
      g.contour_net = dense_net_from_json(gj.at("contour_net"));
      g.weight_net = dense_net_from_json(gj.at("weight_net"));
      if (g.contour_net.input_size() != kRampDim || g.contour_net.output_size() != kFrameDim)
        throw ParseError("contour net of '" + g.function.tag() + "' has wrong shape", 0);
      if (g.weight_net.input_size() != ctx || g.weight_net.output_size() != 1 ||
          g.weight_net.output_activation() != OutputActivation::kSigmoid)
        throw ParseError("weight net of '" + g.function.tag() + "' has wrong shape", 0);
      if (!model.registry.contains(g.function))
        throw ParseError("generator '" + g.function.tag() + "' not in registry", 0);
      model.generators.emplace(g.function, std::move(g));
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what(), 0);
  }
}

}  // namespace wsfc
