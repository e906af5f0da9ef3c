#include "wsfc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "wsfc/errors.hpp"
#include "wsfc/rng.hpp"

namespace wsfc {

using nlohmann::json;

std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kConstant: return "constant";
    case ShapeFamily::kLinear: return "linear";
    case ShapeFamily::kBump: return "bump";
    case ShapeFamily::kGaussian: return "gaussian";
    case ShapeFamily::kTone: return "tone";
  }
  return "?";
}

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "constant") return ShapeFamily::kConstant;
  if (s == "linear") return ShapeFamily::kLinear;
  if (s == "bump") return ShapeFamily::kBump;
  if (s == "gaussian") return ShapeFamily::kGaussian;
  if (s == "tone") return ShapeFamily::kTone;
  throw ConfigError("unknown shape family '" + s + "'");
}

double PrototypeSpec::shape(double r) const {
  const double k = sharpness;
  switch (family) {
    case ShapeFamily::kConstant: return 1.0;
    case ShapeFamily::kLinear: return 2.0 * r - 1.0;
    case ShapeFamily::kBump:
      return (std::tanh(k * r - k * (center - width)) - std::tanh(k * r - k * (center + width))) /
             (2.0 * std::tanh(k * width));
    case ShapeFamily::kGaussian: return std::exp(-(r - center) * (r - center) / (2.0 * width * width));
    case ShapeFamily::kTone: return 0.5 - 0.5 * std::tanh(k * r - k * center);
  }
  return 0.0;
}

ProsodyFrame PrototypeSpec::evaluate(double r) const {
  const double g = shape(r);
  ProsodyFrame f;
  for (std::size_t j = 0; j < kPitchSamples; ++j) f.pitch(j) = amplitude * profile[j] * g;
  f.duration() = duration_amplitude * g;
  return f;
}

const PlantEntry* PlantSpec::match(const FunctionType& function, const std::string& attitude,
                                   const std::string& emphasis) const {
  const PlantEntry* best = nullptr;
  int best_rank = -1;
  for (const auto& e : entries) {
    if (e.function != function) continue;
    const bool att = e.attitude == attitude;
    const bool emph = e.emphasis == emphasis;
    if (!(att || e.attitude == "*") || !(emph || e.emphasis == "*")) continue;
    const int rank = (att ? 2 : 0) + (emph ? 1 : 0);
    if (rank > best_rank) {
      best_rank = rank;
      best = &e;
    }
  }
  return best;
}

double PlantSpec::weight(const FunctionType& function, const std::string& attitude,
                         const std::string& emphasis) const {
  const PlantEntry* e = match(function, attitude, emphasis);
  return e == nullptr ? 1.0 : e->weight;
}

void PlantSpec::validate() const {
  if (entries.empty()) return;
  double sum = 0.0;
  std::set<std::tuple<FunctionType, std::string, std::string>> keys;
  for (const auto& e : entries) {
    if (!(e.weight > 0.0 && e.weight < 2.0))
      throw ConfigError("planted weight for '" + e.function.tag() + "' must lie in (0, 2)");
    if (!keys.insert({e.function, e.attitude, e.emphasis}).second)
      throw ConfigError("duplicate plant entry for '" + e.function.tag() + "' " + e.cell());
    if (e.emphasis != "*") emphasis_category_from_string(e.emphasis);
    sum += e.weight;
  }
  const double mean = sum / static_cast<double>(entries.size());
  if (mean < 0.8 || mean > 1.2)
    throw ConfigError("mean planted weight " + std::to_string(mean) + " outside [0.8, 1.2]");
}

const PrototypeSpec& GeneratorSpec::prototype(const FunctionType& f) const {
  for (const auto& p : prototypes)
    if (p.function == f) return p;
  throw ConfigError("no prototype for function '" + f.tag() + "'");
}

void GeneratorSpec::validate() const {
  if (registry.attitudes.empty()) throw ConfigError("generator needs at least one attitude");
  for (const auto& a : registry.attitudes) {
    if (!registry.contains(a)) throw ConfigError("attitude '" + a.tag() + "' not in registry");
    prototype(a);
  }
  std::set<FunctionType> seen;
  for (const auto& p : prototypes) {
    if (!registry.contains(p.function))
      throw ConfigError("prototype '" + p.function.tag() + "' not in registry");
    if (!seen.insert(p.function).second) throw ConfigError("duplicate prototype '" + p.function.tag() + "'");
    if (p.left_span_min < 1 || p.left_span_min > p.left_span_max || p.right_span_min > p.right_span_max)
      throw ConfigError("bad span range for '" + p.function.tag() + "'");
    if (!(p.sharpness > 0.0) || !(p.width > 0.0))
      throw ConfigError("width and sharpness of '" + p.function.tag() + "' must be positive");
  }
  for (const auto& f : local_functions) {
    const auto& p = prototype(f);
    if (p.left_span_min + p.right_span_min > length_min)
      throw ConfigError("infeasible scope placement: '" + f.tag() + "' needs " +
                        std::to_string(p.left_span_min + p.right_span_min) + " units, length_min is " +
                        std::to_string(length_min));
  }
  for (const auto& f : unit_functions) prototype(f);
  if (emphasis_probability > 0.0) {
    const auto& p = prototype(kEmphasisFunction);
    if (p.left_span_min + p.right_span_min > length_min)
      throw ConfigError("infeasible scope placement for EM at length_min " + std::to_string(length_min));
  }
  if (local_min > local_max) throw ConfigError("local_min exceeds local_max");
  if (local_max > 0 && local_functions.empty()) throw ConfigError("local_max > 0 but no local functions");
  if (length_min < 1 || length_min > length_max) throw ConfigError("bad utterance length range");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (!(emphasis_probability >= 0.0 && emphasis_probability <= 1.0))
    throw ConfigError("emphasis_probability must lie in [0, 1]");
  if (!(nucleus_probability >= 0.0 && nucleus_probability <= 1.0))
    throw ConfigError("nucleus_probability must lie in [0, 1]");
  for (const auto& e : plant.entries) {
    if (!registry.contains(e.function)) throw ConfigError("plant for unknown function '" + e.function.tag() + "'");
    if (e.attitude != "*" && !registry.is_attitude(FunctionType(e.attitude)))
      throw ConfigError("plant for unknown attitude '" + e.attitude + "'");
  }
  plant.validate();
}

namespace {

template <typename T>
void read_optional(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::vector<FunctionType> function_list(const json& j) {
  std::vector<FunctionType> out;
  for (const auto& t : j.get<std::vector<std::string>>()) out.emplace_back(t);
  return out;
}

}  // namespace

GeneratorSpec generator_spec_from_json(const json& j) {
  try {
    reject_unknown(j,
                   {"version", "registry", "attitudes", "prototypes", "plants", "local_functions",
                    "local_min", "local_max", "unit_functions", "emphasis_probability", "n_utterances",
                    "length_min", "length_max", "noise_sigma", "nucleus_probability", "seed",
                    "reference_hz", "mean_ru_ms"},
                   "generator spec");
    if (j.at("version").get<int>() != 1) throw ConfigError("generator spec: unsupported version");
    GeneratorSpec spec;
    spec.registry = Registry::from_tags(j.at("registry").get<std::vector<std::string>>(),
                                        j.at("attitudes").get<std::vector<std::string>>());
    for (const auto& pj : j.at("prototypes")) {
      reject_unknown(pj,
                     {"function", "family", "amplitude", "center", "width", "sharpness", "profile",
                      "duration_amplitude", "scope_extension_right", "left_span", "right_span"},
                     "prototype");
      PrototypeSpec p;
      p.function = FunctionType(pj.at("function").get<std::string>());
      p.family = shape_family_from_string(pj.at("family").get<std::string>());
      read_optional(pj, "amplitude", p.amplitude);
      read_optional(pj, "center", p.center);
      read_optional(pj, "width", p.width);
      read_optional(pj, "sharpness", p.sharpness);
      read_optional(pj, "profile", p.profile);
      read_optional(pj, "duration_amplitude", p.duration_amplitude);
      read_optional(pj, "scope_extension_right", p.scope_extension_right);
      if (pj.contains("left_span")) {
        const auto r = pj.at("left_span").get<std::array<std::size_t, 2>>();
        p.left_span_min = r[0];
        p.left_span_max = r[1];
      }
      if (pj.contains("right_span")) {
        const auto r = pj.at("right_span").get<std::array<std::size_t, 2>>();
        p.right_span_min = r[0];
        p.right_span_max = r[1];
      }
      spec.prototypes.push_back(p);
    }
    if (j.contains("plants")) {
      for (const auto& ej : j.at("plants")) {
        reject_unknown(ej, {"function", "attitude", "emphasis", "weight"}, "plant");
        PlantEntry e;
        e.function = FunctionType(ej.at("function").get<std::string>());
        read_optional(ej, "attitude", e.attitude);
        read_optional(ej, "emphasis", e.emphasis);
        e.weight = ej.at("weight").get<double>();
        spec.plant.entries.push_back(e);
      }
    }
    if (j.contains("local_functions")) spec.local_functions = function_list(j.at("local_functions"));
    if (j.contains("unit_functions")) spec.unit_functions = function_list(j.at("unit_functions"));
    read_optional(j, "local_min", spec.local_min);
    read_optional(j, "local_max", spec.local_max);
    read_optional(j, "emphasis_probability", spec.emphasis_probability);
    read_optional(j, "n_utterances", spec.n_utterances);
    read_optional(j, "length_min", spec.length_min);
    read_optional(j, "length_max", spec.length_max);
    read_optional(j, "noise_sigma", spec.noise_sigma);
    read_optional(j, "nucleus_probability", spec.nucleus_probability);
    read_optional(j, "seed", spec.seed);
    read_optional(j, "reference_hz", spec.reference_hz);
    read_optional(j, "mean_ru_ms", spec.mean_ru_ms);
    if (spec.local_functions.empty() && !j.contains("local_max")) spec.local_min = spec.local_max = 0;
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator spec: ") + e.what());
  }
}

GeneratorSpec load_generator_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open generator spec '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("generator spec '" + path.string() + "': " + e.what());
  }
  return generator_spec_from_json(j);
}

namespace {

FunctionInstance place_scope(const PrototypeSpec& p, std::size_t n, Rng& rng) {
  FunctionInstance inst;
  inst.function = p.function;
  inst.left_span = static_cast<std::size_t>(rng.between(static_cast<long long>(p.left_span_min),
                                                        static_cast<long long>(p.left_span_max)));
  inst.right_span = static_cast<std::size_t>(rng.between(static_cast<long long>(p.right_span_min),
                                                         static_cast<long long>(p.right_span_max)));
  // Shrink to fit short utterances, keeping the minimum spans.
  while (inst.left_span + inst.right_span > n) {
    if (inst.right_span > p.right_span_min)
      --inst.right_span;
    else if (inst.left_span > p.left_span_min)
      --inst.left_span;
    else
      throw ConfigError("infeasible scope placement for '" + p.function.tag() + "'");
  }
  const auto lo = static_cast<long long>(inst.left_span) - 1;
  const auto hi = static_cast<long long>(n - 1 - inst.right_span);
  inst.landmark = static_cast<std::size_t>(rng.between(lo, hi));
  return inst;
}

}  // namespace

GeneratedCorpus generate_corpus(const GeneratorSpec& spec) {
  spec.validate();
  GeneratedCorpus out;
  out.corpus.registry = spec.registry;
  out.corpus.reference_hz = spec.reference_hz;
  out.corpus.mean_ru_ms = spec.mean_ru_ms;
  out.truth.noise_sigma = spec.noise_sigma;

  const std::size_t digits = std::to_string(spec.n_utterances).size();
  for (std::size_t u = 0; u < spec.n_utterances; ++u) {
    Rng rng = Rng::derive(spec.seed, u);
    Utterance utt;
    std::string num = std::to_string(u);
    utt.id = "utt" + std::string(digits - std::min(digits, num.size()), '0') + num;
    const std::size_t n = static_cast<std::size_t>(
        rng.between(static_cast<long long>(spec.length_min), static_cast<long long>(spec.length_max)));
    utt.attitude = spec.registry.attitudes[rng.index(spec.registry.attitudes.size())];
    utt.instances.push_back({utt.attitude, n - 1, n, 0});

    if (!spec.unit_functions.empty()) {
      for (std::size_t i = 0; i < n; ++i)
        utt.instances.push_back({spec.unit_functions[rng.index(spec.unit_functions.size())], i, 1, 0});
    }
    if (spec.local_max > 0) {
      const auto count = static_cast<std::size_t>(
          rng.between(static_cast<long long>(spec.local_min), static_cast<long long>(spec.local_max)));
      for (std::size_t k = 0; k < count; ++k) {
        const auto& f = spec.local_functions[rng.index(spec.local_functions.size())];
        utt.instances.push_back(place_scope(spec.prototype(f), n, rng));
      }
    }
    if (spec.emphasis_probability > 0.0 && rng.uniform() < spec.emphasis_probability)
      utt.instances.push_back(place_scope(spec.prototype(kEmphasisFunction), n, rng));

    PlantedUtterance planted{utt.id, n, {}};
    std::vector<ProsodyFrame> clean(n);
    for (const auto& inst : utt.instances) {
      const auto& proto = spec.prototype(inst.function);
      const Ramps ramps = build_ramps(inst, proto.scope_extension_right, n);
      const std::string emphasis = to_string(emphasis_category(utt, inst));
      const PlantEntry* entry = spec.plant.match(inst.function, utt.attitude.tag(), emphasis);
      PlantedInstance pi;
      pi.function = inst.function;
      pi.first_unit = ramps.first_unit;
      pi.weight = entry == nullptr ? 1.0 : entry->weight;
      pi.cell = entry == nullptr ? "*/*" : entry->cell();
      for (const auto& r : ramps.ramps) pi.frames.push_back(proto.evaluate(r.relative));
      for (std::size_t i = 0; i < pi.frames.size(); ++i) clean[pi.first_unit + i] += pi.weight * pi.frames[i];
      planted.instances.push_back(std::move(pi));
    }

    for (std::size_t i = 0; i < n; ++i) {
      RhythmicUnit ru;
      ru.index = i;
      ru.observed = clean[i];
      for (std::size_t c = 0; c < kFrameDim; ++c) ru.observed[c] += spec.noise_sigma * rng.normal();
      ru.has_vocalic_nucleus = spec.nucleus_probability >= 1.0 || rng.uniform() < spec.nucleus_probability;
      utt.units.push_back(ru);
    }
    out.corpus.utterances.push_back(std::move(utt));
    out.truth.utterances.push_back(std::move(planted));
  }
  validate_or_throw(out.corpus);
  return out;
}

const PlantedUtterance& GroundTruth::find(const std::string& id) const {
  for (const auto& u : utterances)
    if (u.id == id) return u;
  throw Error("unknown utterance id '" + id + "' in ground truth");
}

std::vector<ProsodyFrame> oracle_reconstruction(const GroundTruth& truth, const std::string& id) {
  const auto& planted = truth.find(id);
  std::vector<ProsodyFrame> out(planted.length);
  for (const auto& pi : planted.instances)
    for (std::size_t i = 0; i < pi.frames.size(); ++i) out[pi.first_unit + i] += pi.weight * pi.frames[i];
  return out;
}

void save_ground_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ground truth '" + path.string() + "'");
  out << kTruthMagic << '\n';
  out << json{{"noise_sigma", truth.noise_sigma}, {"utterances", truth.utterances.size()}}.dump() << '\n';
  for (const auto& u : truth.utterances) {
    json instances = json::array();
    for (const auto& pi : u.instances) {
      json frames = json::array();
      for (const auto& f : pi.frames) frames.push_back(f.values);
      instances.push_back({{"function", pi.function.tag()},
                           {"first_unit", pi.first_unit},
                           {"weight", pi.weight},
                           {"cell", pi.cell},
                           {"frames", frames}});
    }
    out << json{{"id", u.id}, {"length", u.length}, {"instances", instances}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground truth '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kTruthMagic) throw ParseError("bad ground-truth magic", 1);
  GroundTruth truth;
  std::size_t declared = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        truth.noise_sigma = j.at("noise_sigma").get<double>();
        declared = j.at("utterances").get<std::size_t>();
        have_header = true;
        continue;
      }
      PlantedUtterance u;
      u.id = j.at("id").get<std::string>();
      u.length = j.at("length").get<std::size_t>();
      for (const auto& ij : j.at("instances")) {
        PlantedInstance pi;
        pi.function = FunctionType(ij.at("function").get<std::string>());
        pi.first_unit = ij.at("first_unit").get<std::size_t>();
        pi.weight = ij.at("weight").get<double>();
        pi.cell = ij.at("cell").get<std::string>();
        for (const auto& fj : ij.at("frames")) {
          ProsodyFrame f;
          f.values = fj.get<std::array<double, kFrameDim>>();
          pi.frames.push_back(f);
        }
        if (pi.first_unit + pi.frames.size() > u.length)
          throw ParseError("planted instance exceeds utterance length", lineno);
        u.instances.push_back(std::move(pi));
      }
      truth.utterances.push_back(std::move(u));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (!have_header) throw ParseError("missing ground-truth header", lineno);
  if (declared != truth.utterances.size()) throw ParseError("ground-truth utterance count mismatch", 0);
  return truth;
}

namespace {

constexpr double kLinearGain = 1e-6;

double logit_half(double w) { return std::log(w / (2.0 - w)); }

// Contour net over the relative-position ramp (input 3) that reproduces
// the prototype; two tanh units suffice for every supported family.
DenseNet analytic_contour(const PrototypeSpec& p) {
  DenseNet net({kRampDim, 2, kFrameDim}, OutputActivation::kLinear);
  auto& hidden = net.layers()[0];
  auto& output = net.layers()[1];
  std::array<double, kFrameDim> coef{};
  for (std::size_t j = 0; j < kPitchSamples; ++j) coef[j] = p.amplitude * p.profile[j];
  coef[kPitchSamples] = p.duration_amplitude;
  const double k = p.sharpness;

  for (std::size_t m = 0; m < kFrameDim; ++m) {
    const auto row = static_cast<Eigen::Index>(m);
    switch (p.family) {
      case ShapeFamily::kConstant:
        output.bias(row) = coef[m];
        break;
      case ShapeFamily::kLinear:
        // 2r - 1 ~ (2 / g) tanh(g r) - 1, error O(g^2).
        hidden.weights(0, 3) = kLinearGain;
        output.weights(row, 0) = coef[m] * 2.0 / kLinearGain;
        output.bias(row) = -coef[m];
        break;
      case ShapeFamily::kBump: {
        hidden.weights(0, 3) = k;
        hidden.bias(0) = -k * (p.center - p.width);
        hidden.weights(1, 3) = k;
        hidden.bias(1) = -k * (p.center + p.width);
        const double norm = 2.0 * std::tanh(k * p.width);
        output.weights(row, 0) = coef[m] / norm;
        output.weights(row, 1) = -coef[m] / norm;
        break;
      }
      case ShapeFamily::kTone:
        hidden.weights(0, 3) = k;
        hidden.bias(0) = -k * p.center;
        output.weights(row, 0) = -0.5 * coef[m];
        output.bias(row) = 0.5 * coef[m];
        break;
      case ShapeFamily::kGaussian:
        throw ConfigError("gaussian prototype '" + p.function.tag() + "' has no exact net form");
    }
  }
  return net;
}

// Weight net with one hidden unit per context component, so the
// pre-activation is sum_j v_j tanh(x_j) and each one-hot slot sets its own
// logit.
DenseNet analytic_weight(const GeneratorSpec& spec, const FunctionType& f, ContextMode mode) {
  const std::size_t ctx = context_size(mode, spec.registry);
  DenseNet net({ctx, ctx, 1}, OutputActivation::kSigmoid);
  net.layers()[0].weights = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(ctx),
                                                      static_cast<Eigen::Index>(ctx));
  bool by_attitude = false, by_emphasis = false;
  for (const auto& e : spec.plant.entries) {
    if (e.function != f) continue;
    if (e.attitude != "*" && e.emphasis != "*")
      throw ConfigError("plant for '" + f.tag() + "' keyed on attitude and emphasis jointly");
    if (e.attitude != "*") by_attitude = true;
    if (e.emphasis != "*") by_emphasis = true;
  }
  if (by_attitude && by_emphasis)
    throw ConfigError("plant for '" + f.tag() + "' mixes attitude and emphasis keys");
  const double unit = std::tanh(1.0);
  auto& out = net.layers()[1];

  if (by_emphasis) {
    if (mode != ContextMode::kEmphasis)
      throw ConfigError("emphasis-keyed plant needs the emphasis context mode");
    const auto base = static_cast<Eigen::Index>(spec.registry.attitudes.size()) + 1;
    for (std::size_t c = 0; c < kEmphasisCategories; ++c) {
      const std::string cat = to_string(static_cast<EmphasisCategory>(c));
      out.weights(0, base + static_cast<Eigen::Index>(c)) = logit_half(spec.plant.weight(f, "*", cat)) / unit;
    }
  } else {
    for (std::size_t a = 0; a < spec.registry.attitudes.size(); ++a) {
      const double w = spec.plant.weight(f, spec.registry.attitudes[a].tag(), "*");
      out.weights(0, static_cast<Eigen::Index>(a)) = logit_half(w) / unit;
    }
  }
  return net;
}

}  // namespace

ModelSet analytic_model(const GeneratorSpec& spec, ContextMode mode) {
  ModelSet model;
  model.registry = spec.registry;
  model.context_mode = mode;
  for (const auto& f : spec.registry.functions) {
    WeightedContourGenerator g;
    g.function = f;
    bool has_proto = std::any_of(spec.prototypes.begin(), spec.prototypes.end(),
                                 [&](const PrototypeSpec& p) { return p.function == f; });
    if (has_proto) {
      const auto& p = spec.prototype(f);
      g.contour_net = analytic_contour(p);
      g.scope_extension_right = p.scope_extension_right;
    } else {
      g.contour_net = DenseNet({kRampDim, 2, kFrameDim}, OutputActivation::kLinear);
    }
    g.weight_net = analytic_weight(spec, f, mode);
    model.generators.emplace(f, std::move(g));
  }
  return model;
}

std::vector<RecoveryRow> score_recovery(const ModelSet& model, const GroundTruth& truth,
                                        const Corpus& corpus, const PlantSpec& plant) {
  std::map<std::pair<FunctionType, std::string>, std::pair<double, std::vector<double>>> cells;
  for (const auto& e : plant.entries) cells[{e.function, e.cell()}].first = e.weight;

  for (const auto& utt : corpus.utterances) {
    const auto& planted = truth.find(utt.id);
    if (planted.instances.size() != utt.instances.size())
      throw Error("ground truth of '" + utt.id + "' does not match the corpus instances");
    for (std::size_t k = 0; k < utt.instances.size(); ++k) {
      const auto& inst = utt.instances[k];
      const auto& pi = planted.instances[k];
      if (pi.function != inst.function)
        throw Error("ground truth of '" + utt.id + "' does not match the corpus instances");
      const double w = instance_weight(model, model.at(inst.function),
                                       encode_context(model.context_mode, utt, inst, model.registry));
      auto& cell = cells[{inst.function, pi.cell}];
      cell.first = pi.weight;
      cell.second.push_back(w);
    }
  }

  std::vector<RecoveryRow> rows;
  for (const auto& [key, value] : cells) {
    RecoveryRow row;
    row.function = key.first;
    row.cell = key.second;
    row.planted = value.first;
    row.count = value.second.size();
    if (row.count == 0) {
      row.recovered = std::numeric_limits<double>::quiet_NaN();
      row.abs_error = std::numeric_limits<double>::quiet_NaN();
    } else {
      double sum = 0.0;
      for (double w : value.second) sum += w;
      row.recovered = sum / static_cast<double>(row.count);
      row.abs_error = std::abs(row.recovered - row.planted);
    }
    rows.push_back(row);
  }
  return rows;
}

const RecoveryRow* find_row(const std::vector<RecoveryRow>& rows, const std::string& function,
                            const std::string& cell) {
  for (const auto& r : rows)
    if (r.function.tag() == function && r.cell == cell) return &r;
  return nullptr;
}

}  // namespace wsfc
