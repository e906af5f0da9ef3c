#include "wsfc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "wsfc/errors.hpp"
#include "wsfc/rng.hpp"

namespace wsfc {

using nlohmann::json;

bool Registry::contains(const FunctionType& f) const {
  return std::find(functions.begin(), functions.end(), f) != functions.end();
}

bool Registry::is_attitude(const FunctionType& f) const {
  return std::find(attitudes.begin(), attitudes.end(), f) != attitudes.end();
}

std::size_t Registry::index_of(const FunctionType& f) const {
  auto it = std::find(functions.begin(), functions.end(), f);
  if (it == functions.end()) throw Error("function '" + f.tag() + "' not in registry");
  return static_cast<std::size_t>(it - functions.begin());
}

std::size_t Registry::attitude_index(const FunctionType& f) const {
  auto it = std::find(attitudes.begin(), attitudes.end(), f);
  if (it == attitudes.end()) throw Error("'" + f.tag() + "' is not a registered attitude");
  return static_cast<std::size_t>(it - attitudes.begin());
}

std::vector<FunctionType> Registry::non_attitudes() const {
  std::vector<FunctionType> out;
  for (const auto& f : functions)
    if (!is_attitude(f)) out.push_back(f);
  return out;
}

Registry Registry::from_tags(const std::vector<std::string>& functions,
                             const std::vector<std::string>& attitudes) {
  Registry r;
  for (const auto& t : functions) r.functions.emplace_back(t);
  for (const auto& t : attitudes) r.attitudes.emplace_back(t);
  return r;
}

const Utterance& Corpus::find(const std::string& id) const {
  for (const auto& u : utterances)
    if (u.id == id) return u;
  throw Error("unknown utterance id '" + id + "'");
}

std::size_t Corpus::unit_count() const {
  std::size_t n = 0;
  for (const auto& u : utterances) n += u.units.size();
  return n;
}

std::vector<std::string> validate(const Corpus& corpus) {
  std::vector<std::string> errs;
  const Registry& reg = corpus.registry;

  std::set<FunctionType> seen;
  for (const auto& f : reg.functions) {
    if (f.tag().empty()) errs.push_back("registry: empty function tag");
    if (!seen.insert(f).second) errs.push_back("registry: duplicate function '" + f.tag() + "'");
  }
  for (const auto& a : reg.attitudes)
    if (!reg.contains(a)) errs.push_back("attitude '" + a.tag() + "' missing from registry");
  if (!(corpus.reference_hz > 0.0) || !std::isfinite(corpus.reference_hz))
    errs.push_back("reference_hz must be positive");
  if (!(corpus.mean_ru_ms > 0.0) || !std::isfinite(corpus.mean_ru_ms))
    errs.push_back("mean_ru_ms must be positive");

  std::set<std::string> ids;
  for (const auto& u : corpus.utterances) {
    const std::string where = "utterance '" + u.id + "'";
    if (!ids.insert(u.id).second) errs.push_back(where + ": duplicate id");
    if (u.units.empty()) errs.push_back(where + ": no rhythmic units");
    if (!reg.is_attitude(u.attitude))
      errs.push_back(where + ": attitude '" + u.attitude.tag() + "' not in attitude set");

    for (std::size_t i = 0; i < u.units.size(); ++i) {
      const auto& ru = u.units[i];
      if (ru.index != i)
        errs.push_back(where + ": unit " + std::to_string(i) + " has index " + std::to_string(ru.index));
      for (std::size_t c = 0; c < kFrameDim; ++c) {
        if (!std::isfinite(ru.observed[c]))
          errs.push_back(where + ": unit " + std::to_string(i) + " has a non-finite value");
      }
      for (std::size_t k = 0; k < kPitchSamples; ++k) {
        if (std::abs(ru.observed.pitch(k)) > kPitchLimit)
          errs.push_back(where + ": unit " + std::to_string(i) + " pitch outside +-48 semitones");
      }
    }

    const auto n = static_cast<long long>(u.units.size());
    std::size_t attitude_scopes = 0;
    for (std::size_t k = 0; k < u.instances.size(); ++k) {
      const auto& inst = u.instances[k];
      const std::string iw = where + ": instance " + std::to_string(k) + " (" + inst.function.tag() + ")";
      if (!reg.contains(inst.function)) errs.push_back(iw + ": function not in registry");
      if (inst.left_span < 1) errs.push_back(iw + ": left_span must be >= 1");
      if (inst.first() < 0 || inst.last() >= n)
        errs.push_back(iw + ": scope [" + std::to_string(inst.first()) + ", " +
                       std::to_string(inst.last()) + "] exceeds utterance of " +
                       std::to_string(n) + " units");
      if (inst.function == u.attitude && inst.first() == 0 && inst.last() == n - 1) ++attitude_scopes;
    }
    if (attitude_scopes != 1)
      errs.push_back(where + ": expected exactly one '" + u.attitude.tag() +
                     "' instance covering all units, found " + std::to_string(attitude_scopes));
  }
  return errs;
}

void validate_or_throw(const Corpus& corpus) {
  auto errs = validate(corpus);
  if (!errs.empty()) throw ValidationError(std::move(errs));
}

namespace {

std::vector<std::string> tags(const std::vector<FunctionType>& fs) {
  std::vector<std::string> out;
  for (const auto& f : fs) out.push_back(f.tag());
  return out;
}

void require_keys(const json& j, std::initializer_list<const char*> allowed, std::size_t line) {
  if (!j.is_object()) throw ParseError("expected an object", line);
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) ==
        allowed.end())
      throw ParseError("unknown field '" + key + "'", line);
  }
  for (const char* a : allowed)
    if (!j.contains(a)) throw ParseError(std::string("missing field '") + a + "'", line);
}

Utterance parse_utterance(const json& j, std::size_t line) {
  require_keys(j, {"id", "attitude", "units", "instances"}, line);
  Utterance u;
  u.id = j.at("id").get<std::string>();
  u.attitude = FunctionType(j.at("attitude").get<std::string>());
  std::size_t i = 0;
  for (const auto& ru : j.at("units")) {
    if (!ru.is_array() || ru.size() != kFrameDim + 1)
      throw ParseError("unit " + std::to_string(i) + " must be [p0, p1, p2, duration, nucleus]", line);
    RhythmicUnit unit;
    unit.index = i++;
    for (std::size_t c = 0; c < kFrameDim; ++c) unit.observed[c] = ru[c].get<double>();
    const int nucleus = ru[kFrameDim].get<int>();
    if (nucleus != 0 && nucleus != 1) throw ParseError("nucleus flag must be 0 or 1", line);
    unit.has_vocalic_nucleus = nucleus == 1;
    u.units.push_back(unit);
  }
  for (const auto& inst : j.at("instances")) {
    if (!inst.is_array() || inst.size() != 4)
      throw ParseError("instance must be [function, landmark, left_span, right_span]", line);
    FunctionInstance fi;
    fi.function = FunctionType(inst[0].get<std::string>());
    fi.landmark = inst[1].get<std::size_t>();
    fi.left_span = inst[2].get<std::size_t>();
    fi.right_span = inst[3].get<std::size_t>();
    u.instances.push_back(fi);
  }
  return u;
}

json utterance_json(const Utterance& u) {
  json units = json::array();
  for (const auto& ru : u.units) {
    units.push_back({ru.observed[0], ru.observed[1], ru.observed[2], ru.observed[3],
                     ru.has_vocalic_nucleus ? 1 : 0});
  }
  json instances = json::array();
  for (const auto& fi : u.instances)
    instances.push_back({fi.function.tag(), fi.landmark, fi.left_span, fi.right_span});
  return json{{"id", u.id}, {"attitude", u.attitude.tag()}, {"units", units}, {"instances", instances}};
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file '" + path.string() + "'");

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  ++lineno;
  if (line != kCorpusMagic) throw ParseError("bad magic, expected '" + std::string(kCorpusMagic) + "'", lineno);

  Corpus corpus;
  std::size_t declared = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
    try {
      if (!have_header) {
        require_keys(j, {"registry", "attitudes", "reference_hz", "mean_ru_ms", "utterances"}, lineno);
        corpus.registry = Registry::from_tags(j.at("registry").get<std::vector<std::string>>(),
                                              j.at("attitudes").get<std::vector<std::string>>());
        corpus.reference_hz = j.at("reference_hz").get<double>();
        corpus.mean_ru_ms = j.at("mean_ru_ms").get<double>();
        declared = j.at("utterances").get<std::size_t>();
        have_header = true;
      } else {
        corpus.utterances.push_back(parse_utterance(j, lineno));
      }
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (!have_header) throw ParseError("missing header record", lineno + 1);
  if (declared != corpus.utterances.size())
    throw ParseError("header declares " + std::to_string(declared) + " utterances, file has " +
                         std::to_string(corpus.utterances.size()),
                     0);
  validate_or_throw(corpus);
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file '" + path.string() + "'");
  out << kCorpusMagic << '\n';
  json header{{"registry", tags(corpus.registry.functions)},
              {"attitudes", tags(corpus.registry.attitudes)},
              {"reference_hz", corpus.reference_hz},
              {"mean_ru_ms", corpus.mean_ru_ms},
              {"utterances", corpus.utterances.size()}};
  out << header.dump() << '\n';
  for (const auto& u : corpus.utterances) out << utterance_json(u).dump() << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

double hz_to_semitones(double f0_hz, double ref_hz) {
  if (!(f0_hz > 0.0) || !(ref_hz > 0.0)) throw Error("hz_to_semitones: frequencies must be positive");
  return 12.0 * std::log2(f0_hz / ref_hz);
}

CorpusSplit split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0) || std::abs(sum - 1.0) > 1e-9)
    throw Error("split ratios must be positive and sum to 1");
  const std::size_t n = corpus.utterances.size();
  if (n < 3) throw Error("cannot split " + std::to_string(n) + " utterances into 3 partitions");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  auto count = [n](double r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9)));
  };
  const std::size_t n_val = count(ratios.val);
  const std::size_t n_test = count(ratios.test);
  if (n_val + n_test >= n) throw Error("split leaves no training utterances");

  CorpusSplit split;
  for (Corpus* c : {&split.train, &split.val, &split.test}) {
    *c = corpus;
    c->utterances.clear();
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto& u = corpus.utterances[order[k]];
    if (k < n_val)
      split.val.utterances.push_back(u);
    else if (k < n_val + n_test)
      split.test.utterances.push_back(u);
    else
      split.train.utterances.push_back(u);
  }
  return split;
}

Corpus filter_by_attitude(const Corpus& corpus, const FunctionType& attitude) {
  Corpus out = corpus;
  out.utterances.clear();
  for (const auto& u : corpus.utterances)
    if (u.attitude == attitude) out.utterances.push_back(u);
  return out;
}

}  // namespace wsfc
