#pragma once

// Synthetic corpora with planted prototype contours and context-conditional
// weights. The planted decomposition is the recovery oracle for training.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsfc/corpus.hpp"
#include "wsfc/wcg.hpp"

namespace wsfc {

enum class ShapeFamily { kConstant, kLinear, kBump, kGaussian, kTone };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

/// Planted contour of one function, evaluated at the relative position of
/// each RU in its (extended) scope.
///   constant: 1
///   linear:   2r - 1 (sign of amplitude picks rise or fall)
///   bump:     [tanh(k(r-c+w)) - tanh(k(r-c-w))] / (2 tanh(kw)), peak 1 at c
///   gaussian: exp(-(r-c)^2 / (2 w^2))
///   tone:     (1 - tanh(k(r-c))) / 2, a decaying carry-over envelope
/// Pitch sample j is amplitude * profile[j] * shape; duration is
/// duration_amplitude * shape.
struct PrototypeSpec {
  FunctionType function;
  ShapeFamily family = ShapeFamily::kConstant;
  double amplitude = 1.0;
  double center = 0.5;
  double width = 0.25;
  double sharpness = 8.0;
  std::array<double, kPitchSamples> profile{1.0, 1.0, 1.0};
  double duration_amplitude = 0.0;
  std::size_t scope_extension_right = 0;
  // Scope sampling for local and emphasis functions.
  std::size_t left_span_min = 1;
  std::size_t left_span_max = 1;
  std::size_t right_span_min = 0;
  std::size_t right_span_max = 0;

  double shape(double relative) const;
  ProsodyFrame evaluate(double relative) const;
};

/// Planted weight for a (function, attitude, emphasis category) cell; "*"
/// matches anything.
struct PlantEntry {
  FunctionType function;
  std::string attitude = "*";
  std::string emphasis = "*";
  double weight = 1.0;

  std::string cell() const { return attitude + "/" + emphasis; }
};

struct PlantSpec {
  std::vector<PlantEntry> entries;

  /// Most specific matching entry (exact pair, attitude only, emphasis
  /// only, wildcard); nullptr means an implicit weight of 1.
  const PlantEntry* match(const FunctionType& function, const std::string& attitude,
                          const std::string& emphasis) const;
  double weight(const FunctionType& function, const std::string& attitude,
                const std::string& emphasis) const;
  /// Throws ConfigError unless weights lie in (0, 2) and the mean over
  /// entries lies in [0.8, 1.2].
  void validate() const;
};

struct GeneratorSpec {
  Registry registry;
  std::vector<PrototypeSpec> prototypes;
  PlantSpec plant;
  /// Syntactic-style functions; each utterance draws local_min..local_max
  /// of them uniformly (repeat a tag to raise its share).
  std::vector<FunctionType> local_functions;
  std::size_t local_min = 1;
  std::size_t local_max = 3;
  /// When non-empty every RU carries one instance of a function drawn
  /// uniformly from this list (tone-style).
  std::vector<FunctionType> unit_functions;
  /// Probability of one EM instance per utterance.
  double emphasis_probability = 0.0;
  std::size_t n_utterances = 100;
  std::size_t length_min = 6;
  std::size_t length_max = 12;
  double noise_sigma = 0.0;
  double nucleus_probability = 1.0;
  std::uint64_t seed = 1;
  double reference_hz = 200.0;
  double mean_ru_ms = 200.0;

  const PrototypeSpec& prototype(const FunctionType& f) const;
  void validate() const;
};

GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
GeneratorSpec load_generator_spec(const std::filesystem::path& path);

struct PlantedInstance {
  FunctionType function;
  std::size_t first_unit = 0;
  double weight = 1.0;
  std::string cell;
  std::vector<ProsodyFrame> frames;  // unweighted prototype samples
  bool operator==(const PlantedInstance&) const = default;
};

struct PlantedUtterance {
  std::string id;
  std::size_t length = 0;
  std::vector<PlantedInstance> instances;  // same order as the corpus instances
  bool operator==(const PlantedUtterance&) const = default;
};

struct GroundTruth {
  double noise_sigma = 0.0;
  std::vector<PlantedUtterance> utterances;

  const PlantedUtterance& find(const std::string& id) const;
  bool operator==(const GroundTruth&) const = default;
};

struct GeneratedCorpus {
  Corpus corpus;
  GroundTruth truth;
};

/// observed = sum_k planted_weight_k * prototype_k + N(0, sigma^2) on every
/// component. Utterance u draws from Rng::derive(seed, u).
GeneratedCorpus generate_corpus(const GeneratorSpec& spec);

/// Noise-free planted sum for one utterance.
std::vector<ProsodyFrame> oracle_reconstruction(const GroundTruth& truth, const std::string& id);

inline constexpr const char* kTruthMagic = "WSFC-TRUTH 1";

void save_ground_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

/// Model whose generators reproduce the planted prototypes and weights
/// (exactly up to rounding for constant, linear, bump and tone shapes).
/// Gaussian prototypes and plants keyed on both attitude and emphasis are
/// rejected with ConfigError.
ModelSet analytic_model(const GeneratorSpec& spec, ContextMode mode);

struct RecoveryRow {
  FunctionType function;
  std::string cell;
  std::size_t count = 0;
  double planted = 1.0;
  double recovered = 0.0;  // NaN for empty cells
  double abs_error = 0.0;
};

/// Mean model weight per planted cell, matched to ground truth by
/// utterance id and instance order. Plant entries that no instance falls
/// into are reported with count 0.
std::vector<RecoveryRow> score_recovery(const ModelSet& model, const GroundTruth& truth,
                                        const Corpus& corpus, const PlantSpec& plant);

const RecoveryRow* find_row(const std::vector<RecoveryRow>& rows, const std::string& function,
                            const std::string& cell);

}  // namespace wsfc
