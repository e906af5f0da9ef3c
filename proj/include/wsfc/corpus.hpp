#pragma once

// Annotated prosodic corpora: rhythmic units with observed prosody,
// function instances with scopes, file I/O and splitting.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

namespace wsfc {

inline constexpr std::size_t kPitchSamples = 3;
inline constexpr std::size_t kFrameDim = kPitchSamples + 1;
inline constexpr double kPitchLimit = 48.0;

/// One multiparametric frame: three pitch samples over the vocalic nucleus
/// (start, mid, end; semitones re. the corpus reference) and a duration
/// coefficient ln(ru_duration / corpus_mean_ru_duration).
struct ProsodyFrame {
  std::array<double, kFrameDim> values{};

  double& pitch(std::size_t k) { return values[k]; }
  double pitch(std::size_t k) const { return values[k]; }
  double& duration() { return values[kPitchSamples]; }
  double duration() const { return values[kPitchSamples]; }

  double& operator[](std::size_t c) { return values[c]; }
  double operator[](std::size_t c) const { return values[c]; }

  ProsodyFrame& operator+=(const ProsodyFrame& o) {
    for (std::size_t c = 0; c < kFrameDim; ++c) values[c] += o.values[c];
    return *this;
  }
  friend ProsodyFrame operator+(ProsodyFrame a, const ProsodyFrame& b) { return a += b; }
  friend ProsodyFrame operator-(ProsodyFrame a, const ProsodyFrame& b) {
    for (std::size_t c = 0; c < kFrameDim; ++c) a.values[c] -= b.values[c];
    return a;
  }
  friend ProsodyFrame operator*(double s, ProsodyFrame a) {
    for (auto& v : a.values) v *= s;
    return a;
  }
  bool operator==(const ProsodyFrame&) const = default;
};

/// Symbolic tag of a communicative function (DC, XX, C4, ...).
class FunctionType {
 public:
  FunctionType() = default;
  explicit FunctionType(std::string tag) : tag_(std::move(tag)) {}
  const std::string& tag() const { return tag_; }
  auto operator<=>(const FunctionType&) const = default;

 private:
  std::string tag_;
};

struct RhythmicUnit {
  std::size_t index = 0;
  ProsodyFrame observed;
  bool has_vocalic_nucleus = true;
  bool operator==(const RhythmicUnit&) const = default;
};

/// A function applied over a scope of rhythmic units. The scope is
/// [landmark - left_span + 1, landmark + right_span]; left_span counts the
/// landmark itself.
struct FunctionInstance {
  FunctionType function;
  std::size_t landmark = 0;
  std::size_t left_span = 1;
  std::size_t right_span = 0;

  long long first() const {
    return static_cast<long long>(landmark) - static_cast<long long>(left_span) + 1;
  }
  long long last() const {
    return static_cast<long long>(landmark + right_span);
  }
  std::size_t length() const { return left_span + right_span; }
  bool covers(std::size_t unit) const {
    const auto u = static_cast<long long>(unit);
    return u >= first() && u <= last();
  }
  bool operator==(const FunctionInstance&) const = default;
};

struct Utterance {
  std::string id;
  FunctionType attitude;
  std::vector<RhythmicUnit> units;
  std::vector<FunctionInstance> instances;
  bool operator==(const Utterance&) const = default;
};

/// Open registry of function tags plus the subset acting as attitudes.
struct Registry {
  std::vector<FunctionType> functions;
  std::vector<FunctionType> attitudes;

  bool contains(const FunctionType& f) const;
  bool is_attitude(const FunctionType& f) const;
  /// Position in `functions`; throws Error if absent.
  std::size_t index_of(const FunctionType& f) const;
  /// Position in `attitudes`; throws Error if absent.
  std::size_t attitude_index(const FunctionType& f) const;
  /// Registered functions that are not attitudes, in registry order.
  std::vector<FunctionType> non_attitudes() const;

  static Registry from_tags(const std::vector<std::string>& functions,
                            const std::vector<std::string>& attitudes);
  bool operator==(const Registry&) const = default;
};

struct Corpus {
  Registry registry;
  double reference_hz = 100.0;
  double mean_ru_ms = 200.0;
  std::vector<Utterance> utterances;

  const Utterance& find(const std::string& id) const;
  std::size_t unit_count() const;
  bool operator==(const Corpus&) const = default;
};

/// Every invariant violation, empty when valid.
std::vector<std::string> validate(const Corpus& corpus);
/// Throws ValidationError listing all violations.
void validate_or_throw(const Corpus& corpus);

inline constexpr const char* kCorpusMagic = "WSFC-CORPUS 1";

Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

double hz_to_semitones(double f0_hz, double ref_hz);

struct SplitRatios {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct CorpusSplit {
  Corpus train;
  Corpus val;
  Corpus test;
};

/// Seeded shuffle, then val and test take floor(n * ratio) (at least one
/// each) and train takes the remainder.
CorpusSplit split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed);

/// Same header, only utterances whose attitude is `attitude`.
Corpus filter_by_attitude(const Corpus& corpus, const FunctionType& attitude);

}  // namespace wsfc
