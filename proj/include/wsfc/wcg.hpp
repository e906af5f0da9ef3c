#pragma once

// Weighted contour generators: a contour net mapping position ramps to a
// prosody frame per rhythmic unit, gated by a weight net mapping a context
// vector to one scalar in (0, 2) for the whole scope.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wsfc/corpus.hpp"
#include "wsfc/netcore.hpp"

namespace wsfc {

inline constexpr std::size_t kRampDim = 4;
inline constexpr double kRampCountScale = 0.1;
inline constexpr const char* kRampEncoding = "ramp4-v1";

/// Position features of one RU inside a (possibly right-extended) scope.
/// Count features are scaled by kRampCountScale.
struct RampVector {
  double offset = 0.0;      // signed distance from the landmark
  double from_start = 0.0;  // distance to the first RU of the scope
  double to_end = 0.0;      // distance to the last RU of the scope
  double relative = 0.0;    // (i - start) / (end - start); 0 for 1-RU scopes

  Eigen::VectorXd as_vector() const;
};

struct Ramps {
  std::size_t first_unit = 0;
  std::vector<RampVector> ramps;

  std::size_t last_unit() const { return first_unit + ramps.size() - 1; }
  bool covers(std::size_t unit) const { return unit >= first_unit && unit < first_unit + ramps.size(); }
  /// kRampDim x n matrix, one column per RU.
  Eigen::MatrixXd as_matrix() const;
};

/// Ramps over [first, last + extension], the extension clipped to the
/// utterance.
Ramps build_ramps(const FunctionInstance& instance, std::size_t scope_extension_right,
                  std::size_t utterance_length);

enum class ContextMode { kAttitude, kOverlap, kEmphasis };

std::string to_string(ContextMode mode);
ContextMode context_mode_from_string(const std::string& s);

/// Placement of an instance relative to the nearest emphasis scope.
enum class EmphasisCategory { kNone = 0, kPre = 1, kFinal = 2, kPost = 3 };

inline constexpr std::size_t kEmphasisCategories = 4;
inline const FunctionType kEmphasisFunction{"EM"};
inline const FunctionType kWordBoundaryFunction{"WB"};

std::string to_string(EmphasisCategory c);
EmphasisCategory emphasis_category_from_string(const std::string& s);

/// None when the utterance has no EM instance or the landmark precedes the
/// nearest EM scope; EMp inside that scope before its final RU; EM on the
/// final RU; EMc after it. "Nearest" is by distance from the landmark to the
/// scope's final RU, ties to the earlier scope.
EmphasisCategory emphasis_category(const Utterance& utterance, const FunctionInstance& instance);

std::size_t context_size(ContextMode mode, const Registry& registry);

/// Binary context vector:
///   attitude: one-hot over the attitude set;
///   overlap:  attitude one-hot, then one flag per non-attitude function
///             (registry order) set when another instance of it shares an RU
///             with this instance's scope;
///   emphasis: attitude one-hot, WB-overlap flag, one-hot over
///             {None, EMp, EM, EMc}.
Eigen::VectorXd encode_context(ContextMode mode, const Utterance& utterance,
                               const FunctionInstance& instance, const Registry& registry);

struct WeightedContourGenerator {
  FunctionType function;
  DenseNet contour_net;  // kRampDim -> hidden -> kFrameDim, linear output
  DenseNet weight_net;   // context -> hidden -> 1, sigmoid output
  std::size_t scope_extension_right = 0;
  bool operator==(const WeightedContourGenerator&) const = default;
};

/// Maps a sigmoid output to a weight, kept strictly inside (0, 2) even when
/// the sigmoid rounds to 0 or 1.
inline double weight_from_gate(double gate) {
  return std::clamp(2.0 * gate, std::numeric_limits<double>::denorm_min(), std::nextafter(2.0, 0.0));
}

/// 2 * sigmoid(weight-net pre-activation), strictly inside (0, 2).
double weight(const WeightedContourGenerator& wcg, const Eigen::VectorXd& context);

/// Unweighted frame per ramp.
std::vector<ProsodyFrame> contour(const WeightedContourGenerator& wcg, const Ramps& ramps);

struct ModelOptions {
  std::size_t cg_hidden = 17;
  std::size_t wm_hidden = 8;
  double init_scale = 0.1;
  /// Right-scope extension per function; absent means 0.
  std::map<FunctionType, std::size_t> scope_extension_right;
  bool weight_pitch_only = false;
};

/// One WCG per function plus everything needed to encode contexts.
struct ModelSet {
  Registry registry;
  ContextMode context_mode = ContextMode::kAttitude;
  /// When set every weight is exactly 1 (plain superposition).
  bool identity_weights = false;
  /// Ablation: weight scales the pitch components only.
  bool weight_pitch_only = false;
  std::map<FunctionType, WeightedContourGenerator> generators;

  const WeightedContourGenerator& at(const FunctionType& f) const;
  WeightedContourGenerator& at(const FunctionType& f);
  bool operator==(const ModelSet&) const = default;
};

/// Fresh model with one WCG per registry function, parameters uniform in
/// [-init_scale, init_scale] from `seed`.
ModelSet make_model(const Registry& registry, ContextMode mode, const ModelOptions& options,
                    std::uint64_t seed);

/// Weight of `wcg` under the model's gating policy (1 when bypassed).
double instance_weight(const ModelSet& model, const WeightedContourGenerator& wcg,
                       const Eigen::VectorXd& context);

struct Contribution {
  std::size_t first_unit = 0;
  double weight = 1.0;
  std::vector<ProsodyFrame> unweighted;
  std::vector<ProsodyFrame> frames;
};

/// weight x contour over the instance's extended scope; the same scalar
/// multiplies every RU (and every component unless weight_pitch_only).
Contribution contribution(const ModelSet& model, const FunctionInstance& instance,
                          const Utterance& utterance);

/// Copy of `model` with the weight nets bypassed.
ModelSet set_identity_weights(ModelSet model);

inline constexpr const char* kModelMagic = "WSFC-MODEL";
inline constexpr int kModelVersion = 1;

void save_model(const ModelSet& model, const std::filesystem::path& path);
ModelSet load_model(const std::filesystem::path& path);

}  // namespace wsfc
