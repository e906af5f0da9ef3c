#pragma once

// Metrics and statistics: pitch RMSE over vocalic nuclei, the paired t-test,
// weight distribution tables and decomposition export.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wsfc/corpus.hpp"
#include "wsfc/wcg.hpp"

namespace wsfc {

struct UtteranceError {
  std::string id;
  double rmse = 0.0;
  /// False when the utterance has no vocalic nucleus; rmse is then 0 and
  /// the entry is left out of the aggregates.
  bool included = true;
};

struct RmseReport {
  double mean = 0.0;
  /// Population std of per-utterance RMSE (pooled RMSE: always 0).
  double std = 0.0;
  std::vector<UtteranceError> per_utterance;
  std::size_t excluded = 0;

  /// Included per-utterance values, corpus order.
  std::vector<double> values() const;
};

struct RmseOptions {
  /// One RMSE over all nucleus samples instead of mean of per-utterance RMSE.
  bool pooled = false;
};

/// Pitch RMSE between observations and synthesize() over the 3 pitch samples
/// of nucleus RUs. Duration is not scored.
RmseReport rmse_vocalic(const ModelSet& model, const Corpus& corpus, const RmseOptions& options = {});

void write_rmse_csv(const RmseReport& report, const std::filesystem::path& path);

/// Regularized incomplete beta I_x(a, b), continued fraction (modified
/// Lentz), relative accuracy ~1e-10.
double regularized_incomplete_beta(double a, double b, double x);

/// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};

/// Paired two-sided t-test on a - b. All-zero differences give t = 0,
/// p = 1; a nonzero constant difference has zero variance and throws
/// NumericError. Throws Error on length mismatch or n < 2.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

enum class CellGrouping { kNone, kAttitude, kEmphasis, kAttitudeEmphasis };

std::string to_string(CellGrouping g);
CellGrouping cell_grouping_from_string(const std::string& s);

/// Label of the context cell an instance falls in under `grouping`
/// ("*" for kNone, "DC", "EMc", "DC/EMc").
std::string cell_label(CellGrouping grouping, const Utterance& utterance,
                       const FunctionInstance& instance);

struct WeightRow {
  FunctionType function;
  std::string cell;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct WeightTable {
  std::vector<WeightRow> rows;
  const WeightRow* find(const FunctionType& f, const std::string& cell) const;
};

/// One row per (function, cell) observed in the corpus, sorted by function
/// then cell. std is the population std.
WeightTable weight_table(const ModelSet& model, const Corpus& corpus, CellGrouping grouping);

/// Columns: function,cell,count,mean,std,min,max.
void write_weight_table_csv(const WeightTable& table, const std::filesystem::path& path);

/// Decomposition of one utterance for plotting. One row per (RU,
/// component); per instance, in utterance order, the columns
/// <label>_contour, <label>_weight, <label>_contribution, <label>_partial
/// where label is FUNCTION@first-last; then reconstruction, observed,
/// residual. The last partial column equals reconstruction exactly.
void export_decomposition(const ModelSet& model, const Utterance& utterance,
                          const std::filesystem::path& path);

/// Shortest round-trip text for a double.
std::string format_double(double v);

}  // namespace wsfc
