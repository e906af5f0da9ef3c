#include "wsfc/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "wsfc/errors.hpp"
#include "wsfc/trainer.hpp"

namespace wsfc {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, end);
}

std::vector<double> RmseReport::values() const {
  std::vector<double> v;
  for (const auto& e : per_utterance)
    if (e.included) v.push_back(e.rmse);
  return v;
}

RmseReport rmse_vocalic(const ModelSet& model, const Corpus& corpus, const RmseOptions& options) {
  RmseReport report;
  double pooled_sse = 0.0;
  std::size_t pooled_n = 0;
  for (const auto& utt : corpus.utterances) {
    const auto predicted = synthesize(model, utt);
    double sse = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < utt.units.size(); ++i) {
      if (!utt.units[i].has_vocalic_nucleus) continue;
      for (std::size_t k = 0; k < kPitchSamples; ++k) {
        const double d = utt.units[i].observed.pitch(k) - predicted[i].pitch(k);
        sse += d * d;
        ++n;
      }
    }
    UtteranceError e{utt.id, 0.0, n > 0};
    if (n > 0)
      e.rmse = std::sqrt(sse / static_cast<double>(n));
    else
      ++report.excluded;
    pooled_sse += sse;
    pooled_n += n;
    report.per_utterance.push_back(e);
  }

  if (options.pooled) {
    report.mean = pooled_n == 0 ? 0.0 : std::sqrt(pooled_sse / static_cast<double>(pooled_n));
    report.std = 0.0;
    return report;
  }
  const auto v = report.values();
  if (v.empty()) return report;
  double sum = 0.0;
  for (double x : v) sum += x;
  report.mean = sum / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - report.mean) * (x - report.mean);
  report.std = std::sqrt(var / static_cast<double>(v.size()));
  return report;
}

void write_rmse_csv(const RmseReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "utterance,rmse,included\n";
  for (const auto& e : report.per_utterance)
    out << e.id << ',' << format_double(e.rmse) << ',' << (e.included ? 1 : 0) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw Error("incomplete beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw Error("incomplete beta: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw Error("student_t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("paired t-test: samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw Error("paired t-test: need at least 2 pairs");

  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  TTestResult r;
  r.df = static_cast<double>(n - 1);
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) return r;

  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / r.df);
  if (sd == 0.0) throw NumericError("paired t-test: differences have zero variance");

  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = regularized_incomplete_beta(0.5 * r.df, 0.5, r.df / (r.df + r.t * r.t));
  return r;
}

std::string to_string(CellGrouping g) {
  switch (g) {
    case CellGrouping::kNone: return "none";
    case CellGrouping::kAttitude: return "attitude";
    case CellGrouping::kEmphasis: return "emphasis";
    case CellGrouping::kAttitudeEmphasis: return "attitude_emphasis";
  }
  return "?";
}

CellGrouping cell_grouping_from_string(const std::string& s) {
  if (s == "none") return CellGrouping::kNone;
  if (s == "attitude") return CellGrouping::kAttitude;
  if (s == "emphasis") return CellGrouping::kEmphasis;
  if (s == "attitude_emphasis") return CellGrouping::kAttitudeEmphasis;
  throw ConfigError("unknown cell grouping '" + s + "'");
}

std::string cell_label(CellGrouping grouping, const Utterance& utterance,
                       const FunctionInstance& instance) {
  switch (grouping) {
    case CellGrouping::kNone: return "*";
    case CellGrouping::kAttitude: return utterance.attitude.tag();
    case CellGrouping::kEmphasis: return to_string(emphasis_category(utterance, instance));
    case CellGrouping::kAttitudeEmphasis:
      return utterance.attitude.tag() + "/" + to_string(emphasis_category(utterance, instance));
  }
  return "*";
}

const WeightRow* WeightTable::find(const FunctionType& f, const std::string& cell) const {
  for (const auto& r : rows)
    if (r.function == f && r.cell == cell) return &r;
  return nullptr;
}

WeightTable weight_table(const ModelSet& model, const Corpus& corpus, CellGrouping grouping) {
  std::map<std::pair<FunctionType, std::string>, std::vector<double>> cells;
  for (const auto& utt : corpus.utterances) {
    for (const auto& inst : utt.instances) {
      const auto& wcg = model.at(inst.function);
      const double w = instance_weight(model, wcg, encode_context(model.context_mode, utt, inst, model.registry));
      cells[{inst.function, cell_label(grouping, utt, inst)}].push_back(w);
    }
  }
  WeightTable table;
  for (const auto& [key, ws] : cells) {
    WeightRow row;
    row.function = key.first;
    row.cell = key.second;
    row.count = ws.size();
    double sum = 0.0;
    for (double w : ws) sum += w;
    row.mean = sum / static_cast<double>(ws.size());
    double var = 0.0;
    for (double w : ws) var += (w - row.mean) * (w - row.mean);
    row.std = std::sqrt(var / static_cast<double>(ws.size()));
    row.min = *std::min_element(ws.begin(), ws.end());
    row.max = *std::max_element(ws.begin(), ws.end());
    table.rows.push_back(row);
  }
  return table;
}

void write_weight_table_csv(const WeightTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "function,cell,count,mean,std,min,max\n";
  for (const auto& r : table.rows) {
    out << r.function.tag() << ',' << r.cell << ',' << r.count << ',' << format_double(r.mean) << ','
        << format_double(r.std) << ',' << format_double(r.min) << ',' << format_double(r.max) << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void export_decomposition(const ModelSet& model, const Utterance& utterance,
                          const std::filesystem::path& path) {
  static const char* kComponents[kFrameDim] = {"pitch_start", "pitch_mid", "pitch_end", "duration"};
  std::vector<Contribution> parts;
  for (const auto& inst : utterance.instances) parts.push_back(contribution(model, inst, utterance));
  const auto reconstruction = synthesize(model, utterance);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "ru,component";
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& inst = utterance.instances[k];
    const std::string label = inst.function.tag() + "@" + std::to_string(parts[k].first_unit) + "-" +
                              std::to_string(parts[k].first_unit + parts[k].frames.size() - 1);
    out << ',' << label << "_contour," << label << "_weight," << label << "_contribution," << label
        << "_partial";
  }
  out << ",reconstruction,observed,residual\n";

  for (std::size_t i = 0; i < utterance.units.size(); ++i) {
    for (std::size_t c = 0; c < kFrameDim; ++c) {
      out << i << ',' << kComponents[c];
      double partial = 0.0;
      for (const auto& p : parts) {
        const bool covered = i >= p.first_unit && i < p.first_unit + p.frames.size();
        const double raw = covered ? p.unweighted[i - p.first_unit][c] : 0.0;
        const double contrib = covered ? p.frames[i - p.first_unit][c] : 0.0;
        if (covered) partial += contrib;
        out << ',' << format_double(raw) << ',' << format_double(p.weight) << ','
            << format_double(contrib) << ',' << format_double(partial);
      }
      const double obs = utterance.units[i].observed[c];
      out << ',' << format_double(reconstruction[i][c]) << ',' << format_double(obs) << ','
          << format_double(obs - reconstruction[i][c]) << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace wsfc
