// wsfc: generate synthetic corpora, train SFC/WSFC models and export
// metrics, weight tables and decompositions.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wsfc/config.hpp"
#include "wsfc/corpus.hpp"
#include "wsfc/errors.hpp"
#include "wsfc/eval.hpp"
#include "wsfc/synthgen.hpp"
#include "wsfc/trainer.hpp"
#include "wsfc/wcg.hpp"

namespace fs = std::filesystem;
using namespace wsfc;

namespace {

fs::path default_output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("out");
}

CellGrouping default_grouping(ContextMode mode) {
  return mode == ContextMode::kEmphasis ? CellGrouping::kEmphasis : CellGrouping::kAttitude;
}

void print_rmse(const std::string& label, const RmseReport& r) {
  std::cout << label << " rmse " << format_double(r.mean) << " +- " << format_double(r.std) << " ("
            << r.per_utterance.size() - r.excluded << " utterances)\n";
}

int cmd_generate(const fs::path& spec_path, fs::path corpus_out, fs::path truth_out) {
  const GeneratorSpec spec = load_generator_spec(spec_path);
  if (corpus_out.empty()) corpus_out = default_output_dir() / "corpus.txt";
  if (truth_out.empty()) truth_out = default_output_dir() / "truth.txt";
  if (corpus_out.has_parent_path()) fs::create_directories(corpus_out.parent_path());
  if (truth_out.has_parent_path()) fs::create_directories(truth_out.parent_path());
  const GeneratedCorpus g = generate_corpus(spec);
  save_corpus(g.corpus, corpus_out);
  save_ground_truth(g.truth, truth_out);
  std::cout << "utterances " << g.corpus.utterances.size() << ", units " << g.corpus.unit_count()
            << ", sigma " << format_double(spec.noise_sigma) << ", seed " << spec.seed << '\n'
            << "corpus " << corpus_out.string() << "\ntruth " << truth_out.string() << '\n';
  return 0;
}

int cmd_train(const fs::path& config_path, std::size_t threads) {
  ExperimentConfig config = load_experiment_config(config_path);
  config.training.threads = threads;
  const ExperimentData data = load_experiment_data(config);
  const TrainResult result = run_experiment(config, data);

  fs::create_directories(config.output_dir);
  const fs::path checkpoint = config.output_dir / config.checkpoint_name;
  save_model(result.model, checkpoint);
  write_history_csv(result.history, config.output_dir / "history.csv");

  const RmseReport train = rmse_vocalic(result.model, data.train);
  print_rmse("train", train);
  if (!data.val.utterances.empty()) print_rmse("val", rmse_vocalic(result.model, data.val));
  if (!data.test.utterances.empty()) {
    const RmseReport test = rmse_vocalic(result.model, data.test);
    print_rmse("test", test);
    write_rmse_csv(test, config.output_dir / "rmse_test.csv");
  }
  write_weight_table_csv(weight_table(result.model, data.train, default_grouping(result.model.context_mode)),
                         config.output_dir / "weights.csv");
  if (config.ground_truth) {
    const GroundTruth truth = load_ground_truth(*config.ground_truth);
    std::ofstream out(config.output_dir / "recovery.csv");
    out << "function,cell,count,planted,recovered,abs_error\n";
    for (const auto& r : score_recovery(result.model, truth, data.train, {})) {
      out << r.function.tag() << ',' << r.cell << ',' << r.count << ',' << format_double(r.planted) << ','
          << format_double(r.recovered) << ',' << format_double(r.abs_error) << '\n';
    }
  }
  std::cout << "stop " << result.history.stop_reason << " after " << result.history.iterations.size()
            << " iterations (best " << result.history.best_iteration << ")\n"
            << "checkpoint " << checkpoint.string() << '\n';
  return 0;
}

int cmd_sweep(const fs::path& config_path, std::size_t threads) {
  ExperimentConfig config = load_experiment_config(config_path);
  config.training.threads = threads;
  if (config.sweep.batch_sizes.empty() || config.sweep.reg_coeffs.empty())
    throw ConfigError("sweep needs non-empty 'batch_sizes' and 'reg_coeffs'");
  const ExperimentData data = load_experiment_data(config);

  fs::create_directories(config.output_dir);
  const fs::path path = config.output_dir / "sweep.csv";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "batch_size,reg_coeff,function,cell,count,mean,std,min,max\n";
  int failures = 0;
  for (std::size_t batch : config.sweep.batch_sizes) {
    for (double reg : config.sweep.reg_coeffs) {
      ExperimentConfig cell = config;
      cell.training.batch_size = batch;
      cell.training.reg_coeff = reg;
      try {
        const TrainResult result = run_experiment(cell, data);
        const WeightTable table =
            weight_table(result.model, data.train, default_grouping(result.model.context_mode));
        for (const auto& r : table.rows) {
          out << batch << ',' << format_double(reg) << ',' << r.function.tag() << ',' << r.cell << ','
              << r.count << ',' << format_double(r.mean) << ',' << format_double(r.std) << ','
              << format_double(r.min) << ',' << format_double(r.max) << '\n';
        }
        std::cout << "batch " << batch << " reg " << format_double(reg) << ": train rmse "
                  << format_double(rmse_vocalic(result.model, data.train).mean) << '\n';
      } catch (const Error& e) {
        ++failures;
        std::cerr << "batch " << batch << " reg " << format_double(reg) << " failed: " << e.what() << '\n';
      }
    }
  }
  std::cout << "sweep " << path.string() << '\n';
  return failures == 0 ? 0 : 1;
}

ModelSet load_checked(const fs::path& checkpoint, const Corpus& corpus) {
  ModelSet model = load_model(checkpoint);
  if (model.registry != corpus.registry)
    throw ValidationError({"checkpoint '" + checkpoint.string() + "' registry differs from the corpus"});
  return model;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& corpus_path, const fs::path& compare,
             fs::path out, bool pooled) {
  const Corpus corpus = load_corpus(corpus_path);
  const RmseReport report = rmse_vocalic(load_checked(checkpoint, corpus), corpus, {pooled});
  print_rmse(checkpoint.string(), report);
  if (!out.empty()) write_rmse_csv(report, out);
  if (compare.empty()) return 0;

  const RmseReport other = rmse_vocalic(load_checked(compare, corpus), corpus);
  print_rmse(compare.string(), other);
  const TTestResult t = paired_t_test(report.values(), other.values());
  std::cout << "t=" << format_double(t.t) << ", p=" << format_double(t.p) << '\n';
  return 0;
}

int cmd_decompose(const fs::path& checkpoint, const fs::path& corpus_path, const std::string& id,
                  fs::path out) {
  const Corpus corpus = load_corpus(corpus_path);
  const ModelSet model = load_checked(checkpoint, corpus);
  const Utterance& utt = corpus.find(id);
  if (out.empty()) out = default_output_dir() / ("decomposition_" + id + ".csv");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  export_decomposition(model, utt, out);
  std::cout << "decomposition " << out.string() << '\n';
  return 0;
}

int cmd_export_weights(const fs::path& checkpoint, const fs::path& corpus_path, const std::string& grouping,
                       fs::path out) {
  const Corpus corpus = load_corpus(corpus_path);
  const ModelSet model = load_checked(checkpoint, corpus);
  const CellGrouping g = grouping.empty() ? default_grouping(model.context_mode) : cell_grouping_from_string(grouping);
  if (out.empty()) out = default_output_dir() / "weights.csv";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_weight_table_csv(weight_table(model, corpus, g), out);
  std::cout << "weights " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted superposition of functional contours: training and analysis"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker cap (0: all cores); results do not depend on it");

  fs::path spec, corpus_out, truth_out;
  auto* gen = app.add_subcommand("generate", "Write a synthetic corpus and its ground truth");
  gen->add_option("spec", spec, "Generator spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--corpus", corpus_out, "Corpus output path (default $" + std::string(kOutputDirEnv) + "/corpus.txt)");
  gen->add_option("--truth", truth_out, "Ground-truth output path (default $" + std::string(kOutputDirEnv) + "/truth.txt)");

  fs::path config;
  auto* train = app.add_subcommand("train", "Train a model from an experiment config");
  train->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  auto* sweep = app.add_subcommand("sweep", "Batch size x regularization grid; writes sweep.csv");
  sweep->add_option("config", config, "Experiment config with a sweep block")->required()->check(CLI::ExistingFile);

  fs::path checkpoint, corpus, compare, out;
  bool pooled = false;
  auto* eval = app.add_subcommand("eval", "Pitch RMSE over vocalic nuclei, optional paired t-test");
  eval->add_option("checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("corpus", corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  eval->add_option("--compare", compare, "Second checkpoint for a paired t-test")->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Per-utterance RMSE CSV");
  eval->add_flag("--pooled", pooled, "Single RMSE over all nucleus samples");

  std::string id;
  auto* decompose = app.add_subcommand("decompose", "Per-contour decomposition CSV of one utterance");
  decompose->add_option("checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  decompose->add_option("corpus", corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  decompose->add_option("id", id, "Utterance id")->required();
  decompose->add_option("--out", out, "Output CSV");

  std::string grouping;
  auto* weights = app.add_subcommand("export-weights", "Weight distribution per function and context cell");
  weights->add_option("checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  weights->add_option("corpus", corpus, "Corpus file")->required()->check(CLI::ExistingFile);
  weights->add_option("--grouping", grouping, "none, attitude, emphasis or attitude_emphasis");
  weights->add_option("--out", out, "Output CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_generate(spec, corpus_out, truth_out);
    if (*train) return cmd_train(config, threads);
    if (*sweep) return cmd_sweep(config, threads);
    if (*eval) return cmd_eval(checkpoint, corpus, compare, out, pooled);
    if (*decompose) return cmd_decompose(checkpoint, corpus, id, out);
    if (*weights) return cmd_export_weights(checkpoint, corpus, grouping, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
