#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mbpep/data.hpp"
#include "mbpep/ensemble.hpp"
#include "mbpep/model_io.hpp"

namespace mbpep::pipeline {

inline constexpr const char* kReportVersion = "mbpep-report/1";

struct DataSource {
    std::string kind = "cubic"; // cubic | exp | csv
    std::string path;           // csv only
    std::string target_column;  // csv only; empty selects the last column
    std::size_t n = 1000;
    double noise_std = 3.0;     // cubic
    double rate = 1.0;          // exp
    std::optional<double> x_min, x_max;
    bool normalize_targets = true;
};

// Every field has a default, so a document holding only a data source is complete.
struct RunConfig {
    DataSource data;
    data::SplitSpec split;
    ensemble::TrainConfig train;
    ensemble::PruneConfig prune;
    bool prune_enabled = true;
    // Score subsets on the validation split unless this is set.
    bool prune_on_train = false;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    int timing_repeats = 3;
    std::vector<int> bench_pool_sizes = {5, 10, 20, 30};
    int bench_repeats = 5;

    // Throws ConfigError listing every problem at once.
    void validate() const;
};

// Flat dotted keys, e.g. "train.epochs". Throws ConfigError for an unknown key
// or unparsable value.
void set_option(RunConfig& cfg, const std::string& key, const std::string& value);

// Applies every pair, collecting all failures into one ConfigError.
void apply_options(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& options);

// Parses "key = value" lines; '#' starts a comment, blank lines are ignored.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& origin);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

// The effective configuration as the same flat key/value form.
std::map<std::string, std::string> describe(const RunConfig& cfg);

data::Dataset load_source(const DataSource& src, std::uint64_t seed);

// Seeds used by one run, all derived from RunConfig::seed.
struct RunSeeds {
    std::uint64_t data, split, learners, prune;
};
RunSeeds derive_run_seeds(std::uint64_t seed);

struct RunResult {
    Model model;
    data::Splits raw;        // splits in original units
    data::Splits normalized; // same rows, scaled with train-split statistics
    std::optional<ensemble::PruneResult> prune;
    ensemble::EvalReport test;          // final (pruned unless disabled) ensemble
    ensemble::EvalReport test_unpruned; // whole pool
    double train_seconds = 0.0;
    double prune_seconds = 0.0;
};

// Sampling, initialization, training, pruning, integration and testing.
RunResult run_pipeline(const RunConfig& cfg);

// Report sections. With `with_timings` unset, no wall-clock values are written
// and the document depends only on config and seeds.
nlohmann::json eval_to_json(const ensemble::EvalReport& report, bool with_timings);
nlohmann::json train_report(const RunConfig& cfg, const RunResult& result, bool with_timings);
nlohmann::json eval_report(const Model& model, const std::string& data_path, const ensemble::EvalReport& report,
                           const Eigen::VectorXd& normalized_targets, bool with_timings);

// Per-sample x, y, lower, upper in original units (when invertible).
void write_trace_csv(const Model& model, const data::Dataset& raw, const ensemble::EvalReport& report,
                     const std::string& path);

struct Stat {
    double mean = 0.0;
    std::optional<double> standard_error; // needs >= 2 samples
    std::size_t count = 0;
};

Stat summarize(const std::vector<double>& values);

struct BenchRun {
    std::uint64_t seed = 0;
    ensemble::EvalReport pruned;
    ensemble::EvalReport unpruned;
};

struct BenchPoolResult {
    int pool_size = 0;
    std::vector<BenchRun> runs;
    std::vector<std::string> failures;
};

struct BenchResult {
    std::vector<BenchPoolResult> pools;
};

// Repeats the pipeline for each pool size; run i uses seed cfg.seed + i.
BenchResult run_bench(const RunConfig& cfg);
nlohmann::json bench_report(const RunConfig& cfg, const BenchResult& result);

} // namespace mbpep::pipeline
