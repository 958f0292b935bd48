#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "gridflow/env.hpp"
#include "gridflow/eval.hpp"
#include "gridflow/train.hpp"

namespace gridflow::experiment {

/// Everything a training run depends on. Serialised as one flat JSON object;
/// see README for the key list.
struct ExperimentConfig {
  std::filesystem::path network = "data/feeder14.json";
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "runs";
  std::uint64_t scenario_base_seed = 1000;
  EnvConfig env;
  train::TrainConfig train;

  /// Throws ValidationError on violated invariants.
  void validate() const;
};

/// Parses a JSON object over the defaults. Unknown keys and type errors throw
/// ValidationError naming the key.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully resolved config as pretty-printed JSON.
std::string to_json(const ExperimentConfig& config);

/// Linear interpolation between order statistics at h = (n - 1) p.
double quantile(std::vector<double> values, double p);

struct Band {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};
Band band(const std::vector<double>& values);

struct SummaryRow {
  std::size_t episode = 0;
  Band cr, ql, pl;
};

/// Per-evaluation-point median and quartiles across seeds. Logs must share episode numbers.
std::vector<SummaryRow> summarize(const std::vector<std::vector<train::LogRow>>& logs);
void write_summary_csv(const std::vector<SummaryRow>& rows, std::ostream& out);

/// Policy checkpoint with its architecture in the meta block.
void save_policy(const nets::Policy& policy, const std::filesystem::path& path);
/// Throws diff::CheckpointError if the file is unreadable, corrupt, or its
/// architecture does not fit the network.
std::unique_ptr<nets::Policy> load_policy(const std::filesystem::path& path, const PowerNetwork& network);

/// Worker count: GRIDFLOW_THREADS if set (>= 1), else hardware concurrency, never above jobs.
std::size_t worker_count(std::size_t jobs);

struct RunOutputs {
  std::vector<std::vector<train::LogRow>> logs;  // per seed, in config order
  std::vector<SummaryRow> summary;
};

/// Trains every seed (in parallel up to worker_count) and writes
/// config.json, seed-<s>/{log.csv, policy.json, critic*.json} and summary.csv under output_dir.
RunOutputs run_training(const ExperimentConfig& config, std::ostream* progress = nullptr);

}  // namespace gridflow::experiment
