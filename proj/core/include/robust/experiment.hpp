#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "robust/data.hpp"
#include "robust/model.hpp"
#include "robust/trainer.hpp"

namespace robust {

struct EvalResult {
  double clean_acc = 0.0;
  std::vector<double> corrupt_acc;  ///< one per corruption level
  double shift_acc = 0.0;
  /// m×m counts of (gold, pred) on the corrupted test set at the first
  /// corruption level over every draw (the clean test set if there is none).
  std::vector<std::uint64_t> confusion;
  /// max_y err_y / mean_y err_y over per-class error rates of `confusion`;
  /// 1 when the errors are balanced or absent.
  double max_row_error_ratio = 1.0;
};

/// Accuracy on `test`, on `draws` noisy copies per point for every level in
/// `corruption`, and on `shifted`. The same noise stream is replayed for each
/// level, so levels differ only in scale.
EvalResult evaluate(const MlpClassifier& model, std::span<const Example> test,
                    std::span<const double> corruption, std::span<const Example> shifted,
                    std::size_t draws, std::uint64_t eval_seed);

/// max_y err_y / mean_y err_y for an m×m confusion matrix.
double max_row_error_ratio(std::span<const std::uint64_t> confusion, std::size_t m);

struct MetricsRecord {
  std::string run_id;
  std::string method;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double reg_value = 0.0;
  double clean_acc = 0.0;
  std::vector<double> corrupt_acc;
  double shift_acc = 0.0;
  double wall_ms = 0.0;
};

std::string csv_header(std::span<const double> corruption_levels);
std::string csv_row(const MetricsRecord& r);

struct RunResult {
  std::string run_id;
  Method method = Method::kStd;
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> records;  ///< one per epoch
  EvalResult final_eval;
  TrainResult trained;
};

/// Trains `cfg.method` on the dataset drawn for `seed` and evaluates after
/// every epoch.
RunResult run_single(const TrainConfig& cfg, std::uint64_t seed, std::string run_id);

struct MethodSummary {
  Method method = Method::kStd;
  std::size_t runs = 0;
  double clean_mean = 0.0, clean_std = 0.0;
  std::vector<double> corrupt_mean, corrupt_std;
  double shift_mean = 0.0, shift_std = 0.0;
  double skew_mean = 0.0, skew_std = 0.0;  ///< max_row_error_ratio
};

struct ExperimentResult {
  std::vector<RunResult> runs;  ///< ordered by run id
  std::vector<MethodSummary> summary;
  std::filesystem::path metrics_csv;
  std::filesystem::path summary_csv;
};

/// `cfg.output_dir`, or $ROBUST_OUTPUT_DIR when set, joined with cfg.name.
std::filesystem::path output_directory(const TrainConfig& cfg);

struct ExperimentOptions {
  std::size_t threads = 0;  ///< 0 means hardware concurrency
  bool write_files = true;
};

/// Every (method, seed) pair of the sweep. Runs execute concurrently; rows
/// reach metrics.csv in run-id order and are flushed one by one. I/O errors
/// name the path.
ExperimentResult run_experiment(const TrainConfig& cfg, const ExperimentOptions& options = {});

/// Mean ± std over seeds of the final-epoch metrics, per method.
std::vector<MethodSummary> summarize(const TrainConfig& cfg, std::span<const RunResult> runs);
std::string summary_table(const TrainConfig& cfg, std::span<const MethodSummary> summary);

/// `run_id,epoch,gold,target,count,weight` rows: the epoch's error counts and
/// the sampling weights committed from them.
std::string tally_csv(const RunResult& run);

}  // namespace robust
