#include "robust/experiment.hpp"

#include "robust/config.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>

namespace robust {

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  return out;
}

void write_checked(std::ofstream& out, std::string_view text, const std::filesystem::path& path) {
  out << text;
  out.flush();
  if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", path.string()));
}

}  // namespace

double max_row_error_ratio(std::span<const std::uint64_t> confusion, std::size_t m) {
  if (confusion.size() != m * m) throw std::invalid_argument("confusion matrix must be m*m");
  std::vector<double> rates;
  for (std::size_t y = 0; y < m; ++y) {
    std::uint64_t total = 0;
    std::uint64_t wrong = 0;
    for (std::size_t k = 0; k < m; ++k) {
      total += confusion[y * m + k];
      if (k != y) wrong += confusion[y * m + k];
    }
    if (total > 0) rates.push_back(static_cast<double>(wrong) / static_cast<double>(total));
  }
  if (rates.empty()) return 1.0;
  double mean = 0.0;
  for (double r : rates) mean += r;
  mean /= static_cast<double>(rates.size());
  if (mean == 0.0) return 1.0;
  return *std::max_element(rates.begin(), rates.end()) / mean;
}

EvalResult evaluate(const MlpClassifier& model, std::span<const Example> test, std::span<const double> corruption,
                    std::span<const Example> shifted, std::size_t draws, std::uint64_t eval_seed) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (draws == 0) throw std::invalid_argument("evaluate: draws must be positive");
  const std::size_t m = model.num_classes();
  EvalResult out;
  out.confusion.assign(m * m, 0);
  const bool confusion_from_clean = corruption.empty();

  std::size_t correct = 0;
  for (const auto& ex : test) {
    const std::size_t pred = argmax(model.logits(ex.x));
    correct += pred == ex.y;
    if (confusion_from_clean) ++out.confusion[ex.y * m + pred];
  }
  out.clean_acc = static_cast<double>(correct) / static_cast<double>(test.size());

  for (std::size_t level = 0; level < corruption.size(); ++level) {
    const double c = corruption[level];
    if (!(c >= 0.0)) throw std::invalid_argument("evaluate: corruption level must be >= 0");
    Rng rng(eval_seed, "corrupt");
    std::size_t hits = 0;
    for (const auto& ex : test) {
      for (std::size_t d = 0; d < draws; ++d) {
        const std::size_t pred = argmax(model.logits(perturb_input(ex.x, NoiseSpec{c}, rng)));
        hits += pred == ex.y;
        if (level == 0) ++out.confusion[ex.y * m + pred];
      }
    }
    out.corrupt_acc.push_back(static_cast<double>(hits) / static_cast<double>(test.size() * draws));
  }

  if (!shifted.empty()) {
    std::size_t hits = 0;
    for (const auto& ex : shifted) hits += argmax(model.logits(ex.x)) == ex.y;
    out.shift_acc = static_cast<double>(hits) / static_cast<double>(shifted.size());
  }
  out.max_row_error_ratio = max_row_error_ratio(out.confusion, m);
  return out;
}

std::string csv_header(std::span<const double> corruption_levels) {
  std::string h = "run_id,method,seed,epoch,train_loss,reg_value,clean_acc";
  for (double c : corruption_levels) h += fmt::format(",corrupt_acc_{:g}", c);
  h += ",shift_acc,wall_ms\n";
  return h;
}

std::string csv_row(const MetricsRecord& r) {
  std::string row = fmt::format("{},{},{},{},{:.10g},{:.10g},{:.6f}", r.run_id, r.method, r.seed, r.epoch,
                                r.train_loss, r.reg_value, r.clean_acc);
  for (double a : r.corrupt_acc) row += fmt::format(",{:.6f}", a);
  row += fmt::format(",{:.6f},{:.0f}\n", r.shift_acc, r.wall_ms);
  return row;
}

RunResult run_single(const TrainConfig& cfg, std::uint64_t seed, std::string run_id) {
  cfg.validate();
  Rng data_rng = data_stream(cfg.dataset, seed);
  const Dataset data = generate(cfg.dataset, data_rng);
  Rng shift_rng(seed, "shift");
  const std::vector<Example> shifted = apply_shift(data.test, cfg.dataset.shift, shift_rng);

  std::vector<MetricsRecord> records;
  const auto start = std::chrono::steady_clock::now();
  EvalResult last;
  auto on_epoch = [&](const EpochStats& stats, const MlpClassifier& model) {
    last = evaluate(model, data.test, cfg.corruption_levels, shifted, cfg.eval_draws,
                    seed * 1000003ULL + stats.epoch);
    MetricsRecord r;
    r.run_id = run_id;
    r.method = std::string(to_string(cfg.method));
    r.seed = seed;
    r.epoch = stats.epoch;
    r.train_loss = stats.train_loss;
    r.reg_value = stats.reg_value;
    r.clean_acc = last.clean_acc;
    r.corrupt_acc = last.corrupt_acc;
    r.shift_acc = last.shift_acc;
    if (cfg.record_wall_ms) {
      r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    records.push_back(std::move(r));
  };
  TrainResult trained = train(make_model(cfg, seed), data.train, cfg, seed, on_epoch);
  return RunResult{std::move(run_id), cfg.method, seed, std::move(records), std::move(last), std::move(trained)};
}

std::filesystem::path output_directory(const TrainConfig& cfg) {
  const char* env = std::getenv("ROBUST_OUTPUT_DIR");
  const std::filesystem::path base = env && *env ? std::filesystem::path(env) : std::filesystem::path(cfg.output_dir);
  return base / cfg.name;
}

std::vector<MethodSummary> summarize(const TrainConfig& cfg, std::span<const RunResult> runs) {
  std::vector<MethodSummary> out;
  for (Method m : cfg.methods) {
    MethodSummary s;
    s.method = m;
    std::vector<double> clean, shift, skew;
    std::vector<std::vector<double>> corrupt(cfg.corruption_levels.size());
    for (const auto& r : runs) {
      if (r.method != m) continue;
      ++s.runs;
      clean.push_back(r.final_eval.clean_acc);
      shift.push_back(r.final_eval.shift_acc);
      skew.push_back(r.final_eval.max_row_error_ratio);
      for (std::size_t i = 0; i < corrupt.size(); ++i) corrupt[i].push_back(r.final_eval.corrupt_acc[i]);
    }
    std::tie(s.clean_mean, s.clean_std) = mean_std(clean);
    std::tie(s.shift_mean, s.shift_std) = mean_std(shift);
    std::tie(s.skew_mean, s.skew_std) = mean_std(skew);
    for (const auto& c : corrupt) {
      const auto [mean, sd] = mean_std(c);
      s.corrupt_mean.push_back(mean);
      s.corrupt_std.push_back(sd);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string summary_table(const TrainConfig& cfg, std::span<const MethodSummary> summary) {
  std::string t = "method,runs,clean_acc_mean,clean_acc_std";
  for (double c : cfg.corruption_levels) t += fmt::format(",corrupt_acc_{0:g}_mean,corrupt_acc_{0:g}_std", c);
  t += ",shift_acc_mean,shift_acc_std,error_skew_mean,error_skew_std\n";
  for (const auto& s : summary) {
    t += fmt::format("{},{},{:.6f},{:.6f}", to_string(s.method), s.runs, s.clean_mean, s.clean_std);
    for (std::size_t i = 0; i < s.corrupt_mean.size(); ++i) {
      t += fmt::format(",{:.6f},{:.6f}", s.corrupt_mean[i], s.corrupt_std[i]);
    }
    t += fmt::format(",{:.6f},{:.6f},{:.6f},{:.6f}\n", s.shift_mean, s.shift_std, s.skew_mean, s.skew_std);
  }
  return t;
}

ExperimentResult run_experiment(const TrainConfig& cfg, const ExperimentOptions& options) {
  cfg.validate();
  struct Job {
    TrainConfig cfg;
    std::uint64_t seed;
    std::string run_id;
  };
  std::vector<Job> jobs;
  for (Method m : cfg.methods) {
    for (std::uint64_t seed : cfg.seeds) {
      TrainConfig run_cfg = for_method(cfg, m);
      run_cfg.validate();
      jobs.push_back({std::move(run_cfg), seed, fmt::format("{:03d}-{}-s{}", jobs.size(), to_string(m), seed)});
    }
  }

  ExperimentResult result;
  std::ofstream csv;
  if (options.write_files) {
    const auto dir = output_directory(cfg);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
    result.metrics_csv = dir / "metrics.csv";
    result.summary_csv = dir / "summary.csv";
    csv = open_out(result.metrics_csv);
    write_checked(csv, csv_header(cfg.corruption_levels), result.metrics_csv);
  }

  std::vector<std::optional<RunResult>> slots(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::mutex mu;
  std::size_t next_job = 0;
  std::size_t next_write = 0;
  std::exception_ptr write_error;

  auto flush_ready = [&] {
    while (next_write < slots.size() && (slots[next_write] || errors[next_write])) {
      if (errors[next_write]) return;
      if (options.write_files && !write_error) {
        try {
          for (const auto& rec : slots[next_write]->records) write_checked(csv, csv_row(rec), result.metrics_csv);
        } catch (...) {
          write_error = std::current_exception();
        }
      }
      ++next_write;
    }
  };

  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next_job >= jobs.size() || write_error) return;
        i = next_job++;
      }
      std::optional<RunResult> r;
      std::exception_ptr err;
      try {
        r = run_single(jobs[i].cfg, jobs[i].seed, jobs[i].run_id);
      } catch (...) {
        err = std::current_exception();
      }
      std::lock_guard lock(mu);
      slots[i] = std::move(r);
      errors[i] = err;
      flush_ready();
    }
  };

  std::size_t threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  if (write_error) std::rethrow_exception(write_error);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        throw std::runtime_error(fmt::format("run {} failed: {}", jobs[i].run_id, e.what()));
      }
    }
  }
  for (auto& s : slots) result.runs.push_back(std::move(*s));
  result.summary = summarize(cfg, result.runs);
  if (options.write_files) {
    std::ofstream summary = open_out(result.summary_csv);
    write_checked(summary, summary_table(cfg, result.summary), result.summary_csv);
  }
  return result;
}

std::string tally_csv(const RunResult& run) {
  std::string out;
  const std::size_t m = run.trained.model.num_classes();
  for (const auto& e : run.trained.epochs) {
    for (std::size_t y = 0; y < m; ++y) {
      for (std::size_t t = 0; t < m; ++t) {
        if (y == t) continue;
        out += fmt::format("{},{},{},{},{},{:g}\n", run.run_id, e.epoch, y, t, e.tally_counts[y * m + t],
                           e.tally_active[y * m + t]);
      }
    }
  }
  return out;
}

}  // namespace robust
