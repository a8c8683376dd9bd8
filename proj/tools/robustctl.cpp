#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "robust/config.hpp"
#include "robust/experiment.hpp"
#include "robust/theory.hpp"

namespace {

using namespace robust;

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
}

std::filesystem::path prepare_dir(const TrainConfig& cfg) {
  const auto dir = output_directory(cfg);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  return dir;
}

int cmd_train(const std::string& path) {
  const TrainConfig cfg = load_config(path);
  const std::uint64_t seed = cfg.seeds.front();
  const RunResult run = run_single(cfg, seed, fmt::format("000-{}-s{}", to_string(cfg.method), seed));
  const auto dir = prepare_dir(cfg);
  std::string csv = csv_header(cfg.corruption_levels);
  for (const auto& r : run.records) csv += csv_row(r);
  write_file(dir / "metrics.csv", csv);
  save_checkpoint(run.trained.model, dir / "model.txt");
  const auto& e = run.final_eval;
  fmt::print("method={} seed={} epochs={} clean_acc={:.4f}", to_string(cfg.method), seed, run.records.size(),
             e.clean_acc);
  for (std::size_t i = 0; i < e.corrupt_acc.size(); ++i) {
    fmt::print(" corrupt_acc_{:g}={:.4f}", cfg.corruption_levels[i], e.corrupt_acc[i]);
  }
  fmt::print(" shift_acc={:.4f}\nwrote {}\n", e.shift_acc, (dir / "metrics.csv").string());
  return 0;
}

int cmd_bench(const std::string& path, std::size_t threads) {
  const TrainConfig cfg = load_config(path);
  ExperimentOptions opts;
  opts.threads = threads;
  const ExperimentResult res = run_experiment(cfg, opts);
  fmt::print("{}", summary_table(cfg, res.summary));
  fmt::print("wrote {}\n", res.metrics_csv.string());
  return 0;
}

int cmd_confusion(const std::string& path) {
  TrainConfig cfg = for_method(load_config(path), Method::kTat);
  const std::uint64_t seed = cfg.seeds.front();
  const RunResult run = run_single(cfg, seed, fmt::format("000-tat-s{}", seed));
  const std::string csv = "run_id,epoch,gold,target,count,weight\n" + tally_csv(run);
  const auto dir = prepare_dir(cfg);
  write_file(dir / "confusion.csv", csv);
  fmt::print("{}", csv);
  return 0;
}

int cmd_verify(const SuiteOptions& opts, const std::string& report, const std::string& summary) {
  const SuiteResult res = run_verification_suite(opts);
  const std::string text = res.text();
  if (report.empty()) {
    fmt::print("{}", text);
  } else {
    write_file(report, text);
    fmt::print("summary total={} passed={} failed={} skipped={}\n", res.reports.size(), res.passed, res.failed,
               res.skipped);
  }
  if (!summary.empty()) write_file(summary, res.summary_json(opts));
  return res.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust training toolkit: train, sweep and verify smoothness regularizers"};
  app.require_subcommand(1);

  std::string config;
  std::size_t threads = 0;
  auto* train = app.add_subcommand("train", "Train one model (config method, first seed)");
  train->add_option("config", config, "Config file")->required();
  auto* bench = app.add_subcommand("bench", "Run every method and seed of a config");
  bench->add_option("config", config, "Config file")->required();
  bench->add_option("--threads", threads, "Worker threads (0 = all cores)");
  auto* confusion = app.add_subcommand("confusion", "Train with TAT and dump the per-epoch error tally");
  confusion->add_option("config", config, "Config file")->required();

  SuiteOptions suite;
  std::string report;
  std::string summary;
  auto* verify = app.add_subcommand("verify", "Run the numerical verification suite");
  verify->add_option("--seed", suite.seed, "Suite seed");
  verify->add_option("--instances", suite.instances, "Randomized instances per check");
  verify->add_option("--pdm-c", suite.pdm_c, "Noise scale for the second-order check");
  verify->add_option("--samples", suite.pdm_samples, "Monte-Carlo samples for the second-order check");
  verify->add_option("--report", report, "Write the report here instead of stdout");
  verify->add_option("--summary", summary, "Write the JSON summary here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return cmd_train(config);
    if (*bench) return cmd_bench(config, threads);
    if (*confusion) return cmd_confusion(config);
    if (*verify) return cmd_verify(suite, report, summary);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
