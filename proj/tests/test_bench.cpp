#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "robust/config.hpp"
#include "robust/data.hpp"
#include "robust/experiment.hpp"
#include "support.hpp"

using namespace robust;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

DatasetSpec blobs_spec(std::size_t m, double noise, std::size_t points = 200) {
  DatasetSpec spec;
  spec.generator = Generator::kBlobs;
  spec.n_classes = m;
  spec.noise = noise;
  spec.n_points = points;
  return spec;
}

TrainConfig sweep_config(std::string name) {
  TrainConfig cfg;
  cfg.name = std::move(name);
  cfg.methods = {Method::kStd, Method::kPdm};
  cfg.seeds = {1, 2, 3};
  cfg.epochs = 2;
  cfg.corruption_levels = {0.1, 0.3};
  cfg.dataset = blobs_spec(2, 0.5);
  cfg.perturbation.noise_scale = 0.3;
  return cfg;
}

double pick_double(Rng& rng, double lo, double hi) {
  // Round to a few digits half the time so both short and long literals occur.
  const double v = rng.uniform(lo, hi);
  return rng.index(2) ? std::round(v * 1000.0) / 1000.0 : v;
}

TrainConfig random_config(Rng& rng) {
  const Method all[] = {Method::kStd, Method::kJr, Method::kVat, Method::kPdm, Method::kAdv, Method::kTat};
  TrainConfig cfg;
  cfg.name = "cfg" + std::to_string(rng.index(1000));
  cfg.method = all[rng.index(6)];
  cfg.alpha = pick_double(rng, 0.0, 10.0);
  cfg.epochs = 1 + static_cast<int>(rng.index(100));
  cfg.batch_size = 1 + static_cast<int>(rng.index(64));
  cfg.learning_rate = pick_double(rng, 1e-3, 1.0);
  cfg.hidden.clear();
  for (std::size_t i = 0, k = rng.index(3); i < k; ++i) cfg.hidden.push_back(1 + rng.index(32));
  cfg.seeds.clear();
  for (std::size_t i = 0, k = 1 + rng.index(4); i < k; ++i) cfg.seeds.push_back(rng.index(100000));
  cfg.corruption_levels.clear();
  for (std::size_t i = 0, k = rng.index(3); i < k; ++i) cfg.corruption_levels.push_back(pick_double(rng, 0.0, 1.0));
  cfg.eval_draws = 1 + rng.index(20);
  cfg.record_wall_ms = rng.index(2) == 1;
  cfg.output_dir = rng.index(2) ? "out" : "results/run";
  cfg.methods.clear();
  for (Method m : all) {
    if (rng.index(2)) cfg.methods.push_back(m);
  }
  if (cfg.methods.empty()) cfg.methods.push_back(Method::kTat);

  PerturbationConfig& p = cfg.perturbation;
  p.noise_scale = pick_double(rng, 0.0, 1.0);
  p.linf_bound = pick_double(rng, 1e-6, 1.0);
  p.step_size = pick_double(rng, 0.0, 1.0);
  p.inner_steps = 1 + static_cast<int>(rng.index(5));
  p.init_sigma = pick_double(rng, 0.0, 0.1);
  p.probe_xi = rng.uniform(1e-8, 1e-3);
  p.pdm_samples = 1 + static_cast<int>(rng.index(4));
  p.kl_direction = rng.index(2) ? KlDirection::kForward : KlDirection::kReversed;
  p.vat_detach_clean = rng.index(2) == 1;

  cfg.tat.divergence = static_cast<Divergence>(rng.index(3));
  cfg.tat.tally_smoothing = pick_double(rng, 0.1, 3.0);
  cfg.tat.tally_momentum = pick_double(rng, 0.0, 0.9);

  DatasetSpec& d = cfg.dataset;
  d.generator = static_cast<Generator>(rng.index(3));
  d.n_features = d.generator == Generator::kBlobs ? 1 + rng.index(4) : 2;
  d.n_classes = d.generator == Generator::kMoons ? 2 : 2 + rng.index(4);
  d.n_points = 10 * d.n_classes + rng.index(500);
  d.noise = pick_double(rng, 0.0, 1.0);
  d.seed = rng.index(1000);
  d.resample_per_seed = rng.index(2) == 1;
  d.shift.rotation_deg = pick_double(rng, -90.0, 90.0);
  d.shift.translation.clear();
  if (rng.index(2)) {
    for (std::size_t i = 0; i < d.n_features; ++i) d.shift.translation.push_back(pick_double(rng, -1.0, 1.0));
  }
  d.shift.extra_noise = pick_double(rng, 0.0, 0.5);

  if (rng.index(2)) {
    cfg.method_overrides["tat"]["alpha"] = nlohmann::json(pick_double(rng, 0.0, 5.0)).dump();
    cfg.method_overrides["tat"]["linf_bound"] = nlohmann::json(pick_double(rng, 1e-3, 1.0)).dump();
  }
  if (rng.index(2)) cfg.method_overrides["vat"]["vat_detach_clean"] = rng.index(2) ? "true" : "false";
  return cfg;
}

}  // namespace

TEST(Generate, TwoBlobsAreNearlySeparable) {
  // Centers (±1, 0) with σ = 0.3: the Bayes rule sign(x₀) errs with
  // probability Φ(−1/0.3).
  const double bayes = 1.0 - 0.5 * std::erfc(1.0 / (0.3 * std::sqrt(2.0)));
  EXPECT_GT(bayes, 0.99);
  Rng rng(71, "blobs");
  const Dataset data = generate(blobs_spec(2, 0.3), rng);
  std::size_t correct = 0, total = 0;
  for (const auto* split : {&data.train, &data.test}) {
    for (const Example& ex : *split) {
      correct += (ex.x[0] > 0.0 ? 0u : 1u) == ex.y;
      ++total;
    }
  }
  EXPECT_EQ(total, 200u);
  EXPECT_GE(static_cast<double>(correct) / total, 0.97);
}

TEST(Generate, SameSeedSameData) {
  for (Generator g : {Generator::kBlobs, Generator::kMoons, Generator::kSpiral}) {
    DatasetSpec spec = blobs_spec(2, 0.2);
    spec.generator = g;
    Rng a(72, "data"), b(72, "data");
    const Dataset x = generate(spec, a), y = generate(spec, b);
    ASSERT_EQ(x.train.size(), y.train.size());
    for (std::size_t i = 0; i < x.train.size(); ++i) {
      EXPECT_EQ(x.train[i].x, y.train[i].x);
      EXPECT_EQ(x.train[i].y, y.train[i].y);
    }
  }
}

TEST(Generate, NoiselessMoonsLieOnArcs) {
  DatasetSpec spec = blobs_spec(2, 0.0);
  spec.generator = Generator::kMoons;
  Rng rng(73, "moons");
  const Dataset data = generate(spec, rng);
  for (const auto* split : {&data.train, &data.test}) {
    for (const Example& ex : *split) {
      const double x = ex.x[0], y = ex.x[1];
      if (ex.y == 0) {
        EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
        EXPECT_GE(y, -1e-12);
      } else {
        EXPECT_NEAR((x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5), 1.0, 1e-12);
        EXPECT_LE(y, 0.5 + 1e-12);
      }
    }
  }
}

TEST(Generate, BalanceAndSplit) {
  Rng rng(74, "balance");
  for (int trial = 0; trial < 30; ++trial) {
    DatasetSpec spec;
    spec.generator = static_cast<Generator>(rng.index(3));
    spec.n_classes = spec.generator == Generator::kMoons ? 2 : 2 + rng.index(4);
    spec.n_points = 10 * spec.n_classes + rng.index(400);
    spec.noise = 0.3;
    const Dataset data = generate(spec, rng);
    EXPECT_EQ(data.train.size(), spec.n_points * 4 / 5);
    EXPECT_EQ(data.train.size() + data.test.size(), spec.n_points);
    std::vector<std::size_t> counts(spec.n_classes, 0);
    for (const auto* split : {&data.train, &data.test}) {
      for (const Example& ex : *split) ++counts[ex.y];
    }
    const double expected = static_cast<double>(spec.n_points) / spec.n_classes;
    for (std::size_t c : counts) EXPECT_LE(std::abs(c - expected), 0.1 * expected);
  }
}

TEST(Generate, InvalidSpecs) {
  DatasetSpec spec = blobs_spec(3, 0.1, 20);
  Rng rng(1, "bad");
  EXPECT_THROW(generate(spec, rng), std::invalid_argument);
  spec = blobs_spec(3, 0.1);
  spec.generator = Generator::kMoons;
  EXPECT_THROW(generate(spec, rng), std::invalid_argument);
  EXPECT_THROW(parse_generator("circles"), std::invalid_argument);
}

TEST(Generate, SeedIsolation) {
  TrainConfig cfg = sweep_config("isolation");
  TrainConfig other = cfg;
  other.dataset.seed = 99;
  EXPECT_TRUE(make_model(cfg, 5) == make_model(other, 5));
  Rng a = data_stream(cfg.dataset, 5), b = data_stream(other.dataset, 5);
  const Dataset x = generate(cfg.dataset, a), y = generate(other.dataset, b);
  EXPECT_NE(x.train.front().x, y.train.front().x);
}

TEST(Evaluate, CleanAccuracyAndZeroCorruption) {
  Rng rng(75, "eval");
  const MlpClassifier model = support::random_mlp(rng, 2, 3, 1.0);
  DatasetSpec spec = blobs_spec(model.num_classes(), 0.5);
  spec.n_features = model.input_dim();
  const Dataset data = generate(spec, rng);
  std::size_t correct = 0;
  for (const Example& ex : data.test) correct += argmax(model.forward(ex.x)) == ex.y;
  const double zero[] = {0.0};
  const EvalResult r = evaluate(model, data.test, zero, data.test, 10, 1);
  EXPECT_DOUBLE_EQ(r.clean_acc, static_cast<double>(correct) / data.test.size());
  EXPECT_DOUBLE_EQ(r.corrupt_acc[0], r.clean_acc);
  EXPECT_DOUBLE_EQ(r.shift_acc, r.clean_acc);
}

TEST(Evaluate, WideMarginIgnoresSmallCorruption) {
  // Logits 100·x₀ and −100·x₀ with every test point at |x₀| ≥ 0.5.
  const MlpClassifier model = support::linear_model(2, 2, {100, 0, -100, 0}, {0, 0});
  std::vector<Example> test;
  Rng rng(76, "margin");
  for (int i = 0; i < 50; ++i) {
    const double x0 = rng.uniform(0.5, 2.0);
    test.push_back({Tensor::vector({x0, rng.normal()}), 0});
    test.push_back({Tensor::vector({-x0, rng.normal()}), 1});
  }
  const double levels[] = {0.01, 0.05};
  const EvalResult r = evaluate(model, test, levels, test, 10, 3);
  EXPECT_EQ(r.clean_acc, 1.0);
  EXPECT_EQ(r.corrupt_acc[0], 1.0);
  EXPECT_EQ(r.corrupt_acc[1], 1.0);
  EXPECT_EQ(r.max_row_error_ratio, 1.0);
}

TEST(Evaluate, CorruptedAccuracyFallsWithNoise) {
  TrainConfig cfg = sweep_config("monotone");
  cfg.epochs = 20;
  Rng data_rng = data_stream(cfg.dataset, 1);
  const Dataset data = generate(cfg.dataset, data_rng);
  const TrainResult trained = train(make_model(cfg, 1), data.train, cfg, 1);
  const double levels[] = {0.0, 0.3, 0.6, 1.0, 2.0};
  std::vector<double> mean(5, 0.0);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const EvalResult r = evaluate(trained.model, data.test, levels, data.test, 10, seed);
    for (std::size_t k = 0; k < 5; ++k) mean[k] += r.corrupt_acc[k] / 10.0;
  }
  for (std::size_t k = 1; k < 5; ++k) EXPECT_LE(mean[k], mean[k - 1] + 1e-12) << "level " << levels[k];
}

TEST(Evaluate, MaxRowErrorRatio) {
  const std::vector<std::uint64_t> balanced{8, 2, 2, 8};
  EXPECT_DOUBLE_EQ(max_row_error_ratio(balanced, 2), 1.0);
  const std::vector<std::uint64_t> skewed{10, 0, 4, 6};
  EXPECT_DOUBLE_EQ(max_row_error_ratio(skewed, 2), 0.4 / 0.2);
  const std::vector<std::uint64_t> perfect{5, 0, 0, 5};
  EXPECT_DOUBLE_EQ(max_row_error_ratio(perfect, 2), 1.0);
}

TEST(Config, RoundTripsRandomConfigs) {
  Rng rng(77, "config");
  for (int trial = 0; trial < 300; ++trial) {
    const TrainConfig cfg = random_config(rng);
    ASSERT_NO_THROW(cfg.validate());
    const std::string text = serialize_config(cfg);
    const TrainConfig back = parse_config(text, "roundtrip");
    EXPECT_TRUE(back == cfg) << text;
    EXPECT_EQ(serialize_config(back), text);
  }
}

TEST(Config, UnknownKeyNamesTheLine) {
  try {
    parse_config("[experiment]\nepochs = 3\nepoch = 4\n", "bad.cfg");
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("bad.cfg:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
  EXPECT_THROW(parse_config("[nonsense]\n", "x"), std::invalid_argument);
  EXPECT_THROW(parse_config("[experiment]\nepochs = 0\n", "x"), std::invalid_argument);
  EXPECT_THROW(parse_config("[experiment]\nmethod = \"sgd\"\n", "x"), std::invalid_argument);
  EXPECT_THROW(parse_config("[method.tat]\nmethod = \"std\"\n", "x"), std::invalid_argument);
}

TEST(Config, MissingFileNamesThePath) {
  try {
    load_config("/nonexistent/missing.cfg");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("missing.cfg"), std::string::npos);
  }
}

TEST(Config, MethodOverridesApply) {
  const TrainConfig cfg = parse_config(
      "[experiment]\nalpha = 1.0\nmethods = [\"std\", \"tat\"]\n[method.tat]\nalpha = 0.25\nlinf_bound = 0.5\n");
  const TrainConfig tat = for_method(cfg, Method::kTat);
  EXPECT_EQ(tat.method, Method::kTat);
  EXPECT_EQ(tat.alpha, 0.25);
  EXPECT_EQ(tat.perturbation.linf_bound, 0.5);
  EXPECT_EQ(for_method(cfg, Method::kStd).alpha, 1.0);
}

TEST(Csv, HeaderAndRowShape) {
  const double levels[] = {0.1, 0.5};
  EXPECT_EQ(csv_header(levels),
            "run_id,method,seed,epoch,train_loss,reg_value,clean_acc,corrupt_acc_0.1,corrupt_acc_0.5,shift_acc,wall_ms\n");
  MetricsRecord r;
  r.run_id = "000-std-s1";
  r.method = "std";
  r.seed = 1;
  r.epoch = 2;
  r.corrupt_acc = {0.5, 0.25};
  const std::string row = csv_row(r);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 10);
  EXPECT_EQ(row.back(), '\n');
  EXPECT_EQ(row.rfind("000-std-s1,std,1,2,", 0), 0u);
}

TEST(Experiment, RowCountAndAccuracyRange) {
  const TrainConfig cfg = sweep_config("rows");
  const ExperimentResult r = run_experiment(cfg);
  ASSERT_EQ(r.runs.size(), 6u);
  const std::string csv = read_file(r.metrics_csv);
  EXPECT_EQ(count_lines(csv), 1u + 6u * 2u);
  for (const RunResult& run : r.runs) {
    for (const MetricsRecord& rec : run.records) {
      for (double a : rec.corrupt_acc) {
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
      }
      EXPECT_EQ(rec.wall_ms, 0.0);
    }
  }
  ASSERT_EQ(r.summary.size(), 2u);
  EXPECT_EQ(r.summary[0].runs, 3u);
}

TEST(Experiment, RerunIsByteIdentical) {
  TrainConfig cfg = sweep_config("bytes");
  cfg.methods = {Method::kStd, Method::kVat, Method::kTat};
  const std::string a = read_file(run_experiment(cfg).metrics_csv);
  const std::string b = read_file(run_experiment(cfg).metrics_csv);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  ExperimentOptions one;
  one.threads = 1;
  EXPECT_EQ(read_file(run_experiment(cfg, one).metrics_csv), a);
}

TEST(Experiment, OutputDirectoryOverride) {
  TrainConfig cfg = sweep_config("where");
  const char* env = std::getenv("ROBUST_OUTPUT_DIR");
  const std::filesystem::path base = env ? env : cfg.output_dir;
  EXPECT_EQ(output_directory(cfg), base / "where");
}

TEST(Experiment, UnwritableDirectoryNamesThePath) {
  TrainConfig cfg = sweep_config("io");
  cfg.seeds = {1};
  cfg.methods = {Method::kStd};
  cfg.epochs = 1;
  const char* env = std::getenv("ROBUST_OUTPUT_DIR");
  const std::string saved = env ? env : "";
  setenv("ROBUST_OUTPUT_DIR", "/proc/definitely/not/writable", 1);
  try {
    run_experiment(cfg);
    ADD_FAILURE() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("/proc/definitely/not/writable"), std::string::npos) << e.what();
  }
  if (env) {
    setenv("ROBUST_OUTPUT_DIR", saved.c_str(), 1);
  } else {
    unsetenv("ROBUST_OUTPUT_DIR");
  }
}
