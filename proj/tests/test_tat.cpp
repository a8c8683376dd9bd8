#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "robust/data.hpp"
#include "robust/tally.hpp"
#include "robust/trainer.hpp"
#include "support.hpp"

using namespace robust;
using robust::support::rel_error;

namespace {

std::vector<double> frequencies(const ErrorTally& t, std::size_t y, std::size_t draws, Rng& rng) {
  std::vector<double> f(t.num_classes(), 0.0);
  for (std::size_t i = 0; i < draws; ++i) f[t.sample_target(y, rng)] += 1.0;
  for (double& v : f) v /= static_cast<double>(draws);
  return f;
}

TrainConfig blobs_config(Method method) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.epochs = 5;
  cfg.dataset.generator = Generator::kBlobs;
  cfg.dataset.n_points = 200;
  cfg.dataset.noise = 0.3;
  cfg.perturbation.noise_scale = 0.1;
  return cfg;
}

Dataset blobs(const TrainConfig& cfg, std::uint64_t seed) {
  Rng rng = data_stream(cfg.dataset, seed);
  return generate(cfg.dataset, rng);
}

}  // namespace

TEST(Tally, UniformInitialization) {
  Rng rng(51, "tally");
  const ErrorTally t3 = ErrorTally::uniform(3);
  EXPECT_EQ(t3.target_distribution(0), (std::vector<double>{0.0, 0.5, 0.5}));
  const ErrorTally t2 = ErrorTally::uniform(2);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(t2.sample_target(0, rng), 1u);
  const ErrorTally t4 = ErrorTally::uniform(4);
  const auto f = frequencies(t4, 2, 10000, rng);
  for (std::size_t k : {0u, 1u, 3u}) EXPECT_NEAR(f[k], 1.0 / 3.0, 0.02);
  EXPECT_EQ(f[2], 0.0);
  EXPECT_THROW(ErrorTally::uniform(1), std::invalid_argument);
}

TEST(Tally, RecordCountsOnlyErrors) {
  ErrorTally t = ErrorTally::uniform(3);
  t.record(0, 0);
  EXPECT_EQ(t.buffered_errors(), 0u);
  t.record(0, 1);
  t.record(0, 1);
  EXPECT_EQ(t.buffered(0, 1), 2u);
  EXPECT_THROW(t.record(0, 3), std::out_of_range);
}

TEST(Tally, ConservationUnderRandomRecords) {
  Rng rng(52, "conserve");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng.index(5);
    ErrorTally t = ErrorTally::uniform(m);
    std::vector<std::uint64_t> per_gold(m, 0);
    std::uint64_t errors = 0;
    for (int i = 0; i < 500; ++i) {
      const std::size_t gold = rng.index(m);
      const std::size_t pred = rng.index(m);
      t.record(gold, pred);
      if (gold != pred) {
        ++errors;
        ++per_gold[gold];
      }
    }
    EXPECT_EQ(t.buffered_errors(), errors);
    for (std::size_t y = 0; y < m; ++y) {
      std::uint64_t row = 0;
      for (std::size_t k = 0; k < m; ++k) row += t.buffered(y, k);
      EXPECT_EQ(row, per_gold[y]);
      EXPECT_EQ(t.buffered(y, y), 0u);
    }
    t.commit();
    EXPECT_EQ(t.buffered_errors(), 0u);
  }
}

TEST(Tally, CommitAppliesSmoothing) {
  ErrorTally t = ErrorTally::uniform(3);
  t.record(0, 1);
  t.record(0, 1);
  for (int i = 0; i < 6; ++i) t.record(0, 2);
  t.commit();
  const auto d = t.target_distribution(0);
  EXPECT_DOUBLE_EQ(d[1], 0.3);
  EXPECT_DOUBLE_EQ(d[2], 0.7);
  EXPECT_EQ(t.target_distribution(1), (std::vector<double>{0.5, 0.0, 0.5}));

  ErrorTally a = ErrorTally::uniform(3), b = ErrorTally::uniform(3);
  for (ErrorTally* x : {&a, &b}) {
    x->record(2, 0);
    x->record(1, 2);
    x->commit();
  }
  EXPECT_EQ(a.active_weights(), b.active_weights());
}

TEST(Tally, ZeroBufferCommitIsUniform) {
  ErrorTally t = ErrorTally::uniform(4);
  t.record(1, 3);
  t.commit();
  t.commit();
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(t.target_distribution(y)[k], y == k ? 0.0 : 1.0 / 3.0);
  }
}

TEST(Tally, MomentumBlendsWithPreviousWeights) {
  ErrorTally t = ErrorTally::uniform(2, 1.0, 0.5);
  for (int i = 0; i < 4; ++i) t.record(0, 1);
  t.commit();
  EXPECT_DOUBLE_EQ(t.active(0, 1), 0.5 * 1.0 + 0.5 * 5.0);
}

TEST(SampleTarget, MatchesActiveRow) {
  ErrorTally t = ErrorTally::uniform(3);
  t.set_active({0, 3, 1, 1, 0, 1, 1, 1, 0});
  Rng rng(53, "sample");
  const auto f = frequencies(t, 0, 100000, rng);
  EXPECT_NEAR(f[1], 0.75, 0.01);
  EXPECT_NEAR(f[2], 0.25, 0.01);
}

TEST(SampleTarget, NeverReturnsGold) {
  Rng rng(54, "support");
  ErrorTally t = ErrorTally::uniform(5);
  for (int i = 0; i < 1000000; ++i) {
    const std::size_t y = static_cast<std::size_t>(i % 5);
    ASSERT_NE(t.sample_target(y, rng), y);
  }
}

TEST(SampleTarget, ChiSquareAgainstCommittedLaw) {
  Rng rng(55, "chi");
  for (std::size_t m : {3u, 4u}) {
    ErrorTally t = ErrorTally::uniform(m);
    for (int i = 0; i < 200; ++i) t.record(rng.index(m), rng.index(m));
    t.commit();
    for (std::size_t y = 0; y < m; ++y) {
      const std::size_t draws = 100000;
      const auto law = t.target_distribution(y);
      const auto f = frequencies(t, y, draws, rng);
      double stat = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        if (k == y) continue;
        const double expected = law[k] * static_cast<double>(draws);
        const double observed = f[k] * static_cast<double>(draws);
        stat += (observed - expected) * (observed - expected) / expected;
      }
      const boost::math::chi_squared dist(static_cast<double>(m - 2));
      EXPECT_LT(stat, boost::math::quantile(dist, 0.999)) << "m=" << m << " y=" << y;
    }
  }
}

TEST(RegressionBinner, QuantizeAndSample) {
  const RegressionBinner b{0.0, 5.0, 10};
  EXPECT_EQ(b.quantize(2.4), 4u);
  EXPECT_EQ(b.quantize(5.0), 9u);
  EXPECT_EQ(b.quantize(-1.0), 0u);
  EXPECT_EQ(b.quantize(1e9), 9u);
  Rng rng(56, "bins");
  double total = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = b.sample(4, rng);
    ASSERT_GE(v, 2.0);
    ASSERT_LT(v, 2.5);
    total += v;
  }
  EXPECT_NEAR(total / 10000.0, 2.25, 0.01);
  EXPECT_THROW((RegressionBinner{1.0, 1.0, 10}.validate()), std::invalid_argument);
  EXPECT_THROW((RegressionBinner{0.0, 1.0, 1}.validate()), std::invalid_argument);
}

TEST(RegressionBinner, SampledValuesQuantizeBack) {
  Rng rng(57, "bins-roundtrip");
  const RegressionBinner b{-2.0, 3.0, 10};
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = rng.index(10);
    EXPECT_EQ(b.quantize(b.sample(k, rng)), k);
  }
}

TEST(TatStep, MatchesHandTrace) {
  Rng rng(58, "trace");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 2 + rng.index(3);
    const std::size_t n = 1 + rng.index(3);
    std::vector<double> w(m * n), bias(m);
    for (double& v : w) v = rng.normal();
    for (double& v : bias) v = 0.5 * rng.normal();
    const MlpClassifier model = support::linear_model(m, n, w, bias);
    const Example ex{support::random_point(n, rng), rng.index(m)};

    TrainConfig cfg;
    cfg.alpha = 1.0;
    cfg.learning_rate = 0.1;
    cfg.perturbation.inner_steps = 1;
    cfg.perturbation.init_sigma = 0.0;
    cfg.perturbation.step_size = 0.5;
    cfg.perturbation.linf_bound = 0.2;
    cfg.dataset.n_classes = m;
    cfg.dataset.n_features = n;
    const std::uint64_t seed = 1000 + trial;

    RunStreams replay(seed);
    const std::size_t target = ErrorTally::uniform(m).sample_target(ex.y, replay.tally);
    const std::vector<double> expected = support::hand_traced_tat_step(model, ex.x, ex.y, target, cfg);

    TrainState state(model, cfg, seed);
    tat_train_step(state, std::span<const Example>(&ex, 1), cfg);
    EXPECT_LE(rel_error(state.model.flat_parameters(), expected, 1.0), 1e-10) << "trial " << trial;
  }
}

TEST(TatStep, ZeroAlphaEqualsStandardStepBitwise) {
  TrainConfig cfg = blobs_config(Method::kTat);
  cfg.alpha = 0.0;
  const Dataset data = blobs(cfg, 3);
  const MlpClassifier model = make_model(cfg, 3);
  TrainState a(model, cfg, 3), b(model, cfg, 3);
  TrainConfig std_cfg = cfg;
  std_cfg.method = Method::kStd;
  const std::span<const Example> batch(data.train.data(), 16);
  tat_train_step(a, batch, cfg);
  train_step(b, batch, std_cfg);
  EXPECT_EQ(a.model.flat_parameters(), b.model.flat_parameters());
}

TEST(TatStep, SmallStepLimitIsTheCleanGradient) {
  Rng rng(59, "limit");
  const MlpClassifier model = support::random_mlp(rng, 3, 3, 0.8);
  const Tensor x = support::random_point(model.input_dim(), rng);
  TrainConfig cfg;
  cfg.perturbation.init_sigma = 0.0;
  Rng adv(1, "adv");
  const std::vector<double> zero(x.size(), 0.0);
  const auto at_zero = tat_objective(model, x, 0, zero, cfg).parameter_gradient;
  double previous = INFINITY;
  for (double eta : {1e-2, 1e-3, 1e-4}) {
    cfg.perturbation.step_size = eta;
    cfg.perturbation.linf_bound = 1.0;
    const auto delta = targeted_pgd(model, x, 1, cfg.perturbation, adv);
    const double err = rel_error(tat_objective(model, x, 0, delta, cfg).parameter_gradient, at_zero);
    EXPECT_LT(err, previous);
    previous = err;
  }
  EXPECT_LT(previous, 1e-3);
}

TEST(TatObjective, GradientsMatchFiniteDifferences) {
  Rng rng(60, "tat-grad");
  for (Divergence d : {Divergence::kKl, Divergence::kSymmetricKl, Divergence::kKlDetachClean}) {
    for (int trial = 0; trial < 10; ++trial) {
      const MlpClassifier model = support::random_mlp(rng, 3, 3, 0.8);
      const Tensor x = support::random_point(model.input_dim(), rng);
      const std::size_t y = rng.index(model.num_classes());
      std::vector<double> delta(x.size());
      for (double& v : delta) v = 0.3 * rng.normal();
      std::vector<double> xa(x.size());
      for (std::size_t i = 0; i < xa.size(); ++i) xa[i] = x[i] + delta[i];
      TrainConfig cfg;
      cfg.alpha = 0.7;
      cfg.tat.divergence = d;
      const Tensor p0 = model.forward(x);
      const auto numeric = support::numeric_parameter_gradient(model, [&](const MlpClassifier& m) {
        const Tensor p = m.forward(x);
        const Tensor q = m.forward(Tensor::vector(xa));
        double div = 0.0;
        switch (d) {
          case Divergence::kKl: div = kl_divergence(p, q); break;
          case Divergence::kSymmetricKl: div = kl_divergence(p, q) + kl_divergence(q, p); break;
          case Divergence::kKlDetachClean: div = kl_divergence(p0, q); break;
        }
        return cross_entropy(p, y) + cfg.alpha * div;
      });
      const RegularizerValue r = tat_objective(model, x, y, delta, cfg);
      EXPECT_LE(rel_error(r.parameter_gradient, numeric), 1e-6) << to_string(d) << " trial " << trial;
    }
  }
}

TEST(Train, StandardReachesHighAccuracyOnBlobs) {
  TrainConfig cfg = blobs_config(Method::kStd);
  cfg.epochs = 200;
  const Dataset data = blobs(cfg, 1);
  bool reached = false;
  train(make_model(cfg, 1), data.train, cfg, 1, [&](const EpochStats& s, const MlpClassifier&) {
    reached = reached || s.train_accuracy >= 0.95;
  });
  EXPECT_TRUE(reached);
}

TEST(Train, LossDecreases) {
  TrainConfig cfg = blobs_config(Method::kTat);
  cfg.epochs = 1;
  cfg.batch_size = 1;
  const Dataset data = blobs(cfg, 2);
  const MlpClassifier start = make_model(cfg, 2);
  auto batch_loss = [&](const MlpClassifier& m) {
    double total = 0.0;
    for (const Example& ex : data.train) total += cross_entropy(m.forward(ex.x), ex.y);
    return total;
  };
  TrainState state(start, cfg, 2);
  for (int step = 0; step < 100; ++step) {
    const Example& ex = data.train[static_cast<std::size_t>(step) % data.train.size()];
    tat_train_step(state, std::span<const Example>(&ex, 1), cfg);
  }
  EXPECT_LT(batch_loss(state.model), batch_loss(start));
}

TEST(Train, PdmWithoutNoiseMatchesStandard) {
  TrainConfig pdm_cfg = blobs_config(Method::kPdm);
  pdm_cfg.perturbation.noise_scale = 0.0;
  TrainConfig std_cfg = pdm_cfg;
  std_cfg.method = Method::kStd;
  const Dataset data = blobs(std_cfg, 4);
  const TrainResult a = train(make_model(std_cfg, 4), data.train, std_cfg, 4);
  const TrainResult b = train(make_model(pdm_cfg, 4), data.train, pdm_cfg, 4);
  EXPECT_TRUE(a.model == b.model);
}

TEST(Train, TatWithZeroAlphaMatchesStandardTrajectory) {
  TrainConfig tat_cfg = blobs_config(Method::kTat);
  tat_cfg.alpha = 0.0;
  TrainConfig std_cfg = tat_cfg;
  std_cfg.method = Method::kStd;
  const Dataset data = blobs(std_cfg, 5);
  std::vector<std::vector<double>> std_traj, tat_traj;
  train(make_model(std_cfg, 5), data.train, std_cfg, 5,
        [&](const EpochStats&, const MlpClassifier& m) { std_traj.push_back(m.flat_parameters()); });
  train(make_model(tat_cfg, 5), data.train, tat_cfg, 5,
        [&](const EpochStats&, const MlpClassifier& m) { tat_traj.push_back(m.flat_parameters()); });
  EXPECT_EQ(std_traj, tat_traj);
}

TEST(Train, PublishedTatSettingsRun) {
  TrainConfig cfg = blobs_config(Method::kTat);
  cfg.alpha = 1.0;
  cfg.perturbation.linf_bound = 1e-5;
  cfg.perturbation.step_size = 1e-4;
  cfg.perturbation.inner_steps = 1;
  cfg.epochs = 10;
  const Dataset data = blobs(cfg, 6);
  const TrainResult r = train(make_model(cfg, 6), data.train, cfg, 6);
  ASSERT_EQ(r.epochs.size(), 10u);
  for (const EpochStats& s : r.epochs) {
    EXPECT_TRUE(std::isfinite(s.train_loss));
    EXPECT_GE(s.reg_value, 0.0);
  }
}

TEST(Train, EveryMethodIsDeterministic) {
  for (Method method : {Method::kStd, Method::kJr, Method::kVat, Method::kPdm, Method::kAdv, Method::kTat}) {
    TrainConfig cfg = blobs_config(method);
    cfg.epochs = 2;
    cfg.perturbation.linf_bound = 0.1;
    cfg.perturbation.step_size = 0.1;
    const Dataset data = blobs(cfg, 7);
    const TrainResult a = train(make_model(cfg, 7), data.train, cfg, 7);
    const TrainResult b = train(make_model(cfg, 7), data.train, cfg, 7);
    EXPECT_TRUE(a.model == b.model) << to_string(method);
    EXPECT_EQ(a.tally.active_weights(), b.tally.active_weights());
    for (std::size_t e = 0; e < a.epochs.size(); ++e) {
      EXPECT_EQ(a.epochs[e].train_loss, b.epochs[e].train_loss);
      EXPECT_EQ(a.epochs[e].reg_value, b.epochs[e].reg_value);
    }
  }
}

TEST(Train, EpochTallyCountsMatchTrainErrors) {
  TrainConfig cfg = blobs_config(Method::kTat);
  cfg.dataset.n_classes = 3;
  cfg.dataset.noise = 1.0;
  const Dataset data = blobs(cfg, 8);
  train(make_model(cfg, 8), data.train, cfg, 8, [&](const EpochStats& s, const MlpClassifier&) {
    std::uint64_t errors = 0;
    for (auto c : s.tally_counts) errors += c;
    const double expected = (1.0 - s.train_accuracy) * static_cast<double>(data.train.size());
    EXPECT_NEAR(static_cast<double>(errors), expected, 1e-6);
  });
}

TEST(Train, InvalidMethodListsChoices) {
  try {
    parse_method("sgd");
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("valid: std, jr, vat, pdm, adv, tat"), std::string::npos);
  }
  EXPECT_EQ(parse_method("tat"), Method::kTat);
  EXPECT_THROW(parse_divergence("js"), std::invalid_argument);
}

TEST(Train, RejectsNegativeAlpha) {
  TrainConfig cfg = blobs_config(Method::kJr);
  cfg.alpha = -1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}
