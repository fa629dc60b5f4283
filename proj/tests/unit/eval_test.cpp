#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sharpen_focus/data/synth.hpp"
#include "sharpen_focus/eval/evaluate.hpp"
#include "sharpen_focus/eval/heatmap.hpp"
#include "sharpen_focus/eval/metrics.hpp"

namespace fs = std::filesystem;
namespace ev = sharpen_focus::eval;
namespace ad = sharpen_focus::ad;
namespace nn = sharpen_focus::nn;
namespace data = sharpen_focus::data;

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Every sample is ranked by counting the samples placed ahead of it.
double ap_oracle(const std::vector<double>& s, const std::vector<char>& y) {
  double total = 0;
  int positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++positives;
    int rank = 1, pos_at_or_before = 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool ahead = s[j] > s[i] || (s[j] == s[i] && j < i);
      rank += ahead;
      pos_at_or_before += ahead && y[j];
    }
    total += static_cast<double>(pos_at_or_before) / rank;
  }
  return total / positives;
}

double auc_oracle(const std::vector<double>& s, const std::vector<char>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return wins / pairs;
}

// Largest CDF gap over every sample point, each CDF counted directly.
double ks_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double best = 0;
  for (const auto* pts : {&a, &b})
    for (double t : *pts) {
      double fa = 0, fb = 0;
      for (double x : a) fa += x <= t;
      for (double x : b) fb += x <= t;
      best = std::max(best, std::abs(fa / a.size() - fb / b.size()));
    }
  return best;
}

}  // namespace

TEST(TopK, Examples) {
  const std::vector<double> onehot{1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (std::size_t k = 1; k <= 3; ++k) {
    EXPECT_EQ(ev::topk_accuracy(onehot, 3, std::vector<int>{0, 1, 2}, k), 1.0);
  }
  const std::vector<double> flat(16, 0.25);
  EXPECT_EQ(ev::topk_accuracy(flat, 4, std::vector<int>{0, 1, 2, 3}, 4), 1.0);
  EXPECT_EQ(ev::topk_accuracy(flat, 4, std::vector<int>{0, 1, 2, 3}, 1), 0.25);  // ties -> class 0

  // Five samples over 4 classes, counted by hand:
  //   s0 ranks [1,0,2,3] label 0: top1 miss, top2 hit
  //   s1 ranks [3,2,1,0] label 1: top2 miss, top3 hit
  //   s2 ranks [2,...]   label 2: top1 hit
  //   s3 tie 0/1 then 2  label 1: top1 miss (tie to 0), top2 hit
  //   s4 ranks [0,3,..]  label 3: top2 hit
  const std::vector<double> s{0.3, 0.4, 0.2, 0.1,  0.1, 0.2, 0.3, 0.4,  0.1, 0.2, 0.6, 0.1,
                              0.4, 0.4, 0.15, 0.05, 0.5, 0.1, 0.1, 0.3};
  const std::vector<int> y{0, 1, 2, 1, 3};
  EXPECT_DOUBLE_EQ(ev::topk_accuracy(s, 4, y, 1), 1.0 / 5);
  EXPECT_DOUBLE_EQ(ev::topk_accuracy(s, 4, y, 2), 4.0 / 5);
  EXPECT_DOUBLE_EQ(ev::topk_accuracy(s, 4, y, 3), 1.0);
  EXPECT_THROW(ev::topk_accuracy(s, 4, y, 5), sharpen_focus::DomainError);
}

TEST(AveragePrecision, ExamplesAndOracle) {
  EXPECT_EQ(ev::average_precision({0.9, 0.8, 0.1, 0.05}, {1, 1, 0, 0}), 1.0);
  EXPECT_EQ(ev::average_precision({0.9, 0.2}, {0, 1}), 0.5);
  EXPECT_EQ(ev::average_precision({0.5, 0.5}, {0, 1}), 0.5);  // tie -> lower index first
  EXPECT_THROW(ev::average_precision({0.5}, {0}), sharpen_focus::DomainError);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<double> s = uniform(rng, n);
    for (double& x : s) x = std::round(x * 8) / 8;  // force ties
    std::vector<char> y(n);
    for (auto& v : y) v = rng() % 3 == 0;
    y[rng() % n] = 1;
    const double ap = ev::average_precision(s, y);
    EXPECT_NEAR(ap, ap_oracle(s, y), 1e-14);
    std::vector<double> t = s;
    for (double& x : t) x = std::exp(3 * x) - 7;
    EXPECT_NEAR(ev::average_precision(t, y), ap, 1e-14);
  }
}

TEST(Auc, MatchesPairOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<double> s = uniform(rng, n);
    for (double& x : s) x = std::round(x * 6) / 6;
    std::vector<char> y(n);
    for (auto& v : y) v = rng() % 2;
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(ev::roc_auc(s, y), auc_oracle(s, y), 1e-14);
  }
  const std::vector<std::vector<int>> labels{{0}, {1}, {1}};
  const auto per = ev::auc_per_class({0.9, 0.1, 0.2, 0.8, 0.4, 0.6}, 2, labels);
  EXPECT_EQ(per.values[0], 1.0);
  EXPECT_EQ(per.values[1], 1.0);
}

TEST(Ks, Examples) {
  const std::vector<double> a{0.1, 0.4, 0.7};
  EXPECT_EQ(ev::ks_chart(a, a).ks, 0.0);
  EXPECT_EQ(ev::ks_chart(a, a).ks_grid, 0.0);
  const auto full = ev::ks_chart({1.0, 1.0}, {0.0, 0.0, 0.0});
  EXPECT_EQ(full.ks, 1.0);
  EXPECT_EQ(full.ks_grid, 1.0);
  EXPECT_THROW(ev::ks_chart({}, a), sharpen_focus::DomainError);
  EXPECT_THROW(ev::ks_chart({1.5}, a), sharpen_focus::DomainError);
}

TEST(Ks, ExactStatisticMatchesBruteForce) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = uniform(rng, 1000), b = uniform(rng, 1000);
    for (double& x : b) x = std::pow(x, 1.3);
    for (std::size_t i = 0; i < 50; ++i) b[i] = a[i];  // shared points
    const auto k = ev::ks_chart(a, b, 101);
    EXPECT_EQ(k.ks, ks_oracle(a, b));
    EXPECT_GE(k.ks, k.ks_grid);
    EXPECT_LE(k.ks, 1.0);
    EXPECT_EQ(k.gap.front(), 0.0);
    EXPECT_EQ(k.gap.back(), 0.0);

    // Strictly monotone transform of both samples.
    for (double& x : a) x = std::sqrt(x);
    for (double& x : b) x = std::sqrt(x);
    EXPECT_EQ(ev::ks_statistic(a, b).first, k.ks);
  }
}

TEST(Heatmap, NormalizationAndRoundTrip) {
  const auto dir = fs::temp_directory_path() / "sf_heatmap_test";
  fs::create_directories(dir);
  const ad::Tensor constant = ad::Tensor::full({2, 2}, 0.3);
  ev::export_heatmap(constant, 8, dir / "c.pgm");
  for (double p : data::read_pnm(dir / "c.pgm").pixels) EXPECT_EQ(p, 1.0);
  ev::export_heatmap(ad::Tensor::zeros({2, 2}), 8, dir / "z.pgm");
  for (double p : data::read_pnm(dir / "z.pgm").pixels) EXPECT_EQ(p, 0.0);

  const ad::Tensor map({2, 3}, {0, 1, 2, 3, 4, 8});
  const auto before = map.vec();
  ev::export_heatmap(map, 9, dir / "m.pgm");
  ev::export_heatmap(map, 9, dir / "m.ppm", true);
  EXPECT_EQ(map.vec(), before);
  const auto values = ev::heatmap_values(map, 9);
  const auto gray = data::read_pnm(dir / "m.pgm");
  const auto color = data::read_pnm(dir / "m.ppm");
  ASSERT_EQ(gray.pixels.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    EXPECT_EQ(gray.pixels[i], data::quantize(values[i]) / 255.0);
    const auto rgb = ev::colormap(data::quantize(values[i]));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(color.pixels[c * values.size() + i], rgb[c] / 255.0);
  }
  EXPECT_EQ(ev::colormap(0), (std::array<std::uint8_t, 3>{0, 0, 255}));
  EXPECT_EQ(ev::colormap(255), (std::array<std::uint8_t, 3>{255, 0, 0}));
  EXPECT_THROW(ev::heatmap_values(ad::Tensor({1, 2}, {-1, 1}), 4), sharpen_focus::DomainError);
  fs::remove_all(dir);
}

namespace {

nn::ParameterSet small_model(std::uint64_t seed) {
  nn::ModelConfig c;
  c.channels = {4, 8};
  c.input_size = 32;
  c.classes = 4;
  return nn::build_model(c, seed);
}

}  // namespace

TEST(Evaluate, ZeroHeadSkipsEverything) {
  auto p = small_model(1);
  ad::Tensor& head = p.values[p.values.size() - 2];
  head = ad::Tensor::zeros(head.shape());
  const auto ds = data::generate_synth({}, 3).data;
  const auto e = ev::evaluate(p, ds, {});
  EXPECT_EQ(e.skip_rate(), 1.0);
  EXPECT_TRUE(std::isnan(e.mean_las_last()));
}

TEST(Evaluate, DeterministicAcrossRunsAndThreadCounts) {
  const auto p = small_model(2);
  const auto ds = data::generate_synth({}, 6).data;
  ev::EvalOptions o;
  o.batch_size = 5;
  setenv(sharpen_focus::util::kThreadsEnv, "1", 1);
  const auto a = ev::evaluate(p, ds, o);
  setenv(sharpen_focus::util::kThreadsEnv, "3", 1);
  const auto b = ev::evaluate(p, ds, o);
  unsetenv(sharpen_focus::util::kThreadsEnv);
  EXPECT_EQ(a.probabilities, b.probabilities);
  EXPECT_EQ(a.confusing, b.confusing);
  EXPECT_EQ(a.skipped, b.skipped);
  const auto ra = ev::metric_rows(a), rb = ev::metric_rows(b);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].metric, rb[i].metric);
    EXPECT_TRUE(ra[i].value == rb[i].value || (std::isnan(ra[i].value) && std::isnan(rb[i].value)));
  }
  for (std::size_t n = 0; n < a.size(); ++n) {
    if (a.skipped[n]) continue;
    EXPECT_GE(a.las_last[n], 0.0);
    EXPECT_LE(a.las_last[n], 1.0);
    EXPECT_NE(a.confusing[n], a.labels[n][0]);
  }
  setenv(sharpen_focus::util::kThreadsEnv, "zero", 1);
  EXPECT_THROW(ev::evaluate(p, ds, o), sharpen_focus::ConfigError);
  unsetenv(sharpen_focus::util::kThreadsEnv);
}
