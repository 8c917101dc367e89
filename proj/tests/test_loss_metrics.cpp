#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "sranet/loss_metrics.hpp"
#include "sranet/ops.hpp"
#include "support/oracles.hpp"

using sranet::Shape;
using sranet::Tape;
using sranet::Tensor;
namespace loss = sranet::loss;
namespace metrics = sranet::metrics;

TEST_CASE("cross_entropy") {
  CHECK(loss::cross_entropy(1.0 - 1e-7, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(loss::cross_entropy(0.5, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(loss::cross_entropy(0.5, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  // clamping keeps the loss finite at the ends
  CHECK(loss::cross_entropy(0.0, 1) == doctest::Approx(-std::log(1e-7)));
  CHECK(std::isfinite(loss::cross_entropy(1.0, 0)));
  CHECK_THROWS_AS(loss::cross_entropy(0.3, 2), std::invalid_argument);

  std::mt19937_64 rng(21);
  for (int i = 0; i < 50; ++i) {
    const double p = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
    const int y = i % 2;
    CHECK(loss::cross_entropy(p, y) >= 0.0);
    CHECK(std::abs(loss::cross_entropy(p, y) - oracle::bce(p, y)) <= 1e-12);
    Tape<double> tape;
    CHECK(loss::cross_entropy(tape, Tensor<double>::scalar(p), y).item() == doctest::Approx(oracle::bce(p, y)));
  }
}

TEST_CASE("structure_loss") {
  const std::vector<std::uint8_t> one{1};
  CHECK(loss::structure_loss(std::vector<double>{20.0}, one) < 1e-8);
  const std::vector<double> zeros(6, 0.0);
  for (const auto& f : {std::vector<std::uint8_t>{0, 0, 0, 0, 0, 0}, std::vector<std::uint8_t>{1, 0, 1, 1, 0, 1}}) {
    CHECK(loss::structure_loss(zeros, f) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(loss::structure_loss(zeros, one), std::invalid_argument);

  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + std::size_t(trial);
    const auto g = oracle::random_vector(n, rng, -6.0, 6.0);
    std::vector<std::uint8_t> f(n);
    for (auto& v : f) v = std::uint8_t(rng() % 2);
    double expected = 0.0;
    for (std::size_t i = 0; i < n; ++i) expected += oracle::bce(oracle::sigmoid(g[i]), f[i]);
    expected /= double(n);
    CHECK(std::abs(loss::structure_loss(g, f) - expected) <= 1e-9);
    CHECK(loss::structure_loss(g, f) >= 0.0);
  }
}

TEST_CASE("total_loss") {
  CHECK(loss::total_loss(0.6, 0.2, 0.5) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(std::abs(loss::total_loss(0.8, 0.3, 0.999) - 0.8) <= 1e-3 * 0.8);
  for (double alpha : {0.01, 0.3, 0.77}) CHECK(loss::total_loss(1.25, 1.25, alpha) == doctest::Approx(1.25).epsilon(1e-15));
  for (double bad : {0.0, 1.0, -0.2, 1.5}) CHECK_THROWS_AS(loss::validate_alpha(bad), std::invalid_argument);
  CHECK_THROWS_AS(loss::total_loss(0.1, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(23);
  const std::size_t n = 9;
  auto g = Tensor<double>(Shape{n}, oracle::random_vector(n, rng, -2.0, 2.0), true);
  auto logit = Tensor<double>::scalar(0.3, true);
  std::vector<std::uint8_t> f(n);
  for (auto& v : f) v = std::uint8_t(rng() % 2);
  auto result = oracle::gradcheck({g, logit}, [&](Tape<double>& tape) {
    auto p = sranet::ops::sigmoid(tape, logit);
    auto lc = loss::cross_entropy(tape, p, 1);
    auto ls = loss::structure_loss(tape, g, f);
    return loss::total_loss(tape, lc, ls, 0.35);
  });
  CHECK(result.checked == n + 1);
  CHECK(result.max_rel_error <= 1e-5);

  // directly in p, away from the clamp
  auto p = Tensor<double>::scalar(0.27, true);
  auto direct = oracle::gradcheck({p}, [&](Tape<double>& tape) { return loss::cross_entropy(tape, p, 0); }, 1e-5);
  CHECK(direct.max_rel_error <= 1e-5);
}

TEST_CASE("confusion and rates") {
  CHECK(metrics::confusion(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == metrics::Confusion{1, 1, 0, 0});
  CHECK(metrics::confusion(std::vector<double>{0.9, 0.9}, std::vector<int>{1, 0}) == metrics::Confusion{1, 0, 1, 0});
  // a score equal to the threshold counts as positive
  CHECK(metrics::confusion(std::vector<double>{0.5}, std::vector<int>{0}).fp == 1);
  CHECK_THROWS_AS(metrics::confusion(std::vector<double>{}, std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(metrics::confusion(std::vector<double>{0.2}, std::vector<int>{1, 0}), std::invalid_argument);

  const auto r = metrics::sen_spe_acc({3, 4, 1, 2});
  CHECK(*r.sensitivity == doctest::Approx(0.6));
  CHECK(*r.specificity == doctest::Approx(0.8));
  CHECK(r.accuracy == doctest::Approx(0.7));
  const auto perfect = metrics::sen_spe_acc({5, 7, 0, 0});
  CHECK(*perfect.sensitivity == 1.0);
  CHECK(*perfect.specificity == 1.0);
  CHECK(perfect.accuracy == 1.0);
  const auto no_neg = metrics::sen_spe_acc({2, 0, 0, 1});
  CHECK_FALSE(no_neg.specificity.has_value());
  CHECK_THROWS_AS(metrics::sen_spe_acc({0, 0, 0, 0}), std::invalid_argument);

  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + std::size_t(trial);
    const auto scores = oracle::random_vector(n, rng, 0.0, 1.0);
    std::vector<int> labels(n), flipped(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = int(rng() % 2);
      flipped[i] = 1 - labels[i];
    }
    const auto c = metrics::confusion(scores, labels);
    const auto d = metrics::confusion(scores, flipped);
    CHECK(c.total() == n);
    CHECK(c.tp == d.fp);
    CHECK(c.fn == d.tn);
    CHECK(c.fp == d.tp);
    CHECK(c.tn == d.fn);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) tp += labels[i] == 1 && scores[i] >= 0.5;
    CHECK(c.tp == tp);
  }
}

TEST_CASE("roc and auc") {
  const std::vector<int> labels{0, 0, 1, 1, 0, 1};
  CHECK(metrics::roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9, 0.3, 0.7}, labels).auc == 1.0);
  CHECK(metrics::roc_auc(std::vector<double>(6, 0.4), labels).auc == 0.5);
  CHECK_THROWS_AS(metrics::roc_auc(std::vector<double>{0.3, 0.6}, std::vector<int>{1, 1}), std::invalid_argument);

  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 20;
    auto scores = oracle::random_vector(n, rng, 0.0, 1.0);
    for (auto& s : scores) s = std::round(s * 8.0) / 8.0;  // force ties
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = int(i % 3 == 0 || rng() % 2);
    y[0] = 0;
    y[1] = 1;
    const auto roc = metrics::roc_auc(scores, y);
    CHECK(std::abs(roc.auc - oracle::mann_whitney_auc(scores, y)) <= 1e-9);
    REQUIRE(roc.points.size() >= 2);
    CHECK(roc.points.front() == std::pair<double, double>{0.0, 0.0});
    CHECK(roc.points.back() == std::pair<double, double>{1.0, 1.0});
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
      CHECK(roc.points[i].first >= roc.points[i - 1].first);
      CHECK(roc.points[i].second >= roc.points[i - 1].second);
    }
    // strictly increasing transforms leave the AUC unchanged
    std::vector<double> warped(n);
    for (std::size_t i = 0; i < n; ++i) warped[i] = std::exp(3.0 * scores[i]) - 7.0;
    CHECK(metrics::roc_auc(warped, y).auc == roc.auc);
  }
}

TEST_CASE("eval report") {
  const std::vector<double> scores{0.9, 0.2, 0.6, 0.4, 0.55};
  const std::vector<int> labels{1, 0, 1, 1, 0};
  const auto report = metrics::evaluate_scores(scores, labels);
  CHECK(report.counts == metrics::Confusion{2, 1, 1, 1});
  REQUIRE(report.auc.has_value());
  const auto j = metrics::to_json(report);
  for (const char* key : {"tp", "tn", "fp", "fn", "sensitivity", "specificity", "accuracy", "auc", "roc"}) {
    CHECK(j.contains(key));
  }
  CHECK(metrics::report_from_json(j) == report);

  const auto single = metrics::evaluate_scores(std::vector<double>{0.7, 0.2}, std::vector<int>{1, 1});
  CHECK_FALSE(single.auc.has_value());
  CHECK(metrics::to_json(single)["auc"].is_null());
  CHECK(metrics::to_json(single)["specificity"].is_null());
  CHECK(single.accuracy == 0.5);
}
