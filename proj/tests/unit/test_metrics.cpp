#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "fixtures.hpp"

using namespace glcal;
using doctest::Approx;

namespace {

Prediction pred(std::vector<std::vector<double>> rows, Labels labels) {
  Matrix p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return Prediction(std::move(p), std::move(labels));
}

// Binary predictions whose top-1 score is `conf` and whose label is correct or not.
Prediction binary_conf(const std::vector<double>& conf, const std::vector<int>& correct) {
  std::vector<std::vector<double>> rows;
  Labels labels;
  for (std::size_t i = 0; i < conf.size(); ++i) {
    rows.push_back({conf[i], 1.0 - conf[i]});
    labels.push_back(correct[i] ? 0 : 1);
  }
  return pred(rows, labels);
}

}  // namespace

TEST_CASE("Prediction validates rows and labels") {
  CHECK_THROWS_AS(pred({{0.5, 0.6}}, {0}), ValidationError);
  CHECK_THROWS_AS(pred({{0.5, 0.5}}, {2}), ValidationError);
  CHECK_THROWS_AS(pred({{1.5, -0.5}}, {0}), ValidationError);
  CHECK_NOTHROW(pred({{0.5, 0.5 + 1e-7}}, {0}));
}

TEST_CASE("top1_ks examples") {
  // All scores 1.0 and one mistake: KS = 1 - accuracy wherever the mistake sits.
  for (int wrong = 0; wrong < 10; ++wrong) {
    std::vector<std::vector<double>> rows(10, {1.0, 0.0});
    Labels labels(10, 0);
    labels[static_cast<std::size_t>(wrong)] = 1;
    CHECK(top1_ks(pred(rows, labels)) == Approx(0.1).epsilon(1e-12));
  }
  // Both tie orders give 0.25.
  CHECK(top1_ks(binary_conf({0.5, 0.5}, {1, 0})) == Approx(0.25).epsilon(1e-15));
  CHECK(top1_ks(binary_conf({0.5, 0.5}, {0, 1})) == Approx(0.25).epsilon(1e-15));
  // Calibrated construction: each prefix's scores sum to its correct count.
  CHECK(top1_ks(binary_conf({1.0, 1.0, 1.0}, {1, 1, 1})) == 0.0);
  // Calibrated overall but not per prefix: the first row misses by 0.75 / 4.
  CHECK(top1_ks(binary_conf({0.75, 0.75, 0.75, 0.75}, {0, 1, 1, 1})) == Approx(0.1875).epsilon(1e-12));
}

TEST_CASE("topr_ks examples") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto p = fixtures::random_prediction(rng, 50, 4, t % 2 == 0);
    CHECK(topr_ks(p, 1) == top1_ks(p));
    CHECK(within_topr_ks(p, 1) == top1_ks(p));
  }
  // B=1: label is the second-ranked class.
  CHECK(topr_ks(pred({{0.7, 0.3}}, {1}), 2) == Approx(0.7).epsilon(1e-15));
  CHECK_THROWS_AS(topr_ks(pred({{0.7, 0.3}}, {1}), 3), ValidationError);
  CHECK_THROWS_AS(topr_ks(pred({{0.7, 0.3}}, {1}), 0), ValidationError);
  CHECK_THROWS_AS(within_topr_ks(pred({{0.7, 0.3}}, {1}), 3), ValidationError);
}

TEST_CASE("uniform predictor with uniform labels has small top-r KS") {
  const int b = 100000;
  Matrix probs = Matrix::Constant(b, 4, 0.25);
  Rng rng(2024);
  Labels labels(b);
  for (auto& y : labels) y = static_cast<int>(rng.below(4));
  const Prediction p(probs, labels);
  for (int r = 1; r <= 4; ++r) CHECK(topr_ks(p, r) <= 0.01);
}

TEST_CASE("within_topr_ks with r = n is zero") {
  Rng rng(3);
  const auto p = fixtures::random_prediction(rng, 200, 5, false);
  CHECK(within_topr_ks(p, 5) <= 1e-12);
}

TEST_CASE("rank_classes breaks ties by class index") {
  Matrix p(1, 4);
  p << 0.25, 0.375, 0.25, 0.125;
  CHECK(rank_classes(p, 0) == std::vector<int>{1, 0, 2, 3});
}

TEST_CASE("ece examples") {
  // One bin: |mean confidence - accuracy|.
  const auto one = binary_conf({0.9, 0.7, 0.8, 0.8, 0.8}, {1, 1, 1, 0, 0});
  CHECK(ece(one, 1) == Approx(0.2).epsilon(1e-12));
  CHECK(ece(binary_conf({0.95, 0.65}, {1, 0}), 15) == Approx(0.35).epsilon(1e-12));
  CHECK(ece(binary_conf({1.0, 1.0}, {1, 1}), 15) == 0.0);
  CHECK_THROWS_AS(ece(one, 0), ValidationError);
}

TEST_CASE("reliability table matches ece") {
  const auto p = binary_conf({0.95, 0.65}, {1, 0});
  const auto table = reliability_data(p, 15);
  REQUIRE(table.size() == 15);
  CHECK(table[14].count == 1);
  CHECK(table[9].count == 1);
  CHECK(table[0].count == 0);
  CHECK(table[14].bin_high == 1.0);
  CHECK(table[9].bin_low == Approx(9.0 / 15.0));
  // Recompute ECE from the table.
  for (const auto& probe : {p, binary_conf({0.9, 0.7, 0.8, 0.8, 0.8}, {1, 1, 1, 0, 0}), binary_conf({1.0, 1.0}, {1, 1})}) {
    for (int bins : {1, 7, 15}) {
      double e = 0.0;
      std::size_t total = 0;
      for (const auto& row : reliability_data(probe, bins)) {
        total += row.count;
        e += static_cast<double>(row.count) * std::abs(row.avg_conf - row.accuracy);
      }
      CHECK(total == probe.size());
      CHECK(std::abs(e / static_cast<double>(total) - ece(probe, bins)) <= 1e-12);
    }
  }
}

TEST_CASE("classwise_ece examples") {
  const auto p = binary_conf({0.9, 0.6, 0.3, 0.75}, {1, 0, 1, 1});
  const naive::Rows rows = fixtures::to_rows(p.probs());
  std::vector<double> s0, h0, s1, h1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s0.push_back(rows[i][0]);
    h0.push_back(p.labels()[i] == 0);
    s1.push_back(rows[i][1]);
    h1.push_back(p.labels()[i] == 1);
  }
  CHECK(classwise_ece(p, 15) ==
        Approx(0.5 * (naive::binned_ece(s0, h0, 15) + naive::binned_ece(s1, h1, 15))).epsilon(1e-12));
  CHECK(classwise_ece(pred({{1.0, 0.0}, {1.0, 0.0}}, {1, 1}), 15) == 1.0);
}

TEST_CASE("brier examples") {
  CHECK(brier_x100(pred({{1.0, 0.0}, {0.0, 1.0}}, {0, 1})) == 0.0);
  CHECK(brier_x100(pred({{0.5, 0.5}}, {1})) == Approx(25.0).epsilon(1e-14));
  CHECK(brier_x100(pred({{0.8, 0.2}}, {0})) == Approx(4.0).epsilon(1e-12));
  CHECK(brier_x100(pred({{0.8, 0.2}}, {0}), BrierNormalization::unnormalized) == Approx(8.0).epsilon(1e-12));
}

TEST_CASE("accuracy and nll") {
  CHECK(accuracy(pred({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}}, {0, 1, 0, 0})) == 0.75);
  CHECK(accuracy(pred({{0.5, 0.5}}, {0})) == 1.0);
  CHECK(accuracy(pred({{0.5, 0.5}}, {1})) == 0.0);
  CHECK(nll_metric(pred({{0.25, 0.25, 0.25, 0.25}}, {2})) == Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("cumulative curves") {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto p = fixtures::random_prediction(rng, 1 + static_cast<int>(rng.below(300)), 3, t % 3 == 0);
    const auto rows = cumulative_curves(p);
    REQUIRE(rows.size() == p.size());
    double worst = 0.0;
    for (const auto& r : rows) worst = std::max(worst, std::abs(r.cumulative_score - r.cumulative_correct));
    CHECK(worst == top1_ks(p));
    CHECK(rows.back().fractile == 1.0);
  }
  const auto confident = pred({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}}, {0, 1, 1, 0});
  const auto rows = cumulative_curves(confident);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].cumulative_score == Approx(static_cast<double>(i + 1) / 4.0));
    CHECK(rows[i].fractile == Approx(static_cast<double>(i + 1) / 4.0));
  }
  const auto single = cumulative_curves(pred({{0.75, 0.25}}, {1}));
  REQUIRE(single.size() == 1);
  CHECK(single[0].fractile == 1.0);
  CHECK(single[0].cumulative_score == 0.75);
  CHECK(single[0].cumulative_correct == 0.0);
}

TEST_CASE("every metric matches the naive oracle") {
  Rng rng(77);
  using naive::Metric;
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int n = 2 + static_cast<int>(rng.below(6));
    const int b = 1 + static_cast<int>(rng.below(t < 20 ? 1000 : 150));
    const auto p = fixtures::random_prediction(rng, b, n, t % 3 == 0);
    const auto rows = fixtures::to_rows(p.probs());
    const int bins = 1 + static_cast<int>(rng.below(20));
    const int r = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const std::pair<Metric, double> cases[] = {
        {Metric::accuracy, accuracy(p)},
        {Metric::nll, nll_metric(p)},
        {Metric::brier_x100, brier_x100(p)},
        {Metric::brier_x100_unnormalized, brier_x100(p, BrierNormalization::unnormalized)},
        {Metric::ece, ece(p, bins)},
        {Metric::classwise_ece, classwise_ece(p, bins)},
        {Metric::top1_ks, top1_ks(p)},
        {Metric::topr_ks, topr_ks(p, r)},
        {Metric::within_topr_ks, within_topr_ks(p, r)},
        {Metric::avg_top_ks, avg_top_ks(p, r)},
    };
    for (const auto& [which, value] : cases) {
      const int param = (which == Metric::ece || which == Metric::classwise_ece) ? bins : r;
      const double expected = naive::metric(rows, p.labels(), which, param);
      const double err = std::abs(value - expected);
      worst = std::max(worst, err);
      if (err > 1e-10) FAIL_CHECK(naive::name(which) << " differs by " << err);
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("metrics are invariant to sample order") {
  Rng rng(9);
  const auto p = fixtures::random_prediction(rng, 300, 4, false);
  const auto perm = rng.permutation(p.size());
  Matrix q(p.probs().rows(), p.probs().cols());
  Labels y(p.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    q.row(static_cast<Eigen::Index>(i)) = p.probs().row(static_cast<Eigen::Index>(perm[i]));
    y[i] = p.labels()[perm[i]];
  }
  const Prediction s(q, y);
  CHECK(std::abs(top1_ks(p) - top1_ks(s)) <= 1e-12);
  CHECK(std::abs(topr_ks(p, 3) - topr_ks(s, 3)) <= 1e-12);
  CHECK(std::abs(within_topr_ks(p, 2) - within_topr_ks(s, 2)) <= 1e-12);
  CHECK(std::abs(ece(p, 15) - ece(s, 15)) <= 1e-12);
  CHECK(std::abs(classwise_ece(p, 15) - classwise_ece(s, 15)) <= 1e-12);
  CHECK(std::abs(brier_x100(p) - brier_x100(s)) <= 1e-12);
  CHECK(std::abs(nll_metric(p) - nll_metric(s)) <= 1e-12);
}

TEST_CASE("metric ranges") {
  Rng rng(10);
  for (int t = 0; t < 50; ++t) {
    const auto p = fixtures::random_prediction(rng, 100, 3, t % 2 == 0);
    const auto rep = evaluate(p, {.bins = 10, .top_r = 3});
    for (double v : {rep.ece, rep.classwise_ece, rep.avg_top_ks, rep.accuracy}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (double v : rep.ks_top) CHECK((v >= 0.0 && v <= 1.0));
    for (double v : rep.within_top_ks) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(rep.brier_x100 >= 0.0);
    CHECK(rep.brier_x100 <= 200.0);
  }
}

TEST_CASE("report serialization") {
  fixtures::TempDir dir("metrics");
  Rng rng(11);
  const auto p = fixtures::random_prediction(rng, 100, 3, false);
  const auto rep = evaluate(p, {.bins = 15, .top_r = 5});
  CHECK(rep.ks_top.size() == 3);  // R is capped at n
  CHECK(rep.ks_top[0] == top1_ks(p));
  CHECK(rep.avg_top_ks == Approx(avg_top_ks(p, 3)));
  const auto j = nlohmann::ordered_json::parse(to_json(rep));
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  CHECK(keys == std::vector<std::string>{"n_samples", "n_classes", "accuracy", "nll", "brier_x100", "ece_bins", "ece",
                                         "classwise_ece", "ks_top", "within_top_ks", "avg_top_ks"});
  CHECK(j["ece"].get<double>() == rep.ece);
  const auto csv = to_csv(rep);
  CHECK(csv.rfind("metric,value\n", 0) == 0);
  CHECK(csv.find("\nks_top1,") != std::string::npos);

  write_reliability_csv(reliability_data(p, 15), dir / "r.csv");
  write_cumulative_csv(cumulative_curves(p), dir / "c.csv");
  CHECK(fixtures::read_file(dir / "r.csv").rfind("bin_low,bin_high,count,avg_conf,accuracy\n", 0) == 0);
  CHECK(fixtures::read_file(dir / "c.csv").rfind("fractile,cumulative_score,cumulative_correct\n", 0) == 0);
}
