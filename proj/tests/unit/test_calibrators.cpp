#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fixtures.hpp"

using namespace glcal;
using doctest::Approx;

namespace {

Matrix random_logits(Rng& rng, int b, int n, double scale) {
  Matrix z(b, n);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < n; ++j) z(i, j) = scale * rng.normal();
  return z;
}

double raw_nll(const LogitDataset& d) {
  return nll_metric(Prediction(softmax_rows(d.logits_double()), d.labels()));
}

double fitted_nll(const Calibrator& c, const LogitDataset& d) {
  return nll_metric(Prediction(c.transform(d.logits_double()), d.labels()));
}

std::vector<int> argmax_rows(const Matrix& p) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index k;
    p.row(i).maxCoeff(&k);
    out.push_back(static_cast<int>(k));
  }
  return out;
}

}  // namespace

TEST_CASE("calibrator kind names round trip") {
  for (auto k : {CalibratorKind::identity, CalibratorKind::temperature, CalibratorKind::vector, CalibratorKind::matrix,
                 CalibratorKind::glayers}) {
    CHECK(calibrator_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(calibrator_kind_from_string("dirichlet"), ValidationError);
}

TEST_CASE("transform special cases") {
  Rng rng(1);
  const Matrix z = random_logits(rng, 50, 4, 3.0);
  const Matrix id = Calibrator::identity().transform(z);
  CHECK((Calibrator::temperature(1.0).transform(z) - id).cwiseAbs().maxCoeff() <= 1e-12);

  Matrix one(1, 2);
  one << 3.0, 0.0;
  const Matrix hot = Calibrator::temperature(1e9).transform(one);
  CHECK(std::abs(hot(0, 0) - 0.5) <= 1e-6);
  CHECK(std::abs(hot(0, 1) - 0.5) <= 1e-6);

  CHECK(Calibrator::matrix(Matrix::Identity(4, 4), Vector::Zero(4), 0.0).transform(z) == id);
  CHECK(Calibrator::vector(Vector::Ones(4), Vector::Zero(4)).transform(z) == id);
  CHECK_THROWS_AS(Calibrator::temperature(0.0), ValidationError);
  CHECK_THROWS_AS(Calibrator::temperature(-1.0), ValidationError);
}

TEST_CASE("vector and matrix transforms apply their parameters") {
  Matrix z(1, 2);
  z << 1.0, 2.0;
  Vector w(2), b(2);
  w << 2.0, 0.5;
  b << 0.1, -0.1;
  const Matrix lv = Calibrator::vector(w, b).transform_logits(z);
  CHECK(lv(0, 0) == Approx(2.1));
  CHECK(lv(0, 1) == Approx(0.9));
  Matrix wm(2, 2);
  wm << 1.0, 1.0, 0.0, 2.0;
  const Matrix lm = Calibrator::matrix(wm, b, 0.0).transform_logits(z);
  CHECK(lm(0, 0) == Approx(3.1));
  CHECK(lm(0, 1) == Approx(3.9));
  CHECK(Calibrator::temperature(2.0).transform_logits(z)(0, 1) == Approx(1.0));
}

TEST_CASE("unfitted calibrators refuse to transform") {
  const Matrix z = Matrix::Zero(1, 3);
  for (auto k : {CalibratorKind::temperature, CalibratorKind::vector, CalibratorKind::matrix, CalibratorKind::glayers}) {
    const Calibrator c(k);
    CHECK_FALSE(c.fitted());
    CHECK_THROWS_AS(c.transform(z), StateError);
  }
  CHECK(Calibrator(CalibratorKind::identity).fitted());
  CHECK_NOTHROW(Calibrator(CalibratorKind::identity).transform(z));
}

TEST_CASE("transforms emit simplex rows and identity-like maps keep argmax") {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + static_cast<int>(rng.below(6));
    const Matrix z = random_logits(rng, 40, n, rng.uniform(0.1, 20.0));
    const auto ref = argmax_rows(z);
    for (const auto& c : {Calibrator::identity(), Calibrator::temperature(rng.uniform(0.01, 100.0))}) {
      const Matrix p = c.transform(z);
      CHECK(argmax_rows(p) == ref);
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        CHECK(std::abs(p.row(i).sum() - 1.0) <= 1e-9);
        CHECK(p.row(i).minCoeff() > 0.0);
      }
    }
  }
}

TEST_CASE("fit_temperature on exactly calibrated and scaled oracle data") {
  const auto sample = fixtures::calibrated_oracle(5, 50000, 123);
  const double t1 = fit_temperature(sample.data).temperature();
  CHECK(t1 >= 0.97);
  CHECK(t1 <= 1.03);
  const auto hot = miscalibrate(sample.data, TemperatureDistortion{2.5});
  const double t2 = fit_temperature(hot).temperature();
  CHECK(t2 >= 2.5 * 0.97);
  CHECK(t2 <= 2.5 * 1.03);
  CHECK(temperature_nll(hot, t2) <= temperature_nll(hot, 1.0));
}

TEST_CASE("fit_temperature is robust on tiny inputs") {
  const auto two = fixtures::make_dataset({{2.0f, 0.0f}, {0.0f, 2.0f}}, {0, 1}, 2);
  const double t = fit_temperature(two).temperature();
  CHECK(t >= 1e-2);
  CHECK(t <= 1e2);
  CHECK(temperature_nll(two, t) <= temperature_nll(two, 1.0));
  const auto one = fixtures::make_dataset({{2.0f, 0.0f}}, {0}, 2);
  CHECK_THROWS_AS(fit_temperature(one), ValidationError);
  CHECK_THROWS_AS(fit_temperature(two, {.lower = 2.0, .upper = 1.0}), ValidationError);
}

TEST_CASE("fit_temperature agrees with a dense scan") {
  const auto data = miscalibrate(fixtures::calibrated_oracle(3, 3000, 5).data, TemperatureDistortion{0.6});
  const double t = fit_temperature(data).temperature();
  double best_t = 1.0, best = 1e300;
  for (int i = 0; i <= 4000; ++i) {
    const double cand = std::exp(std::log(1e-2) + (std::log(1e2) - std::log(1e-2)) * i / 4000.0);
    const double v = temperature_nll(data, cand);
    if (v < best) {
      best = v;
      best_t = cand;
    }
  }
  CHECK(temperature_nll(data, t) <= best + 1e-9);
  CHECK(t == Approx(best_t).epsilon(5e-3));
}

TEST_CASE("vector scaling recovers the inverse temperature") {
  const auto data = miscalibrate(fixtures::calibrated_oracle(5, 50000, 9).data, TemperatureDistortion{2.5});
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  const auto res = fit_vector(data, cfg);
  const auto& layer = res.calibrator.network().layers()[0].params;
  for (int i = 0; i < 5; ++i) {
    CHECK(layer.weights(i, i) == Approx(0.4).epsilon(0.05));
    CHECK(std::abs(layer.bias(i) - layer.bias.mean()) <= 0.05);
  }
  CHECK((layer.weights - Matrix(layer.weights.diagonal().asDiagonal())).isZero());
  CHECK(fitted_nll(res.calibrator, data) <= raw_nll(data));
}

TEST_CASE("zero-epoch linear fits are the identity") {
  const auto data = fixtures::calibrated_oracle(3, 200, 1).data;
  TrainConfig cfg;
  cfg.max_epochs = 0;
  const Matrix z = data.logits_double();
  const Matrix id = Calibrator::identity().transform(z);
  CHECK((fit_vector(data, cfg).calibrator.transform(z) - id).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fit_matrix(data, 1e-2, cfg).calibrator.transform(z) - id).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("large off-diagonal penalty approaches vector scaling") {
  const auto data = miscalibrate(fixtures::calibrated_oracle(4, 5000, 13).data, AffineDistortion{
      (Matrix(4, 4) << 2.0, 0.3, 0.0, 0.0, 0.0, 1.5, 0.2, 0.0, 0.1, 0.0, 2.5, 0.0, 0.0, 0.0, 0.4, 1.8).finished(),
      Vector::Zero(4)});
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  const auto mat = fit_matrix(data, 1e12, cfg);
  const auto vec = fit_vector(data, cfg);
  const Matrix& w = mat.calibrator.network().layers()[0].params.weights;
  CHECK((w - Matrix(w.diagonal().asDiagonal())).cwiseAbs().maxCoeff() <= 1e-3);
  CHECK(std::abs(fitted_nll(mat.calibrator, data) - fitted_nll(vec.calibrator, data)) <= 1e-3);
  CHECK(mat.calibrator.offdiag_penalty() == 1e12);

  // Without the penalty the off-diagonal terms are used.
  const auto free = fit_matrix(data, 0.0, cfg);
  const Matrix& wf = free.calibrator.network().layers()[0].params.weights;
  CHECK((wf - Matrix(wf.diagonal().asDiagonal())).cwiseAbs().maxCoeff() > 1e-2);
  CHECK(fitted_nll(free.calibrator, data) <= fitted_nll(mat.calibrator, data) + 1e-9);
}

TEST_CASE("cross-validated off-diagonal penalty") {
  const auto data = miscalibrate(fixtures::calibrated_oracle(3, 600, 14).data, TemperatureDistortion{2.0});
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 60;
  cfg.patience = 10;
  const auto cv = cross_validate_offdiag(data, {0.0, 1e-2, 1.0}, 3, cfg);
  CHECK(cv.mean_scores.size() == 3);
  CHECK((cv.best_penalty == 0.0 || cv.best_penalty == 1e-2 || cv.best_penalty == 1.0));
  CHECK_THROWS_AS(cross_validate_offdiag(data, {}, 3, cfg), ValidationError);
  CHECK_THROWS_AS(cross_validate_offdiag(data, {-1.0}, 3, cfg), ValidationError);
}

TEST_CASE("g-layers with no hidden layer are matrix scaling") {
  const auto data = miscalibrate(fixtures::calibrated_oracle(3, 1000, 15).data, TemperatureDistortion{2.0});
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.max_epochs = 100;
  GLayerFitOptions opts;
  opts.hidden_dims = {};
  opts.base = cfg;
  opts.fixed = HyperParams{1e-2, 0.0};
  const auto g = fit_glayers(data, opts);
  const auto m = fit_matrix(data, 0.0, cfg);
  REQUIRE(g.calibrator.network().layers().size() == 1);
  CHECK(g.calibrator.network().flatten() == m.calibrator.network().flatten());
  CHECK_FALSE(g.cv.has_value());
}

TEST_CASE("fit_glayers validates widths before training") {
  const auto data = fixtures::calibrated_oracle(4, 100, 16).data;
  GLayerFitOptions opts;
  opts.hidden_dims = {6};
  CHECK_THROWS_AS(fit_glayers(data, opts), ValidationError);
}

TEST_CASE("fit_glayers runs CV and never worsens the calibration-set NLL") {
  const auto data = miscalibrate(fixtures::calibrated_oracle(3, 800, 17).data, TemperatureDistortion{2.0});
  GLayerFitOptions opts;
  opts.hidden_dims = {11};
  opts.grid = HyperGrid{{1e-2, 1e-3}, {0.0, 1e-3}};
  opts.folds = 3;
  opts.base.max_epochs = 100;
  opts.base.patience = 10;
  const auto res = fit_glayers(data, opts);
  REQUIRE(res.cv.has_value());
  CHECK(res.cv->table.size() == 12);
  CHECK(res.chosen->learning_rate == res.cv->best.learning_rate);
  CHECK(res.log->best_monitor_nll() <= res.log->epochs.front().monitor_nll);
  CHECK(fitted_nll(res.calibrator, data) <= raw_nll(data));
}

TEST_CASE("fit_glayers does no harm on calibrated data and fixes miscalibration") {
  const auto sample = fixtures::calibrated_oracle(5, 20000, 18);
  const auto [calib, test] = split(sample.data, 0.5, 3);
  GLayerFitOptions opts;
  opts.hidden_dims = {17};
  opts.fixed = HyperParams{1e-2, 0.0};
  const auto res = fit_glayers(calib, opts);
  const double before = top1_ks(Prediction(softmax_rows(test.logits_double()), test.labels()));
  const double after = top1_ks(Prediction(res.calibrator.transform(test.logits_double()), test.labels()));
  CHECK(after <= before + 0.005);

  const auto hot_calib = miscalibrate(calib, TemperatureDistortion{2.5});
  const auto hot_test = miscalibrate(test, TemperatureDistortion{2.5});
  const auto fixed = fit_glayers(hot_calib, opts);
  const double hot_before = top1_ks(Prediction(softmax_rows(hot_test.logits_double()), hot_test.labels()));
  const double hot_after = top1_ks(Prediction(fixed.calibrator.transform(hot_test.logits_double()), hot_test.labels()));
  CHECK(hot_before >= 0.10);
  CHECK(hot_after <= 0.02);
  // The library KS agrees with the naive oracle on a subsample.
  const auto sub = hot_test.subset(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  const Prediction ps(softmax_rows(sub.logits_double()), sub.labels());
  CHECK(top1_ks(ps) == Approx(naive::metric(fixtures::to_rows(ps.probs()), ps.labels(), naive::Metric::top1_ks)));
}

TEST_CASE("fitted linear families keep accuracy within two points") {
  const auto data = miscalibrate(fixtures::calibrated_oracle(5, 10000, 19).data, TemperatureDistortion{2.5});
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  const double base = accuracy(Prediction(softmax_rows(data.logits_double()), data.labels()));
  for (const auto& c : {fit_vector(data, cfg).calibrator, fit_matrix(data, 1e-2, cfg).calibrator}) {
    CHECK(std::abs(accuracy(Prediction(c.transform(data.logits_double()), data.labels())) - base) <= 0.02);
  }
}

TEST_CASE("calibrator checkpoints round trip") {
  fixtures::TempDir dir("cal");
  Rng rng(20);
  const Matrix z = random_logits(rng, 30, 3, 2.0);
  Vector w(3), b(3);
  w << 0.5, 1.5, 2.0;
  b << 0.1, 0.2, -0.3;
  Matrix wm = Matrix::Identity(3, 3);
  wm(0, 2) = 0.25;
  const std::vector<int> h{11};
  const std::vector<Calibrator> all{Calibrator::identity(), Calibrator::temperature(2.5), Calibrator::vector(w, b),
                                    Calibrator::matrix(wm, b, 0.5), Calibrator::glayers(glorot_init(3, h, 1))};
  for (const auto& c : all) {
    const auto path = dir / (to_string(c.kind()) + ".json");
    save_calibrator(c, path);
    const auto back = load_calibrator(path);
    CHECK(back.kind() == c.kind());
    CHECK(back.fitted());
    // Network weights are stored as float32.
    CHECK((back.transform(z) - c.transform(z)).cwiseAbs().maxCoeff() <= 1e-6);
    const auto j = nlohmann::json::parse(fixtures::read_file(path));
    CHECK(j["kind"] == to_string(c.kind()));
  }
  CHECK(load_calibrator(dir / "temperature.json").temperature() == 2.5);
  CHECK(load_calibrator(dir / "matrix.json").offdiag_penalty() == 0.5);
  const auto j = nlohmann::json::parse(fixtures::read_file(dir / "glayers.json"));
  CHECK(std::filesystem::exists(dir / j["network"].get<std::string>()));

  {
    std::ofstream out(dir / "bad.json");
    out << "{\"kind\": \"temperature\"}";
  }
  CHECK_THROWS_AS(load_calibrator(dir / "bad.json"), FormatError);
  {
    std::ofstream out(dir / "junk.json");
    out << "not json";
  }
  CHECK_THROWS_AS(load_calibrator(dir / "junk.json"), FormatError);
  CHECK_THROWS_AS(save_calibrator(Calibrator(CalibratorKind::matrix), dir / "u.json"), StateError);
}
