#include "glcal/calibrators.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "glcal/errors.hpp"

namespace glcal {

namespace {

GLayerNetwork single_layer(const Matrix& weights, const Vector& bias) {
  if (weights.rows() != weights.cols() || bias.size() != weights.rows()) {
    throw ValidationError("linear calibrator needs a square weight matrix and matching bias");
  }
  return GLayerNetwork({DenseLayer{{weights, bias}, false}});
}

}  // namespace

std::string to_string(CalibratorKind kind) {
  switch (kind) {
    case CalibratorKind::identity: return "identity";
    case CalibratorKind::temperature: return "temperature";
    case CalibratorKind::vector: return "vector";
    case CalibratorKind::matrix: return "matrix";
    case CalibratorKind::glayers: return "glayers";
  }
  return "unknown";
}

CalibratorKind calibrator_kind_from_string(const std::string& name) {
  for (auto k : {CalibratorKind::identity, CalibratorKind::temperature, CalibratorKind::vector,
                 CalibratorKind::matrix, CalibratorKind::glayers}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown calibrator kind '" + name + "'");
}

Calibrator::Calibrator(CalibratorKind kind) : kind_(kind), fitted_(kind == CalibratorKind::identity) {}

Calibrator Calibrator::identity() { return Calibrator(CalibratorKind::identity); }

Calibrator Calibrator::temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ValidationError("temperature must be positive and finite");
  Calibrator c(CalibratorKind::temperature);
  c.temperature_ = t;
  c.fitted_ = true;
  return c;
}

Calibrator Calibrator::vector(const Vector& scale, const Vector& bias) {
  Calibrator c(CalibratorKind::vector);
  c.net_ = single_layer(scale.asDiagonal().toDenseMatrix(), bias);
  c.fitted_ = true;
  return c;
}

Calibrator Calibrator::matrix(const Matrix& weights, const Vector& bias, double offdiag_penalty) {
  if (!(offdiag_penalty >= 0.0)) throw ValidationError("off-diagonal penalty must be nonnegative");
  Calibrator c(CalibratorKind::matrix);
  c.net_ = single_layer(weights, bias);
  c.offdiag_penalty_ = offdiag_penalty;
  c.fitted_ = true;
  return c;
}

Calibrator Calibrator::glayers(GLayerNetwork net) {
  Calibrator c(CalibratorKind::glayers);
  c.net_ = std::move(net);
  c.fitted_ = true;
  return c;
}

double Calibrator::temperature() const {
  if (kind_ != CalibratorKind::temperature) throw StateError("not a temperature calibrator");
  return temperature_;
}

const GLayerNetwork& Calibrator::network() const {
  if (!net_) throw StateError(to_string(kind_) + " calibrator has no network");
  return *net_;
}

Matrix Calibrator::transform_logits(const Matrix& logits) const {
  if (!fitted_) throw StateError("calibrator of kind " + to_string(kind_) + " has not been fitted");
  switch (kind_) {
    case CalibratorKind::identity: return logits;
    case CalibratorKind::temperature: return logits / temperature_;
    default: return net_->apply(logits);
  }
}

Matrix Calibrator::transform(const Matrix& logits) const { return softmax_rows(transform_logits(logits)); }

double temperature_nll(const LogitDataset& data, double t) {
  return nll_from_logits(data.logits_double() / t, data.labels());
}

Calibrator fit_temperature(const LogitDataset& calib, const TemperatureSearch& search) {
  if (calib.size() < 2) throw ValidationError("temperature fitting needs at least two samples");
  if (!(search.lower > 0.0 && search.upper > search.lower) || search.scan_points < 2 ||
      !(search.tolerance > 0.0)) {
    throw ValidationError("invalid temperature search bounds");
  }
  const Matrix z = calib.logits_double();
  auto objective = [&](double log_t) { return nll_from_logits(z / std::exp(log_t), calib.labels()); };

  auto golden = [&](double a, double b) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = objective(c);
    double fd = objective(d);
    while (b - a > search.tolerance) {
      if (fc < fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - inv_phi * (b - a);
        fc = objective(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + inv_phi * (b - a);
        fd = objective(d);
      }
    }
    const double x = 0.5 * (a + b);
    return std::pair{x, objective(x)};
  };

  const double lo = std::log(search.lower);
  const double hi = std::log(search.upper);
  auto [best_u, best_f] = golden(lo, hi);

  // Coarse scan guards against a non-unimodal objective.
  const int points = search.scan_points;
  std::vector<double> grid(static_cast<std::size_t>(points));
  std::size_t scan_best = 0;
  double scan_f = std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (points - 1);
    const double f = objective(grid[static_cast<std::size_t>(i)]);
    if (f < scan_f) {
      scan_f = f;
      scan_best = static_cast<std::size_t>(i);
    }
  }
  if (scan_f < best_f - 1e-9) {
    const double a = grid[scan_best == 0 ? 0 : scan_best - 1];
    const double b = grid[std::min(scan_best + 1, grid.size() - 1)];
    auto [u, f] = golden(a, b);
    if (f < scan_f) {
      best_u = u;
      best_f = f;
    } else {
      best_u = grid[scan_best];
      best_f = scan_f;
    }
  }
  if (objective(0.0) <= best_f) return Calibrator::temperature(1.0);
  return Calibrator::temperature(std::exp(best_u));
}

CalibrationFit fit_vector(const LogitDataset& calib, const TrainConfig& cfg) {
  const GLayerNetwork init = transparent_init(calib.dim(), {}, cfg.seed);
  auto result = fit(init, calib, calib, cfg, {.offdiag_penalty = 0.0, .diagonal_only = true});
  const auto& layer = result.network.layers().front().params;
  CalibrationFit out{Calibrator::vector(layer.weights.diagonal(), layer.bias), std::move(result.log),
                     std::nullopt, HyperParams{cfg.learning_rate, cfg.weight_decay}};
  return out;
}

CalibrationFit fit_matrix(const LogitDataset& calib, double offdiag_penalty, const TrainConfig& cfg) {
  if (!(offdiag_penalty >= 0.0) || !std::isfinite(offdiag_penalty)) {
    throw ValidationError("off-diagonal penalty must be nonnegative and finite");
  }
  const GLayerNetwork init = transparent_init(calib.dim(), {}, cfg.seed);
  auto result = fit(init, calib, calib, cfg, {.offdiag_penalty = offdiag_penalty, .diagonal_only = false});
  const auto& layer = result.network.layers().front().params;
  CalibrationFit out{Calibrator::matrix(layer.weights, layer.bias, offdiag_penalty),
                     std::move(result.log), std::nullopt,
                     HyperParams{cfg.learning_rate, cfg.weight_decay}};
  return out;
}

PenaltyCvResult cross_validate_offdiag(const LogitDataset& calib, const std::vector<double>& penalties,
                                       int k, const TrainConfig& cfg) {
  if (penalties.empty()) throw ValidationError("need at least one off-diagonal penalty");
  cfg.validate();
  const FoldPlan plan = make_folds(calib.size(), k, cfg.seed);
  PenaltyCvResult out;
  out.mean_scores.assign(penalties.size(), 0.0);
  for (int f = 0; f < k; ++f) {
    const LogitDataset train = calib.subset(plan.training_indices(f));
    const LogitDataset val = calib.subset(plan.validation_indices(f));
    for (std::size_t i = 0; i < penalties.size(); ++i) {
      if (!(penalties[i] >= 0.0)) throw ValidationError("penalties must be nonnegative");
      TrainConfig c = cfg;
      c.seed = cell_seed(cfg.seed, f, i);
      double score = std::numeric_limits<double>::infinity();
      try {
        const auto r = fit(transparent_init(calib.dim(), {}, c.seed), train, val, c,
                           {.offdiag_penalty = penalties[i], .diagonal_only = false});
        score = r.log.best_monitor_nll();
      } catch (const TrainingDiverged&) {
      }
      out.mean_scores[i] += score / k;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < penalties.size(); ++i) {
    const double a = out.mean_scores[i];
    const double b = out.mean_scores[best];
    if (a < b || (a == b && penalties[i] > penalties[best])) best = i;
  }
  out.best_penalty = penalties[best];
  return out;
}

CalibrationFit fit_glayers(const LogitDataset& calib, const GLayerFitOptions& options) {
  // Validates the H >= 2m constraint before any training.
  GLayerNetwork init = transparent_init(calib.dim(), options.hidden_dims, options.base.seed);
  options.base.validate();

  std::optional<CvResult> cv;
  HyperParams chosen;
  if (options.fixed) {
    chosen = *options.fixed;
  } else {
    cv = cross_validate(calib, options.grid, options.folds, options.hidden_dims, options.base,
                        options.cv);
    chosen = cv->best;
  }
  TrainConfig cfg = options.base;
  cfg.learning_rate = chosen.learning_rate;
  cfg.weight_decay = chosen.weight_decay;
  auto result = fit(init, calib, calib, cfg);
  return {Calibrator::glayers(std::move(result.network)), std::move(result.log), std::move(cv), chosen};
}

void save_calibrator(const Calibrator& c, const std::filesystem::path& json_path,
                     std::optional<std::filesystem::path> network_path) {
  if (!c.fitted()) throw StateError("cannot save an unfitted calibrator");
  nlohmann::ordered_json j;
  j["format"] = "glcal-calibrator";
  j["version"] = 1;
  j["kind"] = to_string(c.kind());
  switch (c.kind()) {
    case CalibratorKind::identity: break;
    case CalibratorKind::temperature: j["temperature"] = c.temperature(); break;
    case CalibratorKind::vector: {
      const auto& p = c.network().layers().front().params;
      j["n_classes"] = p.out_dim();
      j["w"] = std::vector<double>(p.weights.diagonal().begin(), p.weights.diagonal().end());
      j["b"] = std::vector<double>(p.bias.begin(), p.bias.end());
      break;
    }
    case CalibratorKind::matrix: {
      const auto& p = c.network().layers().front().params;
      j["n_classes"] = p.out_dim();
      std::vector<std::vector<double>> rows;
      for (Eigen::Index r = 0; r < p.weights.rows(); ++r) {
        rows.emplace_back(p.weights.row(r).begin(), p.weights.row(r).end());
      }
      j["W"] = rows;
      j["b"] = std::vector<double>(p.bias.begin(), p.bias.end());
      j["lambda"] = c.offdiag_penalty();
      break;
    }
    case CalibratorKind::glayers: {
      auto net_path = network_path.value_or(std::filesystem::path(json_path).replace_extension(".glnw"));
      save_network(c.network(), net_path);
      const auto base = json_path.has_parent_path() ? json_path.parent_path() : std::filesystem::path(".");
      j["n_classes"] = c.network().dim();
      j["hidden_dims"] = c.network().hidden_dims();
      j["network"] = std::filesystem::relative(std::filesystem::absolute(net_path),
                                               std::filesystem::absolute(base))
                         .generic_string();
      break;
    }
  }
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + json_path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + json_path.string());
}

Calibrator load_calibrator(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open " + json_path.string() + " for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  try {
    if (j.value("format", "") != "glcal-calibrator") {
      throw FormatError(json_path.string() + ": not a calibrator checkpoint");
    }
    const auto kind = calibrator_kind_from_string(j.at("kind").get<std::string>());
    auto vec = [](const nlohmann::json& a) {
      const auto v = a.get<std::vector<double>>();
      return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    switch (kind) {
      case CalibratorKind::identity: return Calibrator::identity();
      case CalibratorKind::temperature: return Calibrator::temperature(j.at("temperature").get<double>());
      case CalibratorKind::vector: return Calibrator::vector(vec(j.at("w")), vec(j.at("b")));
      case CalibratorKind::matrix: {
        const auto rows = j.at("W").get<std::vector<std::vector<double>>>();
        Matrix w(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
          if (rows[r].size() != rows.size()) throw FormatError(json_path.string() + ": W must be square");
          for (std::size_t c = 0; c < rows.size(); ++c) {
            w(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
          }
        }
        return Calibrator::matrix(w, vec(j.at("b")), j.value("lambda", 0.0));
      }
      case CalibratorKind::glayers: {
        std::filesystem::path net_path = j.at("network").get<std::string>();
        if (net_path.is_relative()) net_path = json_path.parent_path() / net_path;
        return Calibrator::glayers(load_network(net_path));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  throw FormatError(json_path.string() + ": unsupported calibrator");
}

}  // namespace glcal
