#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "glcal/dataset.hpp"
#include "glcal/network.hpp"
#include "glcal/training.hpp"

namespace glcal {

enum class CalibratorKind { identity, temperature, vector, matrix, glayers };

std::string to_string(CalibratorKind kind);
CalibratorKind calibrator_kind_from_string(const std::string& name);

/// A post-hoc map from logits to probabilities. Vector, matrix and g-layer
/// calibrators all hold a GLayerNetwork (vector and matrix as one linear layer,
/// vector with a diagonal weight matrix).
class Calibrator {
 public:
  /// Unfitted calibrator of the given kind; only `identity` can transform.
  explicit Calibrator(CalibratorKind kind);

  static Calibrator identity();
  static Calibrator temperature(double t);
  static Calibrator vector(const Vector& scale, const Vector& bias);
  static Calibrator matrix(const Matrix& weights, const Vector& bias, double offdiag_penalty);
  static Calibrator glayers(GLayerNetwork net);

  CalibratorKind kind() const noexcept { return kind_; }
  bool fitted() const noexcept { return fitted_; }

  double temperature() const;
  double offdiag_penalty() const noexcept { return offdiag_penalty_; }
  /// The network behind vector/matrix/glayers calibrators.
  const GLayerNetwork& network() const;

  /// Probability rows for a batch of logits. Throws StateError when unfitted.
  Matrix transform(const Matrix& logits) const;
  /// Logits after the map, before the softmax.
  Matrix transform_logits(const Matrix& logits) const;

 private:
  CalibratorKind kind_;
  bool fitted_ = false;
  double temperature_ = 1.0;
  double offdiag_penalty_ = 0.0;
  std::optional<GLayerNetwork> net_;
};

struct TemperatureSearch {
  double lower = 1e-2;
  double upper = 1e2;
  /// Width of the final bracket in log T.
  double tolerance = 1e-6;
  int scan_points = 50;
};

/// Everything a fit produced, for logging.
struct CalibrationFit {
  Calibrator calibrator;
  std::optional<TrainLog> log;
  std::optional<CvResult> cv;
  std::optional<HyperParams> chosen;
};

/// NLL of softmax(z / T) on the dataset, computed via log-sum-exp.
double temperature_nll(const LogitDataset& data, double t);

/// Golden-section search on log T, cross-checked against a coarse log-spaced scan.
Calibrator fit_temperature(const LogitDataset& calib, const TemperatureSearch& search = {});

/// Diagonal scaling softmax(w * z + b), started at w = 1, b = 0.
CalibrationFit fit_vector(const LogitDataset& calib, const TrainConfig& cfg);

/// Full matrix softmax(W z + b) with an off-diagonal L2 penalty, started at W = I, b = 0.
CalibrationFit fit_matrix(const LogitDataset& calib, double offdiag_penalty, const TrainConfig& cfg);

struct PenaltyCvResult {
  double best_penalty = 0.0;
  /// Mean best-epoch validation NLL per candidate penalty.
  std::vector<double> mean_scores;
};

/// k-fold selection of the off-diagonal penalty for matrix scaling. Ties go to
/// the larger penalty.
PenaltyCvResult cross_validate_offdiag(const LogitDataset& calib, const std::vector<double>& penalties,
                                       int k, const TrainConfig& cfg);

struct GLayerFitOptions {
  std::vector<int> hidden_dims;
  HyperGrid grid = HyperGrid::defaults();
  int folds = 5;
  TrainConfig base;
  CvOptions cv;
  /// Skip cross-validation and train with these hyper-parameters.
  std::optional<HyperParams> fixed;
};

/// Cross-validates (lr, wd) on the calibration set, then trains a transparent
/// network on all of it with early stopping on its own NLL.
CalibrationFit fit_glayers(const LogitDataset& calib, const GLayerFitOptions& options);

/// JSON envelope; g-layer networks go to `network_path` (default: the JSON path
/// with a .glnw extension) and are referenced relative to the JSON file.
void save_calibrator(const Calibrator& c, const std::filesystem::path& json_path,
                     std::optional<std::filesystem::path> network_path = std::nullopt);
Calibrator load_calibrator(const std::filesystem::path& json_path);

}  // namespace glcal
