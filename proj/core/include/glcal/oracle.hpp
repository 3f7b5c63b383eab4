#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "glcal/calibrators.hpp"
#include "glcal/dataset.hpp"
#include "glcal/metrics.hpp"

namespace glcal {

/// Class-conditional Gaussians z | y ~ N(mean_y, var_y I) with class priors.
/// With a shared variance the posterior is a softmax of an affine map of z.
struct SyntheticSpec {
  int n_classes = 0;
  std::vector<double> class_priors;
  /// n_classes x m.
  Matrix class_means;
  double variance = 1.0;
  /// Optional per-class variances; when set they replace `variance` and make
  /// the posterior quadratic in z.
  std::vector<double> class_variances;
  std::uint64_t seed = 0;

  int dim() const noexcept { return static_cast<int>(class_means.cols()); }
  void validate() const;

  /// Uniform priors, means margin * e_y, isotropic variance sigma^2. With
  /// margin == sigma^2 the posterior is exactly softmax(z).
  static SyntheticSpec axis_aligned(int n_classes, double sigma, double margin, std::uint64_t seed);
};

/// Closed-form P(y | z) for a SyntheticSpec.
class PosteriorModel {
 public:
  explicit PosteriorModel(SyntheticSpec spec);

  /// Log-posterior up to a per-row constant.
  Matrix log_odds(const Matrix& z) const;
  Matrix probabilities(const Matrix& z) const;
  const SyntheticSpec& spec() const noexcept { return spec_; }

 private:
  SyntheticSpec spec_;
};

struct SyntheticSample {
  LogitDataset data;
  PosteriorModel posterior;
};

/// Draws N labelled samples; deterministic in (spec.seed, stream).
SyntheticSample synth_sample(const SyntheticSpec& spec, std::size_t n, std::uint64_t stream = 0);

/// Independent draws label_i ~ Categorical(probs row i).
Labels calibrated_sampler(const Matrix& probs, std::uint64_t seed);

struct TemperatureDistortion {
  double t = 1.0;
};
struct AffineDistortion {
  Matrix a;
  Vector b;
};
/// z -> sign(z) |z|^exponent per component.
struct PowerDistortion {
  double exponent = 1.0;
};
using MiscalibrationSpec = std::variant<TemperatureDistortion, AffineDistortion, PowerDistortion>;

/// Applies a known distortion to the logits; labels are unchanged.
LogitDataset miscalibrate(const LogitDataset& data, const MiscalibrationSpec& spec);

struct TopRankEvent {
  int r = 1;
};
struct WithinTopEvent {
  int r = 1;
};
struct ClassEvent {
  int y = 0;
};
using PosteriorTarget = std::variant<TopRankEvent, WithinTopEvent, ClassEvent>;

struct PosteriorBin {
  double bin_low = 0.0;
  double bin_high = 0.0;
  double mean_score = 0.0;
  double empirical_frequency = 0.0;
  std::size_t count = 0;
};

/// Event frequency per score bin, the empirical side of P(event | score = s) = s.
std::vector<PosteriorBin> binned_posterior_estimate(const Prediction& pred,
                                                    const PosteriorTarget& target, int bins);

/// L2 norm of the full-batch NLL gradient at a network-backed calibrator's parameters.
double stationarity_check(const Calibrator& calibrator, const Matrix& logits, std::span<const int> labels);
double stationarity_check(const Calibrator& calibrator, const LogitDataset& data);

/// Mean over samples and classes of |estimate - truth|.
double mean_abs_posterior_error(const Matrix& estimate, const Matrix& truth);

std::string to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const std::string& text);
void save_synthetic_spec(const SyntheticSpec& spec, const std::filesystem::path& path);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

}  // namespace glcal
