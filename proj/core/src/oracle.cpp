#include "glcal/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "glcal/errors.hpp"
#include "glcal/random.hpp"

namespace glcal {

void SyntheticSpec::validate() const {
  if (n_classes < 2) throw ValidationError("synthetic spec needs at least two classes");
  if (static_cast<int>(class_priors.size()) != n_classes) {
    throw ValidationError("class_priors must have n_classes entries");
  }
  double total = 0.0;
  for (double p : class_priors) {
    if (!(p >= 0.0)) throw ValidationError("class priors must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("class priors must sum to 1");
  if (class_means.rows() != n_classes || class_means.cols() < 2) {
    throw ValidationError("class_means must be n_classes x m with m >= 2");
  }
  if (!class_means.allFinite()) throw ValidationError("class means must be finite");
  if (!(variance > 0.0) || !std::isfinite(variance)) throw ValidationError("variance must be positive");
  if (!class_variances.empty()) {
    if (static_cast<int>(class_variances.size()) != n_classes) {
      throw ValidationError("class_variances must have n_classes entries");
    }
    for (double v : class_variances) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("class variances must be positive");
    }
  }
}

SyntheticSpec SyntheticSpec::axis_aligned(int n_classes, double sigma, double margin,
                                          std::uint64_t seed) {
  if (n_classes < 2) throw ValidationError("synthetic spec needs at least two classes");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be positive");
  if (!std::isfinite(margin)) throw ValidationError("margin must be finite");
  SyntheticSpec spec;
  spec.n_classes = n_classes;
  spec.class_priors.assign(static_cast<std::size_t>(n_classes), 1.0 / n_classes);
  spec.class_means = margin * Matrix::Identity(n_classes, n_classes);
  spec.variance = sigma * sigma;
  spec.seed = seed;
  spec.validate();
  return spec;
}

PosteriorModel::PosteriorModel(SyntheticSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Matrix PosteriorModel::log_odds(const Matrix& z) const {
  if (z.cols() != spec_.dim()) throw ValidationError("posterior input width does not match spec");
  const int n = spec_.n_classes;
  Matrix out(z.rows(), n);
  if (spec_.class_variances.empty()) {
    // Shared isotropic covariance: the quadratic term cancels across classes.
    out = z * spec_.class_means.transpose() / spec_.variance;
    for (int y = 0; y < n; ++y) {
      const double prior = spec_.class_priors[static_cast<std::size_t>(y)];
      const double shift = -spec_.class_means.row(y).squaredNorm() / (2.0 * spec_.variance) +
                           (prior > 0.0 ? std::log(prior) : -std::numeric_limits<double>::infinity());
      out.col(y).array() += shift;
    }
    return out;
  }
  const double m = spec_.dim();
  for (int y = 0; y < n; ++y) {
    const double v = spec_.class_variances[static_cast<std::size_t>(y)];
    const double prior = spec_.class_priors[static_cast<std::size_t>(y)];
    const double shift = -0.5 * m * std::log(v) +
                         (prior > 0.0 ? std::log(prior) : -std::numeric_limits<double>::infinity());
    out.col(y) = -((z.rowwise() - spec_.class_means.row(y)).rowwise().squaredNorm()) / (2.0 * v);
    out.col(y).array() += shift;
  }
  return out;
}

Matrix PosteriorModel::probabilities(const Matrix& z) const {
  Matrix lo = log_odds(z);
  Matrix out = lo.colwise() - lo.rowwise().maxCoeff();
  out = out.array().exp().matrix();
  const Vector sums = out.rowwise().sum();
  out.array().colwise() /= sums.array();
  return out;
}

SyntheticSample synth_sample(const SyntheticSpec& spec, std::size_t n, std::uint64_t stream) {
  spec.validate();
  if (n == 0) throw ValidationError("sample count must be positive");
  Rng rng(mix_seed(spec.seed, {0x5E7D, stream}));
  const int m = spec.dim();
  LogitMatrix logits(static_cast<Eigen::Index>(n), m);
  Labels labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<int>(rng.categorical(spec.class_priors));
    const double sd = std::sqrt(spec.class_variances.empty()
                                    ? spec.variance
                                    : spec.class_variances[static_cast<std::size_t>(y)]);
    for (int j = 0; j < m; ++j) {
      logits(static_cast<Eigen::Index>(i), j) =
          static_cast<float>(spec.class_means(y, j) + sd * rng.normal());
    }
    labels[i] = y;
  }
  return {LogitDataset(std::move(logits), std::move(labels), spec.n_classes), PosteriorModel(spec)};
}

Labels calibrated_sampler(const Matrix& probs, std::uint64_t seed) {
  Rng rng(mix_seed(seed, {0xCA1B}));
  Labels out(static_cast<std::size_t>(probs.rows()));
  std::vector<double> row(static_cast<std::size_t>(probs.cols()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      if (!(p >= 0.0) || !std::isfinite(p)) throw ValidationError("probability rows must be nonnegative");
      row[static_cast<std::size_t>(c)] = p;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(rng.categorical(row));
  }
  return out;
}

LogitDataset miscalibrate(const LogitDataset& data, const MiscalibrationSpec& spec) {
  const Matrix z = data.logits_double();
  Matrix out = std::visit(
      [&](const auto& s) -> Matrix {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, TemperatureDistortion>) {
          if (!(s.t > 0.0) || !std::isfinite(s.t)) throw ValidationError("temperature must be positive");
          return s.t * z;
        } else if constexpr (std::is_same_v<S, AffineDistortion>) {
          if (s.a.rows() != z.cols() || s.a.cols() != z.cols() || s.b.size() != z.cols()) {
            throw ValidationError("affine distortion shape does not match logit dimension");
          }
          Eigen::FullPivLU<Matrix> lu(s.a);
          if (!lu.isInvertible()) throw ValidationError("affine distortion matrix is singular");
          Matrix r = z * s.a.transpose();
          r.rowwise() += s.b.transpose();
          return r;
        } else {
          if (!(s.exponent > 0.0)) throw ValidationError("power exponent must be positive");
          return z.unaryExpr([&](double v) {
            return v < 0.0 ? -std::pow(-v, s.exponent) : std::pow(v, s.exponent);
          });
        }
      },
      spec);
  LogitMatrix stored = out.cast<float>();
  return LogitDataset(std::move(stored), data.labels(), data.n_classes());
}

std::vector<PosteriorBin> binned_posterior_estimate(const Prediction& pred,
                                                    const PosteriorTarget& target, int bins) {
  if (bins < 1) throw ValidationError("bin count must be positive");
  if (pred.size() < static_cast<std::size_t>(bins)) {
    throw ValidationError("need at least as many samples as bins");
  }
  const int n = pred.n_classes();
  std::vector<PosteriorBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].bin_low = static_cast<double>(b) / bins;
    out[static_cast<std::size_t>(b)].bin_high = static_cast<double>(b + 1) / bins;
  }
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (!std::is_same_v<T, ClassEvent>) {
          if (t.r < 1 || t.r > n) throw ValidationError("r out of range");
        } else {
          if (t.y < 0 || t.y >= n) throw ValidationError("class out of range");
        }
      },
      target);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const int label = pred.labels()[i];
    double score = 0.0;
    bool event = false;
    if (const auto* c = std::get_if<ClassEvent>(&target)) {
      score = pred.probs()(row, c->y);
      event = label == c->y;
    } else {
      const auto ranked = rank_classes(pred.probs(), row);
      if (const auto* t = std::get_if<TopRankEvent>(&target)) {
        const int cls = ranked[static_cast<std::size_t>(t->r - 1)];
        score = pred.probs()(row, cls);
        event = cls == label;
      } else {
        const int r = std::get<WithinTopEvent>(target).r;
        for (int k = 0; k < r; ++k) {
          const int cls = ranked[static_cast<std::size_t>(k)];
          score += pred.probs()(row, cls);
          event = event || cls == label;
        }
      }
    }
    const int b = std::clamp(static_cast<int>(std::floor(score * bins)), 0, bins - 1);
    auto& bin = out[static_cast<std::size_t>(b)];
    ++bin.count;
    bin.mean_score += score;
    bin.empirical_frequency += event ? 1.0 : 0.0;
  }
  for (auto& bin : out) {
    if (bin.count == 0) continue;
    bin.mean_score /= static_cast<double>(bin.count);
    bin.empirical_frequency /= static_cast<double>(bin.count);
  }
  return out;
}

double stationarity_check(const Calibrator& calibrator, const Matrix& logits,
                          std::span<const int> labels) {
  if (labels.empty() || logits.rows() == 0) throw ValidationError("stationarity check needs samples");
  if (!calibrator.fitted()) throw StateError("calibrator has not been fitted");
  const auto& net = calibrator.network();
  const ForwardTrace trace = forward(net, logits);
  return backward(net, trace, labels).norm();
}

double stationarity_check(const Calibrator& calibrator, const LogitDataset& data) {
  return stationarity_check(calibrator, data.logits_double(), data.labels());
}

double mean_abs_posterior_error(const Matrix& estimate, const Matrix& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols() || estimate.size() == 0) {
    throw ValidationError("posterior matrices must have equal, nonempty shapes");
  }
  return (estimate - truth).cwiseAbs().mean();
}

std::string to_json(const SyntheticSpec& spec) {
  nlohmann::ordered_json j;
  j["n_classes"] = spec.n_classes;
  j["dim"] = spec.dim();
  j["class_priors"] = spec.class_priors;
  std::vector<std::vector<double>> means;
  for (Eigen::Index r = 0; r < spec.class_means.rows(); ++r) {
    means.emplace_back(spec.class_means.row(r).begin(), spec.class_means.row(r).end());
  }
  j["class_means"] = means;
  j["variance"] = spec.variance;
  if (!spec.class_variances.empty()) j["class_variances"] = spec.class_variances;
  j["seed"] = spec.seed;
  return j.dump(2);
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SyntheticSpec spec;
    spec.n_classes = j.at("n_classes").get<int>();
    spec.class_priors = j.at("class_priors").get<std::vector<double>>();
    const auto means = j.at("class_means").get<std::vector<std::vector<double>>>();
    if (means.empty()) throw ValidationError("class_means is empty");
    spec.class_means.resize(static_cast<Eigen::Index>(means.size()),
                            static_cast<Eigen::Index>(means.front().size()));
    for (std::size_t r = 0; r < means.size(); ++r) {
      if (means[r].size() != means.front().size()) throw ValidationError("ragged class_means");
      for (std::size_t c = 0; c < means[r].size(); ++c) {
        spec.class_means(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = means[r][c];
      }
    }
    spec.variance = j.at("variance").get<double>();
    if (j.contains("class_variances")) spec.class_variances = j["class_variances"].get<std::vector<double>>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synthetic spec: ") + e.what());
  }
}

void save_synthetic_spec(const SyntheticSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json(spec) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return synthetic_spec_from_json(ss.str());
}

}  // namespace glcal
