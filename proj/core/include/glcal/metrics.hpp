#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "glcal/dataset.hpp"

namespace glcal {

/// Probability rows with their labels. Rows must sum to 1 within 1e-6.
class Prediction {
 public:
  Prediction(Matrix probs, Labels labels);

  std::size_t size() const noexcept { return labels_.size(); }
  int n_classes() const noexcept { return static_cast<int>(probs_.cols()); }
  const Matrix& probs() const noexcept { return probs_; }
  const Labels& labels() const noexcept { return labels_; }

 private:
  Matrix probs_;
  Labels labels_;
};

/// Classes of one row ordered by descending score; equal scores rank by class index.
std::vector<int> rank_classes(const Matrix& probs, Eigen::Index row);

/// Prefix-maximum KS statistic: samples sorted by score ascending (ties by
/// original index), max over prefixes of |sum(score) - sum(correct)| / B.
double ks_statistic(std::span<const double> scores, std::span<const double> correct);

double top1_ks(const Prediction& pred);
/// KS of the r-th ranked score against "label is the r-th ranked class".
double topr_ks(const Prediction& pred, int r);
/// KS of the summed top-r scores against "label is among the top r".
double within_topr_ks(const Prediction& pred, int r);
/// Mean of topr_ks for r = 1..R.
double avg_top_ks(const Prediction& pred, int max_r);

/// Equal-width binned ECE over top-1 confidence; a score of exactly 1 goes to the last bin.
double ece(const Prediction& pred, int bins);
/// Mean over classes of the binned ECE of score z_y against [label == y].
double classwise_ece(const Prediction& pred, int bins);

enum class BrierNormalization { per_class, unnormalized };

/// 100 * mean squared error to the one-hot label, divided by n by default.
double brier_x100(const Prediction& pred, BrierNormalization norm = BrierNormalization::per_class);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Prediction& pred);
double nll_metric(const Prediction& pred);

struct ReliabilityBin {
  double bin_low = 0.0;
  double bin_high = 0.0;
  std::size_t count = 0;
  double avg_conf = 0.0;
  double accuracy = 0.0;
};

std::vector<ReliabilityBin> reliability_data(const Prediction& pred, int bins);

struct CumulativeRow {
  double fractile = 0.0;
  double cumulative_score = 0.0;
  double cumulative_correct = 0.0;
};

/// Rows after the top-1 KS sort; max |score - correct| over rows equals top1_ks.
std::vector<CumulativeRow> cumulative_curves(const Prediction& pred);

struct MetricsReport {
  std::size_t n_samples = 0;
  int n_classes = 0;
  int ece_bins = 15;
  double accuracy = 0.0;
  double nll = 0.0;
  double brier_x100 = 0.0;
  double ece = 0.0;
  double classwise_ece = 0.0;
  std::vector<double> ks_top;         // r = 1..R
  std::vector<double> within_top_ks;  // r = 1..R
  double avg_top_ks = 0.0;
};

struct ReportOptions {
  int bins = 15;
  /// Largest r for top-r metrics; clamped to the number of classes.
  int top_r = 5;
  BrierNormalization brier = BrierNormalization::per_class;
};

MetricsReport evaluate(const Prediction& pred, const ReportOptions& options = {});

/// JSON with a fixed key order.
std::string to_json(const MetricsReport& report);
/// Two-column `metric,value` CSV.
std::string to_csv(const MetricsReport& report);

void write_reliability_csv(const std::vector<ReliabilityBin>& rows, const std::filesystem::path& path);
void write_cumulative_csv(const std::vector<CumulativeRow>& rows, const std::filesystem::path& path);

}  // namespace glcal
