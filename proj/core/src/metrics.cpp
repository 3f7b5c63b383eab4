#include "glcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "glcal/errors.hpp"

namespace glcal {

namespace {

int argmax_row(const Matrix& probs, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index c = 1; c < probs.cols(); ++c) {
    if (probs(row, c) > probs(row, best)) best = static_cast<int>(c);
  }
  return best;
}

std::vector<int> top_classes(const Matrix& probs, Eigen::Index row, int count) {
  std::vector<int> idx(static_cast<std::size_t>(probs.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](int a, int b) {
    const double sa = probs(row, a);
    const double sb = probs(row, b);
    return sa > sb || (sa == sb && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), before);
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

void check_r(const Prediction& pred, int r) {
  if (r < 1 || r > pred.n_classes()) {
    throw ValidationError("r=" + std::to_string(r) + " must lie in [1, " +
                          std::to_string(pred.n_classes()) + "]");
  }
}

void check_bins(int bins) {
  if (bins < 1) throw ValidationError("bin count must be positive");
}

int bin_of(double score, int bins) {
  const auto b = static_cast<int>(std::floor(score * bins));
  return std::clamp(b, 0, bins - 1);
}

double binned_ece(std::span<const double> scores, std::span<const double> hits, int bins) {
  std::vector<double> conf(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> acc(static_cast<std::size_t>(bins), 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto b = static_cast<std::size_t>(bin_of(scores[i], bins));
    conf[b] += scores[i];
    acc[b] += hits[i];
  }
  // sum_b (|B_b|/B) |mean conf - mean acc| = sum_b |sum conf - sum acc| / B
  double total = 0.0;
  for (std::size_t b = 0; b < conf.size(); ++b) total += std::abs(conf[b] - acc[b]);
  return total / static_cast<double>(scores.size());
}

struct ScoreColumns {
  std::vector<double> scores;
  std::vector<double> correct;
};

ScoreColumns top1_columns(const Prediction& pred) {
  ScoreColumns out;
  out.scores.resize(pred.size());
  out.correct.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const int top = argmax_row(pred.probs(), row);
    out.scores[i] = pred.probs()(row, top);
    out.correct[i] = top == pred.labels()[i] ? 1.0 : 0.0;
  }
  return out;
}

std::vector<std::size_t> ks_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

}  // namespace

Prediction::Prediction(Matrix probs, Labels labels)
    : probs_(std::move(probs)), labels_(std::move(labels)) {
  if (labels_.empty()) throw ValidationError("prediction needs at least one sample");
  if (static_cast<std::size_t>(probs_.rows()) != labels_.size()) {
    throw ValidationError("probability rows do not match label count");
  }
  if (probs_.cols() < 2) throw ValidationError("prediction needs at least two classes");
  for (Eigen::Index i = 0; i < probs_.rows(); ++i) {
    const double s = probs_.row(i).sum();
    if (!std::isfinite(s) || std::abs(s - 1.0) > 1e-6 || probs_.row(i).minCoeff() < 0.0) {
      throw ValidationError("probability row " + std::to_string(i) + " is not on the simplex");
    }
    const int y = labels_[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs_.cols()) {
      throw ValidationError("label " + std::to_string(y) + " at row " + std::to_string(i) +
                            " is out of range");
    }
  }
}

std::vector<int> rank_classes(const Matrix& probs, Eigen::Index row) {
  return top_classes(probs, row, static_cast<int>(probs.cols()));
}

double ks_statistic(std::span<const double> scores, std::span<const double> correct) {
  if (scores.empty() || scores.size() != correct.size()) {
    throw ValidationError("KS needs matching, nonempty score and outcome columns");
  }
  const auto order = ks_order(scores);
  const double b = static_cast<double>(scores.size());
  double s = 0.0;
  double c = 0.0;
  double best = 0.0;
  for (std::size_t idx : order) {
    s += scores[idx];
    c += correct[idx];
    best = std::max(best, std::abs(s / b - c / b));
  }
  return best;
}

double top1_ks(const Prediction& pred) {
  const auto cols = top1_columns(pred);
  return ks_statistic(cols.scores, cols.correct);
}

double topr_ks(const Prediction& pred, int r) {
  check_r(pred, r);
  std::vector<double> scores(pred.size());
  std::vector<double> correct(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto ranked = top_classes(pred.probs(), row, r);
    const int cls = ranked[static_cast<std::size_t>(r - 1)];
    scores[i] = pred.probs()(row, cls);
    correct[i] = cls == pred.labels()[i] ? 1.0 : 0.0;
  }
  return ks_statistic(scores, correct);
}

double within_topr_ks(const Prediction& pred, int r) {
  check_r(pred, r);
  std::vector<double> scores(pred.size());
  std::vector<double> correct(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto ranked = top_classes(pred.probs(), row, r);
    double s = 0.0;
    bool hit = false;
    for (int cls : ranked) {
      s += pred.probs()(row, cls);
      hit = hit || cls == pred.labels()[i];
    }
    scores[i] = s;
    correct[i] = hit ? 1.0 : 0.0;
  }
  return ks_statistic(scores, correct);
}

double avg_top_ks(const Prediction& pred, int max_r) {
  check_r(pred, max_r);
  double sum = 0.0;
  for (int r = 1; r <= max_r; ++r) sum += topr_ks(pred, r);
  return sum / max_r;
}

double ece(const Prediction& pred, int bins) {
  check_bins(bins);
  const auto cols = top1_columns(pred);
  return binned_ece(cols.scores, cols.correct, bins);
}

double classwise_ece(const Prediction& pred, int bins) {
  check_bins(bins);
  const int n = pred.n_classes();
  std::vector<double> scores(pred.size());
  std::vector<double> hits(pred.size());
  double total = 0.0;
  for (int y = 0; y < n; ++y) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      scores[i] = pred.probs()(static_cast<Eigen::Index>(i), y);
      hits[i] = pred.labels()[i] == y ? 1.0 : 0.0;
    }
    total += binned_ece(scores, hits, bins);
  }
  return total / n;
}

double brier_x100(const Prediction& pred, BrierNormalization norm) {
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    double se = pred.probs().row(row).squaredNorm();
    const double p = pred.probs()(row, pred.labels()[i]);
    se += (p - 1.0) * (p - 1.0) - p * p;
    total += se;
  }
  double mean = total / static_cast<double>(pred.size());
  if (norm == BrierNormalization::per_class) mean /= pred.n_classes();
  return 100.0 * mean;
}

double accuracy(const Prediction& pred) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (argmax_row(pred.probs(), static_cast<Eigen::Index>(i)) == pred.labels()[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double nll_metric(const Prediction& pred) {
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    total -= std::log(pred.probs()(static_cast<Eigen::Index>(i), pred.labels()[i]));
  }
  return total / static_cast<double>(pred.size());
}

std::vector<ReliabilityBin> reliability_data(const Prediction& pred, int bins) {
  check_bins(bins);
  const auto cols = top1_columns(pred);
  std::vector<ReliabilityBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<std::size_t>(b)].bin_low = static_cast<double>(b) / bins;
    out[static_cast<std::size_t>(b)].bin_high = static_cast<double>(b + 1) / bins;
  }
  for (std::size_t i = 0; i < cols.scores.size(); ++i) {
    auto& bin = out[static_cast<std::size_t>(bin_of(cols.scores[i], bins))];
    ++bin.count;
    bin.avg_conf += cols.scores[i];
    bin.accuracy += cols.correct[i];
  }
  for (auto& bin : out) {
    if (bin.count == 0) continue;
    bin.avg_conf /= static_cast<double>(bin.count);
    bin.accuracy /= static_cast<double>(bin.count);
  }
  return out;
}

std::vector<CumulativeRow> cumulative_curves(const Prediction& pred) {
  const auto cols = top1_columns(pred);
  const auto order = ks_order(cols.scores);
  const double b = static_cast<double>(order.size());
  std::vector<CumulativeRow> out;
  out.reserve(order.size());
  double s = 0.0;
  double c = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    s += cols.scores[order[k]];
    c += cols.correct[order[k]];
    out.push_back({static_cast<double>(k + 1) / b, s / b, c / b});
  }
  return out;
}

MetricsReport evaluate(const Prediction& pred, const ReportOptions& options) {
  check_bins(options.bins);
  if (options.top_r < 1) throw ValidationError("top-r must be positive");
  MetricsReport r;
  r.n_samples = pred.size();
  r.n_classes = pred.n_classes();
  r.ece_bins = options.bins;
  r.accuracy = accuracy(pred);
  r.nll = nll_metric(pred);
  r.brier_x100 = brier_x100(pred, options.brier);
  r.ece = ece(pred, options.bins);
  r.classwise_ece = classwise_ece(pred, options.bins);
  const int max_r = std::min(options.top_r, pred.n_classes());
  for (int k = 1; k <= max_r; ++k) {
    r.ks_top.push_back(topr_ks(pred, k));
    r.within_top_ks.push_back(within_topr_ks(pred, k));
  }
  r.avg_top_ks = std::accumulate(r.ks_top.begin(), r.ks_top.end(), 0.0) / max_r;
  return r;
}

std::string to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["n_samples"] = r.n_samples;
  j["n_classes"] = r.n_classes;
  j["accuracy"] = r.accuracy;
  j["nll"] = r.nll;
  j["brier_x100"] = r.brier_x100;
  j["ece_bins"] = r.ece_bins;
  j["ece"] = r.ece;
  j["classwise_ece"] = r.classwise_ece;
  j["ks_top"] = r.ks_top;
  j["within_top_ks"] = r.within_top_ks;
  j["avg_top_ks"] = r.avg_top_ks;
  return j.dump(2);
}

std::string to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,value\n";
  os << "n_samples," << r.n_samples << '\n';
  os << "n_classes," << r.n_classes << '\n';
  os << "accuracy," << r.accuracy << '\n';
  os << "nll," << r.nll << '\n';
  os << "brier_x100," << r.brier_x100 << '\n';
  os << "ece_bins," << r.ece_bins << '\n';
  os << "ece," << r.ece << '\n';
  os << "classwise_ece," << r.classwise_ece << '\n';
  for (std::size_t k = 0; k < r.ks_top.size(); ++k) os << "ks_top" << k + 1 << ',' << r.ks_top[k] << '\n';
  for (std::size_t k = 0; k < r.within_top_ks.size(); ++k) {
    os << "within_top" << k + 1 << "_ks," << r.within_top_ks[k] << '\n';
  }
  os << "avg_top_ks," << r.avg_top_ks << '\n';
  return os.str();
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(17);
  return out;
}

}  // namespace

void write_reliability_csv(const std::vector<ReliabilityBin>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "bin_low,bin_high,count,avg_conf,accuracy\n";
  for (const auto& r : rows) {
    out << r.bin_low << ',' << r.bin_high << ',' << r.count << ',' << r.avg_conf << ',' << r.accuracy << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_cumulative_csv(const std::vector<CumulativeRow>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "fractile,cumulative_score,cumulative_correct\n";
  for (const auto& r : rows) {
    out << r.fractile << ',' << r.cumulative_score << ',' << r.cumulative_correct << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace glcal
