#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace glcal {

/// Logits as stored on disk: one row per sample, 32-bit floats.
using LogitMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Double-precision working matrix used for all arithmetic (rows are samples).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using Labels = std::vector<int>;

enum class FileFormat { binary, csv };

/// Picks csv for a ".csv" extension and the binary GLZ1 layout otherwise.
FileFormat format_from_path(const std::filesystem::path& path);

/// N samples of m-dimensional pre-softmax logits with integer labels in [0, n_classes).
///
/// Immutable after construction. The constructor enforces the invariants: N >= 1,
/// m >= 2, n_classes >= 2, m == n_classes, finite logits and in-range labels.
class LogitDataset {
 public:
  LogitDataset(LogitMatrix logits, Labels labels, int n_classes);

  std::size_t size() const noexcept { return labels_.size(); }
  int dim() const noexcept { return static_cast<int>(logits_.cols()); }
  int n_classes() const noexcept { return n_classes_; }

  const LogitMatrix& logits() const noexcept { return logits_; }
  const Labels& labels() const noexcept { return labels_; }

  /// Logits widened to double.
  Matrix logits_double() const { return logits_.cast<double>(); }

  /// Rows at the given indices, in that order.
  LogitDataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const LogitDataset& a, const LogitDataset& b);

 private:
  LogitMatrix logits_;
  Labels labels_;
  int n_classes_;
};

LogitDataset load_logits(const std::filesystem::path& path, FileFormat format);
inline LogitDataset load_logits(const std::filesystem::path& path) {
  return load_logits(path, format_from_path(path));
}

void save_logits(const LogitDataset& dataset, const std::filesystem::path& path,
                 FileFormat format);
inline void save_logits(const LogitDataset& dataset, const std::filesystem::path& path) {
  save_logits(dataset, path, format_from_path(path));
}

/// Random disjoint partition into (keep, holdout) with sizes ceil(N(1-f)) and floor(N f).
std::pair<LogitDataset, LogitDataset> split(const LogitDataset& dataset, double holdout_fraction,
                                            std::uint64_t seed);

/// Assignment of each of N samples to one of k validation folds.
struct FoldPlan {
  int k = 0;
  std::vector<int> assignments;
  std::uint64_t seed = 0;

  std::vector<std::size_t> validation_indices(int fold) const;
  std::vector<std::size_t> training_indices(int fold) const;
};

/// Shuffles [0, N) with `seed` and deals the permutation round-robin into k folds,
/// so fold sizes differ by at most one.
FoldPlan make_folds(std::size_t n, int k, std::uint64_t seed);

}  // namespace glcal
