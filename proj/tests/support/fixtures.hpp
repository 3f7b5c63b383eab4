#pragma once

#include <filesystem>
#include <string>

#include <glcal/glcal.hpp>

#include "naive_metrics.hpp"

namespace fixtures {

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Random Prediction of B rows over n classes. Every third instance uses
// quantized probabilities so that score ties are exercised.
glcal::Prediction random_prediction(glcal::Rng& rng, int b, int n, bool with_ties);

naive::Rows to_rows(const glcal::Matrix& m);

glcal::LogitDataset make_dataset(const std::vector<std::vector<float>>& rows,
                                 const std::vector<int>& labels, int n_classes);

// Axis-aligned oracle data with margin = sigma^2, so the posterior is softmax(z).
glcal::SyntheticSample calibrated_oracle(int n_classes, std::size_t n, std::uint64_t seed);

std::string read_file(const std::filesystem::path& path);

}  // namespace fixtures
