#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace fixtures {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("glcal-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

glcal::Prediction random_prediction(glcal::Rng& rng, int b, int n, bool with_ties) {
  glcal::Matrix probs(b, n);
  glcal::Labels labels(static_cast<std::size_t>(b));
  const double scale = rng.uniform(0.1, 6.0);
  for (int i = 0; i < b; ++i) {
    if (with_ties) {
      // Integer weights over a small range give repeated rows and tied entries.
      glcal::Vector w(n);
      for (int j = 0; j < n; ++j) w(j) = static_cast<double>(rng.below(4));
      if (w.sum() == 0.0) w(static_cast<int>(rng.below(static_cast<std::uint64_t>(n)))) = 1.0;
      probs.row(i) = (w / w.sum()).transpose();
    } else {
      glcal::Vector z(n);
      for (int j = 0; j < n; ++j) z(j) = scale * rng.normal();
      probs.row(i) = glcal::softmax(z).transpose();
    }
    labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
  }
  if (with_ties) {
    // Keep the label on a class with positive mass so NLL stays finite.
    for (int i = 0; i < b; ++i) {
      auto& y = labels[static_cast<std::size_t>(i)];
      while (probs(i, y) == 0.0) y = (y + 1) % n;
    }
  }
  return glcal::Prediction(std::move(probs), std::move(labels));
}

naive::Rows to_rows(const glcal::Matrix& m) {
  naive::Rows rows(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) rows[static_cast<std::size_t>(i)].push_back(m(i, j));
  }
  return rows;
}

glcal::LogitDataset make_dataset(const std::vector<std::vector<float>>& rows,
                                 const std::vector<int>& labels, int n_classes) {
  glcal::LogitMatrix z(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(rows.at(0).size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return glcal::LogitDataset(std::move(z), labels, n_classes);
}

glcal::SyntheticSample calibrated_oracle(int n_classes, std::size_t n, std::uint64_t seed) {
  const auto spec = glcal::SyntheticSpec::axis_aligned(n_classes, 1.0, 1.0, seed);
  return glcal::synth_sample(spec, n);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fixtures
