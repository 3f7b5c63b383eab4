#include "glcal/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <glcal/network.hpp>
#include <glcal/random.hpp>

namespace glcal::cli {

namespace {

// Entries smaller than this are compared on an absolute scale.
constexpr double kScaleFloor = 1e-5;
// Central differences are meaningless across a ReLU kink; inputs are redrawn
// until every hidden pre-activation clears this margin.
constexpr double kKinkMargin = 1e-3;

GLayerNetwork random_network(Rng& rng, int m) {
  const int hidden_layers = static_cast<int>(rng.below(3));  // 0..2 hidden, depth <= 3
  std::vector<DenseLayer> layers;
  int prev = m;
  for (int h = 0; h <= hidden_layers; ++h) {
    const bool last = h == hidden_layers;
    const int out = last ? m : 1 + static_cast<int>(rng.below(8));
    Matrix w(out, prev);
    Vector b(out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1.5, 1.5);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-0.5, 0.5);
    layers.push_back({{std::move(w), std::move(b)}, !last});
    prev = out;
  }
  return GLayerNetwork(std::move(layers));
}

bool near_kink(const GLayerNetwork& net, const Matrix& batch) {
  const ForwardTrace trace = forward(net, batch);
  for (std::size_t i = 0; i + 1 < net.layers().size(); ++i) {
    if (trace.pre_activations[i].cwiseAbs().minCoeff() < kKinkMargin) return true;
  }
  return false;
}

}  // namespace

GradCheckSummary run_grad_check(std::uint64_t seed, int trials, double eps) {
  GradCheckSummary summary;
  Rng rng(mix_seed(seed, {0x6AD}));
  for (int t = 0; t < trials; ++t) {
    const int m = 2 + static_cast<int>(rng.below(4));
    const int batch = 1 + static_cast<int>(rng.below(8));
    const GLayerNetwork net = random_network(rng, m);
    Matrix x(batch, m);
    do {
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * rng.normal();
    } while (near_kink(net, x));
    std::vector<int> labels(static_cast<std::size_t>(batch));
    for (int& y : labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));

    const ForwardTrace trace = forward(net, x);
    std::vector<double> analytic = backward(net, trace, labels).flatten();
#ifdef GLCAL_INJECT_GRAD_SIGN_FLIP
    for (double& g : analytic) g = -g;
#endif
    const std::vector<double> numeric = finite_diff_gradients(net, x, labels, eps).flatten();
    for (std::size_t k = 0; k < analytic.size(); ++k) {
      const double abs_err = std::abs(analytic[k] - numeric[k]);
      const double scale = std::max({std::abs(analytic[k]), std::abs(numeric[k]), kScaleFloor});
      summary.max_absolute_error = std::max(summary.max_absolute_error, abs_err);
      summary.max_relative_error = std::max(summary.max_relative_error, abs_err / scale);
    }
    ++summary.trials;
  }
  return summary;
}

}  // namespace glcal::cli
