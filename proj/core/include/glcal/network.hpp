#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "glcal/dataset.hpp"

namespace glcal {

/// Parameters of one affine map `x -> W x + b` (W is out_dim x in_dim).
struct LayerParams {
  Matrix weights;
  Vector bias;

  int out_dim() const noexcept { return static_cast<int>(weights.rows()); }
  int in_dim() const noexcept { return static_cast<int>(weights.cols()); }
};

/// Dense layer: affine map followed by ReLU when `has_activation` is set.
struct DenseLayer {
  LayerParams params;
  bool has_activation = false;
};

/// Same shape as a network's parameters.
struct Gradients {
  std::vector<LayerParams> layers;

  double squared_norm() const;
  double norm() const;
  std::vector<double> flatten() const;
};

/// A stack of dense layers mapping R^m to R^m. The softmax is not part of the
/// network; callers apply it to the pre-softmax output.
class GLayerNetwork {
 public:
  explicit GLayerNetwork(std::vector<DenseLayer> layers);

  int dim() const noexcept { return dim_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<int> hidden_dims() const;
  std::size_t parameter_count() const;

  /// Parameters in layer order, each layer as row-major weights then bias.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  /// Pre-softmax output for a batch (rows are samples). No intermediates are kept.
  Matrix apply(const Matrix& batch) const;

  /// Mutable parameter access for the training module's update step.
  LayerParams& params(std::size_t layer) { return layers_[layer].params; }

 private:
  std::vector<DenseLayer> layers_;
  int dim_;
};

/// Intermediates of one forward pass, retained for `backward`.
struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre_activations;  // per layer, B x out_dim
  std::vector<Matrix> activations;      // per layer, B x out_dim (== pre-activation if linear)
  Matrix probabilities;                 // softmax of the last activation

  const Matrix& output() const { return activations.back(); }
};

/// Numerically stable softmax (max subtraction). Throws ValidationError on NaN or n < 2.
Vector softmax(const Vector& logits);

/// Row-wise softmax of a batch.
Matrix softmax_rows(const Matrix& logits);

/// Mean of -log(probs[i, labels[i]]). Returns +infinity if any labelled
/// probability is exactly zero; callers decide whether that is fatal.
double nll_loss(const Matrix& probs, std::span<const int> labels);

/// NLL of softmax(logits) computed through log-sum-exp (never infinite for finite logits).
double nll_from_logits(const Matrix& logits, std::span<const int> labels);

ForwardTrace forward(const GLayerNetwork& net, const Matrix& batch);

/// Exact gradient of `nll_loss` with respect to every weight and bias.
Gradients backward(const GLayerNetwork& net, const ForwardTrace& trace, std::span<const int> labels);

struct LossGradient {
  double loss = 0.0;
  Gradients grads;
};

/// NLL and its gradient over a large batch, computed in row chunks through
/// `forward`/`backward` and combined by chunk weight. Equal to a single
/// full-batch pass up to summation order.
LossGradient loss_and_gradient(const GLayerNetwork& net, const Matrix& batch,
                               std::span<const int> labels, Eigen::Index chunk_rows = 1024);

/// Central-difference gradient of the NLL; eps must lie in [1e-6, 1e-3].
Gradients finite_diff_gradients(const GLayerNetwork& net, const Matrix& batch,
                                std::span<const int> labels, double eps);

struct TransparentInitOptions {
  /// Scale of uniform noise added to the incoming weights of the spare hidden
  /// units (those beyond 2m). Zero keeps the identity exact.
  double spare_unit_noise = 0.0;
};

/// Network that computes the identity at initialization. Each hidden layer routes
/// z through [I; -I; 0] so that relu(z) - relu(-z) = z; every hidden width must be
/// at least 2m.
GLayerNetwork transparent_init(int m, std::span<const int> hidden_dims, std::uint64_t seed,
                               TransparentInitOptions options = {});

/// Glorot-uniform weights in +-sqrt(6 / (in + out)), zero biases.
GLayerNetwork glorot_init(int m, std::span<const int> hidden_dims, std::uint64_t seed);

/// Recommended hidden width for n classes: 3n + 2.
constexpr int default_hidden_width(int n_classes) { return 3 * n_classes + 2; }

void save_network(const GLayerNetwork& net, const std::filesystem::path& path);
GLayerNetwork load_network(const std::filesystem::path& path);

}  // namespace glcal
