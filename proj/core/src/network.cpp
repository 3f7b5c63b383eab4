#include "glcal/network.hpp"

#include <bit>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "glcal/errors.hpp"
#include "glcal/random.hpp"

namespace glcal {

namespace {

void check_labels(std::span<const int> labels, Eigen::Index rows, Eigen::Index classes) {
  if (labels.empty()) throw ValidationError("batch must be nonempty");
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw ValidationError("label count " + std::to_string(labels.size()) +
                          " does not match batch size " + std::to_string(rows));
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
  }
}

void check_hidden_dims(int m, std::span<const int> hidden_dims) {
  if (m < 2) throw ValidationError("network dimension m must be at least 2");
  for (int h : hidden_dims) {
    if (h < 1) throw ValidationError("hidden widths must be positive");
  }
}

}  // namespace

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.weights.squaredNorm() + l.bias.squaredNorm();
  return s;
}

double Gradients::norm() const { return std::sqrt(squared_norm()); }

std::vector<double> Gradients::flatten() const {
  std::vector<double> out;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) out.push_back(l.weights(r, c));
    }
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
  }
  return out;
}

GLayerNetwork::GLayerNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ValidationError("network needs at least one layer");
  dim_ = layers_.front().params.in_dim();
  if (dim_ < 2) throw ValidationError("network dimension m must be at least 2");
  int expected_in = dim_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& p = layers_[i].params;
    if (p.in_dim() != expected_in) {
      throw ValidationError("layer " + std::to_string(i) + " expects input width " +
                            std::to_string(p.in_dim()) + " but previous layer emits " +
                            std::to_string(expected_in));
    }
    if (p.bias.size() != p.weights.rows()) {
      throw ValidationError("layer " + std::to_string(i) + " bias length mismatch");
    }
    if (!p.weights.allFinite() || !p.bias.allFinite()) {
      throw ValidationError("layer " + std::to_string(i) + " has non-finite parameters");
    }
    expected_in = p.out_dim();
  }
  if (expected_in != dim_) {
    throw ValidationError("last layer emits " + std::to_string(expected_in) +
                          " values, expected " + std::to_string(dim_));
  }
  if (layers_.back().has_activation) {
    throw ValidationError("the final layer must be linear; softmax is applied outside the network");
  }
}

std::vector<int> GLayerNetwork::hidden_dims() const {
  std::vector<int> out;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) out.push_back(layers_[i].params.out_dim());
  return out;
}

std::size_t GLayerNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    n += static_cast<std::size_t>(l.params.weights.size() + l.params.bias.size());
  }
  return n;
}

std::vector<double> GLayerNetwork::flatten() const {
  Gradients view;
  for (const auto& l : layers_) view.layers.push_back(l.params);
  return view.flatten();
}

void GLayerNetwork::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ValidationError("parameter vector has " + std::to_string(flat.size()) +
                          " entries, network has " + std::to_string(parameter_count()));
  }
  std::size_t k = 0;
  for (auto& l : layers_) {
    auto& w = l.params.weights;
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[k++];
    }
    for (Eigen::Index r = 0; r < l.params.bias.size(); ++r) l.params.bias(r) = flat[k++];
  }
}

Matrix GLayerNetwork::apply(const Matrix& batch) const {
  if (batch.cols() != dim_) {
    throw ValidationError("batch width " + std::to_string(batch.cols()) +
                          " does not match network dimension " + std::to_string(dim_));
  }
  Matrix x = batch;
  for (const auto& l : layers_) {
    Matrix z = x * l.params.weights.transpose();
    z.rowwise() += l.params.bias.transpose();
    if (l.has_activation) z = z.cwiseMax(0.0);
    x = std::move(z);
  }
  return x;
}

Vector softmax(const Vector& logits) {
  if (logits.size() < 2) throw ValidationError("softmax needs at least two entries");
  if (logits.hasNaN()) throw ValidationError("softmax input contains NaN");
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
  if (logits.cols() < 2) throw ValidationError("softmax needs at least two entries");
  if (logits.hasNaN()) throw ValidationError("softmax input contains NaN");
  Matrix out = logits.colwise() - logits.rowwise().maxCoeff();
  out = out.array().exp().matrix();
  const Vector sums = out.rowwise().sum();
  out.array().colwise() /= sums.array();
  return out;
}

double nll_loss(const Matrix& probs, std::span<const int> labels) {
  check_labels(labels, probs.rows(), probs.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = probs(static_cast<Eigen::Index>(i), labels[i]);
    if (p <= 0.0) return std::numeric_limits<double>::infinity();
    total -= std::log(p);
  }
  return total / static_cast<double>(labels.size());
}

double nll_from_logits(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(logits.rows());
}

ForwardTrace forward(const GLayerNetwork& net, const Matrix& batch) {
  if (batch.cols() != net.dim()) {
    throw ValidationError("batch width " + std::to_string(batch.cols()) +
                          " does not match network dimension " + std::to_string(net.dim()));
  }
  ForwardTrace trace;
  trace.input = batch;
  const Matrix* x = &trace.input;
  for (const auto& l : net.layers()) {
    Matrix z = (*x) * l.params.weights.transpose();
    z.rowwise() += l.params.bias.transpose();
    trace.pre_activations.push_back(std::move(z));
    if (l.has_activation) {
      trace.activations.push_back(trace.pre_activations.back().cwiseMax(0.0));
    } else {
      trace.activations.push_back(trace.pre_activations.back());
    }
    x = &trace.activations.back();
  }
  trace.probabilities = softmax_rows(trace.activations.back());
  return trace;
}

Gradients backward(const GLayerNetwork& net, const ForwardTrace& trace,
                   std::span<const int> labels) {
  const auto& layers = net.layers();
  if (trace.pre_activations.size() != layers.size() || trace.activations.size() != layers.size() ||
      trace.input.cols() != net.dim()) {
    throw ValidationError("forward trace does not belong to this network");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (trace.pre_activations[i].cols() != layers[i].params.out_dim() ||
        trace.pre_activations[i].rows() != trace.input.rows()) {
      throw ValidationError("forward trace layer " + std::to_string(i) + " has stale shape");
    }
  }
  check_labels(labels, trace.probabilities.rows(), trace.probabilities.cols());

  const auto batch = static_cast<double>(labels.size());
  Matrix delta = trace.probabilities;
  for (std::size_t i = 0; i < labels.size(); ++i) delta(static_cast<Eigen::Index>(i), labels[i]) -= 1.0;
  delta /= batch;

  Gradients grads;
  grads.layers.resize(layers.size());
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Matrix& layer_input = li == 0 ? trace.input : trace.activations[li - 1];
    grads.layers[li].weights = delta.transpose() * layer_input;
    grads.layers[li].bias = delta.colwise().sum().transpose();
    if (li > 0) {
      Matrix upstream = delta * layers[li].params.weights;
      if (layers[li - 1].has_activation) {
        upstream.array() *= (trace.pre_activations[li - 1].array() > 0.0).cast<double>();
      }
      delta = std::move(upstream);
    }
  }
  return grads;
}

LossGradient loss_and_gradient(const GLayerNetwork& net, const Matrix& batch,
                               std::span<const int> labels, Eigen::Index chunk_rows) {
  check_labels(labels, batch.rows(), net.dim());
  if (chunk_rows < 1) throw ValidationError("chunk size must be positive");
  const Eigen::Index n = batch.rows();
  if (n <= chunk_rows) {
    const ForwardTrace trace = forward(net, batch);
    return {nll_loss(trace.probabilities, labels), backward(net, trace, labels)};
  }
  LossGradient total;
  for (Eigen::Index start = 0; start < n; start += chunk_rows) {
    const Eigen::Index len = std::min(chunk_rows, n - start);
    const auto part = labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len));
    const ForwardTrace trace = forward(net, batch.middleRows(start, len));
    const double weight = static_cast<double>(len) / static_cast<double>(n);
    total.loss += weight * nll_loss(trace.probabilities, part);
    Gradients g = backward(net, trace, part);
    if (total.grads.layers.empty()) {
      for (auto& l : g.layers) {
        l.weights *= weight;
        l.bias *= weight;
      }
      total.grads = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.layers.size(); ++i) {
        total.grads.layers[i].weights += weight * g.layers[i].weights;
        total.grads.layers[i].bias += weight * g.layers[i].bias;
      }
    }
  }
  return total;
}

Gradients finite_diff_gradients(const GLayerNetwork& net, const Matrix& batch,
                                std::span<const int> labels, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw ValidationError("finite-difference step must lie in [1e-6, 1e-3]");
  }
  check_labels(labels, batch.rows(), net.dim());
  GLayerNetwork probe = net;
  std::vector<double> theta = net.flatten();
  std::vector<double> diff(theta.size());
  auto loss_at = [&](std::size_t k, double value) {
    const double saved = theta[k];
    theta[k] = value;
    probe.assign(theta);
    theta[k] = saved;
    return nll_loss(softmax_rows(probe.apply(batch)), labels);
  };
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double plus = loss_at(k, theta[k] + eps);
    const double minus = loss_at(k, theta[k] - eps);
    diff[k] = (plus - minus) / (2.0 * eps);
  }
  Gradients out;
  std::size_t k = 0;
  for (const auto& l : net.layers()) {
    LayerParams g{Matrix(l.params.out_dim(), l.params.in_dim()), Vector(l.params.out_dim())};
    for (Eigen::Index r = 0; r < g.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < g.weights.cols(); ++c) g.weights(r, c) = diff[k++];
    }
    for (Eigen::Index r = 0; r < g.bias.size(); ++r) g.bias(r) = diff[k++];
    out.layers.push_back(std::move(g));
  }
  return out;
}

GLayerNetwork transparent_init(int m, std::span<const int> hidden_dims, std::uint64_t seed,
                               TransparentInitOptions options) {
  check_hidden_dims(m, hidden_dims);
  for (int h : hidden_dims) {
    if (h < 2 * m) {
      throw ValidationError("hidden width " + std::to_string(h) + " is below 2m = " +
                            std::to_string(2 * m) +
                            "; transparent initialization requires H > 2C (e.g. H = 3C + 2)");
    }
  }
  Rng rng(mix_seed(seed, {0x7A45}));
  const Matrix eye = Matrix::Identity(m, m);
  std::vector<DenseLayer> layers;
  int prev = m;
  for (std::size_t li = 0; li < hidden_dims.size(); ++li) {
    const int h = hidden_dims[li];
    // Reconstruct z from the previous block (identity for the first layer) and
    // emit [z; -z; 0].
    Matrix reconstruct = Matrix::Zero(m, prev);
    if (li == 0) {
      reconstruct = eye;
    } else {
      reconstruct.leftCols(m) = eye;
      reconstruct.middleCols(m, m) = -eye;
    }
    Matrix w = Matrix::Zero(h, prev);
    w.topRows(m) = reconstruct;
    w.middleRows(m, m) = -reconstruct;
    if (options.spare_unit_noise > 0.0) {
      for (int r = 2 * m; r < h; ++r) {
        for (int c = 0; c < prev; ++c) {
          w(r, c) = rng.uniform(-options.spare_unit_noise, options.spare_unit_noise);
        }
      }
    }
    layers.push_back({{std::move(w), Vector::Zero(h)}, true});
    prev = h;
  }
  Matrix out = Matrix::Zero(m, prev);
  if (hidden_dims.empty()) {
    out = eye;
  } else {
    out.leftCols(m) = eye;
    out.middleCols(m, m) = -eye;
  }
  layers.push_back({{std::move(out), Vector::Zero(m)}, false});
  return GLayerNetwork(std::move(layers));
}

GLayerNetwork glorot_init(int m, std::span<const int> hidden_dims, std::uint64_t seed) {
  check_hidden_dims(m, hidden_dims);
  Rng rng(mix_seed(seed, {0x6C07}));
  std::vector<DenseLayer> layers;
  int prev = m;
  auto make = [&](int out, bool activation) {
    const double bound = std::sqrt(6.0 / static_cast<double>(prev + out));
    Matrix w(out, prev);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < prev; ++c) w(r, c) = rng.uniform(-bound, bound);
    }
    layers.push_back({{std::move(w), Vector::Zero(out)}, activation});
    prev = out;
  };
  for (int h : hidden_dims) make(h, true);
  make(m, false);
  return GLayerNetwork(std::move(layers));
}

// GLNW layout (little-endian): "GLNW", u32 layer count, then per layer
// u32 out_dim, u32 in_dim, u8 has_activation, f32 weights row-major, f32 bias.
void save_network(const GLayerNetwork& net, const std::filesystem::path& path) {
  std::string out = "GLNW";
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  };
  auto put_f32 = [&](double v) { put_u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); };
  put_u32(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    put_u32(static_cast<std::uint32_t>(l.params.out_dim()));
    put_u32(static_cast<std::uint32_t>(l.params.in_dim()));
    out.push_back(l.has_activation ? '\1' : '\0');
    for (Eigen::Index r = 0; r < l.params.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.params.weights.cols(); ++c) put_f32(l.params.weights(r, c));
    }
    for (Eigen::Index r = 0; r < l.params.bias.size(); ++r) put_f32(l.params.bias(r));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("write failed for " + path.string());
}

GLayerNetwork load_network(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = std::move(ss).str();
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw FormatError(path.string() + ": truncated GLNW file");
  };
  auto get_u32 = [&]() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  };
  if (bytes.size() < 8 || bytes.compare(0, 4, "GLNW") != 0) {
    throw FormatError(path.string() + ": missing GLNW magic");
  }
  pos = 4;
  const std::uint32_t count = get_u32();
  if (count == 0) throw FormatError(path.string() + ": network has no layers");
  std::vector<DenseLayer> layers;
  for (std::uint32_t li = 0; li < count; ++li) {
    const std::uint32_t out_dim = get_u32();
    const std::uint32_t in_dim = get_u32();
    need(1);
    const auto flag = static_cast<unsigned char>(bytes[pos++]);
    if (flag > 1) throw FormatError(path.string() + ": bad activation flag");
    need(4ull * out_dim * (static_cast<std::size_t>(in_dim) + 1));
    DenseLayer l{{Matrix(out_dim, in_dim), Vector(out_dim)}, flag == 1};
    for (std::uint32_t r = 0; r < out_dim; ++r) {
      for (std::uint32_t c = 0; c < in_dim; ++c) l.params.weights(r, c) = std::bit_cast<float>(get_u32());
    }
    for (std::uint32_t r = 0; r < out_dim; ++r) l.params.bias(r) = std::bit_cast<float>(get_u32());
    layers.push_back(std::move(l));
  }
  if (pos != bytes.size()) throw FormatError(path.string() + ": trailing bytes after last layer");
  return GLayerNetwork(std::move(layers));
}

}  // namespace glcal
