#include "glcal/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "glcal/errors.hpp"
#include "glcal/random.hpp"

namespace glcal {

namespace {

bool all_finite(const GLayerNetwork& net) {
  for (const auto& l : net.layers()) {
    if (!l.params.weights.allFinite() || !l.params.bias.allFinite()) return false;
  }
  return true;
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

void apply_regularizer(GLayerNetwork& net, Gradients& grads, const LinearLayerRegularizer& reg,
                       double learning_rate, bool after_step) {
  if (!reg.active()) return;
  if (net.layers().size() != 1) {
    throw ValidationError("linear-layer regularization needs a single-layer network");
  }
  if (!after_step) {
    if (reg.diagonal_only) {
      auto& g = grads.layers[0].weights;
      const Vector d = g.diagonal();
      g.setZero();
      g.diagonal() = d;
    }
    return;
  }
  if (reg.offdiag_penalty > 0.0 && !reg.diagonal_only) {
    auto& w = net.params(0).weights;
    const double n = static_cast<double>(w.rows());
    const double strength = 2.0 * reg.offdiag_penalty / (n * (n - 1.0));
    const double shrink = 1.0 / (1.0 + learning_rate * strength);
    const Vector d = w.diagonal();
    w *= shrink;
    w.diagonal() = d;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning rate must be positive and finite");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ValidationError("weight decay must be nonnegative and finite");
  }
  if (batch_size < kAutoBatch) throw ValidationError("batch size must be positive");
  if (max_epochs < 0) throw ValidationError("max_epochs must be nonnegative");
  if (patience < 1) throw ValidationError("patience must be positive");
  if (max_epochs > 0 && patience > max_epochs) {
    throw ValidationError("patience must not exceed max_epochs");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ValidationError("adam betas must lie in [0, 1) and eps must be positive");
  }
  if (!(divergence_factor > 1.0)) throw ValidationError("divergence factor must exceed 1");
}

std::size_t TrainConfig::effective_batch(std::size_t n) const {
  if (batch_size == kFullBatch) return n;
  if (batch_size == kAutoBatch) return n <= 50000 ? n : std::size_t{1024};
  return std::min(n, static_cast<std::size_t>(batch_size));
}

std::string to_string(StopReason reason) {
  return reason == StopReason::early_stop ? "early_stop" : "max_epochs";
}

OptimizerState OptimizerState::zeros_like(const GLayerNetwork& net) {
  OptimizerState s;
  for (const auto& l : net.layers()) {
    LayerParams z{Matrix::Zero(l.params.out_dim(), l.params.in_dim()),
                  Vector::Zero(l.params.out_dim())};
    s.first_moment.push_back(z);
    s.second_moment.push_back(std::move(z));
  }
  return s;
}

void apply_update(GLayerNetwork& net, const Gradients& grads, OptimizerState& state,
                  const TrainConfig& cfg) {
  const std::size_t n_layers = net.layers().size();
  if (grads.layers.size() != n_layers) throw ValidationError("gradient shape mismatch");
  if (state.first_moment.empty()) state = OptimizerState::zeros_like(net);
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& p = net.layers()[i].params;
    if (grads.layers[i].weights.rows() != p.weights.rows() ||
        grads.layers[i].weights.cols() != p.weights.cols() ||
        grads.layers[i].bias.size() != p.bias.size()) {
      throw ValidationError("gradient shape mismatch at layer " + std::to_string(i));
    }
  }
  const double lr = cfg.learning_rate;
  const double decay = std::max(0.0, 1.0 - lr * cfg.weight_decay);
  const double bias_decay = cfg.decay_biases ? decay : 1.0;
  ++state.step;

  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < n_layers; ++i) {
      auto& p = net.params(i);
      p.weights = decay * p.weights - lr * grads.layers[i].weights;
      p.bias = bias_decay * p.bias - lr * grads.layers[i].bias;
    }
    return;
  }

  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto adam = [&](auto& theta, auto& m, auto& v, const auto& g, double shrink) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    theta = shrink * theta -
            lr * ((m / c1).array() / ((v / c2).array().sqrt() + cfg.adam_eps)).matrix();
  };
  for (std::size_t i = 0; i < n_layers; ++i) {
    auto& p = net.params(i);
    adam(p.weights, state.first_moment[i].weights, state.second_moment[i].weights,
         grads.layers[i].weights, decay);
    adam(p.bias, state.first_moment[i].bias, state.second_moment[i].bias, grads.layers[i].bias,
         bias_decay);
  }
}

double dataset_nll(const GLayerNetwork& net, const LogitDataset& data) {
  return batch_nll(net, data.logits_double(), data.labels());
}

double batch_nll(const GLayerNetwork& net, const Matrix& batch, std::span<const int> labels) {
  constexpr Eigen::Index kChunk = 4096;
  const Eigen::Index n = batch.rows();
  double total = 0.0;
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - start);
    const Matrix out = net.apply(batch.middleRows(start, len));
    if (!out.allFinite()) return std::numeric_limits<double>::infinity();
    const auto part = labels.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len));
    total += static_cast<double>(len) * nll_loss(softmax_rows(out), part);
  }
  return total / static_cast<double>(n);
}

FitResult fit(const GLayerNetwork& init, const LogitDataset& train, const LogitDataset& monitor,
              const TrainConfig& cfg, const LinearLayerRegularizer& regularizer) {
  cfg.validate();
  if (train.dim() != init.dim() || monitor.dim() != init.dim() ||
      train.n_classes() != monitor.n_classes()) {
    throw ValidationError("train/monitor datasets and network must share m and n_classes");
  }
  const bool monitor_is_train = &train == &monitor;

  GLayerNetwork net = init;
  GLayerNetwork best = init;
  TrainLog log;

  const double init_train = dataset_nll(net, train);
  const double init_monitor = monitor_is_train ? init_train : dataset_nll(net, monitor);
  if (!std::isfinite(init_train) || !std::isfinite(init_monitor)) {
    throw TrainingDiverged(0, cfg.learning_rate);
  }
  const double ceiling = cfg.divergence_factor * std::max({1.0, init_train, init_monitor});
  log.epochs.push_back({0, init_train, init_monitor});
  double best_nll = init_monitor;
  int since_best = 0;

  const Matrix x = train.logits_double();
  const Matrix monitor_x = monitor_is_train ? Matrix() : monitor.logits_double();
  const auto& labels = train.labels();
  const std::size_t n = train.size();
  const std::size_t batch = cfg.effective_batch(n);
  const bool full_batch = batch >= n;
  Rng rng(mix_seed(cfg.seed, {0x7EA1}));
  OptimizerState state = OptimizerState::zeros_like(net);

  log.stop_reason = StopReason::max_epochs;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0;
    auto step = [&](const Matrix& xb, std::span<const int> yb) {
      LossGradient lg = loss_and_gradient(net, xb, yb);
      if (!(lg.loss <= ceiling)) throw TrainingDiverged(epoch, cfg.learning_rate);
      loss_sum += lg.loss * static_cast<double>(yb.size());
      seen += yb.size();
      Gradients& grads = lg.grads;
      apply_regularizer(net, grads, regularizer, cfg.learning_rate, false);
      apply_update(net, grads, state, cfg);
      apply_regularizer(net, grads, regularizer, cfg.learning_rate, true);
      if (!all_finite(net)) throw TrainingDiverged(epoch, cfg.learning_rate);
    };

    if (full_batch) {
      step(x, labels);
    } else {
      const auto order = rng.permutation(n);
      std::vector<int> yb;
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t len = std::min(batch, n - start);
        const std::span<const std::size_t> rows(order.data() + start, len);
        yb.resize(len);
        for (std::size_t i = 0; i < len; ++i) yb[i] = labels[rows[i]];
        step(gather_rows(x, rows), yb);
      }
    }

    const double monitor_nll =
        monitor_is_train ? batch_nll(net, x, labels) : batch_nll(net, monitor_x, monitor.labels());
    if (!(monitor_nll <= ceiling)) throw TrainingDiverged(epoch, cfg.learning_rate);
    log.epochs.push_back({epoch, loss_sum / static_cast<double>(seen), monitor_nll});

    if (monitor_nll < best_nll) {
      best_nll = monitor_nll;
      best = net;
      log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      log.stop_reason = StopReason::early_stop;
      break;
    }
  }
  return {std::move(best), std::move(log)};
}

HyperGrid HyperGrid::defaults() {
  return {{1e-2, 1e-3, 1e-4}, {0.0, 1e-4, 1e-3, 1e-2}};
}

HyperParams HyperGrid::at(std::size_t index) const {
  const std::size_t nw = weight_decays.size();
  return {learning_rates.at(index / nw), weight_decays.at(index % nw)};
}

void HyperGrid::validate() const {
  if (learning_rates.empty() || weight_decays.empty()) {
    throw ValidationError("hyper-parameter grid must have at least one learning rate and one weight decay");
  }
  for (double lr : learning_rates) {
    if (!(lr > 0.0)) throw ValidationError("grid learning rates must be positive");
  }
  for (double wd : weight_decays) {
    if (!(wd >= 0.0)) throw ValidationError("grid weight decays must be nonnegative");
  }
}

std::uint64_t cell_seed(std::uint64_t seed, int fold, std::size_t grid_index) {
  return mix_seed(seed, {0xCE11, static_cast<std::uint64_t>(fold), grid_index});
}

CvResult cross_validate(const LogitDataset& dataset, const HyperGrid& grid, int k,
                        const std::vector<int>& hidden_dims, const TrainConfig& base,
                        const CvOptions& options) {
  grid.validate();
  base.validate();
  const FoldPlan plan = make_folds(dataset.size(), k, base.seed);

  std::vector<LogitDataset> train_parts;
  std::vector<LogitDataset> val_parts;
  for (int f = 0; f < k; ++f) {
    train_parts.push_back(dataset.subset(plan.training_indices(f)));
    val_parts.push_back(dataset.subset(plan.validation_indices(f)));
  }

  const std::size_t g_count = grid.size();
  const std::size_t cells = static_cast<std::size_t>(k) * g_count;
  CvResult result;
  result.folds = k;
  result.table.assign(cells, std::numeric_limits<double>::infinity());

  auto run_cell = [&](std::size_t c) {
    const int fold = static_cast<int>(c / g_count);
    const std::size_t gi = c % g_count;
    const HyperParams hp = grid.at(gi);
    TrainConfig cfg = base;
    cfg.learning_rate = hp.learning_rate;
    cfg.weight_decay = hp.weight_decay;
    cfg.seed = cell_seed(base.seed, fold, gi);
    const GLayerNetwork init = transparent_init(dataset.dim(), hidden_dims, cfg.seed);
    try {
      const auto fitted = fit(init, train_parts[static_cast<std::size_t>(fold)],
                              val_parts[static_cast<std::size_t>(fold)], cfg);
      result.table[c] = fitted.log.best_monitor_nll();
    } catch (const TrainingDiverged&) {
      result.table[c] = std::numeric_limits<double>::infinity();
    }
  };

  const int jobs = std::max(1, options.jobs);
  if (jobs == 1 || cells == 1) {
    for (std::size_t c = 0; c < cells; ++c) run_cell(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (int t = 0; t < std::min<int>(jobs, static_cast<int>(cells)); ++t) {
      workers.emplace_back([&] {
        for (std::size_t c = next++; c < cells; c = next++) {
          try {
            run_cell(c);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);
  }

  result.mean_scores.assign(g_count, 0.0);
  for (std::size_t gi = 0; gi < g_count; ++gi) {
    double sum = 0.0;
    for (int f = 0; f < k; ++f) sum += result.cell(f, gi);
    result.mean_scores[gi] = sum / static_cast<double>(k);
  }

  std::size_t best = 0;
  for (std::size_t gi = 1; gi < g_count; ++gi) {
    const double a = result.mean_scores[gi];
    const double b = result.mean_scores[best];
    const HyperParams pa = grid.at(gi);
    const HyperParams pb = grid.at(best);
    const bool better =
        a < b || (a == b && (pa.weight_decay < pb.weight_decay ||
                             (pa.weight_decay == pb.weight_decay &&
                              pa.learning_rate < pb.learning_rate)));
    if (better) best = gi;
  }
  result.best_index = best;
  result.best = grid.at(best);
  return result;
}

void write_trainlog_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "epoch,train_nll,monitor_nll\n";
  for (const auto& e : log.epochs) out << e.epoch << ',' << e.train_nll << ',' << e.monitor_nll << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::string trainlog_summary_json(const TrainLog& log, const HyperParams& chosen) {
  nlohmann::ordered_json j;
  j["best_epoch"] = log.best_epoch;
  j["stop_reason"] = to_string(log.stop_reason);
  j["epochs_run"] = log.epochs.empty() ? 0 : log.epochs.back().epoch;
  j["best_monitor_nll"] = log.epochs.empty() ? 0.0 : log.best_monitor_nll();
  j["learning_rate"] = chosen.learning_rate;
  j["weight_decay"] = chosen.weight_decay;
  return j.dump(2);
}

void write_cv_table_csv(const CvResult& cv, const HyperGrid& grid,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(17);
  out << "fold,grid_index,learning_rate,weight_decay,val_nll\n";
  for (int f = 0; f < cv.folds; ++f) {
    for (std::size_t gi = 0; gi < cv.mean_scores.size(); ++gi) {
      const auto hp = grid.at(gi);
      out << f << ',' << gi << ',' << hp.learning_rate << ',' << hp.weight_decay << ','
          << cv.cell(f, gi) << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace glcal
