#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "glcal/dataset.hpp"
#include "glcal/network.hpp"

namespace glcal {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  static constexpr int kFullBatch = 0;
  /// Full batch up to 50,000 samples, 1024-sample mini-batches beyond.
  static constexpr int kAutoBatch = -1;

  double learning_rate = 1e-3;
  /// Decoupled: every step multiplies parameters by max(0, 1 - lr * wd).
  double weight_decay = 0.0;
  int batch_size = kAutoBatch;
  int max_epochs = 1000;
  /// Epochs without a strict monitor-NLL improvement before stopping.
  int patience = 25;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Biases shrink with the weights unless this is cleared.
  bool decay_biases = true;
  /// A loss above this multiple of max(1, initial NLL) counts as divergence,
  /// as does any non-finite loss. Infinity disables the bound.
  double divergence_factor = 100.0;

  /// Throws ValidationError if any field is out of range.
  void validate() const;
  /// Batch size actually used for a training set of n samples.
  std::size_t effective_batch(std::size_t n) const;
};

/// Extra structure for single-affine-layer networks (vector/matrix scaling).
struct LinearLayerRegularizer {
  /// Penalty on the mean squared off-diagonal weight, applied as a proximal
  /// shrink of the off-diagonal entries after each step.
  double offdiag_penalty = 0.0;
  /// Keep the weight matrix diagonal (off-diagonal gradients are dropped).
  bool diagonal_only = false;

  bool active() const noexcept { return offdiag_penalty > 0.0 || diagonal_only; }
};

enum class StopReason { early_stop, max_epochs };

std::string to_string(StopReason reason);

struct EpochRecord {
  int epoch = 0;
  /// Mean mini-batch loss during the epoch (epoch 0: loss at initialization).
  double train_nll = 0.0;
  /// NLL of the parameters at the end of the epoch on the monitor set.
  double monitor_nll = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  StopReason stop_reason = StopReason::max_epochs;

  double best_monitor_nll() const { return epochs.at(static_cast<std::size_t>(best_epoch)).monitor_nll; }
};

struct FitResult {
  GLayerNetwork network;
  TrainLog log;
};

/// Adam/SGD moments, shaped like the network parameters.
struct OptimizerState {
  std::vector<LayerParams> first_moment;
  std::vector<LayerParams> second_moment;
  long step = 0;

  static OptimizerState zeros_like(const GLayerNetwork& net);
};

/// One optimizer step with decoupled weight decay.
void apply_update(GLayerNetwork& net, const Gradients& grads, OptimizerState& state,
                  const TrainConfig& cfg);

/// NLL of softmax(net(z)) over a whole dataset, through the probability route
/// (so underflow at a label reports +infinity).
double dataset_nll(const GLayerNetwork& net, const LogitDataset& data);
double batch_nll(const GLayerNetwork& net, const Matrix& batch, std::span<const int> labels);

/// Minimizes training NLL and returns the parameters with the lowest monitor NLL
/// (epoch 0, the initial network, included). Throws TrainingDiverged on a
/// non-finite or exploding loss.
FitResult fit(const GLayerNetwork& init, const LogitDataset& train, const LogitDataset& monitor,
              const TrainConfig& cfg, const LinearLayerRegularizer& regularizer = {});

struct HyperParams {
  double learning_rate = 0.0;
  double weight_decay = 0.0;
};

struct HyperGrid {
  std::vector<double> learning_rates;
  std::vector<double> weight_decays;

  /// lr in {1e-2, 1e-3, 1e-4} x wd in {0, 1e-4, 1e-3, 1e-2}.
  static HyperGrid defaults();

  std::size_t size() const { return learning_rates.size() * weight_decays.size(); }
  /// Points enumerated learning-rate major.
  HyperParams at(std::size_t index) const;
  void validate() const;
};

struct CvOptions {
  /// Worker threads for (fold, grid point) cells. Results do not depend on it.
  int jobs = 1;
};

struct CvResult {
  HyperParams best;
  std::size_t best_index = 0;
  int folds = 0;
  /// Best-epoch validation NLL per cell, indexed [fold * grid.size() + grid_index];
  /// +infinity where the fit diverged.
  std::vector<double> table;
  /// Mean over folds per grid point.
  std::vector<double> mean_scores;

  double cell(int fold, std::size_t grid_index) const {
    return table[static_cast<std::size_t>(fold) * mean_scores.size() + grid_index];
  }
};

/// k-fold cross-validation of transparent-initialized g-layer networks over the grid.
/// The winner minimizes mean validation NLL; ties go to the smaller weight decay,
/// then the smaller learning rate, then the earlier grid index.
CvResult cross_validate(const LogitDataset& dataset, const HyperGrid& grid, int k,
                        const std::vector<int>& hidden_dims, const TrainConfig& base,
                        const CvOptions& options = {});

/// Seed for one CV cell; independent of scheduling.
std::uint64_t cell_seed(std::uint64_t seed, int fold, std::size_t grid_index);

void write_trainlog_csv(const TrainLog& log, const std::filesystem::path& path);
std::string trainlog_summary_json(const TrainLog& log, const HyperParams& chosen);
void write_cv_table_csv(const CvResult& cv, const HyperGrid& grid,
                        const std::filesystem::path& path);

}  // namespace glcal
