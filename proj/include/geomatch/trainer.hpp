#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geomatch/checkpoint.hpp"
#include "geomatch/network.hpp"
#include "geomatch/synthgen.hpp"

namespace geomatch {

struct TrainHyper {
  Scalar lr = Scalar(1e-3);
  Scalar momentum = Scalar(0.9);
  Scalar weight_decay = 0;
  std::size_t batch = 16;
  int epochs = 10;
  // Stop after this many epochs without a validation improvement.
  int patience = 3;
  std::uint64_t seed = 0;
};

struct EpochRow {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double wall_seconds = 0;
};

struct TrainReport {
  // Validation loss of the weights training started from.
  double initial_val_loss = 0;
  std::vector<EpochRow> epochs;
  std::vector<double> batch_losses;
  int best_epoch = 0;
  double best_val_loss = 0;
  bool early_stopped = false;

  // CSV: epoch,train_loss,val_loss,wall_seconds (row 0 holds the initial
  // validation loss and an empty train loss).
  std::string to_csv() const;
};

/// SGD with momentum on the mean grid loss. Batch order is a pure function of
/// (seed, epoch); the last partial batch of an epoch is dropped.
class Trainer {
 public:
  Trainer(GeometryEstimator& model, TrainHyper hyper);

  // One update on the given pairs; returns the batch loss before the step.
  double step(std::span<const TrainingPair* const> batch);
  // Mean grid loss in eval mode over `pairs` (batched, no gradients).
  double evaluate(std::span<const TrainingPair> pairs);
  // Train-mode forward loss without an update (used for overfit checks).
  double train_mode_loss(std::span<const TrainingPair* const> batch);

  /// Runs epochs until hyper.epochs have been completed in total (counting
  /// any resumed ones) or early stopping triggers. When `out_checkpoint` is
  /// non-empty it is rewritten after each epoch (and written once even when
  /// no epoch runs), and `<out>.best` holds the lowest-validation-loss weights.
  TrainReport fit(std::span<const TrainingPair> train, std::span<const TrainingPair> val,
                  const std::filesystem::path& out_checkpoint = {});

  // Epoch order used for `epoch` (0-based).
  std::vector<std::size_t> batch_order(std::size_t n, int epoch) const;

  Checkpoint checkpoint() const;
  // Restores model weights, optimizer velocities and progress counters.
  void resume(const Checkpoint& checkpoint);

  // Called after every completed epoch (progress reporting).
  void on_epoch(std::function<void(const EpochRow&)> callback) { on_epoch_ = std::move(callback); }

  int completed_epochs() const { return completed_epochs_; }
  const TrainHyper& hyper() const { return hyper_; }

 private:
  GeometryEstimator& model_;
  TrainHyper hyper_;
  std::vector<NamedTensor> trainable_;
  std::vector<std::vector<Scalar>> velocity_;
  int completed_epochs_ = 0;
  double best_val_ = 0;
  bool has_best_ = false;
  int since_best_ = 0;
  bool stopped_ = false;
  std::function<void(const EpochRow&)> on_epoch_;
};

/// Applies the affine stage to each pair's image A and rewrites the target as
/// the residual spline inverse(affine) o theta_gt, giving refinement-stage
/// training data.
std::vector<TrainingPair> prewarp_for_refinement(std::span<const TrainingPair> pairs,
                                                 GeometryEstimator& affine_stage);

struct StageTrainingOptions {
  TrainHyper hyper;
  ModelConfig model;
  // Resume from this checkpoint when non-empty.
  std::filesystem::path resume_from;
  // For the spline stage: pre-warp image A with this affine checkpoint.
  std::filesystem::path prewarp_affine;
  std::function<void(const EpochRow&)> on_epoch;
};

/// Loads the manifest's train/val splits, checks that their kind matches the
/// model, trains and writes `out_checkpoint` (+ ".best") and returns the report.
TrainReport train_stage(const std::filesystem::path& manifest_path,
                        const StageTrainingOptions& options,
                        const std::filesystem::path& out_checkpoint);

}  // namespace geomatch
