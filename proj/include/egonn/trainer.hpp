#pragma once

#include <optional>
#include <string>
#include <vector>

#include "egonn/data.hpp"
#include "egonn/losses.hpp"
#include "egonn/model.hpp"

namespace egonn::train {

/// Adam with per-parameter moment estimates. Moment buffers and step counts
/// live in their own store so they ride along inside checkpoints.
class Adam {
 public:
  Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update to the given parameters from their current grads.
  /// Throws NumericalError if any parameter becomes non-finite.
  void step(const std::vector<ad::Parameter*>& params);

  ad::ParameterStore& state() { return state_; }
  double learning_rate() const { return lr_; }

 private:
  ad::Parameter* slot(const std::string& prefix, const ad::Parameter& p);
  double lr_, beta1_, beta2_, eps_;
  ad::ParameterStore state_;
};

struct TrainConfig {
  int steps = 260;
  int global_batch_pairs = 16;  // full-scale default is 128
  int local_pairs = 1;
  double lr = 1e-3;
  uint64_t seed = 0;
  int checkpoint_every = 200;
  loss::LossConfig loss;
  net::NetConfig net;
  geom::GlobalAugment global_aug;
  double local_max_translation = 5.0;
};

struct StepLog {
  int step = 0;
  double global_loss = 0.0;
  int active_triplets = 0;
  double l_chamfer = 0.0;
  double l_p2p = 0.0;
  double l_desc = 0.0;
};

struct TrainLog {
  std::vector<StepLog> steps;
  std::vector<double> wall_ms;  // kept out of the CSV (timestamps are not reproducible)

  /// CSV: step,global_loss,active_triplets,l_chamfer,l_p2p,l_desc
  std::string to_csv() const;
};

struct GlobalSubstepResult {
  std::optional<double> loss;
  int active_triplets = 0;
};

struct LocalSubstepResult {
  double l_chamfer = 0.0;
  double l_p2p = 0.0;
  std::optional<double> l_desc;
};

class Trainer {
 public:
  /// Dataset scans are referenced, not copied; keep them alive for the run.
  Trainer(net::EgoNN& model, const TrainConfig& cfg, const data::Traversal& scans,
          const data::PairPools& pools);

  /// Forwards an augmented mini-batch of positive pairs through the global
  /// branch, mines batch-hard triplets from ground-truth pose distances and
  /// steps trunk + global parameters. Returns nullopt loss (and logs) when
  /// mining yields no triplet.
  GlobalSubstepResult global_substep(int step);

  /// Forwards one augmented positive pair through the local branch, applies
  /// the keypoint, point-to-point and descriptor losses against the exact
  /// relative transform, and steps trunk + local parameters. The descriptor
  /// term is skipped (logged) when no ground-truth correspondence exists.
  LocalSubstepResult local_substep(int step);

  /// Alternates global and local substeps from the current step counter,
  /// checkpointing at the configured cadence. A fixed seed reproduces the
  /// whole parameter trajectory and log.
  TrainLog run(const std::string& checkpoint_path);

  /// Restores parameters, optimizer state and step counter, then continues.
  TrainLog resume(const std::string& checkpoint_path);

  int current_step() const { return step_; }
  Adam& optimizer() { return opt_; }

 private:
  void save_state(const std::string& path);
  std::vector<std::pair<int, int>> sample_batch_pairs(int step, int count, uint64_t tag);

  net::EgoNN& model_;
  TrainConfig cfg_;
  const data::Traversal& scans_;
  const data::PairPools& pools_;
  Adam opt_;
  ad::ParameterStore run_state_;  // train.step counter
  int step_ = 0;
};

}  // namespace egonn::train
