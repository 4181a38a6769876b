#pragma once

#include <functional>
#include <memory>
#include <ostream>
#include <string>

#include "dgf/checkpoint.hpp"
#include "dgf/config.hpp"
#include "dgf/dataset.hpp"
#include "dgf/losses.hpp"

namespace dgf {

/// Formats one training log line: iteration plus the seven loss terms as
/// comma-separated decimals with fixed formatting.
std::string format_log_line(int64_t iter, const LossReport& report);

/// Alternating adversarial trainer: one discriminator update (hinge loss on
/// the style-indexed logits plus R1 on reals) followed by one generator
/// update (adversarial, image reconstruction, content consistency, offset
/// regularization) per iteration. Deterministic for a fixed (seed, config,
/// dataset, worker count).
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  /// Runs one iteration on the batch and returns the loss terms. Aborts with
  /// a diagnostic snapshot (checkpoint written next to `snapshot_path` when
  /// set) if any term turns non-finite.
  LossReport train_step(const GlyphDataset::Batch& batch);

  /// Full loop: seeded batches, periodic logging and checkpoints.
  void train(const GlyphDataset& dataset, std::ostream* log, const std::string& out_dir);

  ModelBundle<float>& model() { return *model_; }
  const ModelBundle<float>& model() const { return *model_; }
  TrainerOptimizers& optimizers() { return optim_; }
  int64_t iteration() const { return iter_; }
  Rng& data_rng() { return data_rng_; }

  void set_snapshot_path(const std::string& path) { snapshot_path_ = path; }

 private:
  TrainConfig cfg_;
  std::unique_ptr<ModelBundle<float>> model_;
  TrainerOptimizers optim_;
  Rng data_rng_;
  int64_t iter_ = 0;
  std::string snapshot_path_;
};

}  // namespace dgf
