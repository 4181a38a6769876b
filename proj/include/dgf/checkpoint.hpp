#pragma once

#include <memory>
#include <optional>
#include <string>

#include "dgf/nets.hpp"
#include "dgf/optim.hpp"

namespace dgf {

/// Optimizer triple used by the trainer; bundled here so checkpoints can
/// carry optimizer state alongside the model.
struct TrainerOptimizers {
  Adam<float> style;    // style encoder
  RmsProp<float> gen;   // content encoder + mixer + skip modules
  RmsProp<float> disc;  // discriminator
};

/// Builds the optimizer triple over a model's parameter groups: Adam on the
/// style encoder, RMSprop on the rest of the generator, RMSprop on the
/// discriminator.
TrainerOptimizers make_trainer_optimizers(const ModelBundle<float>& model);

/// Binary checkpoint: magic "DGF1", u16 format version, an embedded
/// architecture config block, then a little-endian manifest of named f32
/// entries (parameters in registration order, normalization running
/// statistics, optimizer state when present). save -> load -> save is
/// byte-identical.
void save_checkpoint(const ModelBundle<float>& model, const TrainerOptimizers* optim,
                     const std::string& path);

struct LoadedCheckpoint {
  std::unique_ptr<ModelBundle<float>> model;
  std::unique_ptr<TrainerOptimizers> optim;  // present when the file carried state
};

/// Rebuilds the model (and, when the file carries it, the attached optimizer
/// state) from a checkpoint. Raises IoError on magic, version, truncation,
/// or manifest mismatches, leaving no partial state.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dgf
