#pragma once

#include <string>

#include "bmoe/config.hpp"
#include "bmoe/curvature.hpp"
#include "bmoe/laplace.hpp"
#include "bmoe/model.hpp"

namespace bmoe {

// Checkpoints are a pair of files: <base>.json (manifest: schema version,
// config hash, tensor index) and <base>.bin (contiguous little-endian f64
// tensor data, row-major, offsets 8-byte aligned).

void save_checkpoint(const MoEModel& model, const std::string& base_path,
                     const std::string& config_hash);

struct LoadedCheckpoint {
  MoEModel model;
  std::string config_hash;
};
LoadedCheckpoint load_checkpoint(const std::string& base_path);

// Posterior artifact: curvature factors, lambda, treated set, provenance.
// The MAP weights live in the model checkpoint; loading takes both.
void save_posterior(const LaplacePosterior& post, const std::string& base_path,
                    const std::string& config_hash);

struct LoadedPosterior {
  LaplacePosterior posterior;  // model filled from the supplied checkpoint
  std::string config_hash;
};
LoadedPosterior load_posterior(const std::string& base_path, const MoEModel& map_model);

}  // namespace bmoe
