#pragma once

#include <map>
#include <string>
#include <vector>

#include "bmoe/data.hpp"
#include "bmoe/linalg.hpp"
#include "bmoe/model.hpp"

namespace bmoe {

enum class FisherMode { kEmpirical, kSampled };
enum class FisherNormalization { kMean, kSum };

FisherMode fisher_mode_from_string(const std::string& name);
std::string to_string(FisherMode m);
FisherNormalization fisher_normalization_from_string(const std::string& name);
std::string to_string(FisherNormalization n);

// Low-rank Kronecker factors of one expert's Fisher block. Factors are
// finalized: under kMean each is already scaled by 1/sqrt(token_count), so
// the implied block is (la la^T) kron (lg lg^T) directly.
struct ExpertCurvature {
  ExpertId id;
  LowRankFactor la;  // d_in  = d_ff
  LowRankFactor lg;  // d_out = d_model
  std::int64_t token_count = 0;

  Eigen::Index d_in() const { return la.dim(); }
  Eigen::Index d_out() const { return lg.dim(); }
};

struct ProvenanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CurvatureSet {
  std::map<ExpertId, ExpertCurvature> experts;
  SketchConfig sketch;
  FisherMode mode = FisherMode::kSampled;
  FisherNormalization normalization = FisherNormalization::kMean;
  std::string checkpoint_id;

  std::vector<ExpertId> never_routed() const;
};

// One pass over the data at theta_MAP: for every example and every routed
// expert, streams the activation into the la sketch and the log-likelihood
// gradient w.r.t. the expert output into the lg sketch. With num_workers > 1
// the data is sharded into contiguous blocks, accumulated per worker and
// merged in fixed shard order.
CurvatureSet accumulate(const MoEModel& model, const Dataset& data, const SketchConfig& cfg,
                        FisherMode mode, FisherNormalization normalization,
                        const std::string& checkpoint_id, int num_workers = 1);

// Concatenate per-expert factors and re-truncate; token counts add.
CurvatureSet merge(const CurvatureSet& a, const CurvatureSet& b);

}  // namespace bmoe
