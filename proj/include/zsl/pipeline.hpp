#pragma once

// End-to-end runs: model construction from a dataset, training, and GZSL
// evaluation, for the inductive and transductive settings.

#include <cstdint>
#include <vector>

#include "zsl/cvae.hpp"
#include "zsl/datamodel.hpp"
#include "zsl/embednet.hpp"
#include "zsl/evalkit.hpp"
#include "zsl/transduce.hpp"

namespace zsl {

struct PipelineConfig {
  std::uint64_t seed = 1;  // overrides train.seed and cvae.seed
  TrainConfig train;
  CvaeConfig cvae;
  std::size_t latent_dim = 1000;
  std::size_t semantic_hidden = 750;
  std::size_t kmeans_max_iter = 100;
  // Synthesize unseen semantics as one posterior sample per row instead of
  // the posterior mean.
  bool sample_semantics = false;
  Distance distance = Distance::kEuclidean;
};

struct InductiveRun {
  EmbedModel model;
  TrainHistory history;
  EvalReport report;  // GZSL
};

struct TransductiveRun {
  EmbedModel model;
  CvaeModel cvae;
  std::vector<CvaeEpochRecord> cvae_history;
  PseudoState initial;
  PseudoState final_state;
  TrainHistory history;
  EvalReport report;  // GZSL
};

// Classifier width s (inductive) or s + u (transductive).
EmbedDims embed_dims(const Dataset& ds, const PipelineConfig& cfg, TrainMode mode);

InductiveRun run_inductive(const Dataset& ds, const PipelineConfig& cfg,
                           const EpochCallback& on_epoch = {});

// CVAE training, k-means pseudo-label initialization, then the self-taught
// loop. The CVAE stays frozen after its own training.
TransductiveRun run_transductive(const Dataset& ds, const PipelineConfig& cfg,
                                 const EpochCallback& on_epoch = {});

}  // namespace zsl
