#pragma once

// Transductive training: k-means pseudo-labels for the unlabeled unseen pool,
// joint seen + unseen optimization, and per-epoch reassignment of the
// pseudo-labels by the latent classifier.

#include <cstdint>
#include <vector>

#include "zsl/cvae.hpp"
#include "zsl/datamodel.hpp"
#include "zsl/embednet.hpp"

namespace zsl {

struct KmeansResult {
  Matrix centers;       // clusters x d
  IndexList assignments;
  double inertia = 0.0;  // sum of squared distances to the assigned center
  std::vector<double> inertia_history;  // after every assignment step
  std::size_t iterations = 0;
};

// k-means++ seeding then Lloyd iterations until the assignment stops changing
// or max_iter is reached. A cluster that loses all members is re-seeded at the
// point farthest from its current center. Distance ties go to the lowest
// cluster index.
KmeansResult kmeans(const Matrix& x, std::size_t clusters, std::uint64_t seed,
                    std::size_t max_iter = 100);

// Classifier slots s..s+u-1 hold the unseen pseudo-classes; pseudo_labels are
// slot values, row-aligned with ds.unseen_test.
struct PseudoState {
  IndexList pseudo_labels;
  Matrix synthesized;  // n_u x k
  std::size_t revisions = 0;

  friend bool operator==(const PseudoState&, const PseudoState&) = default;
};

// Clusters the unseen-test rows into u groups; cluster j becomes slot s + j.
PseudoState init_pseudo_labels(const Dataset& ds, const CvaeModel& cvae,
                               std::uint64_t seed, std::size_t max_iter = 100);

// Reassigns every pseudo-label to the highest-scoring unseen slot of the
// latent classifier (ties to the lowest slot). Returns the number of changed
// labels through `churn` when given.
PseudoState prune_pseudo_labels(const EmbedModel& m, const Dataset& ds,
                                const PseudoState& state, std::size_t* churn = nullptr);

struct TransductiveResult {
  EmbedModel model;
  PseudoState state;
  TrainHistory history;
};

// Each step mixes a seen batch (class-encoder pairs, ground-truth labels and
// prototypes) with an unseen batch (self reconstruction, pseudo-labels and
// per-sample synthesized semantics), half and half. Structure alignment runs
// over the seen classes plus every non-empty pseudo-class, pairing its visual
// mean with the mean of its synthesized semantics. Pseudo-labels are pruned
// after every epoch. With an empty unseen pool the seen batches, pairings and
// step count are exactly those of train_inductive for the same seed.
TransductiveResult train_transductive(EmbedModel m, const Dataset& ds, PseudoState state,
                                      const TrainConfig& cfg,
                                      const EpochCallback& on_epoch = {});

// Initializes pseudo-labels with `cvae` (k-means seeded from cfg.seed) and
// runs the loop above.
TransductiveResult train_transductive(EmbedModel m, const Dataset& ds,
                                      const CvaeModel& cvae, const TrainConfig& cfg,
                                      const EpochCallback& on_epoch = {});

// Fraction of rows whose label matches the ground truth after the best
// one-to-one relabeling of predicted groups onto true classes.
double matched_accuracy(std::span<const Index> predicted, std::span<const Index> truth);

}  // namespace zsl
