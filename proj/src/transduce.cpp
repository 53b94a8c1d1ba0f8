#include "zsl/transduce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "zsl/errors.hpp"
#include "zsl/rng.hpp"

namespace zsl {

namespace {

// Returns whether any assignment changed.
bool assign_points(const Matrix& x, const Matrix& centers, IndexList& assignment,
                   double& inertia) {
  bool changed = false;
  inertia = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      const double d = squared_distance(x.row(i), centers.row(c));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (assignment[i] != best) changed = true;
    assignment[i] = best;
    inertia += best_d;
  }
  return changed;
}

void update_centers(const Matrix& x, const IndexList& assignment, Matrix& centers) {
  const std::size_t k = centers.rows();
  std::vector<std::size_t> counts(k, 0);
  Matrix sums(k, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    ++counts[assignment[i]];
    auto s = sums.row(assignment[i]);
    auto r = x.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) s[j] += r[j];
  }
  std::vector<char> taken(x.rows(), 0);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) {
      auto out = centers.row(c);
      auto s = sums.row(c);
      for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = s[j] / static_cast<double>(counts[c]);
      }
      continue;
    }
    // Empty cluster: move it onto the point farthest from its own center.
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (taken[i]) continue;
      const double d = squared_distance(x.row(i), centers.row(assignment[i]));
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    taken[far] = 1;
    std::copy(x.row(far).begin(), x.row(far).end(), centers.row(c).begin());
  }
}

Matrix kmeanspp_seed(const Matrix& x, std::size_t k, Rng& rng) {
  Matrix centers(k, x.cols());
  std::size_t first = rng.index(x.rows());
  std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());
  std::vector<double> nearest(x.rows(), std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(x.row(i), centers.row(c - 1)));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform(0.0, total);
      pick = x.rows() - 1;
      for (std::size_t i = 0; i < x.rows(); ++i) {
        target -= nearest[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.index(x.rows());
    }
    std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
  }
  return centers;
}

std::size_t argmax_range(std::span<const double> v, std::size_t begin, std::size_t end) {
  std::size_t best = begin;
  for (std::size_t j = begin + 1; j < end; ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

}  // namespace

KmeansResult kmeans(const Matrix& x, std::size_t clusters, std::uint64_t seed,
                    std::size_t max_iter) {
  if (clusters == 0) throw InputError("kmeans: need at least one cluster");
  if (x.rows() < clusters) {
    throw InputError("kmeans: " + std::to_string(x.rows()) + " points for " +
                     std::to_string(clusters) + " clusters");
  }
  Rng rng = Rng(seed).fork("kmeans");
  KmeansResult r;
  r.centers = kmeanspp_seed(x, clusters, rng);
  r.assignments.assign(x.rows(), clusters);  // sentinel so the first pass "changes"
  assign_points(x, r.centers, r.assignments, r.inertia);
  r.inertia_history.push_back(r.inertia);
  while (r.iterations < max_iter) {
    update_centers(x, r.assignments, r.centers);
    const bool changed = assign_points(x, r.centers, r.assignments, r.inertia);
    ++r.iterations;
    r.inertia_history.push_back(r.inertia);
    if (!changed) break;
  }
  return r;
}

PseudoState init_pseudo_labels(const Dataset& ds, const CvaeModel& cvae,
                               std::uint64_t seed, std::size_t max_iter) {
  const Matrix pool = gather_rows(ds.visual, ds.unseen_test);
  const KmeansResult km = kmeans(pool, ds.unseen_classes.size(), seed, max_iter);
  PseudoState st;
  const std::size_t s = ds.seen_classes.size();
  for (Index a : km.assignments) st.pseudo_labels.push_back(s + a);
  st.synthesized = synthesize_semantic(cvae, pool);
  return st;
}

PseudoState prune_pseudo_labels(const EmbedModel& m, const Dataset& ds,
                                const PseudoState& state, std::size_t* churn) {
  const std::size_t s = ds.seen_classes.size();
  const std::size_t total = s + ds.unseen_classes.size();
  if (m.num_classes() != total) {
    throw InputError("prune_pseudo_labels: classifier has " +
                     std::to_string(m.num_classes()) + " outputs, need " +
                     std::to_string(total));
  }
  PseudoState next = state;
  next.revisions += 1;
  std::size_t changed = 0;
  if (!ds.unseen_test.empty()) {
    const Matrix logits =
        classify_latent(m, encode_visual(m, gather_rows(ds.visual, ds.unseen_test)));
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      const std::size_t label = argmax_range(logits.row(i), s, total);
      if (label != next.pseudo_labels[i]) ++changed;
      next.pseudo_labels[i] = label;
    }
  }
  if (churn) *churn = changed;
  return next;
}

TransductiveResult train_transductive(EmbedModel m, const Dataset& ds, PseudoState state,
                                      const TrainConfig& cfg,
                                      const EpochCallback& on_epoch) {
  cfg.validate();
  const std::size_t s = ds.seen_classes.size();
  const std::size_t u = ds.unseen_classes.size();
  if (ds.seen_train.empty()) throw InputError("train_transductive: no seen-train rows");
  if (m.num_classes() != s + u) {
    throw InputError("train_transductive: classifier needs " + std::to_string(s + u) +
                     " outputs, has " + std::to_string(m.num_classes()));
  }
  const std::size_t n_u = ds.unseen_test.size();
  if (state.pseudo_labels.size() != n_u || (n_u > 0 && state.synthesized.rows() != n_u)) {
    throw InputError("train_transductive: pseudo state is not aligned with unseen rows");
  }
  for (Index l : state.pseudo_labels) {
    if (l < s || l >= s + u) throw InputError("train_transductive: pseudo-label out of range");
  }

  const auto slot = seen_slot_table(ds);
  const Matrix seen_protos = gather_rows(ds.prototypes, ds.seen_classes);
  std::vector<IndexList> members(s);
  for (Index r : ds.seen_train) members[slot[ds.labels[r]]].push_back(r);
  const Matrix train_visual = gather_rows(ds.visual, ds.seen_train);
  IndexList train_labels;
  for (Index r : ds.seen_train) train_labels.push_back(ds.labels[r]);
  const Matrix pool = gather_rows(ds.visual, ds.unseen_test);

  const std::size_t unseen_batch = n_u > 0 ? std::min(cfg.batch_size / 2, n_u) : 0;
  const std::size_t seen_batch = n_u > 0 ? cfg.batch_size - cfg.batch_size / 2 : cfg.batch_size;

  Rng rng = Rng(cfg.seed).fork("pairs");
  Rng unseen_rng = Rng(cfg.seed).fork("unseen");
  EmbedOptimizer opt(m, cfg.adam());
  TransductiveResult result;
  IndexList order = ds.seen_train;
  IndexList unseen_order(n_u);
  std::iota(unseen_order.begin(), unseen_order.end(), 0);
  std::size_t unseen_cursor = n_u;  // forces a shuffle on first use
  const std::size_t steps_per_epoch = (order.size() + seen_batch - 1) / seen_batch;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Structure targets: seen class means with their prototypes, then each
    // non-empty pseudo-class mean with its mean synthesized semantics.
    Matrix sa_means = class_means(train_visual, train_labels, ds.seen_classes);
    Matrix sa_semantics = seen_protos;
    for (std::size_t j = s; j < s + u; ++j) {
      IndexList rows;
      for (std::size_t i = 0; i < n_u; ++i)
        if (state.pseudo_labels[i] == j) rows.push_back(i);
      if (rows.empty()) continue;
      sa_means = vstack(sa_means, mean_rows(gather_rows(pool, rows)));
      sa_semantics = vstack(sa_semantics, mean_rows(gather_rows(state.synthesized, rows)));
    }

    std::shuffle(order.begin(), order.end(), rng.engine());
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t begin = step * seen_batch;
      const std::size_t end = std::min(order.size(), begin + seen_batch);
      const std::span<const Index> rows(order.data() + begin, end - begin);

      EmbedBatch batch;
      IndexList partners;
      for (Index r : rows) {
        const IndexList& mine = members[slot[ds.labels[r]]];
        partners.push_back(mine[rng.index(mine.size())]);
        batch.slots.push_back(slot[ds.labels[r]]);
      }
      batch.semantic_index = batch.slots;
      Matrix input = gather_rows(ds.visual, rows);
      Matrix target = gather_rows(ds.visual, partners);
      Matrix semantics = seen_protos;

      if (unseen_batch > 0) {
        IndexList picked;
        while (picked.size() < unseen_batch) {
          if (unseen_cursor == n_u) {
            std::shuffle(unseen_order.begin(), unseen_order.end(), unseen_rng.engine());
            unseen_cursor = 0;
          }
          picked.push_back(unseen_order[unseen_cursor++]);
        }
        const Matrix xu = gather_rows(pool, picked);
        input = vstack(input, xu);
        target = vstack(target, xu);
        semantics = vstack(semantics, gather_rows(state.synthesized, picked));
        for (std::size_t i = 0; i < picked.size(); ++i) {
          batch.semantic_index.push_back(s + i);
          batch.slots.push_back(state.pseudo_labels[picked[i]]);
        }
      }
      batch.input = std::move(input);
      batch.target = std::move(target);
      batch.semantics = std::move(semantics);
      batch.sa_means = sa_means;
      batch.sa_semantics = sa_semantics;

      const TotalLoss tl = total_loss(m, batch, cfg.weights);
      if (!std::isfinite(tl.loss)) {
        throw NumericError("train_transductive: loss became non-finite");
      }
      opt.step(m, tl.grad);
      result.history.steps.push_back({epoch, tl.loss, tl.terms});
      const double w = 1.0 / static_cast<double>(steps_per_epoch);
      rec.mean_loss += w * tl.loss;
      rec.mean_terms.class_encoder += w * tl.terms.class_encoder;
      rec.mean_terms.latent_align += w * tl.terms.latent_align;
      rec.mean_terms.structure_align += w * tl.terms.structure_align;
      rec.mean_terms.classifier += w * tl.terms.classifier;
      rec.mean_terms.l2 += w * tl.terms.l2;
    }
    if (epoch > cfg.prune_warmup) state = prune_pseudo_labels(m, ds, state, &rec.churn);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.model = std::move(m);
  result.state = std::move(state);
  return result;
}

TransductiveResult train_transductive(EmbedModel m, const Dataset& ds,
                                      const CvaeModel& cvae, const TrainConfig& cfg,
                                      const EpochCallback& on_epoch) {
  return train_transductive(std::move(m), ds, init_pseudo_labels(ds, cvae, cfg.seed), cfg,
                            on_epoch);
}

double matched_accuracy(std::span<const Index> predicted, std::span<const Index> truth) {
  if (predicted.size() != truth.size()) {
    throw InputError("matched_accuracy: length mismatch");
  }
  if (predicted.empty()) return 0.0;
  IndexList groups(predicted.begin(), predicted.end());
  IndexList classes(truth.begin(), truth.end());
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  // contingency[g][c] = rows of group g with true class c
  std::vector<std::vector<std::size_t>> table(groups.size(),
                                              std::vector<std::size_t>(classes.size(), 0));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto g = std::lower_bound(groups.begin(), groups.end(), predicted[i]) - groups.begin();
    const auto c = std::lower_bound(classes.begin(), classes.end(), truth[i]) - classes.begin();
    ++table[static_cast<std::size_t>(g)][static_cast<std::size_t>(c)];
  }

  // Exhaustive search over one-to-one group -> class maps. Pad the class
  // side with "no class" columns so every group can stay unmatched.
  const std::size_t width = std::max(groups.size(), classes.size());
  if (width > 9) {
    throw InputError("matched_accuracy: more than 9 groups is not supported");
  }
  std::vector<std::size_t> perm(width);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (perm[g] < classes.size()) hits += table[g][perm[g]];
    }
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(predicted.size());
}

}  // namespace zsl
