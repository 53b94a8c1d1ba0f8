#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "test_util.hpp"
#include "zsl/cvae.hpp"
#include "zsl/datamodel.hpp"
#include "zsl/embednet.hpp"
#include "zsl/errors.hpp"
#include "zsl/rng.hpp"
#include "zsl/transduce.hpp"

using namespace zsl;
using test::random_matrix;

namespace {

Dataset small_dataset(std::uint64_t seed, std::size_t unseen = 3) {
  SynthSpec s;
  s.unseen = unseen;
  s.visual_dim = 12;
  s.proto_dim = 6;
  s.samples_per_class = 20;
  s.seed = seed;
  return generate_synthetic(s);
}

// Same classes and prototypes, but only the seen rows; the unlabeled pool is
// empty.
Dataset drop_unseen_rows(const Dataset& ds) {
  Dataset out = ds;
  IndexList keep = ds.seen_train;
  keep.insert(keep.end(), ds.seen_heldout.begin(), ds.seen_heldout.end());
  out.visual = gather_rows(ds.visual, keep);
  out.labels.clear();
  for (Index r : keep) out.labels.push_back(ds.labels[r]);
  out.seen_train.resize(ds.seen_train.size());
  std::iota(out.seen_train.begin(), out.seen_train.end(), 0);
  out.seen_heldout.resize(ds.seen_heldout.size());
  std::iota(out.seen_heldout.begin(), out.seen_heldout.end(), ds.seen_train.size());
  out.unseen_test.clear();
  return out;
}

// Brute-force oracle: fraction of rows in the majority true class of each
// cluster, valid when the majority map is a bijection.
double majority_purity(const IndexList& pred, const IndexList& truth) {
  std::set<Index> groups(pred.begin(), pred.end());
  std::size_t hits = 0;
  for (Index g : groups) {
    std::map<Index, std::size_t> count;
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == g) ++count[truth[i]];
    std::size_t best = 0;
    for (const auto& [c, n] : count) best = std::max(best, n);
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

IndexList unseen_truth(const Dataset& ds) {
  IndexList t;
  for (Index r : ds.unseen_test) t.push_back(ds.labels[r]);
  return t;
}

}  // namespace

TEST_CASE("kmeans with one point per cluster") {
  Matrix x{{0, 0}, {5, 1}, {-3, 4}, {2, 2}};
  KmeansResult r = kmeans(x, 4, 1);
  CHECK(r.inertia == 0.0);
  std::multiset<std::vector<double>> pts, ctr;
  for (std::size_t i = 0; i < 4; ++i) {
    pts.insert({x(i, 0), x(i, 1)});
    ctr.insert({r.centers(i, 0), r.centers(i, 1)});
  }
  CHECK(pts == ctr);
  CHECK(std::set<Index>(r.assignments.begin(), r.assignments.end()).size() == 4);
}

TEST_CASE("kmeans inertia never increases") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Matrix x = random_matrix(60, 3, seed);
    KmeansResult r = kmeans(x, 5, seed, 50);
    CHECK(r.iterations <= 50);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-12);
    CHECK(r.inertia >= 0.0);
    // Inertia agrees with the assignment it reports.
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      REQUIRE(r.assignments[i] < 5);
      total += squared_distance(x.row(i), r.centers.row(r.assignments[i]));
    }
    CHECK(total == doctest::Approx(r.inertia).epsilon(1e-10));
  }
}

TEST_CASE("kmeans separates two blobs") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Matrix x(40, 2);
    IndexList truth(40);
    for (std::size_t i = 0; i < 40; ++i) {
      truth[i] = i % 2;
      x(i, 0) = (i % 2 ? 50.0 : 0.0) + 0.5 * rng.normal();
      x(i, 1) = 0.5 * rng.normal();
    }
    KmeansResult r = kmeans(x, 2, seed);
    CHECK(majority_purity(r.assignments, truth) == 1.0);
  }
}

TEST_CASE("kmeans errors") {
  CHECK_THROWS_AS(kmeans(Matrix(2, 3), 3, 1), InputError);
  CHECK_THROWS_AS(kmeans(Matrix(2, 3), 0, 1), InputError);
}

TEST_CASE("matched_accuracy") {
  IndexList truth{3, 3, 4, 4, 5, 5};
  IndexList perm{7, 7, 5, 5, 6, 6};
  CHECK(matched_accuracy(perm, truth) == 1.0);
  IndexList one_off{7, 7, 5, 6, 6, 6};
  CHECK(matched_accuracy(one_off, truth) == doctest::Approx(5.0 / 6.0));
  // Two groups cannot both claim class 3.
  IndexList merged{0, 0, 0, 0, 1, 1};
  IndexList t2{3, 3, 4, 4, 3, 3};
  CHECK(matched_accuracy(merged, t2) == doctest::Approx(4.0 / 6.0));
}

TEST_CASE("init_pseudo_labels") {
  Dataset ds = small_dataset(2);
  CvaeModel cvae = init_cvae_model(ds.visual_dim(), ds.proto_dim(), 16, 1);
  const std::size_t s = ds.seen_classes.size();

  PseudoState a = init_pseudo_labels(ds, cvae, 5);
  CHECK(a == init_pseudo_labels(ds, cvae, 5));
  CHECK(a.revisions == 0);
  CHECK(a.synthesized == synthesize_semantic(cvae, gather_rows(ds.visual, ds.unseen_test)));
  for (Index l : a.pseudo_labels) CHECK((l >= s && l < s + 3));

  double purity = matched_accuracy(a.pseudo_labels, unseen_truth(ds));
  CHECK(purity >= 0.95);
  CHECK(purity == majority_purity(a.pseudo_labels, unseen_truth(ds)));

  Dataset one = small_dataset(2, 1);
  PseudoState b = init_pseudo_labels(one, cvae, 5);
  for (Index l : b.pseudo_labels) CHECK(l == one.seen_classes.size());
}

TEST_CASE("prune_pseudo_labels") {
  Dataset ds = small_dataset(3);
  const std::size_t s = ds.seen_classes.size();
  CvaeModel cvae = init_cvae_model(ds.visual_dim(), ds.proto_dim(), 16, 1);
  PseudoState st = init_pseudo_labels(ds, cvae, 1);

  EmbedDims dims{ds.visual_dim(), ds.proto_dim(), 16, 12, s + 3};
  SUBCASE("uniform logits go to the first unseen slot") {
    EmbedModel m = init_embed_model(dims, 1);
    m.classifier_weight.fill(0.0);
    m.classifier_bias.fill(0.0);
    std::size_t churn = 0;
    PseudoState p = prune_pseudo_labels(m, ds, st, &churn);
    for (Index l : p.pseudo_labels) CHECK(l == s);
    CHECK(p.revisions == 1);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < st.pseudo_labels.size(); ++i)
      changed += st.pseudo_labels[i] != s;
    CHECK(churn == changed);
  }
  SUBCASE("idempotent and never seen") {
    EmbedModel m = init_embed_model(dims, 4);
    // Seen slots dominate every logit; they must still be ignored.
    for (std::size_t c = 0; c < s; ++c) m.classifier_bias(0, c) = 1e6;
    PseudoState p1 = prune_pseudo_labels(m, ds, st);
    PseudoState p2 = prune_pseudo_labels(m, ds, p1);
    CHECK(p1.pseudo_labels == p2.pseudo_labels);
    for (Index l : p2.pseudo_labels) CHECK((l >= s && l < s + 3));
  }
  SUBCASE("inductive width is rejected") {
    dims.classes = s;
    CHECK_THROWS_AS(prune_pseudo_labels(init_embed_model(dims, 1), ds, st), InputError);
  }
}

TEST_CASE("train_transductive basics") {
  Dataset ds = small_dataset(4);
  const std::size_t s = ds.seen_classes.size();
  CvaeModel cvae = init_cvae_model(ds.visual_dim(), ds.proto_dim(), 16, 1);
  EmbedDims dims{ds.visual_dim(), ds.proto_dim(), 16, 12, s + 3};
  EmbedModel m0 = init_embed_model(dims, 1);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.prune_warmup = 2;
  const PseudoState init = init_pseudo_labels(ds, cvae, cfg.seed);
  const Dataset before = ds;

  cfg.epochs = 0;
  TransductiveResult z = train_transductive(m0, ds, cvae, cfg);
  CHECK(z.model == m0);
  CHECK(z.state == init);

  cfg.epochs = 6;
  std::vector<std::size_t> seen_epochs;
  TransductiveResult a = train_transductive(m0, ds, cvae, cfg,
                                            [&](const EpochRecord& r) { seen_epochs.push_back(r.epoch); });
  TransductiveResult b = train_transductive(m0, ds, cvae, cfg);
  CHECK(a.model == b.model);
  CHECK(a.state == b.state);
  REQUIRE(a.history.steps.size() == b.history.steps.size());
  for (std::size_t i = 0; i < a.history.steps.size(); ++i)
    CHECK(a.history.steps[i].loss == b.history.steps[i].loss);
  CHECK(seen_epochs == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
  CHECK(a.state.revisions == 4);  // epochs 3..6 prune
  for (Index l : a.state.pseudo_labels) CHECK((l >= s && l < s + 3));
  CHECK(ds == before);

  dims.classes = s;
  CHECK_THROWS_AS(train_transductive(init_embed_model(dims, 1), ds, cvae, cfg), InputError);
}

TEST_CASE("empty unseen pool reduces to inductive training") {
  Dataset full = small_dataset(5);
  Dataset ds = drop_unseen_rows(full);
  const std::size_t s = ds.seen_classes.size();
  const std::size_t u = ds.unseen_classes.size();
  EmbedDims narrow{ds.visual_dim(), ds.proto_dim(), 16, 12, s};
  EmbedDims wide = narrow;
  wide.classes = s + u;

  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.seed = 9;
  // The softmax over the wider classifier and the L2 term over its extra rows
  // differ by construction; every other term sees the same batches.
  cfg.weights.classifier = 0.0;
  cfg.weights.l2 = 0.0;

  EmbedTrainResult ind = train_inductive(init_embed_model(narrow, 3), ds, cfg);
  PseudoState empty;
  TransductiveResult tr = train_transductive(init_embed_model(wide, 3), ds, empty, cfg);

  REQUIRE(ind.history.steps.size() == tr.history.steps.size());
  REQUIRE(!ind.history.steps.empty());
  for (std::size_t i = 0; i < ind.history.steps.size(); ++i) {
    CAPTURE(i);
    CHECK(std::abs(ind.history.steps[i].loss - tr.history.steps[i].loss) <= 1e-12);
    CHECK(std::abs(ind.history.steps[i].terms.structure_align -
                   tr.history.steps[i].terms.structure_align) <= 1e-12);
  }
  CHECK(ind.model.visual_weight == tr.model.visual_weight);
}

TEST_CASE("self-taught labels end at least as accurate as k-means") {
  // Default synthetic data and model widths, shortened schedule.
  Dataset ds = generate_synthetic(SynthSpec{});
  const std::size_t s = ds.seen_classes.size();

  CvaeConfig ccfg;
  CvaeModel cvae =
      train_cvae(init_cvae_model(ds.visual_dim(), ds.proto_dim(), ccfg.hidden, 1), ds, ccfg).model;

  TrainConfig cfg;
  cfg.epochs = 100;
  EmbedDims dims{ds.visual_dim(), ds.proto_dim(), 1000, 750, s + 3};
  PseudoState init = init_pseudo_labels(ds, cvae, cfg.seed);
  std::size_t prunes = 0;
  TransductiveResult r = train_transductive(init_embed_model(dims, 1), ds, init, cfg,
                                            [&](const EpochRecord& e) { prunes += e.epoch > cfg.prune_warmup; });

  double before = matched_accuracy(init.pseudo_labels, unseen_truth(ds));
  double after = matched_accuracy(r.state.pseudo_labels, unseen_truth(ds));
  MESSAGE("k-means purity " << before << ", final pseudo-label accuracy " << after);
  CHECK(prunes == 50);
  CHECK(r.state.revisions == 50);
  CHECK(after >= before);
}
