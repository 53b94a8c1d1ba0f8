#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "zsl/datamodel.hpp"
#include "zsl/errors.hpp"
#include "zsl/evalkit.hpp"
#include "zsl/pipeline.hpp"

using namespace zsl;
using test::random_matrix;

namespace {

// Every encoder is the identity on non-negative inputs: f_v(x) = x and
// f_s(a) = a, with d = k = l = hidden = n.
EmbedModel identity_model(std::size_t n, std::size_t classes) {
  EmbedModel m = EmbedModel::zeros({n, n, n, n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    m.visual_weight(i, i) = 1.0;
    m.semantic_weight1(i, i) = 1.0;
    m.semantic_weight2(i, i) = 1.0;
  }
  return m;
}

// Visual rows equal their class prototype: the identity model is perfect.
Dataset oracle_dataset() {
  Dataset ds;
  ds.prototypes = Matrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};
  ds.seen_classes = {0, 1};
  ds.unseen_classes = {2, 3};
  IndexList labels{0, 0, 1, 1, 0, 1, 2, 2, 3, 3};
  ds.visual = Matrix(labels.size(), 3);
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) ds.visual(i, j) = ds.prototypes(labels[i], j);
  ds.labels = labels;
  ds.seen_train = {0, 1, 2, 3};
  ds.seen_heldout = {4, 5};
  ds.unseen_test = {6, 7, 8, 9};
  return ds;
}

PipelineConfig small_pipeline() {
  PipelineConfig cfg;
  cfg.latent_dim = 16;
  cfg.semantic_hidden = 12;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 16;
  return cfg;
}

Dataset small_dataset(std::uint64_t seed) {
  SynthSpec s;
  s.visual_dim = 10;
  s.proto_dim = 5;
  s.samples_per_class = 12;
  s.seed = seed;
  return generate_synthetic(s);
}

}  // namespace

TEST_CASE("predict examples") {
  EmbedModel m = identity_model(2, 2);
  Matrix protos{{1, 0}, {0, 1}};
  IndexList both{0, 1};
  CHECK(predict(m, Matrix{{0.9, 0.1}}, both, protos) == IndexList{0});

  IndexList single{1};
  CHECK(predict(m, random_matrix(6, 2, 1, 0.0, 1.0), single, protos) == IndexList(6, 1));

  IndexList none;
  CHECK_THROWS_AS(predict(m, Matrix{{0.9, 0.1}}, none, protos), InputError);

  // Equidistant: lowest class index wins.
  CHECK(predict(m, Matrix{{0.5, 0.5}}, both, protos) == IndexList{0});
}

TEST_CASE("predict matches a brute-force distance scan") {
  EmbedDims dims{4, 3, 6, 5, 5};
  EmbedModel m = test::random_embed_model(dims, 3);
  Matrix x = random_matrix(100, 4, 4, 0.0, 1.0);
  Matrix protos = random_matrix(5, 3, 5, 0.0, 1.0);
  IndexList cand{0, 1, 2, 3, 4};
  IndexList got = predict(m, x, cand, protos);
  Matrix hv = encode_visual(m, x);
  Matrix hs = encode_semantic(m, protos);
  for (std::size_t i = 0; i < 100; ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < 5; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < 6; ++j) d += (hv(i, j) - hs(c, j)) * (hv(i, j) - hs(c, j));
      if (d < best_d) best_d = d, best = c;
    }
    CHECK(got[i] == best);
  }

  // Candidate subset in scrambled order.
  IndexList sub{4, 1, 3};
  IndexList sub_pred = predict(m, x, sub, protos);
  for (Index p : sub_pred) CHECK((p == 1 || p == 3 || p == 4));
}

TEST_CASE("nearest_candidate ignores a common rescaling") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Matrix lat = random_matrix(50, 4, seed);
    Matrix cand = random_matrix(6, 4, seed + 10);
    IndexList ids{10, 11, 12, 13, 14, 15};
    IndexList base = nearest_candidate(lat, cand, ids);
    for (double k : {0.001, 3.0, 1e4}) {
      CHECK(nearest_candidate(k * lat, k * cand, ids) == base);
      CHECK(nearest_candidate(k * lat, k * cand, ids, Distance::kCosine) ==
            nearest_candidate(lat, cand, ids, Distance::kCosine));
    }
  }
}

TEST_CASE("zsl_accuracy examples") {
  IndexList classes{0, 1};
  IndexList truth{0, 0, 1};
  CHECK(zsl_accuracy(truth, truth, classes) == 1.0);
  IndexList pred{0, 1, 1};
  CHECK(zsl_accuracy(pred, truth, classes) == 0.75);
  IndexList wrong{1, 1, 0};
  CHECK(zsl_accuracy(wrong, truth, classes) == 0.0);

  // Classes with no samples drop out of the average.
  IndexList wider{0, 1, 7};
  CHECK(zsl_accuracy(pred, truth, wider) == 0.75);
  IndexList narrow{0};
  CHECK_THROWS_AS(zsl_accuracy(pred, truth, narrow), InputError);
}

TEST_CASE("zsl_accuracy is invariant under relabeling") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Matrix r = random_matrix(2, 40, seed, 0.0, 4.0);
    IndexList pred(40), truth(40);
    for (std::size_t i = 0; i < 40; ++i) {
      pred[i] = static_cast<Index>(r(0, i));
      truth[i] = static_cast<Index>(r(1, i));
    }
    IndexList classes{0, 1, 2, 3};
    std::map<Index, Index> perm{{0, 9}, {1, 4}, {2, 7}, {3, 5}};
    IndexList p2, t2, c2{9, 4, 7, 5};
    for (Index v : pred) p2.push_back(perm[v]);
    for (Index v : truth) t2.push_back(perm[v]);
    CHECK(zsl_accuracy(p2, t2, c2) == doctest::Approx(zsl_accuracy(pred, truth, classes)).epsilon(1e-15));
  }
}

TEST_CASE("harmonic_mean") {
  CHECK(std::abs(harmonic_mean(0.803, 0.201) - 0.3215) <= 5e-4);
  CHECK(harmonic_mean(0.4, 0.4) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(harmonic_mean(0.9, 0.0) == 0.0);
  CHECK(harmonic_mean(0.0, 0.0) == 0.0);
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    Matrix su = random_matrix(1, 2, seed, 0.0, 1.0);
    double s = su(0, 0), u = su(0, 1), h = harmonic_mean(s, u);
    CHECK(h <= 2.0 * std::min(s, u) + 1e-15);
    CHECK(h <= (s + u) / 2.0 + 1e-15);
  }
}

TEST_CASE("GZSL on an oracle-perfect model") {
  Dataset ds = oracle_dataset();
  EmbedModel m = identity_model(3, 2);
  EvalReport r = evaluate_gzsl(m, ds);
  CHECK(r.seen_acc == 1.0);
  CHECK(r.unseen_acc == 1.0);
  CHECK(r.harmonic == 1.0);
  CHECK(r.unseen_predicted_as_seen == 0);
  CHECK(r.per_class_accuracy.size() == 4);

  EvalReport z = evaluate_zsl(m, ds);
  CHECK(z.zsl_acc == 1.0);
  CHECK_FALSE(z.harmonic.has_value());
  CHECK_FALSE(z.seen_acc.has_value());

  Dataset no_heldout = ds;
  no_heldout.seen_heldout.clear();
  CHECK_THROWS_AS(evaluate_gzsl(m, no_heldout), InputError);
}

TEST_CASE("GZSL report internals") {
  Dataset ds = small_dataset(3);
  EmbedDims dims{ds.visual_dim(), ds.proto_dim(), 8, 6, ds.seen_classes.size()};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    EmbedModel m = test::random_embed_model(dims, seed);
    EvalReport r = evaluate_gzsl(m, ds);
    REQUIRE(r.seen_acc.has_value());
    REQUIRE(r.unseen_acc.has_value());
    CHECK(std::abs(*r.harmonic - harmonic_mean(*r.seen_acc, *r.unseen_acc)) <= 1e-12);
    for (const auto& [c, a] : r.per_class_accuracy) CHECK((a >= 0.0 && a <= 1.0));

    // Independent recount of the confusion summary and U.
    IndexList all = ds.seen_classes;
    all.insert(all.end(), ds.unseen_classes.begin(), ds.unseen_classes.end());
    IndexList pu = predict(m, gather_rows(ds.visual, ds.unseen_test), all, ds.prototypes);
    std::size_t to_seen = 0;
    for (Index p : pu) to_seen += p < ds.seen_classes.size();
    CHECK(r.unseen_predicted_as_seen == to_seen);
    IndexList tu;
    for (Index row : ds.unseen_test) tu.push_back(ds.labels[row]);
    CHECK(*r.unseen_acc == zsl_accuracy(pu, tu, ds.unseen_classes));

    // Restricting the candidates to the unseen classes is ZSL evaluation.
    IndexList pz = predict(m, gather_rows(ds.visual, ds.unseen_test), ds.unseen_classes,
                           ds.prototypes);
    CHECK(zsl_accuracy(pz, tu, ds.unseen_classes) == evaluate_zsl(m, ds).zsl_acc);
  }
}

TEST_CASE("report JSON and text") {
  Dataset ds = small_dataset(4);
  EmbedDims dims{ds.visual_dim(), ds.proto_dim(), 8, 6, ds.seen_classes.size()};
  EmbedModel m = test::random_embed_model(dims, 2);
  EvalReport g = evaluate_gzsl(m, ds);
  g.metadata = {7, "00ff00ff00ff00ff", 1};
  CHECK(report_from_json(report_to_json(g)) == g);
  nlohmann::json j = report_to_json(g);
  CHECK(j.contains("H"));
  CHECK(j["metadata"]["seed"] == 7);

  EvalReport z = evaluate_zsl(m, ds);
  nlohmann::json jz = report_to_json(z);
  CHECK_FALSE(jz.contains("H"));
  CHECK_FALSE(jz.contains("seen_acc"));
  CHECK_FALSE(jz.contains("unseen_predicted_as_seen"));
  CHECK(report_from_json(jz) == z);

  std::string text = report_to_text(g);
  CHECK(text.find("ZSL_Acc") != std::string::npos);
  CHECK(text.find("H") != std::string::npos);
}

TEST_CASE("sweep_fractions") {
  Dataset ds = small_dataset(5);
  PipelineConfig cfg = small_pipeline();

  SUBCASE("full data, one seed is a direct run") {
    std::vector<double> fr{1.0};
    std::vector<std::uint64_t> seeds{4};
    std::vector<SweepRow> rows = sweep_fractions(ds, fr, seeds, cfg);
    REQUIRE(rows.size() == 1);
    PipelineConfig direct = cfg;
    direct.seed = 4;
    double h = *run_inductive(ds, direct).report.harmonic;
    CHECK(rows[0].mean_h == h);
    CHECK(rows[0].per_seed_h == std::vector<double>{h});
    CHECK(rows[0].max_deviation == 0.0);
  }
  SUBCASE("one row per fraction, CSV round-trip") {
    std::vector<double> fr{0.1, 0.5, 1.0};
    std::vector<std::uint64_t> seeds{1, 2};
    std::vector<SweepRow> rows = sweep_fractions(ds, fr, seeds, cfg);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(rows[i].fraction == fr[i]);
      REQUIRE(rows[i].per_seed_h.size() == 2);
      double mean = (rows[i].per_seed_h[0] + rows[i].per_seed_h[1]) / 2.0;
      CHECK(rows[i].mean_h == doctest::Approx(mean).epsilon(1e-15));
      CHECK(rows[i].max_deviation ==
            doctest::Approx(std::abs(rows[i].per_seed_h[0] - mean)).epsilon(1e-12));
      for (double h : rows[i].per_seed_h) CHECK((h >= 0.0 && h <= 1.0));
    }
    test::TempDir dir("sweep");
    write_sweep_csv(dir.path / "s.csv", rows, seeds);
    CHECK(read_sweep_csv(dir.path / "s.csv") == rows);
  }
  SUBCASE("bad fraction") {
    std::vector<double> fr{0.0};
    std::vector<std::uint64_t> seeds{1};
    CHECK_THROWS(sweep_fractions(ds, fr, seeds, cfg));
  }
}
