#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "zsl/datamodel.hpp"
#include "zsl/errors.hpp"

using namespace zsl;
namespace fs = std::filesystem;

namespace {

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ofstream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

// Hand-written 2-class fixture: rows 0,1 class 0 (seen), rows 2,3 class 1.
// `extra_value` appends one float past the declared payload.
void write_toy(const fs::path& dir, bool extra_value = false) {
  {
    std::ofstream f(dir / "features.bin", std::ios::binary);
    f.write("ZSLF", 4);
    put_u32(f, 4);
    put_u32(f, 2);
    for (float v : {0.f, 1.f, 0.5f, 1.5f, 4.f, 4.f, 5.f, 3.f}) put_f32(f, v);
    if (extra_value) put_f32(f, 9.f);
  }
  {
    std::ofstream f(dir / "labels.u32", std::ios::binary);
    for (std::uint32_t l : {0u, 0u, 1u, 1u}) put_u32(f, l);
  }
  {
    std::ofstream f(dir / "prototypes.bin", std::ios::binary);
    f.write("ZSLP", 4);
    put_u32(f, 2);
    put_u32(f, 3);
    for (float v : {1.f, 0.f, 0.f, 0.f, 1.f, 1.f}) put_f32(f, v);
  }
  write_text(dir / "seen_classes.txt", "0\n");
  write_text(dir / "unseen_classes.txt", "1\n");
  write_text(dir / "splits.json",
             R"({"seen_train": [0], "seen_heldout": [1], "unseen_test": [2, 3]})");
}

LoadErrorKind load_error_kind(const fs::path& dir) {
  try {
    load_dataset(dir);
  } catch (const LoadError& e) {
    return e.kind();
  }
  FAIL("expected a load error");
  return LoadErrorKind::kBadFormat;
}

SynthSpec small_spec(std::uint64_t seed = 3) {
  SynthSpec s;
  s.visual_dim = 12;
  s.proto_dim = 6;
  s.samples_per_class = 20;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("load_dataset reads a hand-written toy directory") {
  test::TempDir dir("toy");
  write_toy(dir.path);
  Dataset ds = load_dataset(dir.path);
  CHECK(ds.num_samples() == 4);
  CHECK(ds.seen_classes.size() == 1);
  CHECK(ds.unseen_classes.size() == 1);
  CHECK(ds.visual == Matrix{{0, 1}, {0.5, 1.5}, {4, 4}, {5, 3}});
  CHECK(ds.labels == IndexList{0, 0, 1, 1});
  CHECK(ds.prototypes == Matrix{{1, 0, 0}, {0, 1, 1}});
  CHECK(ds.seen_train == IndexList{0});
  CHECK(ds.seen_heldout == IndexList{1});
  CHECK(ds.unseen_test == IndexList{2, 3});
}

TEST_CASE("load_dataset error kinds") {
  test::TempDir dir("bad");
  SUBCASE("extra payload value") {
    write_toy(dir.path, true);
    CHECK(load_error_kind(dir.path) == LoadErrorKind::kDimensionMismatch);
  }
  SUBCASE("class in both split files") {
    write_toy(dir.path);
    write_text(dir.path / "unseen_classes.txt", "0\n1\n");
    CHECK(load_error_kind(dir.path) == LoadErrorKind::kSplitOverlap);
  }
  SUBCASE("missing file") {
    write_toy(dir.path);
    fs::remove(dir.path / "labels.u32");
    CHECK(load_error_kind(dir.path) == LoadErrorKind::kMissingFile);
  }
  SUBCASE("label of an unknown class") {
    write_toy(dir.path);
    std::ofstream f(dir.path / "labels.u32", std::ios::binary);
    for (std::uint32_t l : {0u, 0u, 1u, 7u}) put_u32(f, l);
    f.close();
    CHECK(load_error_kind(dir.path) == LoadErrorKind::kUnknownClass);
  }
  SUBCASE("row in two splits") {
    write_toy(dir.path);
    write_text(dir.path / "splits.json",
               R"({"seen_train": [0, 1], "seen_heldout": [1], "unseen_test": [2, 3]})");
    CHECK(load_error_kind(dir.path) == LoadErrorKind::kSplitOverlap);
  }
  SUBCASE("bad magic") {
    write_toy(dir.path);
    std::fstream f(dir.path / "features.bin", std::ios::binary | std::ios::in | std::ios::out);
    f.write("XXXX", 4);
    f.close();
    CHECK(load_error_kind(dir.path) == LoadErrorKind::kBadFormat);
  }
}

TEST_CASE("save/load round-trip is bit-exact") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Dataset ds = generate_synthetic(small_spec(seed));
    test::TempDir dir("rt");
    save_dataset(ds, dir.path);
    Dataset back = load_dataset(dir.path);
    CHECK(back == ds);
  }
}

TEST_CASE("generate_synthetic examples and invariants") {
  SUBCASE("noiseless limit") {
    SynthSpec s = small_spec();
    s.spread = 0.0;
    Dataset ds = generate_synthetic(s);
    for (std::size_t i = 0; i < ds.num_samples(); ++i)
      for (std::size_t j = i + 1; j < ds.num_samples(); ++j)
        if (ds.labels[i] == ds.labels[j]) CHECK(squared_distance(ds.visual.row(i), ds.visual.row(j)) == 0.0);
  }
  SUBCASE("deterministic") {
    CHECK(generate_synthetic(small_spec(9)) == generate_synthetic(small_spec(9)));
    CHECK_FALSE(generate_synthetic(small_spec(9)) == generate_synthetic(small_spec(10)));
  }
  SUBCASE("label counts and separation") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      SynthSpec s;
      s.seed = seed;
      Dataset ds = generate_synthetic(s);
      check_invariants(ds);
      std::map<Index, std::size_t> count;
      for (Index l : ds.labels) ++count[l];
      CHECK(count.size() == 8);
      for (const auto& [c, n] : count) CHECK(n == 50);
      for (std::size_t a = 0; a < ds.num_classes(); ++a)
        for (std::size_t b = a + 1; b < ds.num_classes(); ++b)
          CHECK(std::sqrt(squared_distance(ds.prototypes.row(a), ds.prototypes.row(b))) >= 5.0);
    }
  }
  SUBCASE("nearest class mean is perfect at spread 0.01") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      SynthSpec s;
      s.spread = 0.01;
      s.seed = seed;
      Dataset ds = generate_synthetic(s);
      // Independent oracle: per-class sums in a plain loop.
      std::size_t c = ds.num_classes(), d = ds.visual_dim();
      std::vector<std::vector<double>> mean(c, std::vector<double>(d, 0.0));
      std::vector<double> n(c, 0.0);
      for (std::size_t i = 0; i < ds.num_samples(); ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[ds.labels[i]][j] += ds.visual(i, j);
        n[ds.labels[i]] += 1.0;
      }
      std::size_t correct = 0;
      for (std::size_t i = 0; i < ds.num_samples(); ++i) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t k = 0; k < c; ++k) {
          double dist = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            double diff = ds.visual(i, j) - mean[k][j] / n[k];
            dist += diff * diff;
          }
          if (dist < best_d) best_d = dist, best = k;
        }
        correct += best == ds.labels[i];
      }
      CHECK(correct == ds.num_samples());
    }
  }
  SUBCASE("independent prototypes") {
    SynthSpec s = small_spec();
    s.attribute_rank = s.proto_dim;
    check_invariants(generate_synthetic(s));
  }
  SUBCASE("unattainable separation") {
    // A rank-1 factor space puts every prototype on one segment, which holds
    // at most four points at the required spacing.
    SynthSpec s = small_spec();
    s.seen = 2;
    s.unseen = 10;
    CHECK_THROWS_AS(generate_synthetic(s), GenerationError);
  }
}

TEST_CASE("subsample_per_class") {
  Dataset ds = generate_synthetic(small_spec());
  auto per_class_train = [](const Dataset& d) {
    std::map<Index, std::multiset<std::vector<double>>> rows;
    for (Index r : d.seen_train) {
      auto row = d.visual.row(r);
      rows[d.labels[r]].insert(std::vector<double>(row.begin(), row.end()));
    }
    return rows;
  };

  SUBCASE("fraction 1 keeps the seen-train set") {
    CHECK(per_class_train(subsample_per_class(ds, 1.0, 4)) == per_class_train(ds));
  }
  SUBCASE("1% of 600 per class is six") {
    SynthSpec s = small_spec();
    s.samples_per_class = 750;  // 600 training rows after the 20% hold-out
    Dataset big = generate_synthetic(s);
    Dataset sub = subsample_per_class(big, 0.01, 1);
    for (const auto& [c, rows] : per_class_train(sub)) CHECK(rows.size() == 6);
    CHECK(per_class_train(sub).size() == s.seen);
  }
  SUBCASE("counts are ceil(f n) and rows come from the same class") {
    auto before = per_class_train(ds);
    for (double f : {0.05, 0.1, 0.3, 0.5, 0.77}) {
      for (std::uint64_t seed : {1u, 2u}) {
        Dataset sub = subsample_per_class(ds, f, seed);
        check_invariants(sub);
        auto after = per_class_train(sub);
        CHECK(after.size() == before.size());
        for (const auto& [c, rows] : after) {
          CHECK(rows.size() == static_cast<std::size_t>(std::ceil(f * before[c].size() - 1e-9)));
          for (const auto& r : rows) CHECK(before[c].count(r) >= rows.count(r));
        }
        CHECK(sub.seen_heldout.size() == ds.seen_heldout.size());
        CHECK(sub.unseen_test.size() == ds.unseen_test.size());
      }
    }
  }
  SUBCASE("half of ten is five") {
    SynthSpec s = small_spec();
    s.samples_per_class = 10;
    s.heldout_fraction = 0.0;
    Dataset d10 = generate_synthetic(s);
    for (const auto& [c, rows] : per_class_train(subsample_per_class(d10, 0.5, 2)))
      CHECK(rows.size() == 5);
  }
  SUBCASE("bad fraction") {
    CHECK_THROWS_AS(subsample_per_class(ds, 0.0, 1), InputError);
    CHECK_THROWS_AS(subsample_per_class(ds, 1.5, 1), InputError);
  }
}

TEST_CASE("class_means") {
  Matrix one{{1, 2}, {3, 4}};
  IndexList l1{0, 1}, c1{0, 1};
  CHECK(class_means(one, l1, c1) == one);

  Matrix two{{0, 0}, {2, 2}};
  IndexList l2{5, 5}, c2{5};
  CHECK(class_means(two, l2, c2) == Matrix{{1, 1}});

  Matrix x = test::random_matrix(20, 3, 11);
  IndexList labels(20), classes{3, 0, 2, 1};
  for (std::size_t i = 0; i < 20; ++i) labels[i] = (i * 7) % 4;
  Matrix got = class_means(x, labels, classes);
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      int n = 0;
      for (std::size_t i = 0; i < 20; ++i)
        if (labels[i] == classes[ci]) s += x(i, j), ++n;
      CHECK(got(ci, j) == doctest::Approx(s / n).epsilon(1e-14));
    }
  }

  IndexList missing{0, 9};
  CHECK_THROWS_AS(class_means(x, labels, missing), InputError);
}

TEST_CASE("standardize_features uses seen-train statistics") {
  Dataset ds = generate_synthetic(small_spec());
  standardize_features(ds);
  for (std::size_t j = 0; j < ds.visual_dim(); ++j) {
    double s = 0.0, s2 = 0.0;
    for (Index r : ds.seen_train) s += ds.visual(r, j), s2 += ds.visual(r, j) * ds.visual(r, j);
    double n = static_cast<double>(ds.seen_train.size());
    CHECK(std::abs(s / n) < 1e-9);
    CHECK(std::abs(s2 / n - (s / n) * (s / n) - 1.0) < 1e-6);
  }
}

TEST_CASE("convert_csv builds a loadable directory") {
  test::TempDir dir("csv");
  write_text(dir.path / "f.csv", "0,1\n0.5,1.5\n4 4\n5,3\n1,1\n");
  write_text(dir.path / "l.txt", "0\n0\n1\n1\n0\n");
  write_text(dir.path / "p.csv", "1,0,0\n0,1,1\n");
  write_text(dir.path / "s.txt", "0\n");
  write_text(dir.path / "u.txt", "1\n");
  CsvSources src{dir.path / "f.csv", dir.path / "l.txt", dir.path / "p.csv",
                 dir.path / "s.txt", dir.path / "u.txt"};
  Dataset ds = convert_csv(src);
  check_invariants(ds);
  CHECK(ds.num_samples() == 5);
  CHECK(ds.visual(2, 0) == 4.0);
  CHECK(ds.unseen_test == IndexList{2, 3});
  CHECK(ds.seen_train.size() + ds.seen_heldout.size() == 3);

  write_text(dir.path / "l.txt", "0\n0\n1\n1\n");
  CHECK_THROWS_AS(convert_csv(src), LoadError);
}
