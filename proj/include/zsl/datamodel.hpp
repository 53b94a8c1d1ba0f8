#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "zsl/numkernel.hpp"

namespace zsl {

using Index = std::size_t;
using IndexList = std::vector<Index>;

// Visual features, labels and class prototypes, with the seen/unseen class
// split and the three row splits. Labels and class lists index prototype rows.
struct Dataset {
  Matrix visual;      // n x d
  IndexList labels;   // n
  Matrix prototypes;  // (s + u) x k
  IndexList seen_classes;
  IndexList unseen_classes;
  IndexList seen_train;
  IndexList seen_heldout;
  IndexList unseen_test;

  std::size_t num_samples() const { return visual.rows(); }
  std::size_t visual_dim() const { return visual.cols(); }
  std::size_t proto_dim() const { return prototypes.cols(); }
  std::size_t num_classes() const { return prototypes.rows(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Throws LoadError naming the first violated invariant.
void check_invariants(const Dataset& ds);

Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

struct SynthSpec {
  std::size_t seen = 5;
  std::size_t unseen = 3;
  std::size_t visual_dim = 32;
  std::size_t proto_dim = 8;
  std::size_t samples_per_class = 50;
  double spread = 0.05;
  double separation = 5.0;
  std::uint64_t seed = 1;
  double heldout_fraction = 0.2;
  // Dimension of the factor space the prototypes are drawn from. 0 picks
  // min(k, seen - 1): the seen prototypes then span the factor space, so every
  // unseen prototype is an affine combination of seen ones. k gives
  // independent prototypes.
  std::size_t attribute_rank = 0;
};

// Prototypes are drawn in the positive orthant under a minimum pairwise
// distance (see attribute_rank), and visual samples are M * a_c plus
// N(0, spread^2) noise for a fixed random non-negative map M. Values are
// rounded to float32 so that a save/load cycle is exact.
Dataset generate_synthetic(const SynthSpec& spec);

// Keeps ceil(fraction * n_c) random seen-train rows of every seen class and
// drops the rest from the dataset. Held-out and unseen rows are kept.
Dataset subsample_per_class(const Dataset& ds, double fraction, std::uint64_t seed);

// Per-class arithmetic mean of the rows of `visual`, ordered as `classes`.
Matrix class_means(const Matrix& visual, std::span<const Index> labels,
                   std::span<const Index> classes);

// Per-dimension standardization with statistics from the seen-train rows.
void standardize_features(Dataset& ds);

// Converter input: plain-text files, comma or whitespace separated.
//   features   one sample per line, d values
//   labels     one class index per line
//   prototypes one class per line (line i = class i), k values
//   seen/unseen one class index per line
//   splits     optional splits.json; when absent seen rows are divided per
//              class by heldout_fraction and every unseen row is a test row
struct CsvSources {
  std::filesystem::path features;
  std::filesystem::path labels;
  std::filesystem::path prototypes;
  std::filesystem::path seen_classes;
  std::filesystem::path unseen_classes;
  std::optional<std::filesystem::path> splits;
  double heldout_fraction = 0.2;
  std::uint64_t seed = 1;
};

Dataset convert_csv(const CsvSources& src);

}  // namespace zsl
