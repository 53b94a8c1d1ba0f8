#pragma once

// Nearest-prototype inference in the latent space and the per-class
// evaluation protocol for ZSL and generalized ZSL.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zsl/datamodel.hpp"
#include "zsl/embednet.hpp"

namespace zsl {

enum class Distance { kEuclidean, kCosine };
enum class EvalMode { kZsl, kGzsl };

// For each row of `latent`, the candidate whose embedding (same row order as
// `candidates`) is closest. Ties go to the lowest class index.
IndexList nearest_candidate(const Matrix& latent, const Matrix& candidate_latent,
                            std::span<const Index> candidates,
                            Distance distance = Distance::kEuclidean);

// Embeds x with the visual encoder and each candidate prototype with the
// semantic encoder, then returns the nearest candidate class per row.
IndexList predict(const EmbedModel& m, const Matrix& x, std::span<const Index> candidates,
                  const Matrix& prototypes, Distance distance = Distance::kEuclidean);

// Fraction of correct predictions per class in `classes`; classes without
// samples are left out.
std::map<Index, double> per_class_accuracy(std::span<const Index> pred,
                                           std::span<const Index> truth,
                                           std::span<const Index> classes);

// Macro average of per-class top-1 accuracy. Classes without samples are
// excluded (with a warning on stderr).
double zsl_accuracy(std::span<const Index> pred, std::span<const Index> truth,
                    std::span<const Index> classes);

// 2SU / (S + U), 0 when both are 0.
double harmonic_mean(double seen, double unseen);

struct RunMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
  unsigned threads = 1;

  friend bool operator==(const RunMetadata&, const RunMetadata&) = default;
};

struct EvalReport {
  EvalMode mode = EvalMode::kGzsl;
  std::map<Index, double> per_class_accuracy;
  double zsl_acc = 0.0;
  std::optional<double> seen_acc;
  std::optional<double> unseen_acc;
  std::optional<double> harmonic;
  // Unseen-class test rows predicted as some seen class (GZSL only).
  std::size_t unseen_predicted_as_seen = 0;
  RunMetadata metadata;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// ZSL: unseen-test rows against the unseen prototypes only.
EvalReport evaluate_zsl(const EmbedModel& m, const Dataset& ds,
                        Distance distance = Distance::kEuclidean);

// GZSL: held-out seen rows and unseen-test rows against all prototypes.
EvalReport evaluate_gzsl(const EmbedModel& m, const Dataset& ds,
                         Distance distance = Distance::kEuclidean);

EvalReport evaluate(const EmbedModel& m, const Dataset& ds, EvalMode mode,
                    Distance distance = Distance::kEuclidean);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
// Aligned table with ZSL_Acc / S / U / H columns in percent.
std::string report_to_text(const EvalReport& r);

struct PipelineConfig;

struct SweepRow {
  double fraction = 0.0;
  double mean_h = 0.0;
  double max_deviation = 0.0;  // max over seeds of |H_seed - mean_h|
  std::vector<double> per_seed_h;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

// Trains inductively on subsample_per_class(ds, fraction, seed) for every
// (fraction, seed) pair and summarizes the GZSL H per fraction.
std::vector<SweepRow> sweep_fractions(const Dataset& ds, std::span<const double> fractions,
                                      std::span<const std::uint64_t> seeds,
                                      const PipelineConfig& cfg);

// Columns: fraction, mean_H, max_deviation, then one H column per seed.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows,
                     std::span<const std::uint64_t> seeds);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

}  // namespace zsl
