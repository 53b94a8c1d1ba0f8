#pragma once

// `zsl` command line: synth, train, eval, sweep, convert.
//
// Run configuration (JSON). Every key except one of dataset / synth is
// optional; unknown keys are rejected.
//
//   {
//     "dataset": "path/to/dir",            // or
//     "synth": {"seen": 5, "unseen": 3, "visual_dim": 32, "proto_dim": 8,
//               "samples_per_class": 50, "spread": 0.05, "separation": 5,
//               "heldout_fraction": 0.2, "attribute_rank": 0,
//               "seed": <run seed>},
//     "mode": "inductive" | "transductive",
//     "output_dir": "runs/out",
//     "seed": 1,
//     "standardize": false,
//     "train": {"epochs": 200, "batch_size": 64, "learning_rate": 1e-4,
//               "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8,
//               "latent_dim": 1000, "semantic_hidden": 750,
//               "prune_warmup": 50},
//     "loss_weights": {"alpha1": 1, "alpha2": 1, "alpha3": 1, "alpha4": 1,
//                      "beta": 1e-4},
//     "cvae": {"epochs": 500, "batch_size": 64, "learning_rate": 1e-3,
//              "hidden": 512, "sample": false},
//     "kmeans": {"max_iter": 100},
//     "eval": {"distance": "euclidean" | "cosine"}
//   }
//
// Exit codes: 0 success, 2 configuration or usage error, 3 data or model error.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zsl/datamodel.hpp"
#include "zsl/embednet.hpp"
#include "zsl/pipeline.hpp"

namespace zsl {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

struct RunConfig {
  std::optional<std::filesystem::path> dataset;
  std::optional<SynthSpec> synth;
  TrainMode mode = TrainMode::kInductive;
  std::filesystem::path output_dir = "zsl_run";
  bool standardize = false;
  PipelineConfig pipeline;
};

// Throws ConfigError on schema violations.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical form with every default filled in.
nlohmann::json run_config_to_json(const RunConfig& cfg);
// FNV-1a of the canonical form without output_dir, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

// Loads or generates the dataset the config names, standardized if asked.
Dataset materialize_dataset(const RunConfig& cfg);

int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace zsl
