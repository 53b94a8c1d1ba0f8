#include "zsl/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "zsl/checkpoint.hpp"
#include "zsl/errors.hpp"

namespace zsl {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

// Non-negative integer field; json's unsigned conversion would wrap -1.
void read_count(const json& obj, const char* key, std::size_t& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number_integer() || it->get<long long>() < 0) {
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  out = it->get<std::size_t>();
}

void read_seed(const json& obj, const char* key, std::uint64_t& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() &&
                                   it->get<long long>() < 0)) {
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  }
  out = it->get<std::uint64_t>();
}

const char* mode_string(TrainMode m) {
  return m == TrainMode::kInductive ? "inductive" : "transductive";
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

json epoch_json(const EpochRecord& e, bool transductive) {
  json j = {{"stage", "embed"},
            {"epoch", e.epoch},
            {"mean_loss", e.mean_loss},
            {"terms",
             {{"class_encoder", e.mean_terms.class_encoder},
              {"latent_align", e.mean_terms.latent_align},
              {"structure_align", e.mean_terms.structure_align},
              {"classifier", e.mean_terms.classifier},
              {"l2", e.mean_terms.l2}}}};
  if (transductive) j["churn"] = e.churn;
  return j;
}

EmbedModel load_embed_checkpoint(const fs::path& path, const Dataset& ds) {
  ParamList params = read_checkpoint(path);
  find_param(params, "visual.weight", 0, ds.visual_dim());
  find_param(params, "semantic.weight1", 0, ds.proto_dim());
  return EmbedModel::from_params(params);
}

void write_report(const fs::path& dir, const EvalReport& r) {
  fs::create_directories(dir);
  write_text(dir / "report.json", report_to_json(r).dump(2) + "\n");
  write_text(dir / "report.txt", report_to_text(r));
}

void print_headline(std::ostream& out, const EvalReport& r) {
  out << std::setprecision(6);
  if (r.mode == EvalMode::kGzsl) {
    out << "S=" << r.seen_acc.value_or(0.0) << " U=" << r.unseen_acc.value_or(0.0)
        << " H=" << r.harmonic.value_or(0.0) << "\n";
  } else {
    out << "ZSL_Acc=" << r.zsl_acc << "\n";
  }
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + cell + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (double v : parse_double_list(text)) {
    if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
      throw ConfigError("seeds must be non-negative integers");
    }
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

int cmd_synth(const SynthSpec& spec, const fs::path& out_dir) {
  Dataset ds = generate_synthetic(spec);
  save_dataset(ds, out_dir);
  std::cout << "n=" << ds.num_samples() << " d=" << ds.visual_dim() << " k=" << ds.proto_dim()
            << " s=" << ds.seen_classes.size() << " u=" << ds.unseen_classes.size() << "\n";
  return kExitOk;
}

int cmd_train(RunConfig cfg) {
  Dataset ds = materialize_dataset(cfg);
  const std::string hash = config_hash(cfg);
  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.json", run_config_to_json(cfg).dump(2) + "\n");

  std::ofstream log(cfg.output_dir / "train_log.jsonl", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write training log");
  const bool transductive = cfg.mode == TrainMode::kTransductive;
  auto on_epoch = [&](const EpochRecord& e) { log << epoch_json(e, transductive).dump() << "\n"; };

  EvalReport report;
  if (transductive) {
    TransductiveRun run = run_transductive(ds, cfg.pipeline, on_epoch);
    write_checkpoint(cfg.output_dir / "embed.zslm", run.model.to_params());
    write_checkpoint(cfg.output_dir / "cvae.zslm", run.cvae.to_params());
    for (const auto& c : run.cvae_history) {
      log << json{{"stage", "cvae"},
                  {"epoch", c.epoch},
                  {"mean_loss", c.mean_loss},
                  {"reconstruction", c.mean_reconstruction},
                  {"kl", c.mean_kl}}
                 .dump()
          << "\n";
    }
    report = run.report;
  } else {
    InductiveRun run = run_inductive(ds, cfg.pipeline, on_epoch);
    write_checkpoint(cfg.output_dir / "embed.zslm", run.model.to_params());
    report = run.report;
  }
  if (!log.flush()) throw std::runtime_error("cannot write training log");
  report.metadata.seed = cfg.pipeline.seed;
  report.metadata.config_hash = hash;
  report.metadata.threads = 1;
  write_report(cfg.output_dir, report);
  print_headline(std::cout, report);
  return kExitOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& dataset, EvalMode mode,
             Distance distance, const fs::path& out_dir) {
  Dataset ds = load_dataset(dataset);
  EmbedModel m = load_embed_checkpoint(checkpoint, ds);
  EvalReport report = evaluate(m, ds, mode, distance);
  std::ifstream in(checkpoint, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  report.metadata.config_hash = hex64(fnv1a(bytes));
  report.metadata.threads = 1;
  write_report(out_dir, report);
  print_headline(std::cout, report);
  return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<double>& fractions,
              const std::vector<std::uint64_t>& seeds, const std::optional<fs::path>& out) {
  Dataset ds = materialize_dataset(cfg);
  std::vector<SweepRow> rows = sweep_fractions(ds, fractions, seeds, cfg.pipeline);
  fs::path path = out ? *out : cfg.output_dir / "sweep.csv";
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_sweep_csv(path, rows, seeds);
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    std::cout << "fraction=" << r.fraction << " mean_H=" << r.mean_h
              << " max_deviation=" << r.max_deviation << "\n";
  }
  return kExitOk;
}

int cmd_convert(const CsvSources& src, const fs::path& out_dir) {
  Dataset ds = convert_csv(src);
  save_dataset(ds, out_dir);
  std::cout << "n=" << ds.num_samples() << " d=" << ds.visual_dim() << " k=" << ds.proto_dim()
            << " s=" << ds.seen_classes.size() << " u=" << ds.unseen_classes.size() << "\n";
  return kExitOk;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  reject_unknown(j,
                 {"dataset", "synth", "mode", "output_dir", "seed", "standardize", "train",
                  "loss_weights", "cvae", "kmeans", "eval"},
                 "config");
  RunConfig cfg;
  read_seed(j, "seed", cfg.pipeline.seed, "config");

  const bool has_dataset = j.contains("dataset");
  const bool has_synth = j.contains("synth");
  if (has_dataset == has_synth) {
    throw ConfigError("config needs exactly one of 'dataset' and 'synth'");
  }
  if (has_dataset) {
    if (!j["dataset"].is_string()) throw ConfigError("config.dataset must be a path string");
    cfg.dataset = fs::path(j["dataset"].get<std::string>());
  } else {
    const json& s = j["synth"];
    reject_unknown(s,
                   {"seen", "unseen", "visual_dim", "proto_dim", "samples_per_class", "spread",
                    "separation", "heldout_fraction", "attribute_rank", "seed"},
                   "synth");
    SynthSpec spec;
    spec.seed = cfg.pipeline.seed;
    read_count(s, "seen", spec.seen, "synth");
    read_count(s, "unseen", spec.unseen, "synth");
    read_count(s, "visual_dim", spec.visual_dim, "synth");
    read_count(s, "proto_dim", spec.proto_dim, "synth");
    read_count(s, "samples_per_class", spec.samples_per_class, "synth");
    read_opt(s, "spread", spec.spread, "synth");
    read_opt(s, "separation", spec.separation, "synth");
    read_opt(s, "heldout_fraction", spec.heldout_fraction, "synth");
    read_count(s, "attribute_rank", spec.attribute_rank, "synth");
    read_seed(s, "seed", spec.seed, "synth");
    if (spec.seen == 0 || spec.unseen == 0 || spec.visual_dim == 0 || spec.proto_dim == 0 ||
        spec.samples_per_class == 0 || !(spec.spread >= 0.0) || !(spec.separation >= 0.0) ||
        !(spec.heldout_fraction >= 0.0 && spec.heldout_fraction < 1.0)) {
      throw ConfigError("synth spec out of range");
    }
    cfg.synth = spec;
  }

  if (j.contains("mode")) {
    std::string mode;
    read_opt(j, "mode", mode, "config");
    if (mode == "inductive") {
      cfg.mode = TrainMode::kInductive;
    } else if (mode == "transductive") {
      cfg.mode = TrainMode::kTransductive;
    } else {
      throw ConfigError("config.mode must be 'inductive' or 'transductive'");
    }
  }
  if (j.contains("output_dir")) {
    std::string dir;
    read_opt(j, "output_dir", dir, "config");
    cfg.output_dir = dir;
  }
  read_opt(j, "standardize", cfg.standardize, "config");

  PipelineConfig& p = cfg.pipeline;
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t,
                   {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon",
                    "latent_dim", "semantic_hidden", "prune_warmup"},
                   "train");
    read_count(t, "epochs", p.train.epochs, "train");
    read_count(t, "batch_size", p.train.batch_size, "train");
    read_opt(t, "learning_rate", p.train.learning_rate, "train");
    read_opt(t, "beta1", p.train.beta1, "train");
    read_opt(t, "beta2", p.train.beta2, "train");
    read_opt(t, "epsilon", p.train.epsilon, "train");
    read_count(t, "latent_dim", p.latent_dim, "train");
    read_count(t, "semantic_hidden", p.semantic_hidden, "train");
    read_count(t, "prune_warmup", p.train.prune_warmup, "train");
  }
  if (j.contains("loss_weights")) {
    const json& w = j["loss_weights"];
    reject_unknown(w, {"alpha1", "alpha2", "alpha3", "alpha4", "beta"}, "loss_weights");
    read_opt(w, "alpha1", p.train.weights.class_encoder, "loss_weights");
    read_opt(w, "alpha2", p.train.weights.latent_align, "loss_weights");
    read_opt(w, "alpha3", p.train.weights.structure_align, "loss_weights");
    read_opt(w, "alpha4", p.train.weights.classifier, "loss_weights");
    read_opt(w, "beta", p.train.weights.l2, "loss_weights");
  }
  if (j.contains("cvae")) {
    const json& c = j["cvae"];
    reject_unknown(c, {"epochs", "batch_size", "learning_rate", "hidden", "sample"}, "cvae");
    read_count(c, "epochs", p.cvae.epochs, "cvae");
    read_count(c, "batch_size", p.cvae.batch_size, "cvae");
    read_opt(c, "learning_rate", p.cvae.learning_rate, "cvae");
    read_count(c, "hidden", p.cvae.hidden, "cvae");
    read_opt(c, "sample", p.sample_semantics, "cvae");
  }
  if (j.contains("kmeans")) {
    reject_unknown(j["kmeans"], {"max_iter"}, "kmeans");
    read_count(j["kmeans"], "max_iter", p.kmeans_max_iter, "kmeans");
  }
  if (j.contains("eval")) {
    reject_unknown(j["eval"], {"distance"}, "eval");
    std::string dist = "euclidean";
    read_opt(j["eval"], "distance", dist, "eval");
    if (dist == "euclidean") {
      p.distance = Distance::kEuclidean;
    } else if (dist == "cosine") {
      p.distance = Distance::kCosine;
    } else {
      throw ConfigError("eval.distance must be 'euclidean' or 'cosine'");
    }
  }

  p.train.seed = p.seed;
  p.train.mode = cfg.mode;
  p.cvae.seed = p.seed;
  try {
    p.train.validate();
    p.cvae.validate();
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  if (p.train.epochs == 0) throw ConfigError("train.epochs must be >= 1");
  if (p.latent_dim == 0 || p.semantic_hidden == 0) {
    throw ConfigError("train.latent_dim and train.semantic_hidden must be >= 1");
  }
  if (p.kmeans_max_iter == 0) throw ConfigError("kmeans.max_iter must be >= 1");
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& cfg) {
  const PipelineConfig& p = cfg.pipeline;
  json j;
  if (cfg.dataset) {
    j["dataset"] = cfg.dataset->string();
  } else {
    const SynthSpec& s = *cfg.synth;
    j["synth"] = {{"seen", s.seen},
                  {"unseen", s.unseen},
                  {"visual_dim", s.visual_dim},
                  {"proto_dim", s.proto_dim},
                  {"samples_per_class", s.samples_per_class},
                  {"spread", s.spread},
                  {"separation", s.separation},
                  {"heldout_fraction", s.heldout_fraction},
                  {"attribute_rank", s.attribute_rank},
                  {"seed", s.seed}};
  }
  j["mode"] = mode_string(cfg.mode);
  j["output_dir"] = cfg.output_dir.string();
  j["seed"] = p.seed;
  j["standardize"] = cfg.standardize;
  j["train"] = {{"epochs", p.train.epochs},
                {"batch_size", p.train.batch_size},
                {"learning_rate", p.train.learning_rate},
                {"beta1", p.train.beta1},
                {"beta2", p.train.beta2},
                {"epsilon", p.train.epsilon},
                {"latent_dim", p.latent_dim},
                {"semantic_hidden", p.semantic_hidden},
                {"prune_warmup", p.train.prune_warmup}};
  j["loss_weights"] = {{"alpha1", p.train.weights.class_encoder},
                       {"alpha2", p.train.weights.latent_align},
                       {"alpha3", p.train.weights.structure_align},
                       {"alpha4", p.train.weights.classifier},
                       {"beta", p.train.weights.l2}};
  j["cvae"] = {{"epochs", p.cvae.epochs},
               {"batch_size", p.cvae.batch_size},
               {"learning_rate", p.cvae.learning_rate},
               {"hidden", p.cvae.hidden},
               {"sample", p.sample_semantics}};
  j["kmeans"] = {{"max_iter", p.kmeans_max_iter}};
  j["eval"] = {{"distance", p.distance == Distance::kEuclidean ? "euclidean" : "cosine"}};
  return j;
}

std::string config_hash(const RunConfig& cfg) {
  json j = run_config_to_json(cfg);
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

Dataset materialize_dataset(const RunConfig& cfg) {
  Dataset ds = cfg.dataset ? load_dataset(*cfg.dataset) : generate_synthetic(*cfg.synth);
  if (cfg.standardize) standardize_features(ds);
  return ds;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Zero-shot learning with a discriminative latent embedding"};
  app.require_subcommand(1);

  SynthSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seen", spec.seen, "Seen classes");
  synth->add_option("--unseen", spec.unseen, "Unseen classes");
  synth->add_option("--visual-dim", spec.visual_dim, "Visual feature dimension d");
  synth->add_option("--proto-dim", spec.proto_dim, "Prototype dimension k");
  synth->add_option("--samples-per-class", spec.samples_per_class, "Samples per class");
  synth->add_option("--spread", spec.spread, "Visual noise standard deviation");
  synth->add_option("--separation", spec.separation, "Minimum prototype distance");
  synth->add_option("--heldout-fraction", spec.heldout_fraction, "Held-out seen fraction");
  synth->add_option("--seed", spec.seed, "Random seed");
  synth->add_option("--attribute-rank", spec.attribute_rank,
                    "Prototype factor dimension (0 = min(k, seen - 1))");

  std::string train_config;
  std::optional<std::string> train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> train_mode;
  std::optional<std::size_t> train_epochs;
  auto* train = app.add_subcommand("train", "Train a model and evaluate it (GZSL)");
  train->add_option("config", train_config, "Run configuration JSON")->required();
  train->add_option("--output-dir", train_out, "Override output_dir");
  train->add_option("--seed", train_seed, "Override seed");
  train->add_option("--mode", train_mode, "Override mode (inductive|transductive)");
  train->add_option("--epochs", train_epochs, "Override train.epochs");

  std::string eval_ckpt, eval_data, eval_mode = "gzsl", eval_dist = "euclidean";
  std::string eval_out = ".";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", eval_ckpt, "Embedding checkpoint (.zslm)")->required();
  eval->add_option("--dataset", eval_data, "Dataset directory")->required();
  eval->add_option("--mode", eval_mode, "zsl or gzsl");
  eval->add_option("--distance", eval_dist, "euclidean or cosine");
  eval->add_option("--out", eval_out, "Report directory");

  std::string sweep_config, sweep_fracs = "0.01,0.05,0.1,0.2,0.3,0.5,1.0", sweep_seeds = "1";
  std::optional<std::string> sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Inductive H across labeled-data fractions");
  sweep->add_option("config", sweep_config, "Run configuration JSON")->required();
  sweep->add_option("--fractions", sweep_fracs, "Comma-separated fractions in (0, 1]");
  sweep->add_option("--seeds", sweep_seeds, "Comma-separated seeds");
  sweep->add_option("--out", sweep_out, "CSV output path");

  CsvSources csv;
  std::string csv_features, csv_labels, csv_protos, csv_seen, csv_unseen, csv_out;
  std::optional<std::string> csv_splits;
  auto* convert = app.add_subcommand("convert", "Convert CSV/text files to a dataset directory");
  convert->add_option("--features", csv_features, "One sample per line")->required();
  convert->add_option("--labels", csv_labels, "One class index per line")->required();
  convert->add_option("--prototypes", csv_protos, "One class prototype per line")->required();
  convert->add_option("--seen", csv_seen, "Seen class indices")->required();
  convert->add_option("--unseen", csv_unseen, "Unseen class indices")->required();
  convert->add_option("--splits", csv_splits, "Optional splits.json");
  convert->add_option("--heldout-fraction", csv.heldout_fraction, "Used without --splits");
  convert->add_option("--seed", csv.seed, "Used without --splits");
  convert->add_option("--out", csv_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(spec, synth_out);
    if (*train) {
      RunConfig cfg = load_run_config(train_config);
      json j = run_config_to_json(cfg);
      if (train_out) j["output_dir"] = *train_out;
      if (train_seed) {
        j["seed"] = *train_seed;
        if (j.contains("synth")) j["synth"].erase("seed");
      }
      if (train_mode) j["mode"] = *train_mode;
      if (train_epochs) j["train"]["epochs"] = *train_epochs;
      if (train_out || train_seed || train_mode || train_epochs) {
        cfg = parse_run_config(j);
      }
      return cmd_train(cfg);
    }
    if (*eval) {
      EvalMode mode;
      if (eval_mode == "zsl") {
        mode = EvalMode::kZsl;
      } else if (eval_mode == "gzsl") {
        mode = EvalMode::kGzsl;
      } else {
        throw ConfigError("--mode must be zsl or gzsl");
      }
      Distance dist;
      if (eval_dist == "euclidean") {
        dist = Distance::kEuclidean;
      } else if (eval_dist == "cosine") {
        dist = Distance::kCosine;
      } else {
        throw ConfigError("--distance must be euclidean or cosine");
      }
      return cmd_eval(eval_ckpt, eval_data, mode, dist, eval_out);
    }
    if (*sweep) {
      RunConfig cfg = load_run_config(sweep_config);
      std::vector<double> fractions = parse_double_list(sweep_fracs);
      for (double f : fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
      }
      std::vector<std::uint64_t> seeds = parse_seed_list(sweep_seeds);
      std::optional<fs::path> out;
      if (sweep_out) out = *sweep_out;
      return cmd_sweep(cfg, fractions, seeds, out);
    }
    if (*convert) {
      csv.features = csv_features;
      csv.labels = csv_labels;
      csv.prototypes = csv_protos;
      csv.seen_classes = csv_seen;
      csv.unseen_classes = csv_unseen;
      if (csv_splits) csv.splits = fs::path(*csv_splits);
      return cmd_convert(csv, csv_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"zsl"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace zsl
