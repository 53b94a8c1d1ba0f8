#include "zsl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "zsl/errors.hpp"
#include "zsl/pipeline.hpp"

namespace zsl {

namespace {

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom == 0.0) return 1.0;
  return 1.0 - dot / denom;
}

IndexList rows_labels(const Dataset& ds, std::span<const Index> rows) {
  IndexList out;
  out.reserve(rows.size());
  for (Index r : rows) out.push_back(ds.labels[r]);
  return out;
}

// Predictions for `rows` of ds against `candidates`, with truth labels.
std::pair<IndexList, IndexList> predict_rows(const EmbedModel& m, const Dataset& ds,
                                             std::span<const Index> rows,
                                             std::span<const Index> candidates,
                                             Distance distance) {
  Matrix x = gather_rows(ds.visual, rows);
  return {predict(m, x, candidates, ds.prototypes, distance), rows_labels(ds, rows)};
}

const char* mode_name(EvalMode mode) { return mode == EvalMode::kZsl ? "zsl" : "gzsl"; }

}  // namespace

IndexList nearest_candidate(const Matrix& latent, const Matrix& candidate_latent,
                            std::span<const Index> candidates, Distance distance) {
  if (candidates.empty()) throw InputError("predict: empty candidate set");
  if (candidate_latent.rows() != candidates.size() ||
      candidate_latent.cols() != latent.cols()) {
    throw InputError("predict: candidate embeddings do not match");
  }
  IndexList out(latent.rows());
  for (std::size_t i = 0; i < latent.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Index best_class = 0;
    bool found = false;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      double dist = distance == Distance::kEuclidean
                        ? squared_distance(latent.row(i), candidate_latent.row(c))
                        : cosine_distance(latent.row(i), candidate_latent.row(c));
      if (!found || dist < best || (dist == best && candidates[c] < best_class)) {
        best = dist;
        best_class = candidates[c];
        found = true;
      }
    }
    out[i] = best_class;
  }
  return out;
}

IndexList predict(const EmbedModel& m, const Matrix& x, std::span<const Index> candidates,
                  const Matrix& prototypes, Distance distance) {
  if (candidates.empty()) throw InputError("predict: empty candidate set");
  for (Index c : candidates) {
    if (c >= prototypes.rows()) throw InputError("predict: candidate without prototype");
  }
  Matrix latent = encode_visual(m, x);
  Matrix cand = encode_semantic(m, gather_rows(prototypes, candidates));
  return nearest_candidate(latent, cand, candidates, distance);
}

std::map<Index, double> per_class_accuracy(std::span<const Index> pred,
                                           std::span<const Index> truth,
                                           std::span<const Index> classes) {
  if (pred.size() != truth.size()) throw InputError("accuracy: length mismatch");
  std::map<Index, std::pair<std::size_t, std::size_t>> counts;  // correct, total
  for (Index c : classes) counts[c] = {0, 0};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto it = counts.find(truth[i]);
    if (it == counts.end()) continue;
    ++it->second.second;
    if (pred[i] == truth[i]) ++it->second.first;
  }
  std::map<Index, double> out;
  for (const auto& [c, ct] : counts) {
    if (ct.second > 0) out[c] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
  }
  return out;
}

double zsl_accuracy(std::span<const Index> pred, std::span<const Index> truth,
                    std::span<const Index> classes) {
  for (Index t : truth) {
    if (std::find(classes.begin(), classes.end(), t) == classes.end()) {
      throw InputError("zsl_accuracy: truth label outside the class set");
    }
  }
  auto per_class = per_class_accuracy(pred, truth, classes);
  if (per_class.size() < std::set<Index>(classes.begin(), classes.end()).size()) {
    std::cerr << "warning: " << (classes.size() - per_class.size())
              << " class(es) without samples excluded from the average\n";
  }
  if (per_class.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [c, acc] : per_class) sum += acc;
  return sum / static_cast<double>(per_class.size());
}

double harmonic_mean(double seen, double unseen) {
  if (seen + unseen == 0.0) return 0.0;
  return 2.0 * seen * unseen / (seen + unseen);
}

EvalReport evaluate_zsl(const EmbedModel& m, const Dataset& ds, Distance distance) {
  if (ds.unseen_test.empty()) throw InputError("evaluate: empty unseen-test split");
  auto [pred, truth] = predict_rows(m, ds, ds.unseen_test, ds.unseen_classes, distance);
  EvalReport r;
  r.mode = EvalMode::kZsl;
  r.per_class_accuracy = per_class_accuracy(pred, truth, ds.unseen_classes);
  r.zsl_acc = zsl_accuracy(pred, truth, ds.unseen_classes);
  return r;
}

EvalReport evaluate_gzsl(const EmbedModel& m, const Dataset& ds, Distance distance) {
  if (ds.seen_heldout.empty()) throw InputError("evaluate: empty held-out seen split");
  if (ds.unseen_test.empty()) throw InputError("evaluate: empty unseen-test split");
  IndexList all(ds.seen_classes);
  all.insert(all.end(), ds.unseen_classes.begin(), ds.unseen_classes.end());

  auto [pred_s, truth_s] = predict_rows(m, ds, ds.seen_heldout, all, distance);
  auto [pred_u, truth_u] = predict_rows(m, ds, ds.unseen_test, all, distance);

  EvalReport r = evaluate_zsl(m, ds, distance);
  r.mode = EvalMode::kGzsl;
  r.per_class_accuracy = per_class_accuracy(pred_s, truth_s, ds.seen_classes);
  for (const auto& kv : per_class_accuracy(pred_u, truth_u, ds.unseen_classes)) {
    r.per_class_accuracy.insert(kv);
  }
  r.seen_acc = zsl_accuracy(pred_s, truth_s, ds.seen_classes);
  r.unseen_acc = zsl_accuracy(pred_u, truth_u, ds.unseen_classes);
  r.harmonic = harmonic_mean(*r.seen_acc, *r.unseen_acc);
  std::size_t shifted = 0;
  for (Index p : pred_u) {
    if (std::find(ds.seen_classes.begin(), ds.seen_classes.end(), p) !=
        ds.seen_classes.end()) {
      ++shifted;
    }
  }
  r.unseen_predicted_as_seen = shifted;
  return r;
}

EvalReport evaluate(const EmbedModel& m, const Dataset& ds, EvalMode mode,
                    Distance distance) {
  return mode == EvalMode::kZsl ? evaluate_zsl(m, ds, distance)
                                : evaluate_gzsl(m, ds, distance);
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mode"] = mode_name(r.mode);
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [c, acc] : r.per_class_accuracy) per_class[std::to_string(c)] = acc;
  j["per_class_accuracy"] = per_class;
  j["zsl_acc"] = r.zsl_acc;
  if (r.mode == EvalMode::kGzsl) {
    j["seen_acc"] = r.seen_acc.value_or(0.0);
    j["unseen_acc"] = r.unseen_acc.value_or(0.0);
    j["H"] = r.harmonic.value_or(0.0);
    j["unseen_predicted_as_seen"] = r.unseen_predicted_as_seen;
  }
  j["metadata"] = {{"seed", r.metadata.seed},
                   {"config_hash", r.metadata.config_hash},
                   {"threads", r.metadata.threads}};
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  std::string mode = j.at("mode").get<std::string>();
  if (mode == "zsl") {
    r.mode = EvalMode::kZsl;
  } else if (mode == "gzsl") {
    r.mode = EvalMode::kGzsl;
  } else {
    throw InputError("report: unknown mode " + mode);
  }
  for (const auto& [key, value] : j.at("per_class_accuracy").items()) {
    r.per_class_accuracy[std::stoull(key)] = value.get<double>();
  }
  r.zsl_acc = j.at("zsl_acc").get<double>();
  if (r.mode == EvalMode::kGzsl) {
    r.seen_acc = j.at("seen_acc").get<double>();
    r.unseen_acc = j.at("unseen_acc").get<double>();
    r.harmonic = j.at("H").get<double>();
    r.unseen_predicted_as_seen = j.at("unseen_predicted_as_seen").get<std::size_t>();
  }
  const auto& meta = j.at("metadata");
  r.metadata.seed = meta.at("seed").get<std::uint64_t>();
  r.metadata.config_hash = meta.at("config_hash").get<std::string>();
  r.metadata.threads = meta.at("threads").get<unsigned>();
  return r;
}

std::string report_to_text(const EvalReport& r) {
  auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << 100.0 * v;
    return s.str();
  };
  std::ostringstream out;
  out << std::left << std::setw(8) << "mode" << std::right << std::setw(9) << "ZSL_Acc";
  if (r.mode == EvalMode::kGzsl) {
    out << std::setw(8) << "S" << std::setw(8) << "U" << std::setw(8) << "H"
        << std::setw(14) << "U->seen";
  }
  out << "\n"
      << std::left << std::setw(8) << mode_name(r.mode) << std::right << std::setw(9)
      << pct(r.zsl_acc);
  if (r.mode == EvalMode::kGzsl) {
    out << std::setw(8) << pct(r.seen_acc.value_or(0.0)) << std::setw(8)
        << pct(r.unseen_acc.value_or(0.0)) << std::setw(8) << pct(r.harmonic.value_or(0.0))
        << std::setw(14) << r.unseen_predicted_as_seen;
  }
  out << "\n\n" << std::left << std::setw(8) << "class" << std::right << std::setw(9)
      << "acc" << "\n";
  for (const auto& [c, acc] : r.per_class_accuracy) {
    out << std::left << std::setw(8) << c << std::right << std::setw(9) << pct(acc) << "\n";
  }
  out << "\nseed " << r.metadata.seed << "  config " << r.metadata.config_hash
      << "  threads " << r.metadata.threads << "\n";
  return out.str();
}

std::vector<SweepRow> sweep_fractions(const Dataset& ds, std::span<const double> fractions,
                                      std::span<const std::uint64_t> seeds,
                                      const PipelineConfig& cfg) {
  if (seeds.empty()) throw InputError("sweep: no seeds");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw InputError("sweep: fraction outside (0, 1]");
  }
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    SweepRow row;
    row.fraction = f;
    for (std::uint64_t seed : seeds) {
      PipelineConfig run_cfg = cfg;
      run_cfg.seed = seed;
      Dataset sub = f == 1.0 ? ds : subsample_per_class(ds, f, seed);
      InductiveRun run = run_inductive(sub, run_cfg);
      row.per_seed_h.push_back(run.report.harmonic.value_or(0.0));
    }
    double sum = 0.0;
    for (double h : row.per_seed_h) sum += h;
    row.mean_h = sum / static_cast<double>(row.per_seed_h.size());
    for (double h : row.per_seed_h) {
      row.max_deviation = std::max(row.max_deviation, std::abs(h - row.mean_h));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows,
                     std::span<const std::uint64_t> seeds) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "fraction,mean_H,max_deviation";
  for (std::uint64_t s : seeds) out << ",H_seed" << s;
  out << "\n" << std::setprecision(17);
  for (const auto& row : rows) {
    out << row.fraction << "," << row.mean_h << "," << row.max_deviation;
    for (double h : row.per_seed_h) out << "," << h;
    out << "\n";
  }
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadErrorKind::kMissingFile, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        cells.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw LoadError(LoadErrorKind::kBadFormat, "bad sweep cell '" + cell + "'");
      }
    }
    if (cells.size() < 3) throw LoadError(LoadErrorKind::kBadFormat, "short sweep row");
    SweepRow row;
    row.fraction = cells[0];
    row.mean_h = cells[1];
    row.max_deviation = cells[2];
    row.per_seed_h.assign(cells.begin() + 3, cells.end());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace zsl
