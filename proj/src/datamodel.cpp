#include "zsl/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include <json.hpp>

#include "binio.hpp"
#include "zsl/errors.hpp"
#include "zsl/rng.hpp"

namespace zsl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kFeatureMagic[4] = {'Z', 'S', 'L', 'F'};
constexpr char kPrototypeMagic[4] = {'Z', 'S', 'L', 'P'};

[[noreturn]] void fail(LoadErrorKind kind, const std::string& msg) {
  throw LoadError(kind, msg);
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(LoadErrorKind::kMissingFile, "cannot open " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

Matrix read_float_matrix(const fs::path& path, const char (&magic)[4]) {
  std::ifstream in = open_input(path);
  char got[4];
  if (!in.read(got, 4) || !std::equal(got, got + 4, magic)) {
    fail(LoadErrorKind::kBadFormat, path.string() + ": bad magic");
  }
  std::uint32_t rows = 0, cols = 0;
  if (!binio::get_le(in, rows) || !binio::get_le(in, cols)) {
    fail(LoadErrorKind::kBadFormat, path.string() + ": truncated header");
  }
  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<std::uint64_t>(in.tellg() - payload_start);
  const std::uint64_t expected = std::uint64_t{rows} * cols * sizeof(float);
  if (payload_bytes != expected) {
    fail(LoadErrorKind::kDimensionMismatch,
         path.string() + ": header says " + std::to_string(rows) + "x" +
             std::to_string(cols) + " but payload holds " +
             std::to_string(payload_bytes / sizeof(float)) + " values");
  }
  in.seekg(payload_start);
  Matrix m(rows, cols);
  for (double& v : m.data()) {
    float f = 0.0f;
    if (!binio::get_f32(in, f)) fail(LoadErrorKind::kBadFormat, path.string() + ": truncated");
    v = f;
  }
  return m;
}

void write_float_matrix(const fs::path& path, const char (&magic)[4],
                        const Matrix& m) {
  std::ofstream out = open_output(path);
  out.write(magic, 4);
  binio::put_le(out, static_cast<std::uint32_t>(m.rows()));
  binio::put_le(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) binio::put_f32(out, static_cast<float>(v));
}

IndexList read_labels(const fs::path& path) {
  std::ifstream in = open_input(path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  if (bytes % 4 != 0) {
    fail(LoadErrorKind::kDimensionMismatch,
         path.string() + ": size is not a multiple of 4 bytes");
  }
  IndexList labels(bytes / 4);
  for (Index& l : labels) {
    std::uint32_t v = 0;
    if (!binio::get_le(in, v)) fail(LoadErrorKind::kBadFormat, path.string() + ": truncated");
    l = v;
  }
  return labels;
}

IndexList read_index_lines(const fs::path& path) {
  std::ifstream in = open_input(path);
  IndexList out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(line.substr(first), &used);
    } catch (const std::exception&) {
      fail(LoadErrorKind::kBadFormat, path.string() + ": not an integer: " + line);
    }
    if (v < 0) fail(LoadErrorKind::kBadFormat, path.string() + ": negative index");
    out.push_back(static_cast<Index>(v));
  }
  return out;
}

void write_index_lines(const fs::path& path, const IndexList& values) {
  std::ofstream out = open_output(path);
  for (Index v : values) out << v << '\n';
}

IndexList json_index_array(const json& obj, const char* key, const fs::path& path) {
  if (!obj.contains(key) || !obj[key].is_array()) {
    fail(LoadErrorKind::kBadFormat, path.string() + ": missing array '" + key + "'");
  }
  IndexList out;
  for (const auto& v : obj[key]) {
    if (!v.is_number_unsigned()) {
      fail(LoadErrorKind::kBadFormat, path.string() + ": non-index entry in " + key);
    }
    out.push_back(v.get<Index>());
  }
  return out;
}

std::vector<std::vector<double>> read_numeric_rows(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    std::vector<double> row;
    std::string tok;
    while (fields >> tok) {
      try {
        row.push_back(std::stod(tok));
      } catch (const std::exception&) {
        fail(LoadErrorKind::kBadFormat, path.string() + ": bad number '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

Matrix rows_to_matrix(const std::vector<std::vector<double>>& rows,
                      const fs::path& path) {
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  std::vector<double> flat;
  flat.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) {
      fail(LoadErrorKind::kDimensionMismatch, path.string() + ": ragged rows");
    }
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(flat));
}

std::size_t ceil_count(double fraction, std::size_t n) {
  // tolerance absorbs products like 0.07 * 100 = 7.000000000000001
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

void check_invariants(const Dataset& ds) {
  const std::size_t n = ds.num_samples();
  const std::size_t classes = ds.num_classes();
  if (ds.labels.size() != n) {
    fail(LoadErrorKind::kDimensionMismatch,
         std::to_string(ds.labels.size()) + " labels for " + std::to_string(n) +
             " samples");
  }
  // 0 = unlisted, 1 = seen, 2 = unseen
  std::vector<int> role(classes, 0);
  auto mark = [&](const IndexList& list, int r) {
    for (Index c : list) {
      if (c >= classes) {
        fail(LoadErrorKind::kUnknownClass, "class " + std::to_string(c) +
                                               " has no prototype row");
      }
      if (role[c] != 0) {
        fail(LoadErrorKind::kSplitOverlap,
             "class " + std::to_string(c) + " listed more than once");
      }
      role[c] = r;
    }
  };
  mark(ds.seen_classes, 1);
  mark(ds.unseen_classes, 2);
  if (ds.seen_classes.size() + ds.unseen_classes.size() != classes) {
    fail(LoadErrorKind::kDimensionMismatch,
         std::to_string(classes) + " prototypes for " +
             std::to_string(ds.seen_classes.size()) + " seen + " +
             std::to_string(ds.unseen_classes.size()) + " unseen classes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.labels[i] >= classes || role[ds.labels[i]] == 0) {
      fail(LoadErrorKind::kUnknownClass,
           "row " + std::to_string(i) + " has unknown class " +
               std::to_string(ds.labels[i]));
    }
  }
  std::vector<int> placed(n, 0);
  auto place = [&](const IndexList& rows, int want_role, const char* name) {
    for (Index r : rows) {
      if (r >= n) {
        fail(LoadErrorKind::kSplitMismatch,
             std::string(name) + " references row " + std::to_string(r));
      }
      if (placed[r]++ != 0) {
        fail(LoadErrorKind::kSplitOverlap,
             "row " + std::to_string(r) + " appears in more than one split");
      }
      if (role[ds.labels[r]] != want_role) {
        fail(LoadErrorKind::kSplitMismatch,
             std::string(name) + " row " + std::to_string(r) +
                 " has a label of the wrong class group");
      }
    }
  };
  place(ds.seen_train, 1, "seen_train");
  place(ds.seen_heldout, 1, "seen_heldout");
  place(ds.unseen_test, 2, "unseen_test");
  for (std::size_t i = 0; i < n; ++i) {
    if (placed[i] == 0) {
      fail(LoadErrorKind::kSplitMismatch, "row " + std::to_string(i) + " is in no split");
    }
  }
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.visual = read_float_matrix(dir / "features.bin", kFeatureMagic);
  ds.labels = read_labels(dir / "labels.u32");
  if (ds.labels.size() != ds.visual.rows()) {
    fail(LoadErrorKind::kDimensionMismatch,
         "labels.u32 holds " + std::to_string(ds.labels.size()) +
             " labels but features.bin has " + std::to_string(ds.visual.rows()) +
             " rows");
  }
  ds.prototypes = read_float_matrix(dir / "prototypes.bin", kPrototypeMagic);
  ds.seen_classes = read_index_lines(dir / "seen_classes.txt");
  ds.unseen_classes = read_index_lines(dir / "unseen_classes.txt");

  const fs::path split_path = dir / "splits.json";
  std::ifstream in = open_input(split_path);
  json splits;
  try {
    in >> splits;
  } catch (const json::exception& e) {
    fail(LoadErrorKind::kBadFormat, split_path.string() + ": " + e.what());
  }
  ds.seen_train = json_index_array(splits, "seen_train", split_path);
  ds.seen_heldout = json_index_array(splits, "seen_heldout", split_path);
  ds.unseen_test = json_index_array(splits, "unseen_test", split_path);

  check_invariants(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  write_float_matrix(dir / "features.bin", kFeatureMagic, ds.visual);
  {
    std::ofstream out = open_output(dir / "labels.u32");
    for (Index l : ds.labels) binio::put_le(out, static_cast<std::uint32_t>(l));
  }
  write_float_matrix(dir / "prototypes.bin", kPrototypeMagic, ds.prototypes);
  write_index_lines(dir / "seen_classes.txt", ds.seen_classes);
  write_index_lines(dir / "unseen_classes.txt", ds.unseen_classes);
  json splits = {{"seen_train", ds.seen_train},
                 {"seen_heldout", ds.seen_heldout},
                 {"unseen_test", ds.unseen_test}};
  std::ofstream out = open_output(dir / "splits.json");
  out << splits.dump() << '\n';
}

Dataset generate_synthetic(const SynthSpec& spec) {
  if (spec.seen == 0 || spec.unseen == 0 || spec.visual_dim == 0 ||
      spec.proto_dim == 0 || spec.samples_per_class == 0) {
    throw InputError("generate_synthetic: all counts must be >= 1");
  }
  if (!(spec.spread >= 0.0) || !(spec.separation >= 0.0)) {
    throw InputError("generate_synthetic: spread and separation must be non-negative");
  }
  if (!(spec.heldout_fraction >= 0.0 && spec.heldout_fraction < 1.0)) {
    throw InputError("generate_synthetic: heldout fraction must be in [0, 1)");
  }
  const Rng root(spec.seed);
  const std::size_t classes = spec.seen + spec.unseen;
  const std::size_t k = spec.proto_dim;
  const std::size_t d = spec.visual_dim;

  // Prototypes are a = B z with z uniform in a cube of dimension r. With r < k
  // the classes share a low-dimensional attribute structure, so unseen
  // prototypes are combinations of directions the seen ones already cover.
  // The cube side makes the mean pairwise distance about sqrt(2) times the
  // required separation.
  const std::size_t r = std::min(k, spec.attribute_rank == 0
                                        ? std::max<std::size_t>(1, spec.seen - 1)
                                        : spec.attribute_rank);
  Rng proto_rng = root.fork("prototypes");
  Matrix basis(k, r);
  if (r == k) {
    for (std::size_t i = 0; i < k; ++i) basis(i, i) = 1.0;
  } else {
    for (double& v : basis.data()) v = proto_rng.normal();
  }
  const double side = std::max(spec.separation, 1.0) * std::sqrt(12.0 / sum_squares(basis));
  Matrix prototypes(classes, k);
  Matrix factor(1, r);
  constexpr int kMaxDraws = 100000;
  int draws = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    while (true) {
      if (++draws > kMaxDraws) {
        throw GenerationError("generate_synthetic: separation " +
                              std::to_string(spec.separation) +
                              " unattainable after " + std::to_string(kMaxDraws) +
                              " draws");
      }
      for (double& v : factor.data()) v = proto_rng.uniform(0.0, side);
      const Matrix a = matmul_nt(factor, basis);
      auto row = prototypes.row(c);
      for (std::size_t j = 0; j < k; ++j) row[j] = a(0, j);
      bool ok = true;
      for (std::size_t p = 0; p < c && ok; ++p) {
        ok = std::sqrt(squared_distance(row, prototypes.row(p))) >= spec.separation;
      }
      if (ok) break;
    }
  }
  // A common shift into the non-negative orthant keeps every visual center
  // non-negative; distances are unchanged.
  for (std::size_t j = 0; j < k; ++j) {
    double lo = 0.0;
    for (std::size_t c = 0; c < classes; ++c) lo = std::min(lo, prototypes(c, j));
    for (std::size_t c = 0; c < classes; ++c) prototypes(c, j) = to_f32(prototypes(c, j) - lo);
  }

  Rng map_rng = root.fork("map");
  Matrix map(d, k);
  const double map_scale = 2.0 / std::sqrt(static_cast<double>(k));
  for (double& v : map.data()) v = map_rng.uniform(0.0, map_scale);
  const Matrix centers = matmul_nt(prototypes, map);  // classes x d

  Rng noise_rng = root.fork("noise");
  Dataset ds;
  ds.prototypes = prototypes;
  ds.visual = Matrix(classes * spec.samples_per_class, d);
  ds.labels.resize(ds.visual.rows());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      const std::size_t r = c * spec.samples_per_class + s;
      ds.labels[r] = c;
      auto row = ds.visual.row(r);
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = to_f32(centers(c, j) + spec.spread * noise_rng.normal());
      }
    }
  }
  for (std::size_t c = 0; c < spec.seen; ++c) ds.seen_classes.push_back(c);
  for (std::size_t c = spec.seen; c < classes; ++c) ds.unseen_classes.push_back(c);

  Rng split_rng = root.fork("split");
  const std::size_t heldout = static_cast<std::size_t>(
      std::llround(spec.heldout_fraction * static_cast<double>(spec.samples_per_class)));
  if (heldout >= spec.samples_per_class) {
    throw InputError("generate_synthetic: held-out split leaves no training rows");
  }
  for (std::size_t c = 0; c < spec.seen; ++c) {
    IndexList rows(spec.samples_per_class);
    std::iota(rows.begin(), rows.end(), c * spec.samples_per_class);
    std::shuffle(rows.begin(), rows.end(), split_rng.engine());
    std::sort(rows.begin(), rows.begin() + heldout);
    std::sort(rows.begin() + heldout, rows.end());
    ds.seen_heldout.insert(ds.seen_heldout.end(), rows.begin(), rows.begin() + heldout);
    ds.seen_train.insert(ds.seen_train.end(), rows.begin() + heldout, rows.end());
  }
  for (std::size_t r = spec.seen * spec.samples_per_class; r < ds.visual.rows(); ++r) {
    ds.unseen_test.push_back(r);
  }
  std::sort(ds.seen_train.begin(), ds.seen_train.end());
  std::sort(ds.seen_heldout.begin(), ds.seen_heldout.end());
  check_invariants(ds);
  return ds;
}

Dataset subsample_per_class(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InputError("subsample_per_class: fraction must be in (0, 1]");
  }
  Rng rng = Rng(seed).fork("subsample");
  std::vector<char> keep(ds.num_samples(), 1);
  for (Index c : ds.seen_classes) {
    IndexList rows;
    for (Index r : ds.seen_train)
      if (ds.labels[r] == c) rows.push_back(r);
    if (rows.empty()) {
      throw InputError("subsample_per_class: seen class " + std::to_string(c) +
                       " has no training rows");
    }
    const std::size_t target = ceil_count(fraction, rows.size());
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    for (std::size_t i = target; i < rows.size(); ++i) keep[rows[i]] = 0;
  }

  // Compact the kept rows, preserving order, and renumber the splits.
  std::vector<Index> new_index(ds.num_samples(), 0);
  IndexList kept_rows;
  for (Index r = 0; r < ds.num_samples(); ++r) {
    if (keep[r]) {
      new_index[r] = kept_rows.size();
      kept_rows.push_back(r);
    }
  }
  Dataset out;
  out.visual = gather_rows(ds.visual, kept_rows);
  for (Index r : kept_rows) out.labels.push_back(ds.labels[r]);
  out.prototypes = ds.prototypes;
  out.seen_classes = ds.seen_classes;
  out.unseen_classes = ds.unseen_classes;
  auto remap = [&](const IndexList& rows) {
    IndexList result;
    for (Index r : rows)
      if (keep[r]) result.push_back(new_index[r]);
    return result;
  };
  out.seen_train = remap(ds.seen_train);
  out.seen_heldout = remap(ds.seen_heldout);
  out.unseen_test = remap(ds.unseen_test);
  return out;
}

Matrix class_means(const Matrix& visual, std::span<const Index> labels,
                   std::span<const Index> classes) {
  if (labels.size() != visual.rows()) {
    throw InputError("class_means: label count does not match rows");
  }
  Matrix means(classes.size(), visual.cols());
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    std::size_t count = 0;
    auto out = means.row(ci);
    for (std::size_t r = 0; r < visual.rows(); ++r) {
      if (labels[r] != classes[ci]) continue;
      ++count;
      auto row = visual.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j];
    }
    if (count == 0) {
      throw InputError("class_means: class " + std::to_string(classes[ci]) +
                       " has no samples");
    }
    for (double& v : out) v /= static_cast<double>(count);
  }
  return means;
}

void standardize_features(Dataset& ds) {
  if (ds.seen_train.empty()) throw InputError("standardize_features: no seen-train rows");
  const Matrix train = gather_rows(ds.visual, ds.seen_train);
  const Matrix mean = mean_rows(train);
  Matrix scale(1, ds.visual_dim());
  for (std::size_t r = 0; r < train.rows(); ++r)
    for (std::size_t j = 0; j < train.cols(); ++j) {
      const double diff = train(r, j) - mean(0, j);
      scale(0, j) += diff * diff;
    }
  for (double& v : scale.data()) {
    v = std::sqrt(v / static_cast<double>(train.rows()));
    if (v == 0.0) v = 1.0;
  }
  for (std::size_t r = 0; r < ds.visual.rows(); ++r)
    for (std::size_t j = 0; j < ds.visual.cols(); ++j)
      ds.visual(r, j) = (ds.visual(r, j) - mean(0, j)) / scale(0, j);
}

Dataset convert_csv(const CsvSources& src) {
  Dataset ds;
  ds.visual = rows_to_matrix(read_numeric_rows(src.features), src.features);
  ds.prototypes = rows_to_matrix(read_numeric_rows(src.prototypes), src.prototypes);
  ds.labels = read_index_lines(src.labels);
  if (ds.labels.size() != ds.visual.rows()) {
    fail(LoadErrorKind::kDimensionMismatch,
         src.labels.string() + ": " + std::to_string(ds.labels.size()) +
             " labels for " + std::to_string(ds.visual.rows()) + " feature rows");
  }
  ds.seen_classes = read_index_lines(src.seen_classes);
  ds.unseen_classes = read_index_lines(src.unseen_classes);
  for (Index l : ds.labels) {
    if (l >= ds.num_classes()) {
      fail(LoadErrorKind::kUnknownClass, "label " + std::to_string(l) +
                                             " has no prototype row");
    }
  }

  if (src.splits) {
    std::ifstream in = open_input(*src.splits);
    json splits;
    try {
      in >> splits;
    } catch (const json::exception& e) {
      fail(LoadErrorKind::kBadFormat, src.splits->string() + ": " + e.what());
    }
    ds.seen_train = json_index_array(splits, "seen_train", *src.splits);
    ds.seen_heldout = json_index_array(splits, "seen_heldout", *src.splits);
    ds.unseen_test = json_index_array(splits, "unseen_test", *src.splits);
  } else {
    Rng rng = Rng(src.seed).fork("split");
    for (Index c : ds.seen_classes) {
      IndexList rows;
      for (Index r = 0; r < ds.num_samples(); ++r)
        if (ds.labels[r] == c) rows.push_back(r);
      std::shuffle(rows.begin(), rows.end(), rng.engine());
      const auto heldout = static_cast<std::size_t>(
          std::llround(src.heldout_fraction * static_cast<double>(rows.size())));
      ds.seen_heldout.insert(ds.seen_heldout.end(), rows.begin(),
                             rows.begin() + static_cast<std::ptrdiff_t>(heldout));
      ds.seen_train.insert(ds.seen_train.end(),
                           rows.begin() + static_cast<std::ptrdiff_t>(heldout), rows.end());
    }
    std::sort(ds.seen_train.begin(), ds.seen_train.end());
    std::sort(ds.seen_heldout.begin(), ds.seen_heldout.end());
    for (Index r = 0; r < ds.num_samples(); ++r) {
      if (std::find(ds.unseen_classes.begin(), ds.unseen_classes.end(), ds.labels[r]) !=
          ds.unseen_classes.end()) {
        ds.unseen_test.push_back(r);
      }
    }
  }
  for (double& v : ds.visual.data()) v = to_f32(v);
  for (double& v : ds.prototypes.data()) v = to_f32(v);
  check_invariants(ds);
  return ds;
}

}  // namespace zsl
