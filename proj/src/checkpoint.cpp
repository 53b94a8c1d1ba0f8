#include "zsl/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "binio.hpp"
#include "zsl/errors.hpp"

namespace zsl {

namespace {
constexpr char kMagic[4] = {'Z', 'S', 'L', 'M'};
}

void write_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 4);
  binio::put_le(out, static_cast<std::uint16_t>(kCheckpointVersion));
  for (const auto& p : params) {
    binio::put_le(out, static_cast<std::uint16_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    binio::put_le(out, static_cast<std::uint32_t>(p.value.rows()));
    binio::put_le(out, static_cast<std::uint32_t>(p.value.cols()));
    for (double v : p.value.data()) binio::put_f64(out, v);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ParamList read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::kMissingFile, "cannot open " + path.string());
  char magic[4];
  std::uint16_t version = 0;
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic) ||
      !binio::get_le(in, version)) {
    throw LoadError(LoadErrorKind::kBadFormat, path.string() + ": not a ZSLM checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw LoadError(LoadErrorKind::kBadFormat,
                    path.string() + ": unsupported version " + std::to_string(version));
  }
  ParamList params;
  std::uint16_t name_len = 0;
  while (binio::get_le(in, name_len)) {
    NamedMatrix p;
    p.name.resize(name_len);
    std::uint32_t rows = 0, cols = 0;
    if (!in.read(p.name.data(), name_len) || !binio::get_le(in, rows) ||
        !binio::get_le(in, cols)) {
      throw LoadError(LoadErrorKind::kBadFormat, path.string() + ": truncated entry");
    }
    p.value = Matrix(rows, cols);
    for (double& v : p.value.data()) {
      if (!binio::get_f64(in, v)) {
        throw LoadError(LoadErrorKind::kBadFormat,
                        path.string() + ": truncated payload for " + p.name);
      }
    }
    params.push_back(std::move(p));
  }
  return params;
}

const Matrix& find_param(const ParamList& params, const std::string& name,
                         std::size_t rows, std::size_t cols) {
  auto it = std::find_if(params.begin(), params.end(),
                         [&](const NamedMatrix& p) { return p.name == name; });
  if (it == params.end()) {
    throw LoadError(LoadErrorKind::kBadFormat, "checkpoint lacks parameter " + name);
  }
  if ((rows != 0 && it->value.rows() != rows) || (cols != 0 && it->value.cols() != cols)) {
    throw LoadError(LoadErrorKind::kDimensionMismatch,
                    "parameter " + name + " has shape " +
                        std::to_string(it->value.rows()) + "x" +
                        std::to_string(it->value.cols()));
  }
  return it->value;
}

}  // namespace zsl
