#pragma once

// "ZSLM" parameter container: magic, u16 version, then until end of file a
// sequence of (u16 name length, name bytes, u32 rows, u32 cols, float64
// row-major payload), all little-endian.

#include <filesystem>
#include <string>
#include <vector>

#include "zsl/numkernel.hpp"

namespace zsl {

inline constexpr unsigned kCheckpointVersion = 1;

struct NamedMatrix {
  std::string name;
  Matrix value;

  friend bool operator==(const NamedMatrix&, const NamedMatrix&) = default;
};

using ParamList = std::vector<NamedMatrix>;

void write_checkpoint(const std::filesystem::path& path, const ParamList& params);
ParamList read_checkpoint(const std::filesystem::path& path);

// Looks up `name`; throws LoadError when absent or when the shape differs
// from rows x cols (a zero expected dimension matches anything).
const Matrix& find_param(const ParamList& params, const std::string& name,
                         std::size_t rows = 0, std::size_t cols = 0);

}  // namespace zsl
