#pragma once

#include <filesystem>

#include "pamdn/tensor.hpp"

namespace pamdn {

// ".tns" container: "TNS1", u32 rank, rank x u64 extents, then the values as
// little-endian IEEE-754 doubles in row-major order.
void write_tns(const std::filesystem::path& path, const Tensor& t);
Tensor read_tns(const std::filesystem::path& path);

}  // namespace pamdn
