#pragma once

#include <string>

#include "isda/layers.hpp"

namespace isda {

/// Binary checkpoint, bit-exact layout:
///   magic "ISDA", version byte 1, record count (u64 LE); per record:
///   name length (u64 LE), name bytes (UTF-8), dtype tag byte (1=f32, 2=f64),
///   rank (u64 LE), dims (u64 LE each), raw little-endian values.
/// Records are written in registry order with f64 data; f32 records are
/// widened on load.
void save_checkpoint(const std::string& path, const ParamStore& params);

/// Loads into an existing registry. Name set and shapes must match exactly.
/// Throws std::runtime_error on malformed files or mismatches.
void load_checkpoint(const std::string& path, ParamStore& params);

}  // namespace isda
