#pragma once

#include <string>

#include "pass/nets.hpp"

namespace pass {

// Flat little-endian binary of named tensors:
//   magic "PASSCKPT", u32 version, u32 tensor count, then per tensor
//   u32 name length, name bytes, u32 rank, u32 extents..., f32 data.
void save_params(const ParamStore& params, const std::string& path);
ParamStore load_params(const std::string& path);

// Loads into an existing store, verifying names and shapes match.
void load_params_into(ParamStore& params, const std::string& path);

uint64_t file_hash(const std::string& path);  // FNV-1a over file bytes

}  // namespace pass
