#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "maskqa/neural/tensor.hpp"

namespace maskqa::nn {

// DAEW1 layout: "DAEW1 <n>\n", one "name rank d1 ... dk\n" line per tensor,
// a blank line, then the little-endian f32 payloads in header order.

std::vector<std::uint8_t> encode_checkpoint(std::span<Parameter<float>* const> params);

/// Loads values into `params`, matched by name; every parameter must be
/// present with an identical shape.
void decode_checkpoint(const std::vector<std::uint8_t>& bytes, std::span<Parameter<float>* const> params);

void save_checkpoint(std::span<Parameter<float>* const> params, const std::filesystem::path& path);
void load_checkpoint(std::span<Parameter<float>* const> params, const std::filesystem::path& path);

}  // namespace maskqa::nn
