// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "core/backbone.hpp"

namespace linkedout {

// .lnkd binary layout, little-endian throughout:
//   magic "LNKD" | version u32 | item_id (u32 length + bytes)
//   d u32 | tap_stride u32 | n_taps u32 | n_original u32 | n_new u32
//   n_taps blocks of: layer_index u32 | (n_original + n_new) * d float32
constexpr uint32_t kLayerDumpVersion = 1;

// Returns the number of bytes written. The write is atomic: a failure leaves
// no file at the final path.
uint64_t write_dump(const LayerStates& states, const std::string& item_id,
                    uint32_t tap_stride, const std::filesystem::path& path);

struct LayerDump {
  std::string item_id;
  uint32_t tap_stride = 0;
  LayerStates states;
};

LayerDump read_dump(const std::filesystem::path& path);

uint64_t dump_byte_size(const std::string& item_id, uint64_t n_taps, uint64_t n_tokens,
                        uint64_t d);

}  // namespace linkedout
