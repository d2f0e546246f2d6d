// SPDX-License-Identifier: Apache-2.0
#include "core/layer_dump.hpp"

#include <cmath>

#include "core/common.hpp"

namespace linkedout {

static const char kMagic[4] = {'L', 'N', 'K', 'D'};

uint64_t dump_byte_size(const std::string& item_id, uint64_t n_taps, uint64_t n_tokens,
                        uint64_t d) {
  uint64_t header = 4 + 4 + (4 + item_id.size()) + 5 * 4;
  return header + n_taps * (4 + n_tokens * d * 4);
}

uint64_t write_dump(const LayerStates& states, const std::string& item_id,
                    uint32_t tap_stride, const std::filesystem::path& path) {
  states.validate();
  size_t d = states.taps.front().states.cols;
  size_t n_tokens = states.token_count();

  std::vector<uint8_t> buf;
  buf.reserve(dump_byte_size(item_id, states.taps.size(), n_tokens, d));
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kLayerDumpVersion);
  put_string(buf, item_id);
  put_u32(buf, uint32_t(d));
  put_u32(buf, tap_stride);
  put_u32(buf, uint32_t(states.taps.size()));
  put_u32(buf, states.old_count);
  put_u32(buf, states.new_count);

  uint32_t prev_layer = 0;
  for (size_t k = 0; k < states.taps.size(); ++k) {
    const LayerTap& tap = states.taps[k];
    require(k == 0 || tap.layer_index > prev_layer, ErrorCode::input,
            "taps must be ordered by ascending layer index");
    prev_layer = tap.layer_index;
    require(tap.states.rows == n_tokens && tap.states.cols == d, ErrorCode::shape,
            "tap shape mismatch");
    put_u32(buf, tap.layer_index);
    for (float x : tap.states.v) put_f32(buf, x);
  }

  atomic_write_file(path, buf);
  return buf.size();
}

LayerDump read_dump(const std::filesystem::path& path) {
  std::vector<uint8_t> buf = read_file(path);
  ByteReader r(buf.data(), buf.size());

  char magic[4];
  r.raw(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorCode::format,
          path.string() + ": bad magic (not a layer dump)");
  uint32_t version = r.u32();
  require(version == kLayerDumpVersion, ErrorCode::version,
          path.string() + ": unsupported dump version " + std::to_string(version));

  LayerDump dump;
  dump.item_id = r.str();
  uint32_t d = r.u32();
  dump.tap_stride = r.u32();
  uint32_t n_taps = r.u32();
  dump.states.old_count = r.u32();
  dump.states.new_count = r.u32();
  require(n_taps >= 1, ErrorCode::format, path.string() + ": n_taps must be >= 1");
  require(d >= 1, ErrorCode::format, path.string() + ": width must be >= 1");

  size_t n_tokens = dump.states.token_count();
  dump.states.taps.resize(n_taps);
  uint32_t prev_layer = 0;
  for (uint32_t k = 0; k < n_taps; ++k) {
    LayerTap& tap = dump.states.taps[k];
    tap.layer_index = r.u32();
    require(k == 0 || tap.layer_index > prev_layer, ErrorCode::format,
            path.string() + ": layer blocks out of order");
    prev_layer = tap.layer_index;
    tap.states = MatF(n_tokens, d);
    for (float& x : tap.states.v) {
      x = r.f32();
      require(std::isfinite(x), ErrorCode::corrupt,
              path.string() + ": non-finite value in layer " + std::to_string(tap.layer_index));
    }
  }
  require(r.remaining() == 0, ErrorCode::format,
          path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return dump;
}

}  // namespace linkedout
