// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "core/common.hpp"
#include "core/layer_dump.hpp"
#include "core/rng.hpp"

using namespace linkedout;
namespace fs = std::filesystem;

namespace {

LayerStates sample_states(size_t n_taps, size_t n_old, size_t n_new, size_t d, uint64_t seed) {
  LayerStates s;
  s.old_count = uint32_t(n_old);
  s.new_count = uint32_t(n_new);
  Rng rng(seed);
  for (size_t t = 0; t < n_taps; ++t) {
    LayerTap tap;
    tap.layer_index = uint32_t(t * 2);
    tap.states = MatF(n_old + n_new, d);
    for (float& x : tap.states.v) x = float(rng.uniform(-3, 3));
    s.taps.push_back(std::move(tap));
  }
  return s;
}

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "lo_dump_tests";
  fs::create_directories(dir);
  fs::path p = dir / name;
  fs::remove(p);
  return p;
}

}  // namespace

TEST_CASE("file size matches the closed form") {
  // 6 taps, 16 tokens, d = 64: header + 6 * (4 + 16*64*4) bytes
  LayerStates s = sample_states(6, 12, 4, 64, 1);
  fs::path p = temp_file("size.lnkd");
  uint64_t written = write_dump(s, "v00042", 2, p);
  uint64_t expected = dump_byte_size("v00042", 6, 16, 64);
  uint64_t header = 4 + 4 + (4 + 6) + 5 * 4;
  CHECK(expected == header + 6 * (4 + 16 * 64 * 4));
  CHECK(written == expected);
  CHECK(fs::file_size(p) == expected);
}

TEST_CASE("write then read is bitwise identity") {
  LayerStates s = sample_states(3, 5, 2, 8, 2);
  fs::path p = temp_file("roundtrip.lnkd");
  write_dump(s, "v00007", 2, p);
  LayerDump d = read_dump(p);
  CHECK(d.item_id == "v00007");
  CHECK(d.tap_stride == 2);
  CHECK(d.states.old_count == 5);
  CHECK(d.states.new_count == 2);
  REQUIRE(d.states.taps.size() == 3);
  for (size_t t = 0; t < 3; ++t) {
    CHECK(d.states.taps[t].layer_index == s.taps[t].layer_index);
    CHECK(d.states.taps[t].states.v == s.taps[t].states.v);
  }
}

TEST_CASE("an aborted write leaves no file behind") {
  LayerStates s = sample_states(2, 3, 1, 4, 3);
  s.taps[1].states(0, 0) = std::numeric_limits<float>::infinity();
  fs::path p = temp_file("aborted.lnkd");
  CHECK_THROWS_AS(write_dump(s, "v00001", 2, p), Error);
  CHECK(!fs::exists(p));
  fs::path tmp = p;
  tmp += ".tmp";
  CHECK(!fs::exists(tmp));
}

TEST_CASE("write to an unwritable location reports an io error with the path") {
  LayerStates s = sample_states(1, 2, 0, 4, 4);
  try {
    write_dump(s, "v00001", 2, "/nonexistent_dir/x.lnkd");
    FAIL("expected io error");
  } catch (const Error& e) {
    CHECK(e.code == ErrorCode::io);
    CHECK(std::string(e.what()).find("/nonexistent_dir/x.lnkd") != std::string::npos);
  }
}

TEST_CASE("corrupted magic is a format error") {
  LayerStates s = sample_states(2, 3, 1, 4, 5);
  fs::path p = temp_file("magic.lnkd");
  write_dump(s, "v00009", 2, p);
  std::vector<uint8_t> bytes = read_file(p);
  bytes[3] = 'X';  // LNKD -> LNKX
  atomic_write_file(p, bytes);
  try {
    read_dump(p);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.code == ErrorCode::format);
  }
}

TEST_CASE("truncated file reports the byte offset") {
  LayerStates s = sample_states(2, 3, 1, 4, 6);
  fs::path p = temp_file("trunc.lnkd");
  uint64_t full = write_dump(s, "v00010", 2, p);
  std::vector<uint8_t> bytes = read_file(p);
  bytes.resize(full - 7);  // cut mid-block
  atomic_write_file(p, bytes);
  try {
    read_dump(p);
    FAIL("expected truncation error");
  } catch (const Error& e) {
    CHECK(e.code == ErrorCode::truncated);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

TEST_CASE("non-finite payload is a corruption error") {
  LayerStates s = sample_states(1, 2, 0, 4, 7);
  fs::path p = temp_file("nan.lnkd");
  write_dump(s, "v00011", 2, p);
  std::vector<uint8_t> bytes = read_file(p);
  // overwrite the first float of the block with a NaN pattern
  uint64_t header = 4 + 4 + (4 + 6) + 5 * 4;
  size_t off = size_t(header) + 4;
  bytes[off + 0] = 0x00;
  bytes[off + 1] = 0x00;
  bytes[off + 2] = 0xc0;
  bytes[off + 3] = 0x7f;
  atomic_write_file(p, bytes);
  try {
    read_dump(p);
    FAIL("expected corruption error");
  } catch (const Error& e) {
    CHECK(e.code == ErrorCode::corrupt);
  }
}

TEST_CASE("dump bytes are identical across writes") {
  LayerStates s = sample_states(4, 8, 2, 16, 8);
  fs::path a = temp_file("det_a.lnkd"), b = temp_file("det_b.lnkd");
  write_dump(s, "v00012", 2, a);
  write_dump(s, "v00012", 2, b);
  CHECK(read_file(a) == read_file(b));
}
