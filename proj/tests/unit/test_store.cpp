// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "core/common.hpp"
#include "core/rng.hpp"
#include "core/store.hpp"

using namespace linkedout;
namespace fs = std::filesystem;

namespace {

StoreBuildInput sample_input(size_t n, size_t d_z, size_t n_taps, uint64_t seed,
                             bool with_gate = true) {
  StoreBuildInput in;
  in.model_version = 0xabcdef12u + seed;
  in.n_taps = uint32_t(n_taps);
  in.tap_stride = 2;
  in.d_c = 8;
  Rng rng(seed);
  in.z = MatD(n, d_z);
  for (double& x : in.z.v) x = rng.uniform(-2, 2);
  if (with_gate) {
    in.gate = MatD(n, n_taps);
    for (size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (size_t t = 0; t < n_taps; ++t) {
        in.gate(i, t) = rng.uniform(0.01, 1.0);
        sum += in.gate(i, t);
      }
      for (size_t t = 0; t < n_taps; ++t) in.gate(i, t) /= sum;
    }
  }
  char buf[16];
  for (size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "v%05zu", i);
    in.ids.push_back(buf);
  }
  return in;
}

fs::path temp_store(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / "lo_store_tests";
  fs::create_directories(dir);
  fs::path p = dir / (tag + ".lnks");
  fs::remove(p);
  fs::path idx = p;
  idx += ".idx";
  fs::remove(idx);
  return p;
}

}  // namespace

TEST_CASE("build returns the record count and get round-trips bitwise") {
  StoreBuildInput in = sample_input(20, 8, 3, 1);
  fs::path p = temp_store("basic");
  CHECK(write_store(in, p) == 20);

  Store store = Store::open(p);
  CHECK(store.meta().count == 20);
  CHECK(store.meta().d_z == 8);
  CHECK(store.meta().n_taps == 3);
  CHECK(store.meta().tap_stride == 2);
  CHECK(store.meta().has_gate);
  CHECK(store.meta().model_version == in.model_version);

  for (size_t i = 0; i < 20; ++i) {
    StoreRecord rec = store.get(in.ids[i]);
    REQUIRE(rec.z.size() == 8);
    for (size_t j = 0; j < 8; ++j) CHECK(rec.z[j] == float(in.z(i, j)));
    REQUIRE(rec.gate.size() == 3);
    for (size_t t = 0; t < 3; ++t) CHECK(rec.gate[t] == float(in.gate(i, t)));
  }
}

TEST_CASE("absent ids raise not-found naming the id") {
  StoreBuildInput in = sample_input(5, 4, 2, 2);
  fs::path p = temp_store("missing");
  write_store(in, p);
  Store store = Store::open(p);
  try {
    store.get("v99999");
    FAIL("expected not_found");
  } catch (const Error& e) {
    CHECK(e.code == ErrorCode::not_found);
    CHECK(std::string(e.what()).find("v99999") != std::string::npos);
  }
}

TEST_CASE("batch_get preserves request order and reports all missing ids") {
  StoreBuildInput in = sample_input(50, 4, 2, 3);
  fs::path p = temp_store("batch");
  write_store(in, p);
  Store store = Store::open(p);

  SUBCASE("empty request gives empty result") {
    CHECK(store.batch_get({}).empty());
  }
  SUBCASE("order matches the request for shuffled ids") {
    Rng rng(4);
    std::vector<std::string> ids;
    for (size_t k = 0; k < 1000; ++k) ids.push_back(in.ids[rng.index(50)]);
    std::vector<StoreRecord> recs = store.batch_get(ids);
    REQUIRE(recs.size() == ids.size());
    for (size_t k = 0; k < ids.size(); ++k) {
      CHECK(recs[k].item_id == ids[k]);
      StoreRecord single = store.get(ids[k]);
      CHECK(recs[k].z == single.z);
    }
  }
  SUBCASE("missing ids are reported collectively") {
    try {
      store.batch_get({"v00001", "vmissing1", "v00002", "vmissing2"});
      FAIL("expected not_found");
    } catch (const Error& e) {
      CHECK(e.code == ErrorCode::not_found);
      std::string msg = e.what();
      CHECK(msg.find("vmissing1") != std::string::npos);
      CHECK(msg.find("vmissing2") != std::string::npos);
      CHECK(msg.find("v00001") == std::string::npos);
    }
  }
}

TEST_CASE("rebuild from identical input is byte-identical") {
  StoreBuildInput in = sample_input(30, 8, 3, 5);
  fs::path a = temp_store("det_a"), b = temp_store("det_b");
  write_store(in, a);
  write_store(in, b);
  fs::path ai = a, bi = b;
  ai += ".idx";
  bi += ".idx";
  CHECK(read_file(a) == read_file(b));
  CHECK(read_file(ai) == read_file(bi));
}

TEST_CASE("record size is independent of source token counts") {
  // same catalog dims, wildly different hypothetical token counts: the store
  // only ever holds d_z (+ gate) floats per item
  StoreBuildInput in = sample_input(4, 8, 3, 6);
  fs::path p = temp_store("size");
  write_store(in, p);
  Store store = Store::open(p);
  std::vector<uint8_t> bytes = read_file(p);
  size_t header = 4 + 4 + 8 + 4 * 5 + 8;
  size_t per_record = (4 + 6) + 8 * 4 + 3 * 4;  // id, z floats, gate floats
  CHECK(bytes.size() == header + 4 * per_record);
  CHECK(store.meta().has_per_layer == false);
}

TEST_CASE("corrupted stores are rejected") {
  StoreBuildInput in = sample_input(6, 4, 2, 7);
  fs::path p = temp_store("corrupt");
  write_store(in, p);

  SUBCASE("bad magic") {
    std::vector<uint8_t> bytes = read_file(p);
    bytes[0] = 'X';
    atomic_write_file(p, bytes);
    CHECK_THROWS_AS(Store::open(p), Error);
  }
  SUBCASE("truncated data") {
    std::vector<uint8_t> bytes = read_file(p);
    bytes.resize(bytes.size() - 5);
    atomic_write_file(p, bytes);
    CHECK_THROWS_AS(Store::open(p), Error);
  }
  SUBCASE("index/data mismatch") {
    fs::path idx = p;
    idx += ".idx";
    std::vector<uint8_t> bytes = read_file(idx);
    bytes[bytes.size() - 1] ^= 0x40;  // clobber the last length
    atomic_write_file(idx, bytes);
    CHECK_THROWS_AS(Store::open(p), Error);
  }
  SUBCASE("non-finite embedding") {
    std::vector<uint8_t> bytes = read_file(p);
    size_t header = 4 + 4 + 8 + 4 * 5 + 8;
    size_t off = header + (4 + 6);  // first record's first float
    bytes[off + 0] = 0x00;
    bytes[off + 1] = 0x00;
    bytes[off + 2] = 0x80;
    bytes[off + 3] = 0x7f;  // +inf
    atomic_write_file(p, bytes);
    try {
      Store::open(p);
      FAIL("expected corruption error");
    } catch (const Error& e) {
      CHECK(e.code == ErrorCode::corrupt);
    }
  }
}

TEST_CASE("ids must be ascending and unique at build time") {
  StoreBuildInput in = sample_input(3, 4, 2, 8);
  std::swap(in.ids[0], in.ids[1]);
  CHECK_THROWS_AS(write_store(in, temp_store("order")), Error);
}

TEST_CASE("a store without gates reports has_gate = false and stats are refused") {
  StoreBuildInput in = sample_input(6, 4, 2, 9, /*with_gate=*/false);
  fs::path p = temp_store("nogate");
  write_store(in, p);
  Store store = Store::open(p);
  CHECK(!store.meta().has_gate);
  CHECK(store.gate_ptr(0) == nullptr);
}
