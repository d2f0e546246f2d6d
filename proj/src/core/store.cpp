// SPDX-License-Identifier: Apache-2.0
#include "core/store.hpp"

#include <algorithm>
#include <cmath>

#include "core/common.hpp"

namespace linkedout {

static const char kDataMagic[4] = {'L', 'N', 'K', 'S'};
static const char kIndexMagic[4] = {'L', 'N', 'K', 'I'};
constexpr uint32_t kStoreVersion = 1;

static std::filesystem::path index_path(const std::filesystem::path& data_path) {
  std::filesystem::path p = data_path;
  p += ".idx";
  return p;
}

uint64_t write_store(const StoreBuildInput& input, const std::filesystem::path& data_path) {
  size_t n = input.ids.size();
  require(input.z.rows == n, ErrorCode::shape, "store build: id / embedding count differ");
  bool has_gate = !input.gate.empty();
  bool has_per_layer = !input.per_layer.empty();
  if (has_gate)
    require(input.gate.rows == n && input.gate.cols == input.n_taps, ErrorCode::shape,
            "store build: bad gate shape");
  if (has_per_layer)
    require(input.per_layer.rows == n &&
                input.per_layer.cols == size_t(input.n_taps) * input.d_c,
            ErrorCode::shape, "store build: bad per-layer shape");
  for (size_t i = 1; i < n; ++i)
    require(input.ids[i - 1] < input.ids[i], ErrorCode::input,
            "store build: ids must be ascending and unique");

  std::vector<uint8_t> data;
  data.insert(data.end(), kDataMagic, kDataMagic + 4);
  put_u32(data, kStoreVersion);
  put_u64(data, input.model_version);
  put_u32(data, uint32_t(input.z.cols));
  put_u32(data, input.n_taps);
  put_u32(data, input.tap_stride);
  put_u32(data, input.d_c);
  put_u32(data, uint32_t(has_gate ? 1 : 0) | uint32_t(has_per_layer ? 2 : 0));
  put_u64(data, n);

  struct IndexEntry {
    uint64_t offset, length;
  };
  std::vector<IndexEntry> entries(n);
  for (size_t i = 0; i < n; ++i) {
    entries[i].offset = data.size();
    put_string(data, input.ids[i]);
    for (size_t j = 0; j < input.z.cols; ++j) put_f32(data, float(input.z(i, j)));
    if (has_gate)
      for (size_t j = 0; j < input.gate.cols; ++j) put_f32(data, float(input.gate(i, j)));
    if (has_per_layer)
      for (size_t j = 0; j < input.per_layer.cols; ++j)
        put_f32(data, float(input.per_layer(i, j)));
    entries[i].length = data.size() - entries[i].offset;
  }

  std::vector<uint8_t> index;
  index.insert(index.end(), kIndexMagic, kIndexMagic + 4);
  put_u32(index, kStoreVersion);
  put_u64(index, n);
  for (size_t i = 0; i < n; ++i) {
    put_string(index, input.ids[i]);
    put_u64(index, entries[i].offset);
    put_u64(index, entries[i].length);
  }

  atomic_write_file(data_path, data);
  atomic_write_file(index_path(data_path), index);
  return n;
}

struct ParsedIndex {
  std::vector<std::string> ids;
  std::vector<uint64_t> offsets;
  std::vector<uint64_t> lengths;
};

static ParsedIndex read_index(const std::filesystem::path& path) {
  std::vector<uint8_t> buf = read_file(path);
  ByteReader r(buf.data(), buf.size());
  char magic[4];
  r.raw(magic, 4);
  require(std::memcmp(magic, kIndexMagic, 4) == 0, ErrorCode::format,
          path.string() + ": not a store index");
  uint32_t version = r.u32();
  require(version == kStoreVersion, ErrorCode::version,
          path.string() + ": unsupported index version");
  uint64_t n = r.u64();
  ParsedIndex idx;
  uint64_t prev_offset = 0;
  for (uint64_t i = 0; i < n; ++i) {
    idx.ids.push_back(r.str());
    idx.offsets.push_back(r.u64());
    idx.lengths.push_back(r.u64());
    require(i == 0 || idx.ids[i - 1] < idx.ids[i], ErrorCode::corrupt,
            path.string() + ": index ids out of order");
    require(i == 0 || idx.offsets[i] > prev_offset, ErrorCode::corrupt,
            path.string() + ": index offsets not increasing");
    prev_offset = idx.offsets[i];
  }
  require(r.remaining() == 0, ErrorCode::format, path.string() + ": trailing bytes");
  return idx;
}

Store Store::open(const std::filesystem::path& data_path) {
  std::vector<uint8_t> buf = read_file(data_path);
  ByteReader r(buf.data(), buf.size());
  char magic[4];
  r.raw(magic, 4);
  require(std::memcmp(magic, kDataMagic, 4) == 0, ErrorCode::format,
          data_path.string() + ": not an embedding store");
  uint32_t version = r.u32();
  require(version == kStoreVersion, ErrorCode::version,
          data_path.string() + ": unsupported store version " + std::to_string(version));

  Store store;
  store.meta_.model_version = r.u64();
  store.meta_.d_z = r.u32();
  store.meta_.n_taps = r.u32();
  store.meta_.tap_stride = r.u32();
  store.meta_.d_c = r.u32();
  uint32_t flags = r.u32();
  store.meta_.has_gate = flags & 1;
  store.meta_.has_per_layer = flags & 2;
  store.meta_.count = r.u64();

  ParsedIndex idx = read_index(index_path(data_path));
  require(idx.ids.size() == store.meta_.count, ErrorCode::corrupt,
          data_path.string() + ": index and data record counts differ");

  uint64_t n = store.meta_.count;
  store.ids_ = idx.ids;
  store.z_ = MatF(n, store.meta_.d_z);
  if (store.meta_.has_gate) store.gate_ = MatF(n, store.meta_.n_taps);
  if (store.meta_.has_per_layer) store.per_layer_.resize(n);

  for (uint64_t i = 0; i < n; ++i) {
    require(r.offset() == idx.offsets[i], ErrorCode::corrupt,
            data_path.string() + ": record offset mismatch at entry " + std::to_string(i));
    std::string id = r.str();
    require(id == idx.ids[i], ErrorCode::corrupt,
            data_path.string() + ": record id '" + id + "' does not match index");
    for (uint32_t j = 0; j < store.meta_.d_z; ++j) {
      float v = r.f32();
      require(std::isfinite(v), ErrorCode::corrupt,
              data_path.string() + ": non-finite embedding for " + id);
      store.z_(i, j) = v;
    }
    if (store.meta_.has_gate)
      for (uint32_t j = 0; j < store.meta_.n_taps; ++j) {
        float v = r.f32();
        require(std::isfinite(v), ErrorCode::corrupt,
                data_path.string() + ": non-finite gate weight for " + id);
        store.gate_(i, j) = v;
      }
    if (store.meta_.has_per_layer) {
      store.per_layer_[i].resize(size_t(store.meta_.n_taps) * store.meta_.d_c);
      for (float& v : store.per_layer_[i]) {
        v = r.f32();
        require(std::isfinite(v), ErrorCode::corrupt,
                data_path.string() + ": non-finite layer feature for " + id);
      }
    }
    require(r.offset() - idx.offsets[i] == idx.lengths[i], ErrorCode::corrupt,
            data_path.string() + ": record length mismatch for " + id);
    store.lookup_.emplace(id, i);
  }
  require(r.remaining() == 0, ErrorCode::format, data_path.string() + ": trailing bytes");
  return store;
}

size_t Store::position(const std::string& item_id) const {
  auto it = lookup_.find(item_id);
  require(it != lookup_.end(), ErrorCode::not_found, "item '" + item_id + "' not in store");
  return it->second;
}

const float* Store::z_ptr(const std::string& item_id) const { return z_.row(position(item_id)); }

StoreRecord Store::get(const std::string& item_id) const {
  size_t i = position(item_id);
  StoreRecord rec;
  rec.item_id = ids_[i];
  rec.z.assign(z_.row(i), z_.row(i) + meta_.d_z);
  if (meta_.has_gate) rec.gate.assign(gate_.row(i), gate_.row(i) + meta_.n_taps);
  if (meta_.has_per_layer) rec.per_layer = per_layer_[i];
  return rec;
}

std::vector<StoreRecord> Store::batch_get(const std::vector<std::string>& item_ids) const {
  std::string missing;
  size_t n_missing = 0;
  for (const std::string& id : item_ids) {
    if (!lookup_.count(id)) {
      if (n_missing) missing += ", ";
      missing += id;
      ++n_missing;
    }
  }
  require(n_missing == 0, ErrorCode::not_found,
          std::to_string(n_missing) + " item(s) not in store: " + missing);
  std::vector<StoreRecord> out;
  out.reserve(item_ids.size());
  for (const std::string& id : item_ids) out.push_back(get(id));
  return out;
}

StoreMeta Store::verify(const std::filesystem::path& data_path) {
  Store store = open(data_path);  // open performs the full cross-check
  return store.meta();
}

}  // namespace linkedout
