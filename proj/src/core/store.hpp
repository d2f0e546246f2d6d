// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/mat.hpp"

namespace linkedout {

struct StoreRecord {
  std::string item_id;
  std::vector<float> z;          // d_z
  std::vector<float> gate;       // n_taps, empty unless stored
  std::vector<float> per_layer;  // n_taps * d_c, empty unless stored
};

struct StoreMeta {
  uint64_t model_version = 0;
  uint32_t d_z = 0;
  uint32_t n_taps = 0;
  uint32_t tap_stride = 1;
  uint32_t d_c = 0;
  bool has_gate = false;
  bool has_per_layer = false;
  uint64_t count = 0;
};

// Immutable embedding database: append-only data file ("LNKS") plus a sorted
// sidecar index (id, offset, length). Opened stores are memory-resident.
class Store {
 public:
  static Store open(const std::filesystem::path& data_path);

  const StoreMeta& meta() const { return meta_; }
  // ids in record (= index) order
  const std::vector<std::string>& ids() const { return ids_; }

  StoreRecord get(const std::string& item_id) const;
  std::vector<StoreRecord> batch_get(const std::vector<std::string>& item_ids) const;
  bool contains(const std::string& item_id) const { return lookup_.count(item_id) != 0; }

  // Raw float32 embedding pointer for the scoring hot path.
  const float* z_ptr(size_t record_pos) const { return z_.row(record_pos); }
  const float* z_ptr(const std::string& item_id) const;
  const float* gate_ptr(size_t record_pos) const {
    return meta_.has_gate ? gate_.row(record_pos) : nullptr;
  }
  size_t position(const std::string& item_id) const;

  // Re-reads both files and cross-checks index entries against the records.
  static StoreMeta verify(const std::filesystem::path& data_path);

 private:
  StoreMeta meta_;
  std::vector<std::string> ids_;
  MatF z_;     // count x d_z
  MatF gate_;  // count x n_taps when stored
  std::vector<std::vector<float>> per_layer_;
  std::unordered_map<std::string, size_t> lookup_;
};

struct StoreBuildInput {
  std::vector<std::string> ids;  // ascending, unique
  MatD z;                        // n x d_z (rounded to float32 on write)
  MatD gate;                     // n x n_taps or empty
  MatD per_layer;                // n x (n_taps * d_c) or empty
  uint64_t model_version = 0;
  uint32_t n_taps = 0;
  uint32_t tap_stride = 1;
  uint32_t d_c = 0;
};

// Writes data + index atomically; byte-identical output for identical input.
// Returns the record count.
uint64_t write_store(const StoreBuildInput& input, const std::filesystem::path& data_path);

}  // namespace linkedout
