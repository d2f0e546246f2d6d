// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace linkedout {

enum class ErrorCode {
  config,
  io,
  format,
  truncated,
  corrupt,
  not_found,
  version,
  shape,
  input,
  numeric,
  length,
  split,
  stats,
  state,
  internal,
};

struct Error : std::runtime_error {
  ErrorCode code;
  Error(ErrorCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

inline void require(bool cond, ErrorCode c, const std::string& msg) {
  if (!cond) throw Error(c, msg);
}

// ---- little-endian encoding, independent of host byte order ----

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 24));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline void put_f32(std::vector<uint8_t>& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

inline void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

// Cursor over a byte buffer; throws truncation errors that name the offset.
class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
  explicit ByteReader(std::span<const uint8_t> b) : data_(b.data()), size_(b.size()) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return size_ - pos_; }

  uint32_t u32() {
    need(4);
    uint32_t v = uint32_t(data_[pos_]) | uint32_t(data_[pos_ + 1]) << 8 |
                 uint32_t(data_[pos_ + 2]) << 16 | uint32_t(data_[pos_ + 3]) << 24;
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32() {
    uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  void raw(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }

 private:
  void need(size_t n) {
    if (pos_ + n > size_)
      throw Error(ErrorCode::truncated,
                  "truncated at byte offset " + std::to_string(pos_) + " (need " +
                      std::to_string(n) + ", have " + std::to_string(size_ - pos_) + ")");
  }
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

// ---- file helpers ----

std::vector<uint8_t> inline read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  std::vector<uint8_t> buf(size_t(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!in) throw Error(ErrorCode::io, "cannot read " + path.string());
  return buf;
}

// Writes via a temp file in the same directory, renamed over the target on
// success; an error leaves neither the target nor the temp behind.
inline void atomic_write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot open " + tmp.string() + " for write");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::io, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(ErrorCode::io, "rename to " + path.string() + " failed: " + ec.message());
  }
}

inline void atomic_write_text(const std::filesystem::path& path, const std::string& text) {
  atomic_write_file(path, std::span<const uint8_t>(
                              reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

// ---- misc ----

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

// Order-independent given a fixed input order; reduces roundoff for long sums.
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0;
    for (double x : xs) s += x;
    return s;
  }
  size_t half = xs.size() / 2;
  return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

// Nearest-rank percentile; v is sorted ascending, p in [0,100].
inline double percentile_nearest_rank(const std::vector<double>& v, double p) {
  if (v.empty()) return 0.0;
  size_t rank = size_t(std::max(1.0, std::ceil(p / 100.0 * double(v.size()))));
  return v[rank - 1];
}

size_t inline worker_count() {
  if (const char* env = std::getenv("LINKEDOUT_THREADS")) {
    long n = std::atol(env);
    if (n >= 1) return size_t(n);
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

// Runs fn(chunk_index, begin, end) over fixed-size chunks of [0, n). The chunk
// grid depends only on (n, chunk_size), so any per-chunk outputs can be reduced
// in chunk order for results independent of scheduling and thread count.
template <class Fn>
void parallel_chunks(size_t n, size_t chunk_size, Fn&& fn) {
  if (n == 0) return;
  size_t n_chunks = (n + chunk_size - 1) / chunk_size;
  size_t workers = std::min(worker_count(), n_chunks);
  if (workers <= 1) {
    for (size_t c = 0; c < n_chunks; ++c)
      fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mu;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        size_t c = next.fetch_add(1);
        if (c >= n_chunks) return;
        try {
          fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace linkedout
