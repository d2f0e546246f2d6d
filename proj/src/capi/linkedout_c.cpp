// SPDX-License-Identifier: Apache-2.0
#include "linkedout.h"

#include <cstring>
#include <memory>
#include <sstream>

#include "core/pipeline.hpp"

using namespace linkedout;

namespace {

lo_status map_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::config: return LO_E_CONFIG;
    case ErrorCode::io: return LO_E_IO;
    case ErrorCode::format: return LO_E_FORMAT;
    case ErrorCode::truncated: return LO_E_TRUNCATED;
    case ErrorCode::corrupt: return LO_E_CORRUPT;
    case ErrorCode::not_found: return LO_E_NOT_FOUND;
    case ErrorCode::version: return LO_E_VERSION;
    case ErrorCode::shape: return LO_E_SHAPE;
    case ErrorCode::input: return LO_E_INPUT;
    case ErrorCode::numeric: return LO_E_NUMERIC;
    case ErrorCode::length: return LO_E_LENGTH;
    case ErrorCode::split: return LO_E_SPLIT;
    case ErrorCode::stats: return LO_E_STATS;
    case ErrorCode::state: return LO_E_STATE;
    case ErrorCode::internal: return LO_E_INTERNAL;
  }
  return LO_E_INTERNAL;
}

void set_err(char* err, size_t err_len, const char* msg) {
  if (!err || err_len == 0) return;
  std::strncpy(err, msg, err_len - 1);
  err[err_len - 1] = '\0';
}

template <class Fn>
lo_status guarded(char* err, size_t err_len, Fn&& fn) {
  try {
    fn();
    return LO_OK;
  } catch (const Error& e) {
    set_err(err, err_len, e.what());
    return map_code(e.code);
  } catch (const std::exception& e) {
    set_err(err, err_len, e.what());
    return LO_E_INTERNAL;
  } catch (...) {
    set_err(err, err_len, "unknown error");
    return LO_E_INTERNAL;
  }
}

KvConfig load_kv(const char* config_path) {
  if (!config_path || !*config_path) return KvConfig::parse("");
  return KvConfig::load(config_path);
}

std::vector<uint64_t> parse_u64_csv(const char* csv) {
  std::vector<uint64_t> out;
  if (!csv) return out;
  std::istringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoull(tok));
  return out;
}

}  // namespace

extern "C" {

const char* lo_status_name(lo_status status) {
  switch (status) {
    case LO_OK: return "ok";
    case LO_E_CONFIG: return "config";
    case LO_E_IO: return "io";
    case LO_E_FORMAT: return "format";
    case LO_E_TRUNCATED: return "truncated";
    case LO_E_CORRUPT: return "corrupt";
    case LO_E_NOT_FOUND: return "not_found";
    case LO_E_VERSION: return "version";
    case LO_E_SHAPE: return "shape";
    case LO_E_INPUT: return "input";
    case LO_E_NUMERIC: return "numeric";
    case LO_E_LENGTH: return "length";
    case LO_E_SPLIT: return "split";
    case LO_E_STATS: return "stats";
    case LO_E_STATE: return "state";
    case LO_E_INTERNAL: return "internal";
  }
  return "unknown";
}

lo_status lo_gen_corpus(const char* config_path, const char* out_dir, int64_t seed_override,
                        uint64_t* n_events_out, char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(out_dir, ErrorCode::input, "out_dir is required");
    std::optional<uint64_t> seed;
    if (seed_override >= 0) seed = uint64_t(seed_override);
    GenCorpusResult r = pipeline_gen_corpus(load_kv(config_path), out_dir, seed);
    if (n_events_out) *n_events_out = r.n_events;
  });
}

lo_status lo_extract(const char* config_path, const char* corpus_dir, const char* dumps_dir,
                     uint64_t* n_items_out, char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(corpus_dir && dumps_dir, ErrorCode::input, "corpus_dir and dumps_dir are required");
    uint64_t n = pipeline_extract(load_kv(config_path), corpus_dir, dumps_dir);
    if (n_items_out) *n_items_out = n;
  });
}

lo_status lo_verify_dumps(const char* dumps_dir, uint64_t* n_checked_out, char* err,
                          size_t err_len) {
  return guarded(err, err_len, [&] {
    require(dumps_dir, ErrorCode::input, "dumps_dir is required");
    uint64_t n = pipeline_verify_dumps(dumps_dir);
    if (n_checked_out) *n_checked_out = n;
  });
}

lo_status lo_train(const char* config_path, const char* corpus_dir, const char* dumps_dir,
                   const char* mode, int64_t seed_override, const char* out_dir, char* err,
                   size_t err_len) {
  return guarded(err, err_len, [&] {
    require(corpus_dir && dumps_dir && out_dir, ErrorCode::input,
            "corpus_dir, dumps_dir and out_dir are required");
    std::optional<uint64_t> seed;
    if (seed_override >= 0) seed = uint64_t(seed_override);
    pipeline_train(load_kv(config_path), corpus_dir, dumps_dir, mode ? mode : "", seed, out_dir);
  });
}

lo_status lo_store_build(const char* dumps_dir, const char* checkpoint_path,
                         const char* out_store, int with_gate, int with_per_layer,
                         uint64_t* count_out, char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(dumps_dir && checkpoint_path && out_store, ErrorCode::input,
            "dumps_dir, checkpoint and out_store are required");
    uint64_t n = pipeline_store_build(dumps_dir, checkpoint_path, out_store, with_gate != 0,
                                      with_per_layer != 0);
    if (count_out) *count_out = n;
  });
}

lo_status lo_store_verify(const char* store_path, const char* checkpoint_path,
                          uint64_t* count_out, char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(store_path, ErrorCode::input, "store_path is required");
    std::optional<std::filesystem::path> ckpt;
    if (checkpoint_path && *checkpoint_path) ckpt = checkpoint_path;
    StoreMeta meta = pipeline_store_verify(store_path, ckpt);
    if (count_out) *count_out = meta.count;
  });
}

lo_status lo_eval(const char* corpus_dir, const char* store_path, const char* checkpoint_path,
                  const uint32_t* ks, size_t n_ks, const char* target, const char* out_csv,
                  char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(corpus_dir && store_path && checkpoint_path, ErrorCode::input,
            "corpus_dir, store and checkpoint are required");
    std::vector<size_t> kvec;
    for (size_t i = 0; i < n_ks; ++i) kvec.push_back(ks[i]);
    if (kvec.empty()) kvec = {10, 20};
    EvalTarget tgt = EvalTarget::test;
    if (target && std::string(target) == "val") tgt = EvalTarget::val;
    pipeline_eval(corpus_dir, store_path, checkpoint_path, kvec, tgt,
                  out_csv ? std::filesystem::path(out_csv) : std::filesystem::path());
  });
}

lo_status lo_gate_stats(const char* store_path, const char* out_csv, const char* per_item_csv,
                        char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(store_path, ErrorCode::input, "store_path is required");
    pipeline_gate_stats(store_path,
                        out_csv ? std::filesystem::path(out_csv) : std::filesystem::path(),
                        per_item_csv ? std::filesystem::path(per_item_csv)
                                     : std::filesystem::path());
  });
}

lo_status lo_bench(const char* config_path, const char* corpus_dir, const char* store_path,
                   const char* checkpoint_path, uint64_t n_queries, const char* out_csv,
                   double* p50_ratio_out, int* top10_identical_out, char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(corpus_dir && store_path && checkpoint_path, ErrorCode::input,
            "corpus_dir, store and checkpoint are required");
    BenchReport report =
        pipeline_bench(load_kv(config_path), corpus_dir, store_path, checkpoint_path, n_queries,
                       out_csv ? std::filesystem::path(out_csv) : std::filesystem::path());
    if (p50_ratio_out) *p50_ratio_out = report.p50_ratio;
    if (top10_identical_out) *top10_identical_out = report.top10_identical ? 1 : 0;
  });
}

lo_status lo_ablate(const char* config_path, const char* corpus_dir, const char* dumps_dir,
                    const char* modes_csv, const char* seeds_csv, const char* out_dir, char* err,
                    size_t err_len) {
  return guarded(err, err_len, [&] {
    require(corpus_dir && dumps_dir && out_dir, ErrorCode::input,
            "corpus_dir, dumps_dir and out_dir are required");
    std::vector<FusionMode> modes;
    if (modes_csv && *modes_csv) {
      std::istringstream ss(modes_csv);
      std::string tok;
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) modes.push_back(fusion_mode_from_name(tok));
    } else {
      modes = {FusionMode::full, FusionMode::last_token_moe, FusionMode::mean_pool_moe,
               FusionMode::last_layer_last_token};
    }
    std::vector<uint64_t> seeds = parse_u64_csv(seeds_csv);
    require(!seeds.empty(), ErrorCode::input, "at least one seed is required");
    pipeline_ablate(load_kv(config_path), corpus_dir, dumps_dir, modes, seeds, out_dir);
  });
}

lo_status lo_serve(const char* store_path, const char* checkpoint_path, const char* bind,
                   char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(store_path && checkpoint_path && bind, ErrorCode::input,
            "store, checkpoint and bind address are required");
    pipeline_serve(store_path, checkpoint_path, bind);
  });
}

// ---- handles ----

struct lo_store {
  Store impl;
};

lo_status lo_store_open(const char* store_path, lo_store** store_out, char* err,
                        size_t err_len) {
  return guarded(err, err_len, [&] {
    require(store_path && store_out, ErrorCode::input, "store_path and out pointer required");
    auto handle = std::make_unique<lo_store>(lo_store{Store::open(store_path)});
    *store_out = handle.release();
  });
}

void lo_store_close(lo_store* store) { delete store; }

lo_status lo_store_count(const lo_store* store, uint64_t* count_out) {
  if (!store || !count_out) return LO_E_INPUT;
  *count_out = store->impl.meta().count;
  return LO_OK;
}

lo_status lo_store_dims(const lo_store* store, uint32_t* d_z_out, uint32_t* n_taps_out,
                        int* has_gate_out) {
  if (!store) return LO_E_INPUT;
  if (d_z_out) *d_z_out = store->impl.meta().d_z;
  if (n_taps_out) *n_taps_out = store->impl.meta().n_taps;
  if (has_gate_out) *has_gate_out = store->impl.meta().has_gate ? 1 : 0;
  return LO_OK;
}

lo_status lo_store_get(const lo_store* store, const char* item_id, float* z_out, size_t z_cap,
                       float* gate_out, size_t gate_cap, char* err, size_t err_len) {
  return guarded(err, err_len, [&] {
    require(store && item_id, ErrorCode::input, "store and item_id required");
    StoreRecord rec = store->impl.get(item_id);
    if (z_out) {
      require(z_cap >= rec.z.size(), ErrorCode::input, "z buffer too small");
      std::copy(rec.z.begin(), rec.z.end(), z_out);
    }
    if (gate_out) {
      require(store->impl.meta().has_gate, ErrorCode::input, "store has no gate weights");
      require(gate_cap >= rec.gate.size(), ErrorCode::input, "gate buffer too small");
      std::copy(rec.gate.begin(), rec.gate.end(), gate_out);
    }
  });
}

struct lo_server {
  std::shared_ptr<const ServeSnapshot> snap;
  std::unique_ptr<RankServer> impl;
};

lo_status lo_server_start(const char* store_path, const char* checkpoint_path, const char* host,
                          uint16_t port, lo_server** server_out, uint16_t* port_out, char* err,
                          size_t err_len) {
  return guarded(err, err_len, [&] {
    require(store_path && checkpoint_path && host && server_out, ErrorCode::input,
            "store, checkpoint, host and out pointer required");
    Store store = Store::open(store_path);
    FusionModel::Loaded loaded = FusionModel::load(checkpoint_path);
    require(store.meta().model_version == loaded.version_hash, ErrorCode::version,
            "store/checkpoint version mismatch");
    auto snap =
        std::make_shared<const ServeSnapshot>(std::move(store), std::move(loaded.model));
    auto handle = std::make_unique<lo_server>();
    handle->snap = snap;
    handle->impl = std::make_unique<RankServer>(snap);
    uint16_t bound = handle->impl->start(host, port);
    if (port_out) *port_out = bound;
    *server_out = handle.release();
  });
}

void lo_server_stop(lo_server* server) {
  if (!server) return;
  server->impl->stop();
  delete server;
}

}  // extern "C"
