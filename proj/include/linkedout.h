/* SPDX-License-Identifier: Apache-2.0 */
#ifndef LINKEDOUT_H
#define LINKEDOUT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/*
 * C surface over the layer-fusion recommendation pipeline. Every call
 * returns LO_OK or an error code; on failure a human-readable message is
 * written into (err, err_len) when err is non-NULL. Handles are opaque and
 * must be released with their matching close/stop call.
 */

typedef enum lo_status {
  LO_OK = 0,
  LO_E_CONFIG = 1,
  LO_E_IO = 2,
  LO_E_FORMAT = 3,
  LO_E_TRUNCATED = 4,
  LO_E_CORRUPT = 5,
  LO_E_NOT_FOUND = 6,
  LO_E_VERSION = 7,
  LO_E_SHAPE = 8,
  LO_E_INPUT = 9,
  LO_E_NUMERIC = 10,
  LO_E_LENGTH = 11,
  LO_E_SPLIT = 12,
  LO_E_STATS = 13,
  LO_E_STATE = 14,
  LO_E_INTERNAL = 15
} lo_status;

const char* lo_status_name(lo_status status);

/* ---- pipeline stages (config_path: key = value file; NULL means defaults) ---- */

lo_status lo_gen_corpus(const char* config_path, const char* out_dir, int64_t seed_override,
                        uint64_t* n_events_out, char* err, size_t err_len);

lo_status lo_extract(const char* config_path, const char* corpus_dir, const char* dumps_dir,
                     uint64_t* n_items_out, char* err, size_t err_len);

lo_status lo_verify_dumps(const char* dumps_dir, uint64_t* n_checked_out, char* err,
                          size_t err_len);

/* mode: "full", "last_token_moe", "mean_pool_moe", "last_layer_last_token",
 * or NULL to take it from the config. seed_override < 0 keeps the config seed. */
lo_status lo_train(const char* config_path, const char* corpus_dir, const char* dumps_dir,
                   const char* mode, int64_t seed_override, const char* out_dir, char* err,
                   size_t err_len);

lo_status lo_store_build(const char* dumps_dir, const char* checkpoint_path,
                         const char* out_store, int with_gate, int with_per_layer,
                         uint64_t* count_out, char* err, size_t err_len);

/* checkpoint_path may be NULL for a structural check only */
lo_status lo_store_verify(const char* store_path, const char* checkpoint_path,
                          uint64_t* count_out, char* err, size_t err_len);

/* target: "test" or "val"; ks: ranking cutoffs (e.g. {10, 20}) */
lo_status lo_eval(const char* corpus_dir, const char* store_path, const char* checkpoint_path,
                  const uint32_t* ks, size_t n_ks, const char* target, const char* out_csv,
                  char* err, size_t err_len);

/* per_item_csv (optional, may be NULL): one row per item with its gate
 * weights (item_id, pi_0 .. pi_{N-1}) */
lo_status lo_gate_stats(const char* store_path, const char* out_csv, const char* per_item_csv,
                        char* err, size_t err_len);

lo_status lo_bench(const char* config_path, const char* corpus_dir, const char* store_path,
                   const char* checkpoint_path, uint64_t n_queries, const char* out_csv,
                   double* p50_ratio_out, int* top10_identical_out, char* err, size_t err_len);

/* modes_csv / seeds_csv: comma-separated; modes_csv NULL runs all four modes */
lo_status lo_ablate(const char* config_path, const char* corpus_dir, const char* dumps_dir,
                    const char* modes_csv, const char* seeds_csv, const char* out_dir, char* err,
                    size_t err_len);

/* blocks until SIGINT/SIGTERM; bind is "host:port" */
lo_status lo_serve(const char* store_path, const char* checkpoint_path, const char* bind,
                   char* err, size_t err_len);

/* ---- embedding store handle ---- */

typedef struct lo_store lo_store;

lo_status lo_store_open(const char* store_path, lo_store** store_out, char* err, size_t err_len);
void lo_store_close(lo_store* store);
lo_status lo_store_count(const lo_store* store, uint64_t* count_out);
lo_status lo_store_dims(const lo_store* store, uint32_t* d_z_out, uint32_t* n_taps_out,
                        int* has_gate_out);

/* Copies the item embedding into z_out (capacity z_cap floats) and, when the
 * store carries them and gate_out is non-NULL, the gate weights. */
lo_status lo_store_get(const lo_store* store, const char* item_id, float* z_out, size_t z_cap,
                       float* gate_out, size_t gate_cap, char* err, size_t err_len);

/* ---- in-process ranking server handle ---- */

typedef struct lo_server lo_server;

/* port 0 binds an ephemeral port; the bound port is written to port_out */
lo_status lo_server_start(const char* store_path, const char* checkpoint_path, const char* host,
                          uint16_t port, lo_server** server_out, uint16_t* port_out, char* err,
                          size_t err_len);
void lo_server_stop(lo_server* server);

#ifdef __cplusplus
}
#endif

#endif /* LINKEDOUT_H */
