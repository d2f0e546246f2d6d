// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/evals.hpp"
#include "core/ranker.hpp"

namespace linkedout {

// End-to-end entry points behind the C API and the CLI. Each step reads and
// writes plain files so stages can be rerun or swapped independently.

struct GenCorpusResult {
  uint64_t n_items = 0;
  uint64_t n_users = 0;
  uint64_t n_events = 0;
};

GenCorpusResult pipeline_gen_corpus(const KvConfig& kv, const std::filesystem::path& out_dir,
                                    std::optional<uint64_t> seed_override = {});

// One .lnkd dump per catalog item; returns the item count.
uint64_t pipeline_extract(const KvConfig& kv, const std::filesystem::path& corpus_dir,
                          const std::filesystem::path& dumps_dir);

// Validates every dump in the directory; returns how many were checked.
uint64_t pipeline_verify_dumps(const std::filesystem::path& dumps_dir);

struct TrainPipelineResult {
  TrainResult result;
  std::filesystem::path checkpoint;
  std::filesystem::path log_csv;
};

TrainPipelineResult pipeline_train(const KvConfig& kv, const std::filesystem::path& corpus_dir,
                                   const std::filesystem::path& dumps_dir,
                                   const std::string& mode_name,
                                   std::optional<uint64_t> seed_override,
                                   const std::filesystem::path& out_dir);

uint64_t pipeline_store_build(const std::filesystem::path& dumps_dir,
                              const std::filesystem::path& checkpoint,
                              const std::filesystem::path& out_store, bool with_gate = true,
                              bool with_per_layer = false);

// Structural verification; with a checkpoint also enforces version match.
StoreMeta pipeline_store_verify(const std::filesystem::path& store_path,
                                const std::optional<std::filesystem::path>& checkpoint);

EvalReport pipeline_eval(const std::filesystem::path& corpus_dir,
                         const std::filesystem::path& store_path,
                         const std::filesystem::path& checkpoint,
                         const std::vector<size_t>& ks, EvalTarget target,
                         const std::filesystem::path& out_csv);

std::vector<GateLayerStats> pipeline_gate_stats(
    const std::filesystem::path& store_path, const std::filesystem::path& out_csv,
    const std::filesystem::path& per_item_csv = {});

BenchReport pipeline_bench(const KvConfig& kv, const std::filesystem::path& corpus_dir,
                           const std::filesystem::path& store_path,
                           const std::filesystem::path& checkpoint, uint64_t n_queries,
                           const std::filesystem::path& out_csv);

struct AblationRow {
  FusionMode mode = FusionMode::full;
  uint64_t seed = 0;
  double hr10 = 0, ndcg10 = 0, hr20 = 0, ndcg20 = 0;
};

struct AblationTable {
  std::vector<AblationRow> rows;        // one per (mode, seed)
  std::vector<AblationRow> mean_rows;   // one per mode, seed field unused
};

// Trains every mode from scratch per seed with identical data order, then
// evaluates each on the test split. Checkpoints and per-run training logs
// land in out_dir.
AblationTable pipeline_ablate(const KvConfig& kv, const std::filesystem::path& corpus_dir,
                              const std::filesystem::path& dumps_dir,
                              const std::vector<FusionMode>& modes,
                              const std::vector<uint64_t>& seeds,
                              const std::filesystem::path& out_dir);

std::string ablation_csv(const AblationTable& table);

// Blocking; returns on SIGINT/SIGTERM. bind is "host:port".
void pipeline_serve(const std::filesystem::path& store_path,
                    const std::filesystem::path& checkpoint, const std::string& bind);

std::string train_log_csv(const TrainResult& result);

}  // namespace linkedout
