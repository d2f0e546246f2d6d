// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/store.hpp"
#include "core/trainer.hpp"

namespace linkedout {

// rank is 1-based
double hr_at_k(size_t rank, size_t k);
double ndcg_at_k(size_t rank, size_t k);

enum class EvalTarget { val, test };

struct EvalReport {
  std::vector<size_t> ks;
  std::map<size_t, double> hr;
  std::map<size_t, double> ndcg;
  size_t n_users = 0;
  FusionMode mode = FusionMode::full;
  uint64_t seed = 0;
};

// Leave-one-out, full-catalog evaluation. The scorer fills one score per
// catalog item for the given user; the user's training items are excluded
// from the candidate set (the target never is). Per-user metrics are
// aggregated order-independently.
EvalReport evaluate_with_scores(
    size_t n_items, const std::vector<UserData>& users, EvalTarget target,
    const std::vector<size_t>& ks,
    const std::function<void(size_t user_idx, const std::vector<size_t>& history,
                             std::vector<double>& scores)>& scorer);

// Standard path: history encoded through the ranker head over float32 item
// embeddings (catalog row i = item index i), scores are dot products.
EvalReport evaluate_embeddings(const MatF& catalog_z, const FusionModel& model,
                               const std::vector<UserData>& users, EvalTarget target,
                               const std::vector<size_t>& ks);

std::string eval_report_csv(const EvalReport& report);
std::string eval_report_row(const EvalReport& report);  // single console metric row

struct GateLayerStats {
  uint32_t layer_index = 0;
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
  double contribution_pct = 0;
};

// Per-layer summary of stored gate weights; errors when the store was built
// without them.
std::vector<GateLayerStats> gate_stats(const Store& store);
std::string gate_stats_csv(const std::vector<GateLayerStats>& stats);

// One row per item: item_id, pi_0 .. pi_{N-1}.
std::string gate_weights_csv(const Store& store);

}  // namespace linkedout
