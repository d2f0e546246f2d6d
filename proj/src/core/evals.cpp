// SPDX-License-Identifier: Apache-2.0
#include "core/evals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "core/ranker.hpp"

namespace linkedout {

double hr_at_k(size_t rank, size_t k) {
  require(rank >= 1, ErrorCode::input, "rank must be >= 1");
  return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(size_t rank, size_t k) {
  require(rank >= 1, ErrorCode::input, "rank must be >= 1");
  if (rank > k) return 0.0;
  return 1.0 / std::log2(double(rank) + 1.0);
}

static size_t rank_of_target(const std::vector<double>& scores,
                             const std::vector<char>& excluded, size_t target) {
  size_t rank = 1;
  double st = scores[target];
  for (size_t i = 0; i < scores.size(); ++i) {
    if (i == target || excluded[i]) continue;
    if (scores[i] > st || (scores[i] == st && i < target)) ++rank;
  }
  return rank;
}

EvalReport evaluate_with_scores(
    size_t n_items, const std::vector<UserData>& users, EvalTarget target,
    const std::vector<size_t>& ks,
    const std::function<void(size_t user_idx, const std::vector<size_t>& history,
                             std::vector<double>& scores)>& scorer) {
  require(!ks.empty(), ErrorCode::input, "no k values");

  struct UserMetrics {
    char evaluated = 0;
    std::vector<double> hr, ndcg;
  };
  std::vector<UserMetrics> per_user(users.size());

  parallel_chunks(users.size(), 64, [&](size_t, size_t begin, size_t end) {
    std::vector<double> scores(n_items);
    std::vector<char> excluded(n_items);
    for (size_t ui = begin; ui < end; ++ui) {
      const UserData& u = users[ui];
      size_t tgt = target == EvalTarget::test ? u.test_item : u.val_item;
      if (tgt == SIZE_MAX) continue;
      require(tgt < n_items, ErrorCode::not_found,
              "target item of user " + u.user_id + " is not in the catalog");

      std::vector<size_t> history = u.train_items;
      if (target == EvalTarget::test && u.val_item != SIZE_MAX) history.push_back(u.val_item);

      std::fill(scores.begin(), scores.end(), 0.0);
      scorer(ui, history, scores);

      std::fill(excluded.begin(), excluded.end(), 0);
      for (size_t idx : u.train_items) excluded[idx] = 1;
      excluded[tgt] = 0;

      size_t rank = rank_of_target(scores, excluded, tgt);
      UserMetrics& m = per_user[ui];
      m.evaluated = 1;
      for (size_t k : ks) {
        m.hr.push_back(hr_at_k(rank, k));
        m.ndcg.push_back(ndcg_at_k(rank, k));
      }
    }
  });

  EvalReport report;
  report.ks = ks;
  std::vector<double> hr_vals, ndcg_vals;
  for (size_t ki = 0; ki < ks.size(); ++ki) {
    hr_vals.clear();
    ndcg_vals.clear();
    for (const UserMetrics& m : per_user) {
      if (!m.evaluated) continue;
      hr_vals.push_back(m.hr[ki]);
      ndcg_vals.push_back(m.ndcg[ki]);
    }
    report.n_users = hr_vals.size();
    require(report.n_users > 0, ErrorCode::input, "no users with evaluation targets");
    report.hr[ks[ki]] = pairwise_sum(hr_vals) / double(report.n_users);
    report.ndcg[ks[ki]] = pairwise_sum(ndcg_vals) / double(report.n_users);
  }
  return report;
}

EvalReport evaluate_embeddings(const MatF& catalog_z, const FusionModel& model,
                               const std::vector<UserData>& users, EvalTarget target,
                               const std::vector<size_t>& ks) {
  size_t h_max = model.config().h_max;
  auto scorer = [&](size_t, const std::vector<size_t>& history, std::vector<double>& scores) {
    std::vector<size_t> hist = history;
    if (hist.size() > h_max) hist.erase(hist.begin(), hist.end() - long(h_max));
    std::vector<const float*> hz;
    hz.reserve(hist.size());
    for (size_t idx : hist) hz.push_back(catalog_z.row(idx));
    std::vector<double> u = encode_user(model, hz);
    for (size_t i = 0; i < catalog_z.rows; ++i) {
      const float* z = catalog_z.row(i);
      double s = 0;
      for (size_t j = 0; j < u.size(); ++j) s += u[j] * double(z[j]);
      scores[i] = s;
    }
  };
  EvalReport report = evaluate_with_scores(catalog_z.rows, users, target, ks, scorer);
  report.mode = model.config().mode;
  return report;
}

std::string eval_report_csv(const EvalReport& report) {
  std::string csv = "k,hr,ndcg\n";
  for (size_t k : report.ks) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f\n", k, report.hr.at(k), report.ndcg.at(k));
    csv += buf;
  }
  return csv;
}

std::string eval_report_row(const EvalReport& report) {
  std::string head, row;
  for (size_t k : report.ks) {
    char h[48], r[48];
    std::snprintf(h, sizeof(h), "HR@%zu     ", k);
    std::snprintf(r, sizeof(r), "%.4f   ", report.hr.at(k));
    head += h;
    row += r;
  }
  for (size_t k : report.ks) {
    char h[48], r[48];
    std::snprintf(h, sizeof(h), "NDCG@%zu   ", k);
    std::snprintf(r, sizeof(r), "%.4f   ", report.ndcg.at(k));
    head += h;
    row += r;
  }
  return head + "\n" + row + "\n";
}

// linear-interpolation quantile over a sorted vector
static double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.size() == 1) return v[0];
  double h = p * double(v.size() - 1);
  size_t lo = size_t(h);
  size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = h - double(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

std::vector<GateLayerStats> gate_stats(const Store& store) {
  require(store.meta().has_gate, ErrorCode::input,
          "store was built without gate weights; rebuild with gates enabled");
  require(store.meta().count > 0, ErrorCode::input, "empty store");
  size_t n = store.meta().count, taps = store.meta().n_taps;

  std::vector<GateLayerStats> stats(taps);
  std::vector<double> column(n);
  double mean_total = 0;
  for (size_t t = 0; t < taps; ++t) {
    for (size_t i = 0; i < n; ++i) column[i] = double(store.gate_ptr(i)[t]);
    std::sort(column.begin(), column.end());
    GateLayerStats& s = stats[t];
    s.layer_index = uint32_t(t * store.meta().tap_stride);
    s.mean = pairwise_sum(column) / double(n);
    s.median = quantile_sorted(column, 0.5);
    s.q1 = quantile_sorted(column, 0.25);
    s.q3 = quantile_sorted(column, 0.75);
    s.min = column.front();
    s.max = column.back();
    mean_total += s.mean;
  }
  for (GateLayerStats& s : stats) s.contribution_pct = 100.0 * s.mean / mean_total;
  return stats;
}

std::string gate_stats_csv(const std::vector<GateLayerStats>& stats) {
  std::string csv = "tap_layer,mean,median,q1,q3,min,max,contribution_pct\n";
  for (const GateLayerStats& s : stats) {
    char buf[220];
    std::snprintf(buf, sizeof(buf), "L%u,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f\n", s.layer_index,
                  s.mean, s.median, s.q1, s.q3, s.min, s.max, s.contribution_pct);
    csv += buf;
  }
  return csv;
}

std::string gate_weights_csv(const Store& store) {
  require(store.meta().has_gate, ErrorCode::input,
          "store was built without gate weights; rebuild with gates enabled");
  std::string csv = "item_id";
  for (uint32_t t = 0; t < store.meta().n_taps; ++t)
    csv += ",pi_L" + std::to_string(t * store.meta().tap_stride);
  csv += '\n';
  char buf[32];
  for (size_t i = 0; i < store.meta().count; ++i) {
    csv += store.ids()[i];
    const float* g = store.gate_ptr(i);
    for (uint32_t t = 0; t < store.meta().n_taps; ++t) {
      std::snprintf(buf, sizeof(buf), ",%.9g", double(g[t]));
      csv += buf;
    }
    csv += '\n';
  }
  return csv;
}

}  // namespace linkedout
