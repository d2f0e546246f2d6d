// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "core/evals.hpp"
#include "core/rng.hpp"

using namespace linkedout;

namespace {

// Independent reference: sorts (score desc, index asc) over the non-excluded
// candidates and applies the metric definitions literally.
struct RefMetrics {
  double hr, ndcg;
};

RefMetrics reference_user_metrics(const std::vector<double>& scores,
                                  const std::vector<size_t>& train_items, size_t target,
                                  size_t k) {
  std::vector<size_t> candidates;
  for (size_t i = 0; i < scores.size(); ++i) {
    bool excluded = std::find(train_items.begin(), train_items.end(), i) != train_items.end();
    if (i == target) excluded = false;
    if (!excluded) candidates.push_back(i);
  }
  std::sort(candidates.begin(), candidates.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  size_t rank = 1 + size_t(std::find(candidates.begin(), candidates.end(), target) -
                           candidates.begin());
  RefMetrics m{};
  m.hr = rank <= k ? 1.0 : 0.0;
  m.ndcg = rank <= k ? 1.0 / std::log2(double(rank) + 1.0) : 0.0;
  return m;
}

std::vector<UserData> random_users(size_t n_users, size_t n_items, Rng& rng) {
  std::vector<UserData> users(n_users);
  for (size_t ui = 0; ui < n_users; ++ui) {
    UserData& u = users[ui];
    u.user_id = "u" + std::to_string(ui);
    std::vector<size_t> pool(n_items);
    for (size_t i = 0; i < n_items; ++i) pool[i] = i;
    rng.shuffle(pool);
    size_t len = 3 + size_t(rng.index(std::min<uint64_t>(n_items - 2, 5)));
    u.train_items.assign(pool.begin(), pool.begin() + (len - 2));
    u.val_item = pool[len - 2];
    u.test_item = pool[len - 1];
    u.interacted.assign(pool.begin(), pool.begin() + len);
    std::sort(u.interacted.begin(), u.interacted.end());
  }
  return users;
}

}  // namespace

TEST_CASE("hr and ndcg closed forms") {
  CHECK(hr_at_k(1, 10) == 1.0);
  CHECK(hr_at_k(10, 10) == 1.0);
  CHECK(hr_at_k(11, 10) == 0.0);
  CHECK(ndcg_at_k(1, 10) == doctest::Approx(1.0));
  CHECK(ndcg_at_k(3, 10) == doctest::Approx(0.5));  // 1/log2(4)
  CHECK(ndcg_at_k(11, 10) == 0.0);
  CHECK_THROWS_AS(hr_at_k(0, 10), Error);
}

TEST_CASE("evaluate matches the brute-force reference on 100 micro-catalogs") {
  for (uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    size_t n_items = 5 + size_t(rng.index(6));  // 5..10
    size_t n_users = 3 + size_t(rng.index(18)); // 3..20
    std::vector<UserData> users = random_users(n_users, n_items, rng);

    // seeded random scores per (user, item)
    std::vector<std::vector<double>> all_scores(n_users, std::vector<double>(n_items));
    for (auto& row : all_scores)
      for (double& s : row) s = rng.uniform(-1, 1);

    std::vector<size_t> ks{1, 3, 5};
    EvalReport report = evaluate_with_scores(
        n_items, users, EvalTarget::test, ks,
        [&](size_t ui, const std::vector<size_t>&, std::vector<double>& scores) {
          scores = all_scores[ui];
        });

    for (size_t k : ks) {
      double hr_sum = 0, ndcg_sum = 0;
      for (size_t ui = 0; ui < n_users; ++ui) {
        RefMetrics m = reference_user_metrics(all_scores[ui], users[ui].train_items,
                                              users[ui].test_item, k);
        hr_sum += m.hr;
        ndcg_sum += m.ndcg;
      }
      CHECK(report.hr.at(k) == doctest::Approx(hr_sum / double(n_users)).epsilon(1e-12));
      CHECK(report.ndcg.at(k) == doctest::Approx(ndcg_sum / double(n_users)).epsilon(1e-12));
    }
  }
}

TEST_CASE("metric structure: ndcg <= hr and hr monotone in k") {
  Rng rng(7);
  size_t n_items = 50, n_users = 40;
  std::vector<UserData> users = random_users(n_users, n_items, rng);
  std::vector<std::vector<double>> all_scores(n_users, std::vector<double>(n_items));
  for (auto& row : all_scores)
    for (double& s : row) s = rng.uniform(-1, 1);

  std::vector<size_t> ks{1, 5, 10, 20};
  EvalReport report = evaluate_with_scores(
      n_items, users, EvalTarget::test, ks,
      [&](size_t ui, const std::vector<size_t>&, std::vector<double>& scores) {
        scores = all_scores[ui];
      });
  double prev = -1;
  for (size_t k : ks) {
    CHECK(report.ndcg.at(k) <= report.hr.at(k) + 1e-12);
    CHECK(report.hr.at(k) >= prev - 1e-12);
    prev = report.hr.at(k);
  }
}

TEST_CASE("excluding training items never hurts the user's metric") {
  Rng rng(8);
  size_t n_items = 30, n_users = 25;
  std::vector<UserData> users = random_users(n_users, n_items, rng);
  std::vector<std::vector<double>> all_scores(n_users, std::vector<double>(n_items));
  for (auto& row : all_scores)
    for (double& s : row) s = rng.uniform(-1, 1);

  auto scorer = [&](size_t ui, const std::vector<size_t>&, std::vector<double>& scores) {
    scores = all_scores[ui];
  };
  EvalReport with_exclusion =
      evaluate_with_scores(n_items, users, EvalTarget::test, {10}, scorer);

  std::vector<UserData> no_train = users;
  for (UserData& u : no_train) u.train_items.clear();
  EvalReport without_exclusion =
      evaluate_with_scores(n_items, no_train, EvalTarget::test, {10}, scorer);

  CHECK(with_exclusion.hr.at(10) >= without_exclusion.hr.at(10) - 1e-12);
}

TEST_CASE("a model that always ranks the target first hits the ceiling") {
  Rng rng(9);
  std::vector<UserData> users = random_users(12, 15, rng);
  EvalReport report = evaluate_with_scores(
      15, users, EvalTarget::test, {1, 10},
      [&](size_t ui, const std::vector<size_t>&, std::vector<double>& scores) {
        scores.assign(15, 0.0);
        scores[users[ui].test_item] = 1.0;
      });
  CHECK(report.hr.at(1) == 1.0);
  CHECK(report.hr.at(10) == 1.0);
  CHECK(report.ndcg.at(10) == 1.0);
}

TEST_CASE("random scores land inside the 3-sigma binomial band") {
  Rng rng(10);
  size_t n_items = 400, n_users = 600, k = 10;
  std::vector<UserData> users = random_users(n_users, n_items, rng);

  Rng score_rng(11);
  std::vector<std::vector<double>> all_scores(n_users, std::vector<double>(n_items));
  for (auto& row : all_scores)
    for (double& s : row) s = score_rng.uniform(0, 1);

  EvalReport report = evaluate_with_scores(
      n_items, users, EvalTarget::test, {k},
      [&](size_t ui, const std::vector<size_t>&, std::vector<double>& scores) {
        scores = all_scores[ui];
      });

  // expected hit probability per user: k / candidate count
  double mean = 0, var = 0;
  for (const UserData& u : users) {
    double p = double(k) / double(n_items - u.train_items.size());
    mean += p;
    var += p * (1 - p);
  }
  mean /= double(n_users);
  var /= double(n_users) * double(n_users);
  double sigma = std::sqrt(var);
  CHECK(report.hr.at(k) >= mean - 3 * sigma);
  CHECK(report.hr.at(k) <= mean + 3 * sigma);
}

TEST_CASE("gate stats summarize stored weights") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "lo_eval_tests";
  fs::create_directories(dir);

  auto build = [&](bool with_gate, const std::string& tag, auto fill) {
    StoreBuildInput in;
    in.model_version = 5;
    in.n_taps = 4;
    in.tap_stride = 2;
    in.d_c = 8;
    size_t n = 50;
    in.z = MatD(n, 8);
    if (with_gate) {
      in.gate = MatD(n, 4);
      fill(in.gate);
    }
    char buf[16];
    for (size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof(buf), "v%05zu", i);
      in.ids.push_back(buf);
    }
    fs::path p = dir / (tag + ".lnks");
    fs::remove(p);
    write_store(in, p);
    return Store::open(p);
  };

  SUBCASE("uniform gates give every layer 100/N percent") {
    Store store = build(true, "uniform", [](MatD& g) {
      for (double& x : g.v) x = 0.25;
    });
    std::vector<GateLayerStats> stats = gate_stats(store);
    REQUIRE(stats.size() == 4);
    double pct_sum = 0;
    for (const GateLayerStats& s : stats) {
      CHECK(s.contribution_pct == doctest::Approx(25.0).epsilon(1e-9));
      CHECK(s.mean == doctest::Approx(0.25));
      CHECK(s.median == doctest::Approx(0.25));
      pct_sum += s.contribution_pct;
    }
    CHECK(std::fabs(pct_sum - 100.0) <= 0.1);
    CHECK(stats[0].layer_index == 0);
    CHECK(stats[1].layer_index == 2);
  }
  SUBCASE("contributions sum to 100 for random simplex gates") {
    Rng rng(12);
    Store store = build(true, "random", [&](MatD& g) {
      for (size_t i = 0; i < g.rows; ++i) {
        double sum = 0;
        for (size_t t = 0; t < g.cols; ++t) {
          g(i, t) = rng.uniform(0.001, 1);
          sum += g(i, t);
        }
        for (size_t t = 0; t < g.cols; ++t) g(i, t) /= sum;
      }
    });
    std::vector<GateLayerStats> stats = gate_stats(store);
    double pct_sum = 0;
    for (const GateLayerStats& s : stats) {
      pct_sum += s.contribution_pct;
      CHECK(s.min <= s.q1);
      CHECK(s.q1 <= s.median + 1e-12);
      CHECK(s.median <= s.q3 + 1e-12);
      CHECK(s.q3 <= s.max + 1e-12);
    }
    CHECK(std::fabs(pct_sum - 100.0) <= 0.1);
    std::string csv = gate_stats_csv(stats);
    CHECK(csv.find("tap_layer,mean,median,q1,q3,min,max,contribution_pct") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + one row per tap
  }
  SUBCASE("a store without gate weights is a missing-data error") {
    Store store = build(false, "nogate", [](MatD&) {});
    CHECK_THROWS_AS(gate_stats(store), Error);
  }
}

TEST_CASE("eval csv and console row are well formed") {
  EvalReport report;
  report.ks = {10, 20};
  report.hr[10] = 0.1015;
  report.hr[20] = 0.1477;
  report.ndcg[10] = 0.0548;
  report.ndcg[20] = 0.0664;
  report.n_users = 100;
  std::string csv = eval_report_csv(report);
  CHECK(csv.find("k,hr,ndcg\n10,0.101500,0.054800\n20,0.147700,0.066400\n") == 0);
  std::string row = eval_report_row(report);
  CHECK(row.find("HR@10") != std::string::npos);
  CHECK(row.find("NDCG@20") != std::string::npos);
  CHECK(row.find("0.1015") != std::string::npos);
}
