// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "core/backbone.hpp"
#include "core/model.hpp"
#include "core/store.hpp"
#include "core/tape.hpp"
#include "core/trainer.hpp"

namespace linkedout {

// u = head( sum_i softmax(trailing position weights)_i * z_i ); the weights
// cover the trailing positions for short histories. Empty history routes
// through the learned cold-start embedding.
ad::NodeId encode_user_node(ad::Tape& tape, const StagedModel& staged, const FusionModel& model,
                            const std::vector<ad::NodeId>& history_z);

std::vector<double> encode_user(const FusionModel& model,
                                const std::vector<const float*>& history_z);

struct ScoredItem {
  std::string id;
  double score;
};

// Exact top-k by descending score, ascending id on ties.
std::vector<ScoredItem> score_and_rank(const std::vector<double>& u,
                                       const std::vector<std::string>& candidate_ids,
                                       const MatF& candidate_z, size_t k);

// ---- line-delimited JSON service ----

// Immutable serving snapshot shared across connections.
struct ServeSnapshot {
  Store store;
  FusionModel model;
  MatF catalog_z;  // store embeddings in record order, for full-catalog scoring

  ServeSnapshot(Store s, FusionModel m);
};

// Parses one request line and produces one response line (no trailing \n).
// Never throws; protocol errors become {"error": ...} responses.
std::string handle_request_line(const ServeSnapshot& snap, const std::string& line);

class RankServer {
 public:
  RankServer(std::shared_ptr<const ServeSnapshot> snap);
  ~RankServer();

  // Binds and starts accepting; port 0 picks an ephemeral port. Returns the
  // bound port.
  uint16_t start(const std::string& host, uint16_t port);
  void stop();
  uint16_t port() const { return port_; }

 private:
  void accept_loop();
  void connection_loop(int fd);

  std::shared_ptr<const ServeSnapshot> snap_;
  std::atomic<bool> running_{false};
  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> conn_fds_;
};

// Blocking CLI entry; returns on SIGINT/SIGTERM.
void serve_blocking(std::shared_ptr<const ServeSnapshot> snap, const std::string& host,
                    uint16_t port);

// ---- latency benchmark ----

struct BenchRow {
  std::string path;  // "store" or "direct"
  double p50_us = 0;
  double p95_us = 0;
  double p99_us = 0;
  uint64_t n = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double p50_ratio = 0;  // direct / store
  bool top10_identical = false;
};

// Runs identical queries through the store path (batch_get + encode + full
// catalog scoring) and the direct path (recompute each history item through
// the backbone + compressor + fusion before the same scoring).
BenchReport latency_bench(const Store& store, const FusionModel& model,
                          const Backbone& backbone, const Corpus& corpus,
                          const std::vector<UserData>& users, uint64_t n_queries);

std::string bench_report_csv(const BenchReport& report);

}  // namespace linkedout
