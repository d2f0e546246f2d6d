// SPDX-License-Identifier: Apache-2.0
#include "core/ranker.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdio>

#include <json.hpp>

#include "core/fusion.hpp"

namespace linkedout {

ad::NodeId encode_user_node(ad::Tape& tape, const StagedModel& staged, const FusionModel& model,
                            const std::vector<ad::NodeId>& history_z) {
  const ModelConfig& cfg = model.config();
  const ModelTensors& idx = model.index();
  require(history_z.size() <= cfg.h_max, ErrorCode::input,
          "history length " + std::to_string(history_z.size()) + " exceeds capacity " +
              std::to_string(cfg.h_max));
  ad::NodeId pooled;
  if (history_z.empty()) {
    pooled = staged.id(idx.cold_start);
  } else {
    size_t h = history_z.size();
    ad::NodeId raw = tape.slice_cols(staged.id(idx.pos_weights), cfg.h_max - h, h);
    ad::NodeId w = tape.row_softmax(raw);
    pooled = tape.matmul(w, tape.stack_rows(history_z));
  }
  return tape.add_row(tape.matmul(pooled, staged.id(idx.head_w)), staged.id(idx.head_b));
}

std::vector<double> encode_user(const FusionModel& model,
                                const std::vector<const float*>& history_z) {
  size_t d_z = model.config().d_z;
  ad::Tape tape;
  StagedModel staged = stage_model(tape, model);
  std::vector<ad::NodeId> hist;
  hist.reserve(history_z.size());
  for (const float* z : history_z) {
    MatD row(1, d_z);
    for (size_t j = 0; j < d_z; ++j) row.v[j] = double(z[j]);
    hist.push_back(tape.leaf(std::move(row)));
  }
  const MatD& u = tape.val(encode_user_node(tape, staged, model, hist));
  return u.v;
}

std::vector<ScoredItem> score_and_rank(const std::vector<double>& u,
                                       const std::vector<std::string>& candidate_ids,
                                       const MatF& candidate_z, size_t k) {
  require(k >= 1, ErrorCode::input, "k must be >= 1");
  require(!candidate_ids.empty(), ErrorCode::input, "empty candidate set");
  require(candidate_ids.size() == candidate_z.rows, ErrorCode::shape,
          "candidate id / embedding count differ");
  require(u.size() == candidate_z.cols, ErrorCode::shape, "user width differs from embeddings");

  size_t n = candidate_ids.size();
  std::vector<std::pair<double, size_t>> scored(n);
  for (size_t i = 0; i < n; ++i) {
    const float* z = candidate_z.row(i);
    double s = 0;
    for (size_t j = 0; j < u.size(); ++j) s += u[j] * double(z[j]);
    scored[i] = {s, i};
  }
  auto better = [&](const std::pair<double, size_t>& a, const std::pair<double, size_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return candidate_ids[a.second] < candidate_ids[b.second];
  };
  size_t take = std::min(k, n);
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), better);
  std::vector<ScoredItem> out;
  out.reserve(take);
  for (size_t i = 0; i < take; ++i)
    out.push_back(ScoredItem{candidate_ids[scored[i].second], scored[i].first});
  return out;
}

// ---- protocol ----

ServeSnapshot::ServeSnapshot(Store s, FusionModel m)
    : store(std::move(s)), model(std::move(m)) {
  require(store.meta().d_z == model.config().d_z, ErrorCode::version,
          "store embedding width differs from model d_z");
  catalog_z = MatF(store.meta().count, store.meta().d_z);
  for (size_t i = 0; i < catalog_z.rows; ++i) {
    const float* z = store.z_ptr(i);
    std::copy(z, z + catalog_z.cols, catalog_z.row(i));
  }
}

static std::string format_score(double s) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", s);
  return buf;
}

static std::string error_response(const std::string& code, const std::string& detail) {
  nlohmann::json j;
  j["error"] = {{"code", code}, {"detail", detail}};
  return j.dump();
}

std::string handle_request_line(const ServeSnapshot& snap, const std::string& line) {
  auto start = std::chrono::steady_clock::now();
  nlohmann::json req = nlohmann::json::parse(line, nullptr, false);
  if (req.is_discarded() || !req.is_object())
    return error_response("bad_request", "request is not a JSON object");

  try {
    if (!req.contains("history") || !req["history"].is_array())
      return error_response("bad_request", "missing 'history' array");
    if (!req.contains("k") || !req["k"].is_number_integer())
      return error_response("bad_request", "missing integer 'k'");
    int64_t k = req["k"].get<int64_t>();
    if (k < 1) return error_response("bad_request", "k must be >= 1");

    std::vector<std::string> history = req["history"].get<std::vector<std::string>>();
    if (history.size() > snap.model.config().h_max)
      return error_response("bad_request",
                            "history exceeds capacity " +
                                std::to_string(snap.model.config().h_max));

    std::vector<std::string> missing;
    for (const std::string& id : history)
      if (!snap.store.contains(id)) missing.push_back(id);

    bool full_catalog = !req.contains("candidates") || req["candidates"].is_null();
    std::vector<std::string> candidate_ids;
    if (!full_catalog) {
      if (!req["candidates"].is_array())
        return error_response("bad_request", "'candidates' must be an array or null");
      candidate_ids = req["candidates"].get<std::vector<std::string>>();
      if (candidate_ids.empty())
        return error_response("bad_request", "empty candidate set");
      for (const std::string& id : candidate_ids)
        if (!snap.store.contains(id)) missing.push_back(id);
    }
    if (!missing.empty()) {
      std::string detail = "unknown item ids:";
      for (const std::string& id : missing) detail += " " + id;
      return error_response("not_found", detail);
    }

    std::vector<const float*> hist_z;
    hist_z.reserve(history.size());
    for (const std::string& id : history) hist_z.push_back(snap.store.z_ptr(id));
    std::vector<double> u = encode_user(snap.model, hist_z);

    std::vector<ScoredItem> ranked;
    if (full_catalog) {
      ranked = score_and_rank(u, snap.store.ids(), snap.catalog_z, size_t(k));
    } else {
      MatF cz(candidate_ids.size(), snap.store.meta().d_z);
      for (size_t i = 0; i < candidate_ids.size(); ++i) {
        const float* z = snap.store.z_ptr(candidate_ids[i]);
        std::copy(z, z + cz.cols, cz.row(i));
      }
      ranked = score_and_rank(u, candidate_ids, cz, size_t(k));
    }

    auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                  std::chrono::steady_clock::now() - start)
                  .count();
    std::string out = "{\"items\":[";
    for (size_t i = 0; i < ranked.size(); ++i) {
      if (i) out += ',';
      out += "{\"id\":";
      out += nlohmann::json(ranked[i].id).dump();
      out += ",\"score\":";
      out += format_score(ranked[i].score);
      out += '}';
    }
    out += "],\"latency_us\":" + std::to_string(us) + "}";
    return out;
  } catch (const Error& e) {
    return error_response(e.code == ErrorCode::not_found ? "not_found" : "internal", e.what());
  } catch (const std::exception& e) {
    return error_response("internal", e.what());
  }
}

// ---- socket server ----

RankServer::RankServer(std::shared_ptr<const ServeSnapshot> snap) : snap_(std::move(snap)) {}

RankServer::~RankServer() { stop(); }

uint16_t RankServer::start(const std::string& host, uint16_t port) {
  require(!running_.load(), ErrorCode::state, "server already running");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  require(listen_fd_ >= 0, ErrorCode::io, "socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::config, "bad bind host '" + host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 64) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);

  running_.store(true);
  acceptor_ = std::thread([this] { accept_loop(); });
  return port_;
}

void RankServer::accept_loop() {
  while (running_.load()) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, 200);
    if (rc <= 0) continue;
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    std::lock_guard<std::mutex> lk(mu_);
    if (!running_.load()) {
      ::close(fd);
      return;
    }
    conn_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { connection_loop(fd); });
  }
}

void RankServer::connection_loop(int fd) {
  std::string pending;
  char buf[4096];
  for (;;) {
    ssize_t got = ::recv(fd, buf, sizeof(buf), 0);
    if (got <= 0) break;
    pending.append(buf, size_t(got));
    size_t nl;
    while ((nl = pending.find('\n')) != std::string::npos) {
      std::string line = pending.substr(0, nl);
      pending.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::string response = handle_request_line(*snap_, line);
      response += '\n';
      size_t sent = 0;
      while (sent < response.size()) {
        ssize_t s = ::send(fd, response.data() + sent, response.size() - sent, MSG_NOSIGNAL);
        if (s <= 0) return;
        sent += size_t(s);
      }
    }
  }
}

void RankServer::stop() {
  if (!running_.exchange(false)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lk(mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (std::thread& t : workers)
    if (t.joinable()) t.join();
  {
    std::lock_guard<std::mutex> lk(mu_);
    for (int fd : conn_fds_) ::close(fd);
    conn_fds_.clear();
  }
}

static std::atomic<bool> g_stop_requested{false};
static void stop_signal_handler(int) { g_stop_requested.store(true); }

void serve_blocking(std::shared_ptr<const ServeSnapshot> snap, const std::string& host,
                    uint16_t port) {
  g_stop_requested.store(false);
  struct sigaction sa{};
  sa.sa_handler = stop_signal_handler;
  ::sigaction(SIGINT, &sa, nullptr);
  ::sigaction(SIGTERM, &sa, nullptr);

  uint64_t n_items = snap->store.meta().count;
  RankServer server(std::move(snap));
  uint16_t bound = server.start(host, port);
  std::fprintf(stderr, "serving on %s:%u (%llu items)\n", host.c_str(), unsigned(bound),
               static_cast<unsigned long long>(n_items));
  while (!g_stop_requested.load()) {
    struct timespec ts{0, 100 * 1000 * 1000};
    ::nanosleep(&ts, nullptr);
  }
  server.stop();
}

// ---- benchmark ----

BenchReport latency_bench(const Store& store, const FusionModel& model,
                          const Backbone& backbone, const Corpus& corpus,
                          const std::vector<UserData>& users, uint64_t n_queries) {
  require(n_queries >= 30, ErrorCode::stats,
          "need at least 30 queries for latency statistics, got " + std::to_string(n_queries));
  const ModelConfig& cfg = model.config();

  // queries: pre-test history (trailing h_max) per user, cycling over users
  std::vector<std::vector<size_t>> histories;
  for (const UserData& u : users) {
    std::vector<size_t> h = u.train_items;
    if (u.val_item != SIZE_MAX) h.push_back(u.val_item);
    if (h.empty()) continue;
    if (h.size() > cfg.h_max) h.erase(h.begin(), h.end() - long(cfg.h_max));
    histories.push_back(std::move(h));
  }
  require(!histories.empty(), ErrorCode::input, "no users with history");

  MatF all(store.meta().count, store.meta().d_z);
  for (size_t i = 0; i < all.rows; ++i) {
    const float* z = store.z_ptr(i);
    std::copy(z, z + all.cols, all.row(i));
  }

  auto run_store_path = [&](const std::vector<size_t>& hist) {
    std::vector<std::string> ids;
    ids.reserve(hist.size());
    for (size_t idx : hist) ids.push_back(corpus.videos[idx].item_id);
    std::vector<StoreRecord> recs = store.batch_get(ids);
    std::vector<const float*> hz;
    hz.reserve(recs.size());
    for (const StoreRecord& r : recs) hz.push_back(r.z.data());
    std::vector<double> u = encode_user(model, hz);
    return score_and_rank(u, store.ids(), all, 10);
  };

  auto run_direct_path = [&](const std::vector<size_t>& hist) {
    std::vector<std::vector<float>> zs;
    zs.reserve(hist.size());
    for (size_t idx : hist) {
      TokenSequence z = backbone.tokenize(corpus.videos[idx], cfg.prompt_tokens);
      LayerStates states = backbone.forward_collect(z, cfg.n_new);
      zs.push_back(embed_item(model, prepare_item_features(states, cfg)).z);
    }
    std::vector<const float*> hz;
    hz.reserve(zs.size());
    for (const auto& z : zs) hz.push_back(z.data());
    std::vector<double> u = encode_user(model, hz);
    return score_and_rank(u, store.ids(), all, 10);
  };

  // warm both paths
  (void)run_store_path(histories[0]);
  (void)run_direct_path(histories[0]);

  std::vector<double> store_us, direct_us;
  store_us.reserve(n_queries);
  direct_us.reserve(n_queries);
  bool identical = true;
  using clock = std::chrono::steady_clock;
  for (uint64_t q = 0; q < n_queries; ++q) {
    const std::vector<size_t>& hist = histories[q % histories.size()];

    auto t0 = clock::now();
    std::vector<ScoredItem> a = run_store_path(hist);
    auto t1 = clock::now();
    std::vector<ScoredItem> b = run_direct_path(hist);
    auto t2 = clock::now();

    store_us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    direct_us.push_back(std::chrono::duration<double, std::micro>(t2 - t1).count());
    if (a.size() != b.size()) identical = false;
    for (size_t i = 0; identical && i < a.size(); ++i)
      if (a[i].id != b[i].id || a[i].score != b[i].score) identical = false;
  }

  std::sort(store_us.begin(), store_us.end());
  std::sort(direct_us.begin(), direct_us.end());
  BenchReport report;
  report.rows.push_back(BenchRow{"store", percentile_nearest_rank(store_us, 50),
                                 percentile_nearest_rank(store_us, 95),
                                 percentile_nearest_rank(store_us, 99), n_queries});
  report.rows.push_back(BenchRow{"direct", percentile_nearest_rank(direct_us, 50),
                                 percentile_nearest_rank(direct_us, 95),
                                 percentile_nearest_rank(direct_us, 99), n_queries});
  report.p50_ratio = report.rows[1].p50_us / report.rows[0].p50_us;
  report.top10_identical = identical;
  return report;
}

std::string bench_report_csv(const BenchReport& report) {
  std::string csv = "path,p50_us,p95_us,p99_us,n\n";
  for (const BenchRow& r : report.rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.3f,%.3f,%.3f,%llu\n", r.path.c_str(), r.p50_us,
                  r.p95_us, r.p99_us, static_cast<unsigned long long>(r.n));
    csv += buf;
  }
  return csv;
}

}  // namespace linkedout
