// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "linkedout.h"

namespace fs = std::filesystem;

namespace {

// small end-to-end configuration so the C API path stays fast
const char* kMiniConfig = R"(
corpus.n_users = 40
corpus.n_items = 30
corpus.n_topics = 5
corpus.n_textures = 3
corpus.history_min = 5
corpus.history_max = 8
corpus.seed = 11

backbone.n_layers = 4
backbone.d = 16
backbone.n_heads = 2
backbone.vocab_size = 256
backbone.max_seq = 32
backbone.tap_stride = 2
backbone.seed = 12

model.d_c = 8
model.d_z = 8
model.m_queries = 2
model.gate_hidden = 4
model.h_max = 6
model.n_new = 2
model.merge_r = 2
model.merge_passes = 1

train.epochs = 2
train.batch_size = 16
train.n_negatives = 4
train.seed = 13
train.pre_train_grad_check = false
)";

fs::path work_dir() {
  fs::path dir = fs::temp_directory_path() / "lo_capi_tests";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_config(const fs::path& dir) {
  fs::path p = dir / "config.txt";
  std::ofstream out(p);
  out << kMiniConfig;
  return p.string();
}

}  // namespace

TEST_CASE("status names cover the enum") {
  CHECK(std::string(lo_status_name(LO_OK)) == "ok");
  CHECK(std::string(lo_status_name(LO_E_NOT_FOUND)) == "not_found");
  CHECK(std::string(lo_status_name(LO_E_VERSION)) == "version");
}

TEST_CASE("invalid arguments and missing files surface as error codes") {
  char err[256] = {0};
  CHECK(lo_gen_corpus(nullptr, nullptr, -1, nullptr, err, sizeof(err)) == LO_E_INPUT);
  CHECK(err[0] != '\0');
  CHECK(lo_verify_dumps("/nonexistent_lo_dir", nullptr, err, sizeof(err)) == LO_E_IO);
  uint64_t n = 0;
  CHECK(lo_store_verify("/nonexistent_lo_store", nullptr, &n, err, sizeof(err)) == LO_E_IO);
  lo_store* store = nullptr;
  CHECK(lo_store_open("/nonexistent_lo_store", &store, err, sizeof(err)) == LO_E_IO);
  CHECK(store == nullptr);
}

TEST_CASE("full mini pipeline through the C API") {
  fs::path dir = work_dir();
  std::string cfg = write_config(dir);
  std::string corpus = (dir / "corpus").string();
  std::string dumps = (dir / "dumps").string();
  std::string run = (dir / "run").string();
  std::string store = (dir / "store.lnks").string();
  char err[1024] = {0};

  uint64_t n_events = 0;
  REQUIRE(lo_gen_corpus(cfg.c_str(), corpus.c_str(), -1, &n_events, err, sizeof(err)) == LO_OK);
  CHECK(n_events >= 40 * 5);

  uint64_t n_items = 0;
  REQUIRE(lo_extract(cfg.c_str(), corpus.c_str(), dumps.c_str(), &n_items, err, sizeof(err)) ==
          LO_OK);
  CHECK(n_items == 30);

  uint64_t n_checked = 0;
  REQUIRE(lo_verify_dumps(dumps.c_str(), &n_checked, err, sizeof(err)) == LO_OK);
  CHECK(n_checked == 30);

  REQUIRE(lo_train(cfg.c_str(), corpus.c_str(), dumps.c_str(), "full", -1, run.c_str(), err,
                   sizeof(err)) == LO_OK);
  std::string ckpt = run + "/model.ckpt";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(run + "/train_log.csv"));

  uint64_t count = 0;
  REQUIRE(lo_store_build(dumps.c_str(), ckpt.c_str(), store.c_str(), 1, 0, &count, err,
                         sizeof(err)) == LO_OK);
  CHECK(count == 30);
  REQUIRE(lo_store_verify(store.c_str(), ckpt.c_str(), &count, err, sizeof(err)) == LO_OK);

  SUBCASE("store handle lookups") {
    lo_store* handle = nullptr;
    REQUIRE(lo_store_open(store.c_str(), &handle, err, sizeof(err)) == LO_OK);
    uint64_t n = 0;
    CHECK(lo_store_count(handle, &n) == LO_OK);
    CHECK(n == 30);
    uint32_t d_z = 0, n_taps = 0;
    int has_gate = 0;
    CHECK(lo_store_dims(handle, &d_z, &n_taps, &has_gate) == LO_OK);
    CHECK(d_z == 8);
    CHECK(n_taps == 2);
    CHECK(has_gate == 1);

    std::vector<float> z(d_z), gate(n_taps);
    CHECK(lo_store_get(handle, "v00004", z.data(), z.size(), gate.data(), gate.size(), err,
                       sizeof(err)) == LO_OK);
    double gate_sum = 0;
    for (float g : gate) gate_sum += g;
    CHECK(gate_sum == doctest::Approx(1.0).epsilon(1e-5));

    CHECK(lo_store_get(handle, "vmissing", z.data(), z.size(), nullptr, 0, err, sizeof(err)) ==
          LO_E_NOT_FOUND);
    lo_store_close(handle);
  }

  SUBCASE("eval, gate stats and a version-mismatch rejection") {
    std::string eval_csv = (dir / "eval.csv").string();
    REQUIRE(lo_eval(corpus.c_str(), store.c_str(), ckpt.c_str(), nullptr, 0, "test",
                    eval_csv.c_str(), err, sizeof(err)) == LO_OK);
    CHECK(fs::exists(eval_csv));

    std::string gate_csv = (dir / "gate.csv").string();
    std::string item_csv = (dir / "gate_items.csv").string();
    REQUIRE(lo_gate_stats(store.c_str(), gate_csv.c_str(), item_csv.c_str(), err,
                          sizeof(err)) == LO_OK);
    CHECK(fs::exists(gate_csv));
    // per-item export: header plus one row per record
    std::ifstream items(item_csv);
    std::string first_line;
    std::getline(items, first_line);
    CHECK(first_line == "item_id,pi_L0,pi_L2");
    size_t rows = 0;
    for (std::string row; std::getline(items, row);)
      if (!row.empty()) ++rows;
    CHECK(rows == 30);

    // retrain with a different seed: the old store must be rejected
    std::string run2 = (dir / "run2").string();
    REQUIRE(lo_train(cfg.c_str(), corpus.c_str(), dumps.c_str(), "full", 999, run2.c_str(), err,
                     sizeof(err)) == LO_OK);
    std::string ckpt2 = run2 + "/model.ckpt";
    uint64_t unused = 0;
    CHECK(lo_store_verify(store.c_str(), ckpt2.c_str(), &unused, err, sizeof(err)) ==
          LO_E_VERSION);
    CHECK(lo_eval(corpus.c_str(), store.c_str(), ckpt2.c_str(), nullptr, 0, "test", nullptr,
                  err, sizeof(err)) == LO_E_VERSION);
  }

  SUBCASE("in-process server over the C API") {
    lo_server* server = nullptr;
    uint16_t port = 0;
    REQUIRE(lo_server_start(store.c_str(), ckpt.c_str(), "127.0.0.1", 0, &server, &port, err,
                            sizeof(err)) == LO_OK);
    REQUIRE(port != 0);

    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    std::string req = "{\"history\":[\"v00001\"],\"k\":5}\n";
    REQUIRE(::send(fd, req.data(), req.size(), 0) == ssize_t(req.size()));
    char buf[8192];
    std::string got;
    while (got.find('\n') == std::string::npos) {
      ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
      if (n <= 0) break;
      got.append(buf, size_t(n));
    }
    ::close(fd);
    CHECK(got.find("\"items\"") != std::string::npos);
    CHECK(got.find("latency_us") != std::string::npos);
    lo_server_stop(server);
  }
}
