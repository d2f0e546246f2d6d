// SPDX-License-Identifier: Apache-2.0
//
// Pipeline CLI over the shared C API: corpus generation, state extraction,
// training, store management, serving, benchmarking and analysis.

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "linkedout.h"

namespace {

struct Common {
  std::string config;
  int64_t seed = -1;
  std::string out = "out";
};

[[noreturn]] void die(lo_status status, const char* err) {
  std::fprintf(stderr, "error (%s): %s\n", lo_status_name(status), err);
  std::exit(1);
}

char err_buf[1024];

#define CHECK_LO(call)                    \
  do {                                    \
    err_buf[0] = '\0';                    \
    lo_status st = (call);                \
    if (st != LO_OK) die(st, err_buf);    \
  } while (0)

const char* cstr_or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void print_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) return;
  std::cout << in.rdbuf();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layer-fused video recommendation pipeline"};
  app.require_subcommand(1);

  Common common;
  app.add_option("--config", common.config, "key = value config file")->envname("LINKEDOUT_CONFIG");
  app.add_option("--seed", common.seed, "seed override");
  app.add_option("--out", common.out, "output directory");

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a seeded synthetic corpus");
  // extract
  auto* extract = app.add_subcommand("extract", "run the backbone and dump layer states");
  std::string corpus_dir = "out/corpus", dumps_dir = "out/dumps";
  extract->add_option("--corpus", corpus_dir, "corpus directory");
  // dump-verify
  auto* dump_verify = app.add_subcommand("dump-verify", "validate a directory of layer dumps");
  dump_verify->add_option("--dumps", dumps_dir, "dumps directory");
  // train
  auto* train = app.add_subcommand("train", "train the fusion stack and ranker");
  std::string mode;
  train->add_option("--corpus", corpus_dir, "corpus directory");
  train->add_option("--dumps", dumps_dir, "dumps directory");
  train->add_option("--mode", mode,
                    "full | last_token_moe | mean_pool_moe | last_layer_last_token");
  // store-build
  auto* store_build = app.add_subcommand("store-build", "embed the catalog into a store");
  std::string checkpoint = "out/model.ckpt", store_path = "out/store.lnks";
  bool no_gate = false, with_per_layer = false;
  store_build->add_option("--dumps", dumps_dir, "dumps directory");
  store_build->add_option("--checkpoint", checkpoint, "model checkpoint");
  store_build->add_option("--store", store_path, "output store path");
  store_build->add_flag("--no-gate", no_gate, "do not persist gate weights");
  store_build->add_flag("--per-layer", with_per_layer, "persist per-layer features");
  // store-get
  auto* store_get = app.add_subcommand("store-get", "print one stored record");
  std::string item_id;
  store_get->add_option("--store", store_path, "store path");
  store_get->add_option("--id", item_id, "item id")->required();
  // store-verify
  auto* store_verify = app.add_subcommand("store-verify", "validate a store");
  store_verify->add_option("--store", store_path, "store path");
  store_verify->add_option("--checkpoint", checkpoint, "checkpoint to match against");
  bool no_checkpoint = false;
  store_verify->add_flag("--structural-only", no_checkpoint, "skip the checkpoint match");
  // serve
  auto* serve = app.add_subcommand("serve", "line-delimited JSON ranking service");
  std::string bind = "127.0.0.1:7878";
  serve->add_option("--store", store_path, "store path");
  serve->add_option("--checkpoint", checkpoint, "model checkpoint");
  serve->add_option("--bind", bind, "host:port");
  // bench
  auto* bench = app.add_subcommand("bench", "store vs direct-recompute latency");
  uint64_t n_queries = 1000;
  std::string paths = "store,direct";
  bench->add_option("--corpus", corpus_dir, "corpus directory");
  bench->add_option("--store", store_path, "store path");
  bench->add_option("--checkpoint", checkpoint, "model checkpoint");
  bench->add_option("--queries", n_queries, "number of queries");
  bench->add_option("--paths", paths, "paths to compare (store,direct)");
  // eval
  auto* eval = app.add_subcommand("eval", "leave-one-out ranking metrics");
  std::string ks = "10,20", target = "test";
  eval->add_option("--corpus", corpus_dir, "corpus directory");
  eval->add_option("--store", store_path, "store path");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint");
  eval->add_option("--ks", ks, "comma-separated cutoffs");
  eval->add_option("--target", target, "test | val");
  // gate-stats
  auto* gstats = app.add_subcommand("gate-stats", "per-layer gate weight statistics");
  bool per_item = false;
  gstats->add_option("--store", store_path, "store path");
  gstats->add_flag("--per-item", per_item, "also write per-item gate weight rows");
  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and evaluate fusion mode variants");
  std::string modes = "full,last_token_moe,mean_pool_moe,last_layer_last_token";
  std::string seeds = "42,43,44";
  ablate->add_option("--corpus", corpus_dir, "corpus directory");
  ablate->add_option("--dumps", dumps_dir, "dumps directory");
  ablate->add_option("--modes", modes, "comma-separated fusion modes");
  ablate->add_option("--seeds", seeds, "comma-separated seeds");

  CLI11_PARSE(app, argc, argv);

  const char* cfg = cstr_or_null(common.config);

  if (gen->parsed()) {
    uint64_t n_events = 0;
    std::string dir = common.out + "/corpus";
    CHECK_LO(lo_gen_corpus(cfg, dir.c_str(), common.seed, &n_events, err_buf, sizeof(err_buf)));
    std::printf("corpus written to %s (%llu events)\n", dir.c_str(),
                static_cast<unsigned long long>(n_events));
  } else if (extract->parsed()) {
    uint64_t n_items = 0;
    std::string dir = common.out + "/dumps";
    CHECK_LO(lo_extract(cfg, corpus_dir.c_str(), dir.c_str(), &n_items, err_buf,
                        sizeof(err_buf)));
    std::printf("extracted %llu items into %s\n", static_cast<unsigned long long>(n_items),
                dir.c_str());
  } else if (dump_verify->parsed()) {
    uint64_t n = 0;
    CHECK_LO(lo_verify_dumps(dumps_dir.c_str(), &n, err_buf, sizeof(err_buf)));
    std::printf("%llu dumps verified\n", static_cast<unsigned long long>(n));
  } else if (train->parsed()) {
    CHECK_LO(lo_train(cfg, corpus_dir.c_str(), dumps_dir.c_str(), cstr_or_null(mode),
                      common.seed, common.out.c_str(), err_buf, sizeof(err_buf)));
    std::printf("checkpoint written to %s/model.ckpt\n", common.out.c_str());
    print_file(common.out + "/train_log.csv");
  } else if (store_build->parsed()) {
    uint64_t count = 0;
    CHECK_LO(lo_store_build(dumps_dir.c_str(), checkpoint.c_str(), store_path.c_str(),
                            no_gate ? 0 : 1, with_per_layer ? 1 : 0, &count, err_buf,
                            sizeof(err_buf)));
    std::printf("store written to %s (%llu records)\n", store_path.c_str(),
                static_cast<unsigned long long>(count));
  } else if (store_get->parsed()) {
    lo_store* store = nullptr;
    CHECK_LO(lo_store_open(store_path.c_str(), &store, err_buf, sizeof(err_buf)));
    uint32_t d_z = 0, n_taps = 0;
    int has_gate = 0;
    lo_store_dims(store, &d_z, &n_taps, &has_gate);
    std::vector<float> z(d_z), gate(n_taps);
    CHECK_LO(lo_store_get(store, item_id.c_str(), z.data(), z.size(),
                          has_gate ? gate.data() : nullptr, gate.size(), err_buf,
                          sizeof(err_buf)));
    std::printf("%s z:", item_id.c_str());
    for (float v : z) std::printf(" %.9g", double(v));
    if (has_gate) {
      std::printf("\n%s gate:", item_id.c_str());
      for (float v : gate) std::printf(" %.9g", double(v));
    }
    std::printf("\n");
    lo_store_close(store);
  } else if (store_verify->parsed()) {
    uint64_t count = 0;
    CHECK_LO(lo_store_verify(store_path.c_str(),
                             no_checkpoint ? nullptr : checkpoint.c_str(), &count, err_buf,
                             sizeof(err_buf)));
    std::printf("store ok (%llu records)\n", static_cast<unsigned long long>(count));
  } else if (serve->parsed()) {
    CHECK_LO(lo_serve(store_path.c_str(), checkpoint.c_str(), bind.c_str(), err_buf,
                      sizeof(err_buf)));
  } else if (bench->parsed()) {
    if (paths != "store,direct" && paths != "direct,store") {
      std::fprintf(stderr, "only the store,direct path pair is supported\n");
      return 1;
    }
    double ratio = 0;
    int identical = 0;
    std::string out_csv = common.out + "/bench.csv";
    CHECK_LO(lo_bench(cfg, corpus_dir.c_str(), store_path.c_str(), checkpoint.c_str(),
                      n_queries, out_csv.c_str(), &ratio, &identical, err_buf,
                      sizeof(err_buf)));
    print_file(out_csv);
    std::printf("p50 direct/store ratio: %.1f, top-10 identical: %s\n", ratio,
                identical ? "yes" : "no");
  } else if (eval->parsed()) {
    std::vector<uint32_t> kvec;
    std::istringstream ss(ks);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) kvec.push_back(uint32_t(std::stoul(tok)));
    std::string out_csv = common.out + "/eval.csv";
    CHECK_LO(lo_eval(corpus_dir.c_str(), store_path.c_str(), checkpoint.c_str(), kvec.data(),
                     kvec.size(), target.c_str(), out_csv.c_str(), err_buf, sizeof(err_buf)));
    // console table: one metric row in HR@K... NDCG@K... order
    std::ifstream in(out_csv);
    std::string line, head, row;
    std::getline(in, line);  // header
    std::vector<std::array<std::string, 3>> cells;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::array<std::string, 3> c;
      std::getline(ls, c[0], ',');
      std::getline(ls, c[1], ',');
      std::getline(ls, c[2], ',');
      cells.push_back(c);
    }
    for (auto& c : cells) {
      head += "HR@" + c[0] + "      ";
      row += c[1] + "  ";
    }
    for (auto& c : cells) {
      head += "NDCG@" + c[0] + "    ";
      row += c[2] + "  ";
    }
    std::printf("%s\n%s\n(csv: %s)\n", head.c_str(), row.c_str(), out_csv.c_str());
  } else if (gstats->parsed()) {
    std::string out_csv = common.out + "/gate_stats.csv";
    std::string item_csv = common.out + "/gate_weights.csv";
    CHECK_LO(lo_gate_stats(store_path.c_str(), out_csv.c_str(),
                           per_item ? item_csv.c_str() : nullptr, err_buf, sizeof(err_buf)));
    print_file(out_csv);
    if (per_item) std::printf("per-item gate weights written to %s\n", item_csv.c_str());
  } else if (ablate->parsed()) {
    CHECK_LO(lo_ablate(cfg, corpus_dir.c_str(), dumps_dir.c_str(), modes.c_str(), seeds.c_str(),
                       common.out.c_str(), err_buf, sizeof(err_buf)));
    print_file(common.out + "/ablation.csv");
  }
  return 0;
}
