// SPDX-License-Identifier: Apache-2.0
#include "core/pipeline.hpp"

#include <algorithm>
#include <cstdio>

#include "core/backbone.hpp"
#include "core/layer_dump.hpp"

namespace linkedout {

GenCorpusResult pipeline_gen_corpus(const KvConfig& kv, const std::filesystem::path& out_dir,
                                    std::optional<uint64_t> seed_override) {
  CorpusConfig cfg = CorpusConfig::from(kv);
  if (seed_override) cfg.seed = *seed_override;
  cfg.validate(true);
  Corpus corpus = generate_corpus(cfg);
  corpus.log = split_leave_one_out(std::move(corpus.log));
  save_corpus(corpus, out_dir);
  return GenCorpusResult{cfg.n_items, cfg.n_users, corpus.log.events.size()};
}

uint64_t pipeline_extract(const KvConfig& kv, const std::filesystem::path& corpus_dir,
                          const std::filesystem::path& dumps_dir) {
  BackboneConfig bb = BackboneConfig::from(kv);
  ModelConfig mc = ModelConfig::from(kv, bb);
  Corpus corpus = load_corpus(corpus_dir);
  Backbone backbone(bb);
  std::filesystem::create_directories(dumps_dir);

  parallel_chunks(corpus.videos.size(), 16, [&](size_t, size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      const SyntheticVideo& video = corpus.videos[i];
      TokenSequence z = backbone.tokenize(video, mc.prompt_tokens);
      LayerStates states = backbone.forward_collect(z, mc.n_new);
      write_dump(states, video.item_id, uint32_t(bb.tap_stride),
                 dumps_dir / (video.item_id + ".lnkd"));
    }
  });
  return corpus.videos.size();
}

static std::vector<std::filesystem::path> list_dumps(const std::filesystem::path& dumps_dir) {
  std::vector<std::filesystem::path> paths;
  require(std::filesystem::is_directory(dumps_dir), ErrorCode::io,
          dumps_dir.string() + " is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(dumps_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".lnkd")
      paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  require(!paths.empty(), ErrorCode::io, "no .lnkd dumps in " + dumps_dir.string());
  return paths;
}

uint64_t pipeline_verify_dumps(const std::filesystem::path& dumps_dir) {
  std::vector<std::filesystem::path> paths = list_dumps(dumps_dir);
  parallel_chunks(paths.size(), 32, [&](size_t, size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      LayerDump dump = read_dump(paths[i]);
      require(paths[i].stem() == dump.item_id, ErrorCode::format,
              paths[i].string() + ": file name does not match item id " + dump.item_id);
    }
  });
  return paths.size();
}

// Dumps for the corpus catalog, in item order.
static std::vector<LayerStates> load_states(const Corpus& corpus,
                                            const std::filesystem::path& dumps_dir) {
  std::vector<LayerStates> states(corpus.videos.size());
  parallel_chunks(corpus.videos.size(), 16, [&](size_t, size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      const std::string& id = corpus.videos[i].item_id;
      LayerDump dump = read_dump(dumps_dir / (id + ".lnkd"));
      require(dump.item_id == id, ErrorCode::format, "dump id mismatch for " + id);
      states[i] = std::move(dump.states);
    }
  });
  return states;
}

static std::vector<ItemFeatures> features_for(const std::vector<LayerStates>& states,
                                              const ModelConfig& cfg) {
  std::vector<ItemFeatures> features(states.size());
  parallel_chunks(states.size(), 16, [&](size_t, size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) features[i] = prepare_item_features(states[i], cfg);
  });
  return features;
}

std::string train_log_csv(const TrainResult& result) {
  std::string csv = "epoch,align,uniform,rec,total,val_hr10\n";
  for (const EpochRow& row : result.history) {
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%llu,%.8f,%.8f,%.8f,%.8f,%.6f\n",
                  static_cast<unsigned long long>(row.epoch), row.loss.align, row.loss.uniform,
                  row.loss.rec, row.loss.total, row.val_hr10);
    csv += buf;
  }
  return csv;
}

TrainPipelineResult pipeline_train(const KvConfig& kv, const std::filesystem::path& corpus_dir,
                                   const std::filesystem::path& dumps_dir,
                                   const std::string& mode_name,
                                   std::optional<uint64_t> seed_override,
                                   const std::filesystem::path& out_dir) {
  BackboneConfig bb = BackboneConfig::from(kv);
  ModelConfig mc = ModelConfig::from(kv, bb);
  if (!mode_name.empty()) mc.mode = fusion_mode_from_name(mode_name);
  TrainConfig tc = TrainConfig::from(kv);
  if (seed_override) tc.seed = *seed_override;
  CorpusConfig cc = CorpusConfig::from(kv);

  Corpus corpus = load_corpus(corpus_dir);
  std::vector<UserData> users = index_users(corpus.log, corpus.videos);
  std::vector<LayerStates> states = load_states(corpus, dumps_dir);
  std::vector<ItemFeatures> features = features_for(states, mc);
  states.clear();
  states.shrink_to_fit();

  FusionModel model(mc, tc.seed);
  TrainResult result = train(model, features, users, tc);

  std::filesystem::create_directories(out_dir);
  TrainPipelineResult out;
  out.result = result;
  out.checkpoint = out_dir / "model.ckpt";
  out.log_csv = out_dir / "train_log.csv";
  model.save(out.checkpoint, tc, cc.seed);
  atomic_write_text(out.log_csv, train_log_csv(result));
  return out;
}

uint64_t pipeline_store_build(const std::filesystem::path& dumps_dir,
                              const std::filesystem::path& checkpoint,
                              const std::filesystem::path& out_store, bool with_gate,
                              bool with_per_layer) {
  FusionModel::Loaded loaded = FusionModel::load(checkpoint);
  const ModelConfig& mc = loaded.model.config();

  std::vector<std::filesystem::path> paths = list_dumps(dumps_dir);
  StoreBuildInput input;
  input.model_version = loaded.version_hash;
  input.n_taps = uint32_t(mc.n_taps);
  input.tap_stride = uint32_t(mc.tap_stride);
  input.d_c = uint32_t(mc.d_c);
  input.ids.resize(paths.size());
  input.z = MatD(paths.size(), mc.d_z);
  bool gate = with_gate && loaded.model.has_gate();
  if (gate) input.gate = MatD(paths.size(), mc.n_taps);
  if (with_per_layer && loaded.model.has_gate())
    input.per_layer = MatD(paths.size(), mc.n_taps * mc.d_c);

  parallel_chunks(paths.size(), 16, [&](size_t, size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      LayerDump dump = read_dump(paths[i]);
      require(dump.states.taps.size() == mc.n_taps, ErrorCode::version,
              paths[i].string() + ": dump tap count differs from checkpoint model");
      require(dump.states.taps.front().states.cols == mc.d, ErrorCode::version,
              paths[i].string() + ": dump width differs from checkpoint model");
      ItemFeatures feats = prepare_item_features(dump.states, mc);
      ad::Tape tape;
      StagedModel staged = stage_model(tape, loaded.model);
      EmbedNodes nodes = embed_item_node(tape, staged, loaded.model, feats);
      input.ids[i] = dump.item_id;
      const MatD& z = tape.val(nodes.z);
      std::copy(z.v.begin(), z.v.end(), input.z.row(i));
      if (gate) {
        const MatD& g = tape.val(nodes.gate);
        std::copy(g.v.begin(), g.v.end(), input.gate.row(i));
      }
      if (!input.per_layer.empty())
        for (size_t t = 0; t < nodes.layer_features.size(); ++t) {
          const MatD& e = tape.val(nodes.layer_features[t]);
          std::copy(e.v.begin(), e.v.end(), input.per_layer.row(i) + t * mc.d_c);
        }
    }
  });

  for (size_t i = 1; i < input.ids.size(); ++i)
    require(input.ids[i - 1] < input.ids[i], ErrorCode::internal, "dump ids not ascending");
  return write_store(input, out_store);
}

StoreMeta pipeline_store_verify(const std::filesystem::path& store_path,
                                const std::optional<std::filesystem::path>& checkpoint) {
  StoreMeta meta = Store::verify(store_path);
  if (checkpoint) {
    FusionModel::Loaded loaded = FusionModel::load(*checkpoint);
    require(meta.model_version == loaded.version_hash, ErrorCode::version,
            "store was built with a different checkpoint (model_version mismatch)");
    require(meta.d_z == loaded.model.config().d_z, ErrorCode::version,
            "store embedding width differs from checkpoint d_z");
  }
  return meta;
}

// Shared open path: store + checkpoint with version safety.
static std::pair<Store, FusionModel> open_validated(const std::filesystem::path& store_path,
                                                    const std::filesystem::path& checkpoint) {
  Store store = Store::open(store_path);
  FusionModel::Loaded loaded = FusionModel::load(checkpoint);
  require(store.meta().model_version == loaded.version_hash, ErrorCode::version,
          "store/checkpoint version mismatch; rebuild the store");
  require(store.meta().d_z == loaded.model.config().d_z, ErrorCode::version,
          "store embedding width differs from checkpoint d_z");
  return {std::move(store), std::move(loaded.model)};
}

EvalReport pipeline_eval(const std::filesystem::path& corpus_dir,
                         const std::filesystem::path& store_path,
                         const std::filesystem::path& checkpoint,
                         const std::vector<size_t>& ks, EvalTarget target,
                         const std::filesystem::path& out_csv) {
  auto [store, model] = open_validated(store_path, checkpoint);
  Corpus corpus = load_corpus(corpus_dir);
  std::vector<UserData> users = index_users(corpus.log, corpus.videos);

  MatF catalog(corpus.videos.size(), store.meta().d_z);
  for (size_t i = 0; i < corpus.videos.size(); ++i) {
    const float* z = store.z_ptr(corpus.videos[i].item_id);
    std::copy(z, z + catalog.cols, catalog.row(i));
  }

  EvalReport report = evaluate_embeddings(catalog, model, users, target, ks);
  if (!out_csv.empty()) atomic_write_text(out_csv, eval_report_csv(report));
  return report;
}

std::vector<GateLayerStats> pipeline_gate_stats(const std::filesystem::path& store_path,
                                                const std::filesystem::path& out_csv,
                                                const std::filesystem::path& per_item_csv) {
  Store store = Store::open(store_path);
  std::vector<GateLayerStats> stats = gate_stats(store);
  if (!out_csv.empty()) atomic_write_text(out_csv, gate_stats_csv(stats));
  if (!per_item_csv.empty()) atomic_write_text(per_item_csv, gate_weights_csv(store));
  return stats;
}

BenchReport pipeline_bench(const KvConfig& kv, const std::filesystem::path& corpus_dir,
                           const std::filesystem::path& store_path,
                           const std::filesystem::path& checkpoint, uint64_t n_queries,
                           const std::filesystem::path& out_csv) {
  auto [store, model] = open_validated(store_path, checkpoint);
  BackboneConfig bb = BackboneConfig::from(kv);
  require(bb.n_taps() == model.config().n_taps && bb.tap_stride == model.config().tap_stride &&
              bb.d == model.config().d,
          ErrorCode::version, "backbone config does not match checkpoint model");
  Backbone backbone(bb);
  Corpus corpus = load_corpus(corpus_dir);
  std::vector<UserData> users = index_users(corpus.log, corpus.videos);
  BenchReport report = latency_bench(store, model, backbone, corpus, users, n_queries);
  if (!out_csv.empty()) atomic_write_text(out_csv, bench_report_csv(report));
  return report;
}

AblationTable pipeline_ablate(const KvConfig& kv, const std::filesystem::path& corpus_dir,
                              const std::filesystem::path& dumps_dir,
                              const std::vector<FusionMode>& modes,
                              const std::vector<uint64_t>& seeds,
                              const std::filesystem::path& out_dir) {
  require(!modes.empty() && !seeds.empty(), ErrorCode::input,
          "ablation needs at least one mode and one seed");
  BackboneConfig bb = BackboneConfig::from(kv);
  TrainConfig tc_base = TrainConfig::from(kv);
  Corpus corpus = load_corpus(corpus_dir);
  std::vector<UserData> users = index_users(corpus.log, corpus.videos);
  std::vector<LayerStates> states = load_states(corpus, dumps_dir);
  std::filesystem::create_directories(out_dir);

  AblationTable table;
  for (FusionMode mode : modes) {
    ModelConfig mc = ModelConfig::from(kv, bb);
    mc.mode = mode;
    std::vector<ItemFeatures> features = features_for(states, mc);
    double sum_hr10 = 0, sum_ndcg10 = 0, sum_hr20 = 0, sum_ndcg20 = 0;
    for (uint64_t seed : seeds) {
      TrainConfig tc = tc_base;
      tc.seed = seed;
      FusionModel model(mc, seed);
      TrainResult tr = train(model, features, users, tc);

      std::string tag = std::string(fusion_mode_name(mode)) + "_s" + std::to_string(seed);
      std::filesystem::path ckpt = out_dir / ("model_" + tag + ".ckpt");
      model.save(ckpt, tc, CorpusConfig::from(kv).seed);
      atomic_write_text(out_dir / ("train_log_" + tag + ".csv"), train_log_csv(tr));

      // evaluate exactly as serving would: float32 parameters from the
      // checkpoint, float32 item embeddings
      FusionModel::Loaded loaded = FusionModel::load(ckpt);
      CatalogEmbeddings cat = embed_catalog(loaded.model, features);
      MatF catalog = to_float(cat.z);
      EvalReport report =
          evaluate_embeddings(catalog, loaded.model, users, EvalTarget::test, {10, 20});

      AblationRow row;
      row.mode = mode;
      row.seed = seed;
      row.hr10 = report.hr.at(10);
      row.ndcg10 = report.ndcg.at(10);
      row.hr20 = report.hr.at(20);
      row.ndcg20 = report.ndcg.at(20);
      table.rows.push_back(row);
      sum_hr10 += row.hr10;
      sum_ndcg10 += row.ndcg10;
      sum_hr20 += row.hr20;
      sum_ndcg20 += row.ndcg20;
    }
    AblationRow mean;
    mean.mode = mode;
    mean.hr10 = sum_hr10 / double(seeds.size());
    mean.ndcg10 = sum_ndcg10 / double(seeds.size());
    mean.hr20 = sum_hr20 / double(seeds.size());
    mean.ndcg20 = sum_ndcg20 / double(seeds.size());
    table.mean_rows.push_back(mean);
  }
  atomic_write_text(out_dir / "ablation.csv", ablation_csv(table));
  return table;
}

std::string ablation_csv(const AblationTable& table) {
  std::string csv = "mode,seed,hr10,ndcg10,hr20,ndcg20\n";
  auto emit = [&csv](const AblationRow& r, bool mean) {
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f\n", fusion_mode_name(r.mode),
                  mean ? "mean" : std::to_string(r.seed).c_str(), r.hr10, r.ndcg10, r.hr20,
                  r.ndcg20);
    csv += buf;
  };
  for (const AblationRow& r : table.rows) emit(r, false);
  for (const AblationRow& r : table.mean_rows) emit(r, true);
  return csv;
}

void pipeline_serve(const std::filesystem::path& store_path,
                    const std::filesystem::path& checkpoint, const std::string& bind) {
  size_t colon = bind.rfind(':');
  require(colon != std::string::npos, ErrorCode::config,
          "bind address must be host:port, got '" + bind + "'");
  std::string host = bind.substr(0, colon);
  int port = std::stoi(bind.substr(colon + 1));
  require(port >= 0 && port <= 65535, ErrorCode::config, "bad port in '" + bind + "'");

  auto [store, model] = open_validated(store_path, checkpoint);
  auto snap = std::make_shared<const ServeSnapshot>(std::move(store), std::move(model));
  serve_blocking(snap, host, uint16_t(port));
}

}  // namespace linkedout
