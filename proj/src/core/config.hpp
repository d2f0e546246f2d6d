// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace linkedout {

// Flat "key = value" text file; '#' starts a comment. Keys are namespaced
// (corpus.n_users, backbone.d, train.epochs, ...). Unknown keys are ignored.
class KvConfig {
 public:
  static KvConfig load(const std::filesystem::path& path);
  static KvConfig parse(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  std::string str(const std::string& key, const std::string& fallback) const;
  int64_t integer(const std::string& key, int64_t fallback) const;
  uint64_t uinteger(const std::string& key, uint64_t fallback) const;
  double real(const std::string& key, double fallback) const;
  bool boolean(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

 private:
  std::map<std::string, std::string> kv_;
};

struct CorpusConfig {
  uint64_t n_users = 5000;
  uint64_t n_items = 2000;
  uint64_t n_topics = 32;
  uint64_t n_textures = 8;
  uint64_t history_min = 5;
  uint64_t history_max = 15;
  uint64_t seed = 42;
  // generator shape knobs
  uint64_t tokens_per_item = 12;    // content tokens per video
  double noise_prob = 0.2;          // share of interactions drawn uniformly
  double texture_boost = 4.0;       // in-topic weight for texture-matching items

  void validate(bool for_split = true) const;
  static CorpusConfig from(const KvConfig& kv);
};

struct BackboneConfig {
  uint64_t n_layers = 12;
  uint64_t d = 64;
  uint64_t n_heads = 4;
  uint64_t vocab_size = 256;
  uint64_t max_seq = 64;
  uint64_t tap_stride = 2;
  uint64_t seed = 101;

  uint64_t n_taps() const { return (n_layers + tap_stride - 1) / tap_stride; }
  void validate() const;
  static BackboneConfig from(const KvConfig& kv);
};

enum class FusionMode {
  full,
  last_token_moe,
  mean_pool_moe,
  last_layer_last_token,
};

const char* fusion_mode_name(FusionMode m);
FusionMode fusion_mode_from_name(const std::string& name);

struct MergeConfig {
  uint64_t r = 4;       // tokens merged per pass
  uint64_t passes = 2;
};

struct ModelConfig {
  uint64_t d = 64;        // backbone width
  uint64_t n_taps = 6;
  uint64_t tap_stride = 2;
  uint64_t d_c = 64;      // compressed layer width (even)
  uint64_t d_z = 64;      // fused embedding width
  uint64_t m_queries = 4; // pooling queries per branch
  uint64_t gate_hidden = 32;
  uint64_t h_max = 10;    // user history capacity
  uint64_t n_new = 4;     // decode budget at extraction time
  MergeConfig merge;
  FusionMode mode = FusionMode::full;
  std::vector<uint32_t> prompt_tokens{250, 251, 252, 253};

  void validate() const;
  static ModelConfig from(const KvConfig& kv, const BackboneConfig& bb);
};

struct TrainConfig {
  uint64_t epochs = 20;
  uint64_t batch_size = 256;
  double lr_fusion = 1e-4;
  double lr_head = 1e-5;
  double weight_decay = 0.1;
  double grad_clip = 5.0;
  uint64_t n_negatives = 64;
  double lambda_align = 1.0;
  double lambda_uniform = 1.0;
  double lambda_rec = 1.0;
  uint64_t seed = 42;
  // step decay at epoch granularity; alpha = 1 keeps the rate constant
  double lr_decay_alpha = 1.0;
  uint64_t lr_decay_gap = 1;
  bool pre_train_grad_check = true;

  void validate() const;
  static TrainConfig from(const KvConfig& kv);
};

}  // namespace linkedout
