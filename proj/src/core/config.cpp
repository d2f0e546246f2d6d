// SPDX-License-Identifier: Apache-2.0
#include "core/config.hpp"

#include <fstream>
#include <sstream>

#include "core/common.hpp"

namespace linkedout {

static std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    require(eq != std::string::npos, ErrorCode::config,
            "config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    require(!key.empty(), ErrorCode::config,
            "config line " + std::to_string(lineno) + ": empty key");
    cfg.kv_[key] = val;
  }
  return cfg;
}

std::string KvConfig::str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

int64_t KvConfig::integer(const std::string& key, int64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    size_t used = 0;
    int64_t v = std::stoll(it->second, &used);
    require(used == it->second.size(), ErrorCode::config, "bad integer for " + key);
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    throw Error(ErrorCode::config, "bad integer for " + key + ": '" + it->second + "'");
  }
}

uint64_t KvConfig::uinteger(const std::string& key, uint64_t fallback) const {
  int64_t v = integer(key, int64_t(fallback));
  require(v >= 0, ErrorCode::config, key + " must be nonnegative");
  return uint64_t(v);
}

double KvConfig::real(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    size_t used = 0;
    double v = std::stod(it->second, &used);
    require(used == it->second.size(), ErrorCode::config, "bad number for " + key);
    return v;
  } catch (const Error&) {
    throw;
  } catch (...) {
    throw Error(ErrorCode::config, "bad number for " + key + ": '" + it->second + "'");
  }
}

bool KvConfig::boolean(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error(ErrorCode::config, "bad boolean for " + key + ": '" + s + "'");
}

// ---- typed configs ----

void CorpusConfig::validate(bool for_split) const {
  require(n_users >= 1, ErrorCode::config, "corpus.n_users must be >= 1");
  require(n_items >= n_topics, ErrorCode::config, "corpus.n_items must be >= corpus.n_topics");
  require(n_topics >= 1 && n_textures >= 1, ErrorCode::config,
          "corpus.n_topics and corpus.n_textures must be >= 1");
  require(history_min >= 2 && history_min <= history_max, ErrorCode::config,
          "corpus history range needs 2 <= min <= max");
  if (for_split)
    require(history_min >= 3, ErrorCode::config,
            "leave-one-out split needs at least 3 interactions per user");
  require(noise_prob >= 0.0 && noise_prob <= 1.0, ErrorCode::config,
          "corpus.noise_prob must be in [0, 1]");
  require(tokens_per_item >= 2, ErrorCode::config, "corpus.tokens_per_item must be >= 2");
  require(texture_boost >= 1.0, ErrorCode::config, "corpus.texture_boost must be >= 1");
}

CorpusConfig CorpusConfig::from(const KvConfig& kv) {
  CorpusConfig c;
  c.n_users = kv.uinteger("corpus.n_users", c.n_users);
  c.n_items = kv.uinteger("corpus.n_items", c.n_items);
  c.n_topics = kv.uinteger("corpus.n_topics", c.n_topics);
  c.n_textures = kv.uinteger("corpus.n_textures", c.n_textures);
  c.history_min = kv.uinteger("corpus.history_min", c.history_min);
  c.history_max = kv.uinteger("corpus.history_max", c.history_max);
  c.seed = kv.uinteger("corpus.seed", c.seed);
  c.tokens_per_item = kv.uinteger("corpus.tokens_per_item", c.tokens_per_item);
  c.noise_prob = kv.real("corpus.noise_prob", c.noise_prob);
  c.texture_boost = kv.real("corpus.texture_boost", c.texture_boost);
  c.validate(false);
  return c;
}

void BackboneConfig::validate() const {
  require(n_heads >= 1 && d % n_heads == 0, ErrorCode::config,
          "backbone.d must be divisible by backbone.n_heads");
  require(n_layers >= 1, ErrorCode::config, "backbone.n_layers must be >= 1");
  require(tap_stride >= 1 && tap_stride <= n_layers, ErrorCode::config,
          "backbone.tap_stride must be in [1, n_layers]");
  require(vocab_size >= 2, ErrorCode::config, "backbone.vocab_size must be >= 2");
  require(max_seq >= 2, ErrorCode::config, "backbone.max_seq must be >= 2");
}

BackboneConfig BackboneConfig::from(const KvConfig& kv) {
  BackboneConfig c;
  c.n_layers = kv.uinteger("backbone.n_layers", c.n_layers);
  c.d = kv.uinteger("backbone.d", c.d);
  c.n_heads = kv.uinteger("backbone.n_heads", c.n_heads);
  c.vocab_size = kv.uinteger("backbone.vocab_size", c.vocab_size);
  c.max_seq = kv.uinteger("backbone.max_seq", c.max_seq);
  c.tap_stride = kv.uinteger("backbone.tap_stride", c.tap_stride);
  c.seed = kv.uinteger("backbone.seed", c.seed);
  c.validate();
  return c;
}

const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::full: return "full";
    case FusionMode::last_token_moe: return "last_token_moe";
    case FusionMode::mean_pool_moe: return "mean_pool_moe";
    case FusionMode::last_layer_last_token: return "last_layer_last_token";
  }
  return "unknown";
}

FusionMode fusion_mode_from_name(const std::string& name) {
  if (name == "full") return FusionMode::full;
  if (name == "last_token_moe") return FusionMode::last_token_moe;
  if (name == "mean_pool_moe") return FusionMode::mean_pool_moe;
  if (name == "last_layer_last_token") return FusionMode::last_layer_last_token;
  throw Error(ErrorCode::config, "unknown fusion mode '" + name + "'");
}

void ModelConfig::validate() const {
  require(d_c >= 2 && d_c % 2 == 0, ErrorCode::config, "model.d_c must be even and >= 2");
  require(m_queries >= 1, ErrorCode::config, "model.m_queries must be >= 1");
  require(d >= 1 && d_z >= 1 && n_taps >= 1, ErrorCode::config, "model dims must be >= 1");
  require(gate_hidden >= 1, ErrorCode::config, "model.gate_hidden must be >= 1");
  require(h_max >= 1, ErrorCode::config, "model.h_max must be >= 1");
}

ModelConfig ModelConfig::from(const KvConfig& kv, const BackboneConfig& bb) {
  ModelConfig c;
  c.d = bb.d;
  c.n_taps = bb.n_taps();
  c.tap_stride = bb.tap_stride;
  c.d_c = kv.uinteger("model.d_c", c.d_c);
  c.d_z = kv.uinteger("model.d_z", c.d_z);
  c.m_queries = kv.uinteger("model.m_queries", c.m_queries);
  c.gate_hidden = kv.uinteger("model.gate_hidden", c.gate_hidden);
  c.h_max = kv.uinteger("model.h_max", c.h_max);
  c.n_new = kv.uinteger("model.n_new", c.n_new);
  c.merge.r = kv.uinteger("model.merge_r", c.merge.r);
  c.merge.passes = kv.uinteger("model.merge_passes", c.merge.passes);
  c.mode = fusion_mode_from_name(kv.str("model.mode", "full"));
  if (kv.has("model.prompt_tokens")) {
    c.prompt_tokens.clear();
    std::istringstream ss(kv.str("model.prompt_tokens", ""));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      c.prompt_tokens.push_back(uint32_t(std::stoul(tok)));
    }
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorCode::config, "train.batch_size must be >= 1");
  require(lr_fusion > 0 && lr_head > 0, ErrorCode::config, "learning rates must be > 0");
  require(weight_decay >= 0, ErrorCode::config, "train.weight_decay must be >= 0");
  require(grad_clip > 0, ErrorCode::config, "train.grad_clip must be > 0");
  require(n_negatives >= 1, ErrorCode::config, "train.n_negatives must be >= 1");
  require(lr_decay_alpha > 0, ErrorCode::config, "train.lr_decay_alpha must be > 0");
  require(lr_decay_gap >= 1, ErrorCode::config, "train.lr_decay_gap must be >= 1");
}

TrainConfig TrainConfig::from(const KvConfig& kv) {
  TrainConfig c;
  c.epochs = kv.uinteger("train.epochs", c.epochs);
  c.batch_size = kv.uinteger("train.batch_size", c.batch_size);
  c.lr_fusion = kv.real("train.lr_fusion", c.lr_fusion);
  c.lr_head = kv.real("train.lr_head", c.lr_head);
  c.weight_decay = kv.real("train.weight_decay", c.weight_decay);
  c.grad_clip = kv.real("train.grad_clip", c.grad_clip);
  c.n_negatives = kv.uinteger("train.n_negatives", c.n_negatives);
  c.lambda_align = kv.real("train.lambda_align", c.lambda_align);
  c.lambda_uniform = kv.real("train.lambda_uniform", c.lambda_uniform);
  c.lambda_rec = kv.real("train.lambda_rec", c.lambda_rec);
  c.seed = kv.uinteger("train.seed", c.seed);
  c.lr_decay_alpha = kv.real("train.lr_decay_alpha", c.lr_decay_alpha);
  c.lr_decay_gap = kv.uinteger("train.lr_decay_gap", c.lr_decay_gap);
  c.pre_train_grad_check = kv.boolean("train.pre_train_grad_check", c.pre_train_grad_check);
  c.validate();
  return c;
}

}  // namespace linkedout
