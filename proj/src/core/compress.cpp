// SPDX-License-Identifier: Apache-2.0
#include "core/compress.hpp"

#include <algorithm>
#include <cmath>

namespace linkedout {

SizedTokens token_merge_pass(const SizedTokens& input, uint64_t r) {
  size_t n = input.tokens.rows;
  if (r == 0) return input;
  size_t n_a = (n + 1) / 2;  // even positions
  require(r <= n_a && n - r >= 1, ErrorCode::config,
          "merge r = " + std::to_string(r) + " too large for " + std::to_string(n) + " tokens");

  size_t d = input.tokens.cols;
  auto cosine = [&](size_t i, size_t j) {
    const double* a = input.tokens.row(i);
    const double* b = input.tokens.row(j);
    double dot = 0, na = 0, nb = 0;
    for (size_t t = 0; t < d; ++t) {
      dot += a[t] * b[t];
      na += a[t] * a[t];
      nb += b[t] * b[t];
    }
    if (na == 0.0 || nb == 0.0) return -2.0;  // never preferred
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  struct Pair {
    double sim;
    size_t a, b;
  };
  std::vector<Pair> pairs;
  for (size_t a = 0; a < n; a += 2) {
    double best_sim = -3.0;
    size_t best_b = 0;
    bool found = false;
    for (size_t b = 1; b < n; b += 2) {
      double s = cosine(a, b);
      if (!found || s > best_sim) {
        best_sim = s;
        best_b = b;
        found = true;
      }
    }
    if (found) pairs.push_back({best_sim, a, best_b});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    if (x.sim != y.sim) return x.sim > y.sim;
    return x.a < y.a;
  });
  pairs.resize(r);

  SizedTokens out = input;
  std::vector<bool> removed(n, false);
  for (const Pair& p : pairs) {
    double sa = out.sizes[p.a], sb = out.sizes[p.b];
    double* va = out.tokens.row(p.a);
    double* vb = out.tokens.row(p.b);
    double inv = 1.0 / (sa + sb);
    for (size_t t = 0; t < d; ++t) vb[t] = (sa * va[t] + sb * vb[t]) * inv;
    out.sizes[p.b] = sa + sb;
    removed[p.a] = true;
  }

  SizedTokens compact;
  compact.tokens = MatD(n - r, d);
  compact.sizes.reserve(n - r);
  size_t w = 0;
  for (size_t i = 0; i < n; ++i) {
    if (removed[i]) continue;
    std::copy(out.tokens.row(i), out.tokens.row(i) + d, compact.tokens.row(w));
    compact.sizes.push_back(out.sizes[i]);
    ++w;
  }
  return compact;
}

MatD token_merge(const MatD& tokens, const MergeConfig& config) {
  require(tokens.rows >= 1, ErrorCode::input, "token_merge: no tokens");
  require(config.r * config.passes < tokens.rows, ErrorCode::config,
          "merge removes " + std::to_string(config.r * config.passes) + " of " +
              std::to_string(tokens.rows) + " tokens; at least one must remain");
  SizedTokens cur{tokens, std::vector<double>(tokens.rows, 1.0)};
  for (uint64_t p = 0; p < config.passes; ++p) cur = token_merge_pass(cur, config.r);
  return cur.tokens;
}

MatD attention_pool(const MatD& tokens, const MatD& queries) {
  require(tokens.rows >= 1, ErrorCode::input, "attention_pool: empty token set");
  require(tokens.cols == queries.cols, ErrorCode::shape,
          "attention_pool: token / query widths differ");
  ad::Tape tape;
  ad::NodeId q = tape.leaf(queries);
  ad::NodeId t = tape.leaf(tokens);
  return tape.val(attention_pool_node(tape, q, t));
}

ad::NodeId attention_pool_node(ad::Tape& tape, ad::NodeId queries, ad::NodeId tokens) {
  const MatD& t = tape.val(tokens);
  require(t.rows >= 1, ErrorCode::input, "attention_pool: empty token set");
  ad::NodeId scores = tape.scale(tape.matmul_nt(queries, tokens), 1.0 / std::sqrt(double(t.cols)));
  ad::NodeId weights = tape.row_softmax(scores);
  return tape.matmul(weights, tokens);
}

static ad::NodeId branch_node(ad::Tape& tape, ad::NodeId queries, ad::NodeId tokens,
                              ad::NodeId proj_w, ad::NodeId proj_b) {
  ad::NodeId pooled = attention_pool_node(tape, queries, tokens);
  const MatD& p = tape.val(pooled);
  ad::NodeId flat = tape.reshape(pooled, 1, p.rows * p.cols);
  return tape.add_row(tape.matmul(flat, proj_w), proj_b);
}

ad::NodeId compress_layer_node(ad::Tape& tape, const StagedModel& staged,
                               const TapTensors& tap, const MatD& old_merged,
                               const MatD& new_tokens) {
  require(old_merged.rows >= 1, ErrorCode::input, "compress_layer: no old tokens");
  ad::NodeId old_leaf = tape.leaf(old_merged);
  ad::NodeId old_half =
      branch_node(tape, staged.id(tap.old_q), old_leaf, staged.id(tap.old_w), staged.id(tap.old_b));
  ad::NodeId new_tokens_node =
      new_tokens.rows == 0 ? staged.id(tap.empty_new) : tape.leaf(new_tokens);
  ad::NodeId new_half = branch_node(tape, staged.id(tap.new_q), new_tokens_node,
                                    staged.id(tap.new_w), staged.id(tap.new_b));
  return tape.concat_cols({old_half, new_half});
}

MatD compress_layer(const FusionModel& model, size_t tap_index, const MatD& old_tokens,
                    const MatD& new_tokens, const MergeConfig& merge) {
  require(model.config().mode == FusionMode::full, ErrorCode::input,
          "compress_layer requires the full fusion mode");
  require(tap_index < model.config().n_taps, ErrorCode::input, "tap index out of range");
  MatD merged = token_merge(old_tokens, merge);
  ad::Tape tape;
  StagedModel staged = stage_model(tape, model);
  ad::NodeId e =
      compress_layer_node(tape, staged, model.index().taps[tap_index], merged, new_tokens);
  return tape.val(e);
}

ItemFeatures prepare_item_features(const LayerStates& states, const ModelConfig& cfg) {
  states.validate();
  require(states.old_count >= 1, ErrorCode::input, "item has no old tokens");
  require(states.taps.size() == cfg.n_taps, ErrorCode::shape,
          "states have " + std::to_string(states.taps.size()) + " taps, model expects " +
              std::to_string(cfg.n_taps));

  ItemFeatures feats;
  size_t n_old = states.old_count, n_new = states.new_count;
  size_t d = states.taps.front().states.cols;
  require(d == cfg.d, ErrorCode::shape, "state width differs from model width");

  switch (cfg.mode) {
    case FusionMode::full: {
      feats.old_merged.reserve(cfg.n_taps);
      feats.new_tokens.reserve(cfg.n_taps);
      for (const LayerTap& tap : states.taps) {
        MatD old_tokens(n_old, d);
        for (size_t i = 0; i < n_old; ++i)
          for (size_t j = 0; j < d; ++j) old_tokens(i, j) = double(tap.states(i, j));
        feats.old_merged.push_back(token_merge(old_tokens, cfg.merge));
        MatD new_tokens(n_new, d);
        for (size_t i = 0; i < n_new; ++i)
          for (size_t j = 0; j < d; ++j) new_tokens(i, j) = double(tap.states(n_old + i, j));
        feats.new_tokens.push_back(std::move(new_tokens));
      }
      break;
    }
    case FusionMode::last_token_moe: {
      for (const LayerTap& tap : states.taps) {
        MatD v(1, d);
        size_t last = tap.states.rows - 1;
        for (size_t j = 0; j < d; ++j) v(0, j) = double(tap.states(last, j));
        feats.tap_vec.push_back(std::move(v));
      }
      break;
    }
    case FusionMode::mean_pool_moe: {
      for (const LayerTap& tap : states.taps) {
        MatD v(1, d);
        for (size_t i = 0; i < tap.states.rows; ++i)
          for (size_t j = 0; j < d; ++j) v(0, j) += double(tap.states(i, j));
        for (size_t j = 0; j < d; ++j) v(0, j) /= double(tap.states.rows);
        feats.tap_vec.push_back(std::move(v));
      }
      break;
    }
    case FusionMode::last_layer_last_token: {
      const LayerTap& tap = states.taps.back();
      MatD v(1, d);
      size_t last = tap.states.rows - 1;
      for (size_t j = 0; j < d; ++j) v(0, j) = double(tap.states(last, j));
      feats.tap_vec.push_back(std::move(v));
      break;
    }
  }
  return feats;
}

}  // namespace linkedout
