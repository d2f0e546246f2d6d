// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "core/backbone.hpp"
#include "core/config.hpp"
#include "core/mat.hpp"
#include "core/model.hpp"
#include "core/tape.hpp"

namespace linkedout {

// One bipartite soft-matching pass: tokens at even positions (set A) merge
// into their most-cosine-similar odd-position token (set B); the r best
// pairs are averaged with size weights. Sizes track merge multiplicity
// across passes.
struct SizedTokens {
  MatD tokens;
  std::vector<double> sizes;
};

SizedTokens token_merge_pass(const SizedTokens& input, uint64_t r);
MatD token_merge(const MatD& tokens, const MergeConfig& config);

// softmax(q . token / sqrt(d)) pooling; one output row per query
MatD attention_pool(const MatD& tokens, const MatD& queries);

// Per-item constants consumed by the trainable stack. For the full mode this
// is the merged old branch and the raw new branch per tap; for the other
// modes a single d-vector per tap.
struct ItemFeatures {
  std::vector<MatD> old_merged;
  std::vector<MatD> new_tokens;  // zero rows when nothing was generated
  std::vector<MatD> tap_vec;     // last-token / mean-pool / deepest-last variants
};

ItemFeatures prepare_item_features(const LayerStates& states, const ModelConfig& cfg);

// Tape builders -------------------------------------------------------------

// pooled = softmax(Q T^T / sqrt(d)) T, as an m x d node
ad::NodeId attention_pool_node(ad::Tape& tape, ad::NodeId queries, ad::NodeId tokens);

// e = concat(old_proj(flatten(pool(merged_old))), new_proj(flatten(pool(new))))
// An empty new branch substitutes the learned empty_new token.
ad::NodeId compress_layer_node(ad::Tape& tape, const StagedModel& staged,
                               const TapTensors& tap, const MatD& old_merged,
                               const MatD& new_tokens);

// Plain single-tap evaluation: merge, pool and project one layer's tokens.
MatD compress_layer(const FusionModel& model, size_t tap_index, const MatD& old_tokens,
                    const MatD& new_tokens, const MergeConfig& merge);

}  // namespace linkedout
