// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/corpus.hpp"
#include "core/mat.hpp"

namespace linkedout {

struct TokenSpan {
  std::string label;  // "content" or "prompt"
  size_t begin = 0;
  size_t end = 0;
};

// Joint input sequence: embedded content tokens followed by prompt tokens.
struct TokenSequence {
  MatF embedded_tokens;  // n_original x d, embedding-table rows (no position yet)
  std::vector<TokenSpan> source_spans;
  size_t n_original = 0;
  std::vector<uint32_t> token_ids;
};

struct LayerTap {
  uint32_t layer_index = 0;
  MatF states;  // (old_count + new_count) x d
};

struct LayerStates {
  std::vector<LayerTap> taps;  // ascending layer_index, tap 0 first
  uint32_t old_count = 0;
  uint32_t new_count = 0;

  uint32_t token_count() const { return old_count + new_count; }
  void validate() const;
};

// Frozen, seeded decoder-only transformer. Weights are drawn once at init
// from a fan-in-scaled symmetric uniform and never change; every forward is
// bitwise deterministic for a fixed input.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& config);

  const BackboneConfig& config() const { return cfg_; }

  TokenSequence tokenize(const SyntheticVideo& video,
                         const std::vector<uint32_t>& prompt) const;

  // Runs the causal forward pass, greedily decodes n_new tokens (argmax,
  // lowest id on ties), then captures hidden states at every tapped layer
  // for all positions of the final sequence.
  LayerStates forward_collect(const TokenSequence& z, uint64_t n_new) const;

  uint64_t checksum() const;
  uint64_t parameter_count() const;
  std::vector<uint32_t> tap_layers() const;

 private:
  struct Block {
    MatF ln1_g, ln1_b;
    MatF wq, wk, wv, wo;
    MatF bq, bk, bv, bo;
    MatF ln2_g, ln2_b;
    MatF w1, b1, w2, b2;
  };

  // forward over ids; fills taps (when capture) and returns logits of the
  // last position
  std::vector<float> forward(const std::vector<uint32_t>& ids,
                             std::vector<MatF>* taps_out) const;

  BackboneConfig cfg_;
  MatF emb_;   // vocab x d
  MatF pos_;   // max_seq x d
  std::vector<Block> blocks_;
  MatF lnf_g_, lnf_b_;
  MatF head_w_;  // d x vocab
  MatF head_b_;  // 1 x vocab
};

}  // namespace linkedout
