// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "core/compress.hpp"
#include "core/model.hpp"

namespace linkedout {

// Tape builders -------------------------------------------------------------

// h = W2 tanh(W1 e + b1) + b2 + shortcut(e); identity shortcut when d_c == d_z
ad::NodeId expert_node(ad::Tape& tape, const StagedModel& staged, const TapTensors& tap,
                       ad::NodeId e);

// z = sum_l pi_l h_l
ad::NodeId fuse_node(ad::Tape& tape, ad::NodeId pi, const std::vector<ad::NodeId>& hs);

struct EmbedNodes {
  ad::NodeId z = -1;
  ad::NodeId gate = -1;                      // -1 when the mode has no gate
  std::vector<ad::NodeId> layer_features;    // e per tap, for MoE modes
};

// Full trainable stack over precomputed per-item features.
EmbedNodes embed_item_node(ad::Tape& tape, const StagedModel& staged, const FusionModel& model,
                           const ItemFeatures& feats);

// Plain surfaces ------------------------------------------------------------

MatD expert_forward(const FusionModel& model, size_t tap_index, const MatD& e);
MatD gate_forward(const FusionModel& model, const std::vector<MatD>& hs);
MatD fuse(const std::vector<MatD>& hs, const MatD& pi);

struct ItemEmbedding {
  std::vector<float> z;                       // d_z, rounded to storage precision
  std::optional<std::vector<float>> gate;     // tap weights when the mode has a gate
};

ItemEmbedding embed_item(const FusionModel& model, const LayerStates& states);
ItemEmbedding embed_item(const FusionModel& model, const ItemFeatures& feats);

}  // namespace linkedout
