// SPDX-License-Identifier: Apache-2.0
#include "core/fusion.hpp"

namespace linkedout {

ad::NodeId expert_node(ad::Tape& tape, const StagedModel& staged, const TapTensors& tap,
                       ad::NodeId e) {
  ad::NodeId hidden = tape.tanh_act(tape.add_row(tape.matmul(e, staged.id(tap.e_w1)),
                                                 staged.id(tap.e_b1)));
  ad::NodeId mlp = tape.add_row(tape.matmul(hidden, staged.id(tap.e_w2)), staged.id(tap.e_b2));
  ad::NodeId shortcut = e;
  if (tap.e_ws >= 0)
    shortcut = tape.add_row(tape.matmul(e, staged.id(tap.e_ws)), staged.id(tap.e_bs));
  return tape.add(mlp, shortcut);
}

static ad::NodeId gate_node_impl(ad::Tape& tape, const StagedModel& staged,
                                 const ModelTensors& idx, const std::vector<ad::NodeId>& hs) {
  ad::NodeId cat = tape.concat_cols(hs);
  ad::NodeId hidden =
      tape.tanh_act(tape.add_row(tape.matmul(cat, staged.id(idx.gate_w1)), staged.id(idx.gate_b1)));
  ad::NodeId logits =
      tape.add_row(tape.matmul(hidden, staged.id(idx.gate_w2)), staged.id(idx.gate_b2));
  return tape.row_softmax(logits);
}

ad::NodeId fuse_node(ad::Tape& tape, ad::NodeId pi, const std::vector<ad::NodeId>& hs) {
  return tape.matmul(pi, tape.stack_rows(hs));
}

EmbedNodes embed_item_node(ad::Tape& tape, const StagedModel& staged, const FusionModel& model,
                           const ItemFeatures& feats) {
  const ModelConfig& cfg = model.config();
  const ModelTensors& idx = model.index();
  EmbedNodes out;

  if (cfg.mode == FusionMode::last_layer_last_token) {
    require(feats.tap_vec.size() == 1, ErrorCode::shape, "expected a single deepest-tap vector");
    ad::NodeId v = tape.leaf(feats.tap_vec[0]);
    out.z = tape.add_row(tape.matmul(v, staged.id(idx.last_w)), staged.id(idx.last_b));
    return out;
  }

  std::vector<ad::NodeId> hs;
  hs.reserve(cfg.n_taps);
  for (size_t t = 0; t < cfg.n_taps; ++t) {
    ad::NodeId e;
    if (cfg.mode == FusionMode::full) {
      e = compress_layer_node(tape, staged, idx.taps[t], feats.old_merged[t],
                              feats.new_tokens[t]);
    } else {
      ad::NodeId v = tape.leaf(feats.tap_vec[t]);
      e = tape.add_row(tape.matmul(v, staged.id(idx.taps[t].feat_w)),
                       staged.id(idx.taps[t].feat_b));
    }
    out.layer_features.push_back(e);
    hs.push_back(expert_node(tape, staged, idx.taps[t], e));
  }

  out.gate = gate_node_impl(tape, staged, idx, hs);
  out.z = fuse_node(tape, out.gate, hs);
  return out;
}

MatD expert_forward(const FusionModel& model, size_t tap_index, const MatD& e) {
  require(tap_index < model.config().n_taps, ErrorCode::input, "tap index out of range");
  require(e.rows == 1 && e.cols == model.config().d_c, ErrorCode::shape,
          "expert input must be 1 x d_c");
  ad::Tape tape;
  StagedModel staged = stage_model(tape, model);
  return tape.val(expert_node(tape, staged, model.index().taps[tap_index], tape.leaf(e)));
}

MatD gate_forward(const FusionModel& model, const std::vector<MatD>& hs) {
  require(model.has_gate(), ErrorCode::input, "mode has no gate");
  require(hs.size() == model.config().n_taps, ErrorCode::shape,
          "gate expects " + std::to_string(model.config().n_taps) + " layer summaries, got " +
              std::to_string(hs.size()));
  ad::Tape tape;
  StagedModel staged = stage_model(tape, model);
  std::vector<ad::NodeId> ids;
  for (const MatD& h : hs) {
    require(h.rows == 1 && h.cols == model.config().d_z, ErrorCode::shape,
            "layer summary must be 1 x d_z");
    ids.push_back(tape.leaf(h));
  }
  return tape.val(gate_node_impl(tape, staged, model.index(), ids));
}

MatD fuse(const std::vector<MatD>& hs, const MatD& pi) {
  require(!hs.empty(), ErrorCode::input, "fuse: no layer summaries");
  require(pi.rows == 1 && pi.cols == hs.size(), ErrorCode::shape,
          "fuse: pi width must equal layer count");
  ad::Tape tape;
  std::vector<ad::NodeId> ids;
  for (const MatD& h : hs) ids.push_back(tape.leaf(h));
  return tape.val(fuse_node(tape, tape.leaf(pi), ids));
}

ItemEmbedding embed_item(const FusionModel& model, const ItemFeatures& feats) {
  ad::Tape tape;
  StagedModel staged = stage_model(tape, model);
  EmbedNodes nodes = embed_item_node(tape, staged, model, feats);
  ItemEmbedding out;
  const MatD& z = tape.val(nodes.z);
  out.z.assign(z.v.begin(), z.v.end());
  if (nodes.gate >= 0) {
    const MatD& g = tape.val(nodes.gate);
    out.gate.emplace(g.v.begin(), g.v.end());
  }
  return out;
}

ItemEmbedding embed_item(const FusionModel& model, const LayerStates& states) {
  return embed_item(model, prepare_item_features(states, model.config()));
}

}  // namespace linkedout
