// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/mat.hpp"
#include "core/tape.hpp"

namespace linkedout {

enum class ParamGroup : uint8_t { fusion = 0, head = 1 };

struct NamedTensor {
  std::string name;
  MatD value;
  ParamGroup group = ParamGroup::fusion;
};

// Tensor indices for one tap; -1 where the active mode has no such tensor.
struct TapTensors {
  int old_q = -1, new_q = -1;
  int old_w = -1, old_b = -1, new_w = -1, new_b = -1;
  int empty_new = -1;           // learned stand-in token for n_new == 0
  int feat_w = -1, feat_b = -1; // per-tap projection for non-full MoE modes
  int e_w1 = -1, e_b1 = -1, e_w2 = -1, e_b2 = -1;
  int e_ws = -1, e_bs = -1;     // affine shortcut, only when d_c != d_z
};

struct ModelTensors {
  std::vector<TapTensors> taps;
  int gate_w1 = -1, gate_b1 = -1, gate_w2 = -1, gate_b2 = -1;
  int last_w = -1, last_b = -1;  // last_layer_last_token projection
  int pos_weights = -1, head_w = -1, head_b = -1, cold_start = -1;
};

struct LoadedModel;

// Trainable fusion stack + ranker head for one fusion mode. Parameters live
// in double precision; checkpoints round to float32 on disk.
class FusionModel {
 public:
  FusionModel(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const ModelTensors& index() const { return idx_; }
  std::vector<NamedTensor>& tensors() { return tensors_; }
  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  bool has_gate() const { return cfg_.mode != FusionMode::last_layer_last_token; }

  std::vector<uint8_t> serialize(const TrainConfig& train_echo, uint64_t corpus_seed) const;
  void save(const std::filesystem::path& path, const TrainConfig& train_echo,
            uint64_t corpus_seed) const;

  using Loaded = LoadedModel;
  static LoadedModel load(const std::filesystem::path& path);

  // Hash of the exact bytes save() would produce.
  uint64_t version_hash(const TrainConfig& train_echo, uint64_t corpus_seed) const;

 private:
  FusionModel() = default;
  int add(const std::string& name, size_t rows, size_t cols, ParamGroup group);

  ModelConfig cfg_;
  std::vector<NamedTensor> tensors_;
  ModelTensors idx_;
};

struct LoadedModel {
  FusionModel model;
  TrainConfig train_echo;
  uint64_t corpus_seed = 0;
  uint64_t version_hash = 0;  // hash of the checkpoint bytes
};

// Per-tape parameter leaves, aligned with FusionModel::tensors().
struct StagedModel {
  std::vector<ad::NodeId> ids;
  ad::NodeId id(int tensor_index) const { return ids[size_t(tensor_index)]; }
};

StagedModel stage_model(ad::Tape& tape, const FusionModel& model);

}  // namespace linkedout
