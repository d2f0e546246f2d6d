// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "core/compress.hpp"
#include "core/config.hpp"
#include "core/corpus.hpp"
#include "core/fusion.hpp"
#include "core/model.hpp"

namespace linkedout {

struct LossBreakdown {
  double align = 0;
  double uniform = 0;
  double rec = 0;
  double total = 0;
};

// Plain loss surfaces; rows are paired (user_i, positive_i).
double alignment_loss(const MatD& users, const MatD& positives);
double uniformity_loss(const MatD& batch);
double rec_loss(const MatD& user, const MatD& positive, const MatD& negatives);

// Per-user view of a split log, in item indices.
struct UserData {
  std::string user_id;
  std::vector<size_t> train_items;  // timestamp order
  size_t val_item = SIZE_MAX;
  size_t test_item = SIZE_MAX;
  std::vector<size_t> interacted;   // sorted, for candidate exclusion
};

std::vector<UserData> index_users(const InteractionLog& log,
                                  const std::vector<SyntheticVideo>& videos);

struct BatchSample {
  std::vector<size_t> history;  // item indices, oldest first, <= h_max entries
  size_t positive = 0;
  std::vector<size_t> negatives;
};

// Analytic gradients of the joint objective. grads_out, when non-null, is
// resized to one matrix per model tensor. Pure with respect to the model.
LossBreakdown compute_loss(const FusionModel& model,
                           const std::vector<ItemFeatures>& features,
                           const std::vector<BatchSample>& batch, const TrainConfig& cfg,
                           std::vector<MatD>* grads_out);

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_tensor;
  size_t coords_checked = 0;
};

// Central finite differences at 64-bit against the analytic gradients.
// coords_per_tensor == 0 checks every coordinate.
GradCheckReport finite_diff_check(FusionModel& model,
                                  const std::vector<ItemFeatures>& features,
                                  const std::vector<BatchSample>& batch,
                                  const TrainConfig& cfg, double step = 1e-5,
                                  size_t coords_per_tensor = 0, uint64_t pick_seed = 1);

// Scales gradients so the global 2-norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(std::vector<MatD>& grads, double max_norm);

class Trainer {
 public:
  Trainer(FusionModel& model, const std::vector<ItemFeatures>& features, TrainConfig cfg);

  // One optimizer step; throws a numeric error on a non-finite loss.
  LossBreakdown step(const std::vector<BatchSample>& batch, double lr_mult);

 private:
  FusionModel& model_;
  const std::vector<ItemFeatures>& features_;
  TrainConfig cfg_;
  std::vector<MatD> adam_m_, adam_v_;
  std::vector<uint64_t> adam_t_;
};

struct EpochRow {
  uint64_t epoch = 0;
  LossBreakdown loss;    // mean over the epoch's steps
  double val_hr10 = 0;
};

struct TrainResult {
  std::vector<EpochRow> history;
  uint64_t best_epoch = 0;    // 1-based; 0 when no epochs ran
  double best_val_hr10 = 0;
};

// Full training loop with seeded shuffling, step-decay schedule, and model
// selection by validation HR@10. The model is left at the selected epoch's
// parameters.
TrainResult train(FusionModel& model, const std::vector<ItemFeatures>& features,
                  const std::vector<UserData>& users, const TrainConfig& cfg);

// Fused embeddings for every item; gate has zero cols for gate-less modes.
struct CatalogEmbeddings {
  MatD z;     // n_items x d_z
  MatD gate;  // n_items x n_taps, or 0 x 0
};

CatalogEmbeddings embed_catalog(const FusionModel& model,
                                const std::vector<ItemFeatures>& features);

}  // namespace linkedout
