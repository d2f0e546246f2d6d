// SPDX-License-Identifier: Apache-2.0
#include "core/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "core/ranker.hpp"
#include "core/rng.hpp"

namespace linkedout {

constexpr size_t kItemChunk = 64;

double alignment_loss(const MatD& users, const MatD& positives) {
  require(users.rows >= 1 && users.rows == positives.rows && users.cols == positives.cols,
          ErrorCode::shape, "alignment_loss: paired batches must match");
  ad::Tape tape;
  return tape.val(tape.sqdist_mean(tape.leaf(users), tape.leaf(positives))).v[0];
}

double uniformity_loss(const MatD& batch) {
  require(batch.rows >= 2, ErrorCode::input, "uniformity_loss needs a batch of at least 2");
  ad::Tape tape;
  return tape.val(tape.uniformity(tape.leaf(batch))).v[0];
}

double rec_loss(const MatD& user, const MatD& positive, const MatD& negatives) {
  require(user.rows == 1 && positive.rows == 1, ErrorCode::shape,
          "rec_loss: user and positive must be single rows");
  require(negatives.rows >= 1, ErrorCode::input, "rec_loss needs at least one negative");
  require(user.cols == positive.cols && user.cols == negatives.cols, ErrorCode::shape,
          "rec_loss: widths differ");
  ad::Tape tape;
  std::vector<ad::NodeId> cands{tape.leaf(positive)};
  for (size_t i = 0; i < negatives.rows; ++i) {
    MatD row(1, negatives.cols);
    std::copy(negatives.row(i), negatives.row(i) + negatives.cols, row.v.begin());
    cands.push_back(tape.leaf(std::move(row)));
  }
  ad::NodeId scores = tape.matmul_nt(tape.leaf(user), tape.stack_rows(cands));
  return tape.val(tape.nll_of_softmax(scores, 0)).v[0];
}

std::vector<UserData> index_users(const InteractionLog& log,
                                  const std::vector<SyntheticVideo>& videos) {
  require(log.is_split(), ErrorCode::input, "log must be split");
  std::unordered_map<std::string, size_t> items = item_index(videos);
  std::map<std::string, UserData> by_user;
  for (size_t i = 0; i < log.events.size(); ++i) {
    const Event& e = log.events[i];
    auto it = items.find(e.item_id);
    require(it != items.end(), ErrorCode::not_found,
            "event references unknown item " + e.item_id);
    UserData& u = by_user[e.user_id];
    u.user_id = e.user_id;
    switch (log.splits[i]) {
      case Split::train: u.train_items.push_back(it->second); break;
      case Split::val: u.val_item = it->second; break;
      case Split::test: u.test_item = it->second; break;
      case Split::none:
        throw Error(ErrorCode::input, "event without split label");
    }
    u.interacted.push_back(it->second);
  }
  std::vector<UserData> users;
  users.reserve(by_user.size());
  for (auto& [id, u] : by_user) {
    std::sort(u.interacted.begin(), u.interacted.end());
    users.push_back(std::move(u));
  }
  return users;
}

// ---- gradient computation ----

static size_t local_of(const std::vector<size_t>& needed, size_t item) {
  auto it = std::lower_bound(needed.begin(), needed.end(), item);
  require(it != needed.end() && *it == item, ErrorCode::internal, "item missing from batch set");
  return size_t(it - needed.begin());
}

LossBreakdown compute_loss(const FusionModel& model,
                           const std::vector<ItemFeatures>& features,
                           const std::vector<BatchSample>& batch, const TrainConfig& cfg,
                           std::vector<MatD>* grads_out) {
  require(!batch.empty(), ErrorCode::input, "empty batch");
  size_t n_tensors = model.tensors().size();

  std::vector<size_t> needed;
  for (const BatchSample& s : batch) {
    require(s.history.size() <= model.config().h_max, ErrorCode::input,
            "batch history exceeds h_max");
    require(!s.negatives.empty(), ErrorCode::input, "batch sample has no negatives");
    needed.insert(needed.end(), s.history.begin(), s.history.end());
    needed.push_back(s.positive);
    needed.insert(needed.end(), s.negatives.begin(), s.negatives.end());
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  for (size_t idx : needed)
    require(idx < features.size(), ErrorCode::input, "batch references unknown item");

  // phase 1: embeddings for every involved item
  std::vector<MatD> zvals(needed.size());
  parallel_chunks(needed.size(), kItemChunk, [&](size_t, size_t begin, size_t end) {
    ad::Tape tape;
    StagedModel staged = stage_model(tape, model);
    for (size_t i = begin; i < end; ++i) {
      EmbedNodes nodes = embed_item_node(tape, staged, model, features[needed[i]]);
      zvals[i] = tape.val(nodes.z);
    }
  });

  // phase 2: joint objective over the fixed item embeddings
  ad::Tape loss_tape;
  StagedModel loss_staged = stage_model(loss_tape, model);
  std::vector<ad::NodeId> z_leaf(needed.size());
  for (size_t i = 0; i < needed.size(); ++i) z_leaf[i] = loss_tape.leaf(zvals[i]);

  std::vector<ad::NodeId> user_nodes, pos_nodes;
  user_nodes.reserve(batch.size());
  pos_nodes.reserve(batch.size());
  for (const BatchSample& s : batch) {
    std::vector<ad::NodeId> hist;
    hist.reserve(s.history.size());
    for (size_t idx : s.history) hist.push_back(z_leaf[local_of(needed, idx)]);
    user_nodes.push_back(encode_user_node(loss_tape, loss_staged, model, hist));
    pos_nodes.push_back(z_leaf[local_of(needed, s.positive)]);
  }

  ad::NodeId users_mat = loss_tape.stack_rows(user_nodes);
  ad::NodeId pos_mat = loss_tape.stack_rows(pos_nodes);
  ad::NodeId align = loss_tape.sqdist_mean(users_mat, pos_mat);
  ad::NodeId uniform;
  if (batch.size() >= 2) {
    uniform = loss_tape.scale(
        loss_tape.add(loss_tape.uniformity(users_mat), loss_tape.uniformity(pos_mat)), 0.5);
  } else {
    uniform = loss_tape.leaf(MatD(1, 1));  // a single pair has no spread term
  }

  std::vector<ad::NodeId> per_user_rec;
  per_user_rec.reserve(batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    const BatchSample& s = batch[b];
    std::vector<ad::NodeId> cands;
    cands.reserve(1 + s.negatives.size());
    cands.push_back(z_leaf[local_of(needed, s.positive)]);
    for (size_t neg : s.negatives) cands.push_back(z_leaf[local_of(needed, neg)]);
    ad::NodeId scores = loss_tape.matmul_nt(user_nodes[b], loss_tape.stack_rows(cands));
    per_user_rec.push_back(loss_tape.nll_of_softmax(scores, 0));
  }
  ad::NodeId rec = loss_tape.scale(loss_tape.add_n(per_user_rec), 1.0 / double(batch.size()));

  ad::NodeId total = loss_tape.add_n({loss_tape.scale(align, cfg.lambda_align),
                                      loss_tape.scale(uniform, cfg.lambda_uniform),
                                      loss_tape.scale(rec, cfg.lambda_rec)});

  LossBreakdown out;
  out.align = loss_tape.val(align).v[0];
  out.uniform = loss_tape.val(uniform).v[0];
  out.rec = loss_tape.val(rec).v[0];
  out.total = loss_tape.val(total).v[0];
  if (!grads_out) return out;

  require(std::isfinite(out.total), ErrorCode::numeric,
          "non-finite loss (align=" + std::to_string(out.align) +
              ", uniform=" + std::to_string(out.uniform) + ", rec=" + std::to_string(out.rec) +
              "); aborting step");

  loss_tape.backward(total);

  grads_out->assign(n_tensors, MatD());
  auto accumulate = [&](size_t t, const MatD& g) {
    MatD& dst = (*grads_out)[t];
    if (dst.empty()) {
      dst = g;
      return;
    }
    for (size_t i = 0; i < g.v.size(); ++i) dst.v[i] += g.v[i];
  };
  for (size_t t = 0; t < n_tensors; ++t)
    if (loss_tape.has_grad(loss_staged.ids[t])) accumulate(t, loss_tape.grad(loss_staged.ids[t]));

  std::vector<MatD> seeds(needed.size());
  for (size_t i = 0; i < needed.size(); ++i)
    if (loss_tape.has_grad(z_leaf[i])) seeds[i] = loss_tape.grad(z_leaf[i]);

  // phase 3: pull the embedding gradients back through the fusion stack,
  // chunk by chunk so the reduction order is fixed
  size_t n_chunks = (needed.size() + kItemChunk - 1) / kItemChunk;
  std::vector<std::vector<MatD>> chunk_grads(n_chunks);
  parallel_chunks(needed.size(), kItemChunk, [&](size_t c, size_t begin, size_t end) {
    ad::Tape tape;
    StagedModel staged = stage_model(tape, model);
    std::vector<ad::NodeId> zs;
    zs.reserve(end - begin);
    for (size_t i = begin; i < end; ++i)
      zs.push_back(embed_item_node(tape, staged, model, features[needed[i]]).z);
    bool any = false;
    for (size_t i = begin; i < end; ++i) {
      if (seeds[i].empty()) continue;
      tape.seed(zs[i - begin], seeds[i]);
      any = true;
    }
    if (!any) return;
    tape.sweep();
    chunk_grads[c].resize(n_tensors);
    for (size_t t = 0; t < n_tensors; ++t)
      if (tape.has_grad(staged.ids[t])) chunk_grads[c][t] = tape.grad(staged.ids[t]);
  });
  for (size_t c = 0; c < n_chunks; ++c) {
    if (chunk_grads[c].empty()) continue;
    for (size_t t = 0; t < n_tensors; ++t)
      if (!chunk_grads[c][t].empty()) accumulate(t, chunk_grads[c][t]);
  }

  for (size_t t = 0; t < n_tensors; ++t) {
    const MatD& v = model.tensors()[t].value;
    if ((*grads_out)[t].empty()) (*grads_out)[t] = MatD(v.rows, v.cols);
    require(std::isfinite(pairwise_sum((*grads_out)[t].v)), ErrorCode::numeric,
            "non-finite gradient for " + model.tensors()[t].name);
  }
  return out;
}

double clip_global_norm(std::vector<MatD>& grads, double max_norm) {
  double sq = 0;
  for (const MatD& g : grads)
    for (double x : g.v) sq += x * x;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    double scale = max_norm / norm;
    for (MatD& g : grads)
      for (double& x : g.v) x *= scale;
  }
  return norm;
}

GradCheckReport finite_diff_check(FusionModel& model,
                                  const std::vector<ItemFeatures>& features,
                                  const std::vector<BatchSample>& batch,
                                  const TrainConfig& cfg, double step,
                                  size_t coords_per_tensor, uint64_t pick_seed) {
  std::vector<MatD> grads;
  compute_loss(model, features, batch, cfg, &grads);

  GradCheckReport report;
  Rng pick(pick_seed);
  for (size_t t = 0; t < model.tensors().size(); ++t) {
    MatD& value = model.tensors()[t].value;
    size_t n = value.v.size();
    std::vector<size_t> coords;
    if (coords_per_tensor == 0 || coords_per_tensor >= n) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (size_t i = 0; i < coords_per_tensor; ++i) coords.push_back(size_t(pick.index(n)));
    }
    for (size_t c : coords) {
      double saved = value.v[c];
      value.v[c] = saved + step;
      double plus = compute_loss(model, features, batch, cfg, nullptr).total;
      value.v[c] = saved - step;
      double minus = compute_loss(model, features, batch, cfg, nullptr).total;
      value.v[c] = saved;
      double fd = (plus - minus) / (2 * step);
      double analytic = grads[t].v[c];
      double rel = std::fabs(fd - analytic) /
                   std::max({std::fabs(fd), std::fabs(analytic), 1e-6});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_tensor = model.tensors()[t].name;
      }
      ++report.coords_checked;
    }
  }
  return report;
}

// ---- optimizer ----

Trainer::Trainer(FusionModel& model, const std::vector<ItemFeatures>& features, TrainConfig cfg)
    : model_(model), features_(features), cfg_(std::move(cfg)) {
  size_t n = model_.tensors().size();
  adam_m_.resize(n);
  adam_v_.resize(n);
  adam_t_.assign(n, 0);
  for (size_t t = 0; t < n; ++t) {
    const MatD& v = model_.tensors()[t].value;
    adam_m_[t] = MatD(v.rows, v.cols);
    adam_v_[t] = MatD(v.rows, v.cols);
  }
}

LossBreakdown Trainer::step(const std::vector<BatchSample>& batch, double lr_mult) {
  std::vector<MatD> grads;
  LossBreakdown loss = compute_loss(model_, features_, batch, cfg_, &grads);
  clip_global_norm(grads, cfg_.grad_clip);

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  for (size_t t = 0; t < grads.size(); ++t) {
    const MatD& g = grads[t];
    bool all_zero = true;
    for (double x : g.v)
      if (x != 0.0) {
        all_zero = false;
        break;
      }
    if (all_zero) continue;  // untouched tensors stay bit-identical

    NamedTensor& tensor = model_.tensors()[t];
    double lr = (tensor.group == ParamGroup::head ? cfg_.lr_head : cfg_.lr_fusion) * lr_mult;
    uint64_t step_count = ++adam_t_[t];
    double bc1 = 1.0 - std::pow(beta1, double(step_count));
    double bc2 = 1.0 - std::pow(beta2, double(step_count));
    MatD& m = adam_m_[t];
    MatD& v = adam_v_[t];
    for (size_t i = 0; i < g.v.size(); ++i) {
      m.v[i] = beta1 * m.v[i] + (1 - beta1) * g.v[i];
      v.v[i] = beta2 * v.v[i] + (1 - beta2) * g.v[i] * g.v[i];
      double m_hat = m.v[i] / bc1;
      double v_hat = v.v[i] / bc2;
      tensor.value.v[i] -=
          lr * (m_hat / (std::sqrt(v_hat) + eps) + cfg_.weight_decay * tensor.value.v[i]);
    }
  }
  return loss;
}

// ---- training loop ----

CatalogEmbeddings embed_catalog(const FusionModel& model,
                                const std::vector<ItemFeatures>& features) {
  CatalogEmbeddings out;
  out.z = MatD(features.size(), model.config().d_z);
  bool gate = model.has_gate();
  if (gate) out.gate = MatD(features.size(), model.config().n_taps);
  parallel_chunks(features.size(), kItemChunk, [&](size_t, size_t begin, size_t end) {
    ad::Tape tape;
    StagedModel staged = stage_model(tape, model);
    for (size_t i = begin; i < end; ++i) {
      EmbedNodes nodes = embed_item_node(tape, staged, model, features[i]);
      const MatD& z = tape.val(nodes.z);
      std::copy(z.v.begin(), z.v.end(), out.z.row(i));
      if (gate) {
        const MatD& g = tape.val(nodes.gate);
        std::copy(g.v.begin(), g.v.end(), out.gate.row(i));
      }
    }
  });
  return out;
}

static std::vector<double> encode_user_rows(const FusionModel& model,
                                            const MatD& catalog_z,
                                            const std::vector<size_t>& history) {
  ad::Tape tape;
  StagedModel staged = stage_model(tape, model);
  std::vector<ad::NodeId> hist;
  hist.reserve(history.size());
  size_t d_z = model.config().d_z;
  for (size_t idx : history) {
    MatD row(1, d_z);
    std::copy(catalog_z.row(idx), catalog_z.row(idx) + d_z, row.v.begin());
    hist.push_back(tape.leaf(std::move(row)));
  }
  return tape.val(encode_user_node(tape, staged, model, hist)).v;
}

// Rank of target among candidates: 1 + |better| with ascending-index ties.
static size_t rank_of_target(const std::vector<double>& scores,
                             const std::vector<char>& excluded, size_t target) {
  size_t rank = 1;
  double st = scores[target];
  for (size_t i = 0; i < scores.size(); ++i) {
    if (i == target || excluded[i]) continue;
    if (scores[i] > st || (scores[i] == st && i < target)) ++rank;
  }
  return rank;
}

static double validation_hr10(const FusionModel& model,
                              const std::vector<ItemFeatures>& features,
                              const std::vector<UserData>& users) {
  CatalogEmbeddings cat = embed_catalog(model, features);
  size_t h_max = model.config().h_max;
  std::vector<double> hits(users.size(), 0.0);
  std::vector<char> evaluated(users.size(), 0);
  parallel_chunks(users.size(), 256, [&](size_t, size_t begin, size_t end) {
    for (size_t ui = begin; ui < end; ++ui) {
      const UserData& u = users[ui];
      if (u.val_item == SIZE_MAX) continue;
      std::vector<size_t> hist = u.train_items;
      if (hist.size() > h_max) hist.erase(hist.begin(), hist.end() - long(h_max));
      std::vector<double> uvec = encode_user_rows(model, cat.z, hist);
      std::vector<double> scores(features.size());
      for (size_t i = 0; i < features.size(); ++i) {
        const double* z = cat.z.row(i);
        double s = 0;
        for (size_t j = 0; j < uvec.size(); ++j) s += uvec[j] * z[j];
        scores[i] = s;
      }
      std::vector<char> excluded(features.size(), 0);
      for (size_t idx : u.train_items) excluded[idx] = 1;
      excluded[u.val_item] = 0;
      hits[ui] = rank_of_target(scores, excluded, u.val_item) <= 10 ? 1.0 : 0.0;
      evaluated[ui] = 1;
    }
  });
  double total = 0;
  size_t n = 0;
  for (size_t i = 0; i < users.size(); ++i) {
    if (!evaluated[i]) continue;
    total += hits[i];
    ++n;
  }
  return n == 0 ? 0.0 : total / double(n);
}

static uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t bytes[2] = {seed, salt};
  return fnv1a64(bytes, sizeof(bytes));
}

static std::vector<BatchSample> build_batch(const std::vector<UserData>& users,
                                            const std::vector<size_t>& order, size_t begin,
                                            size_t end, const TrainConfig& cfg, size_t h_max,
                                            size_t n_items, Rng& rng) {
  std::vector<BatchSample> batch;
  batch.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) {
    const UserData& u = users[order[i]];
    BatchSample s;
    s.positive = u.train_items.back();
    s.history.assign(u.train_items.begin(), u.train_items.end() - 1);
    if (s.history.size() > h_max) s.history.erase(s.history.begin(), s.history.end() - long(h_max));
    s.negatives.reserve(cfg.n_negatives);
    for (uint64_t k = 0; k < cfg.n_negatives; ++k) {
      size_t neg = 0;
      bool ok = false;
      for (int attempt = 0; attempt < 256; ++attempt) {
        neg = size_t(rng.index(n_items));
        if (!std::binary_search(u.interacted.begin(), u.interacted.end(), neg)) {
          ok = true;
          break;
        }
      }
      if (!ok) {
        for (size_t cand = 0; cand < n_items; ++cand)
          if (!std::binary_search(u.interacted.begin(), u.interacted.end(), cand)) {
            neg = cand;
            break;
          }
      }
      s.negatives.push_back(neg);
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

TrainResult train(FusionModel& model, const std::vector<ItemFeatures>& features,
                  const std::vector<UserData>& users, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<size_t> trainable;
  for (size_t i = 0; i < users.size(); ++i)
    if (!users[i].train_items.empty()) trainable.push_back(i);
  require(!trainable.empty(), ErrorCode::input, "no users with training events");

  if (cfg.pre_train_grad_check) {
    Rng rng(mix_seed(cfg.seed, 0xfd));
    std::vector<size_t> order = trainable;
    size_t take = std::min<size_t>(2, order.size());
    TrainConfig micro = cfg;
    micro.n_negatives = std::min<uint64_t>(cfg.n_negatives, 2);
    std::vector<BatchSample> batch = build_batch(users, order, 0, take, micro,
                                                 model.config().h_max, features.size(), rng);
    GradCheckReport report = finite_diff_check(model, features, batch, micro, 1e-5, 2,
                                               mix_seed(cfg.seed, 0xfe));
    require(report.max_rel_err < 1e-4, ErrorCode::numeric,
            "pre-training gradient check failed: max relative error " +
                std::to_string(report.max_rel_err) + " at " + report.worst_tensor);
  }

  TrainResult result;
  if (cfg.epochs == 0) return result;

  Trainer trainer(model, features, cfg);
  std::vector<MatD> best_values;
  double best_hr = -1.0;
  uint64_t best_epoch = 0;

  for (uint64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double lr_mult = std::pow(cfg.lr_decay_alpha, double((epoch - 1) / cfg.lr_decay_gap));
    Rng epoch_rng(mix_seed(cfg.seed, epoch));
    std::vector<size_t> order = trainable;
    epoch_rng.shuffle(order);

    LossBreakdown sum;
    size_t steps = 0;
    for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<BatchSample> batch = build_batch(users, order, begin, end, cfg,
                                                   model.config().h_max, features.size(),
                                                   epoch_rng);
      LossBreakdown lb = trainer.step(batch, lr_mult);
      sum.align += lb.align;
      sum.uniform += lb.uniform;
      sum.rec += lb.rec;
      sum.total += lb.total;
      ++steps;
    }

    EpochRow row;
    row.epoch = epoch;
    row.loss = {sum.align / double(steps), sum.uniform / double(steps), sum.rec / double(steps),
                sum.total / double(steps)};
    row.val_hr10 = validation_hr10(model, features, users);
    result.history.push_back(row);

    if (row.val_hr10 > best_hr) {
      best_hr = row.val_hr10;
      best_epoch = epoch;
      best_values.clear();
      for (const NamedTensor& t : model.tensors()) best_values.push_back(t.value);
    }
  }

  if (!best_values.empty())
    for (size_t t = 0; t < best_values.size(); ++t)
      model.tensors()[t].value = best_values[t];
  result.best_epoch = best_epoch;
  result.best_val_hr10 = best_hr;
  return result;
}

}  // namespace linkedout
