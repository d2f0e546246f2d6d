// SPDX-License-Identifier: Apache-2.0
#include "core/backbone.hpp"

#include <cmath>
#include <limits>

#include "core/rng.hpp"

namespace linkedout {

void LayerStates::validate() const {
  require(!taps.empty(), ErrorCode::shape, "LayerStates has no taps");
  for (const LayerTap& t : taps) {
    require(t.states.rows == size_t(old_count) + size_t(new_count), ErrorCode::shape,
            "tap row count does not match old_count + new_count");
    require(t.states.all_finite(), ErrorCode::corrupt, "non-finite state value");
  }
}

static void fill_uniform(MatF& m, size_t fan_in, Rng& rng) {
  float scale = 1.0f / std::sqrt(float(fan_in));
  for (float& x : m.v) x = float(rng.uniform(-scale, scale));
}

Backbone::Backbone(const BackboneConfig& config) : cfg_(config) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  size_t d = cfg_.d, hidden = 4 * d;

  emb_ = MatF(cfg_.vocab_size, d);
  fill_uniform(emb_, d, rng);
  pos_ = MatF(cfg_.max_seq, d);
  fill_uniform(pos_, d, rng);

  blocks_.resize(cfg_.n_layers);
  for (Block& b : blocks_) {
    b.ln1_g = MatF(1, d, 1.0f);
    b.ln1_b = MatF(1, d);
    b.wq = MatF(d, d); fill_uniform(b.wq, d, rng);
    b.wk = MatF(d, d); fill_uniform(b.wk, d, rng);
    b.wv = MatF(d, d); fill_uniform(b.wv, d, rng);
    b.wo = MatF(d, d); fill_uniform(b.wo, d, rng);
    b.bq = MatF(1, d); b.bk = MatF(1, d); b.bv = MatF(1, d); b.bo = MatF(1, d);
    b.ln2_g = MatF(1, d, 1.0f);
    b.ln2_b = MatF(1, d);
    b.w1 = MatF(d, hidden); fill_uniform(b.w1, d, rng);
    b.b1 = MatF(1, hidden);
    b.w2 = MatF(hidden, d); fill_uniform(b.w2, hidden, rng);
    b.b2 = MatF(1, d);
  }
  lnf_g_ = MatF(1, d, 1.0f);
  lnf_b_ = MatF(1, d);
  head_w_ = MatF(d, cfg_.vocab_size);
  fill_uniform(head_w_, d, rng);
  head_b_ = MatF(1, cfg_.vocab_size);
}

TokenSequence Backbone::tokenize(const SyntheticVideo& video,
                                 const std::vector<uint32_t>& prompt) const {
  size_t n_content = video.token_ids.size();
  size_t n = n_content + prompt.size();
  require(n >= 1, ErrorCode::input, "empty token sequence");
  require(n <= cfg_.max_seq, ErrorCode::length,
          "sequence length " + std::to_string(n) + " exceeds max_seq " +
              std::to_string(cfg_.max_seq));

  TokenSequence z;
  z.token_ids.reserve(n);
  for (uint32_t id : video.token_ids) z.token_ids.push_back(id);
  for (uint32_t id : prompt) z.token_ids.push_back(id);
  for (uint32_t id : z.token_ids)
    require(id < cfg_.vocab_size, ErrorCode::input,
            "token id " + std::to_string(id) + " out of vocabulary");

  z.n_original = n;
  z.embedded_tokens = MatF(n, cfg_.d);
  for (size_t i = 0; i < n; ++i) {
    const float* src = emb_.row(z.token_ids[i]);
    std::copy(src, src + cfg_.d, z.embedded_tokens.row(i));
  }
  z.source_spans = {{"content", 0, n_content}, {"prompt", n_content, n}};
  return z;
}

static void layer_norm(const float* x, const float* g, const float* b, float* out, size_t d) {
  float mean = 0;
  for (size_t i = 0; i < d; ++i) mean += x[i];
  mean /= float(d);
  float var = 0;
  for (size_t i = 0; i < d; ++i) {
    float c = x[i] - mean;
    var += c * c;
  }
  var /= float(d);
  float inv = 1.0f / std::sqrt(var + 1e-5f);
  for (size_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * inv * g[i] + b[i];
}

static float gelu(float x) {
  return 0.5f * x * (1.0f + std::tanh(0.7978845608028654f * (x + 0.044715f * x * x * x)));
}

// y = x * W + b for row-major x (n x d_in), W (d_in x d_out)
static void affine(const MatF& x, const MatF& w, const MatF& b, MatF& y) {
  y = MatF(x.rows, w.cols);
  for (size_t i = 0; i < x.rows; ++i) {
    float* yr = y.row(i);
    std::copy(b.row(0), b.row(0) + w.cols, yr);
    const float* xr = x.row(i);
    for (size_t k = 0; k < x.cols; ++k) {
      float xv = xr[k];
      const float* wr = w.row(k);
      for (size_t j = 0; j < w.cols; ++j) yr[j] += xv * wr[j];
    }
  }
}

std::vector<float> Backbone::forward(const std::vector<uint32_t>& ids,
                                     std::vector<MatF>* taps_out) const {
  size_t n = ids.size(), d = cfg_.d;
  size_t n_heads = cfg_.n_heads, hd = d / n_heads;
  float inv_sqrt_hd = 1.0f / std::sqrt(float(hd));

  MatF h(n, d);
  for (size_t i = 0; i < n; ++i) {
    const float* e = emb_.row(ids[i]);
    const float* p = pos_.row(i);
    float* out = h.row(i);
    for (size_t j = 0; j < d; ++j) out[j] = e[j] + p[j];
  }

  std::vector<uint32_t> tap_set = tap_layers();
  auto maybe_capture = [&](uint32_t layer) {
    if (!taps_out) return;
    for (size_t k = 0; k < tap_set.size(); ++k)
      if (tap_set[k] == layer) (*taps_out)[k] = h;
  };
  if (taps_out) taps_out->assign(tap_set.size(), MatF());
  maybe_capture(0);

  MatF normed(n, d), q, k, v, attn(n, d), mlp_in(n, d), mlp_h, mlp_out;
  std::vector<float> scores;
  for (uint32_t layer = 1; layer <= cfg_.n_layers; ++layer) {
    const Block& blk = blocks_[layer - 1];

    for (size_t i = 0; i < n; ++i)
      layer_norm(h.row(i), blk.ln1_g.row(0), blk.ln1_b.row(0), normed.row(i), d);
    affine(normed, blk.wq, blk.bq, q);
    affine(normed, blk.wk, blk.bk, k);
    affine(normed, blk.wv, blk.bv, v);

    // causal attention, one (position, head) at a time
    std::fill(attn.v.begin(), attn.v.end(), 0.0f);
    for (size_t i = 0; i < n; ++i) {
      scores.resize(i + 1);
      for (size_t head = 0; head < n_heads; ++head) {
        size_t off = head * hd;
        const float* qi = q.row(i) + off;
        float max_s = -std::numeric_limits<float>::infinity();
        for (size_t j = 0; j <= i; ++j) {
          const float* kj = k.row(j) + off;
          float s = 0;
          for (size_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
          s *= inv_sqrt_hd;
          scores[j] = s;
          max_s = std::max(max_s, s);
        }
        float denom = 0;
        for (size_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - max_s);
          denom += scores[j];
        }
        float inv_denom = 1.0f / denom;
        float* out = attn.row(i) + off;
        for (size_t j = 0; j <= i; ++j) {
          float w = scores[j] * inv_denom;
          const float* vj = v.row(j) + off;
          for (size_t t = 0; t < hd; ++t) out[t] += w * vj[t];
        }
      }
    }
    MatF attn_proj;
    affine(attn, blk.wo, blk.bo, attn_proj);
    for (size_t i = 0; i < h.v.size(); ++i) h.v[i] += attn_proj.v[i];

    for (size_t i = 0; i < n; ++i)
      layer_norm(h.row(i), blk.ln2_g.row(0), blk.ln2_b.row(0), mlp_in.row(i), d);
    affine(mlp_in, blk.w1, blk.b1, mlp_h);
    for (float& x : mlp_h.v) x = gelu(x);
    affine(mlp_h, blk.w2, blk.b2, mlp_out);
    for (size_t i = 0; i < h.v.size(); ++i) h.v[i] += mlp_out.v[i];

    maybe_capture(layer);
  }

  // logits for the final position only
  std::vector<float> logits(cfg_.vocab_size);
  std::vector<float> f(d);
  layer_norm(h.row(n - 1), lnf_g_.row(0), lnf_b_.row(0), f.data(), d);
  for (size_t j = 0; j < cfg_.vocab_size; ++j) logits[j] = head_b_.v[j];
  for (size_t t = 0; t < d; ++t) {
    float ft = f[t];
    const float* wr = head_w_.row(t);
    for (size_t j = 0; j < cfg_.vocab_size; ++j) logits[j] += ft * wr[j];
  }
  return logits;
}

LayerStates Backbone::forward_collect(const TokenSequence& z, uint64_t n_new) const {
  size_t n0 = z.n_original;
  require(n0 >= 1, ErrorCode::input, "empty sequence");
  require(n0 + n_new <= cfg_.max_seq, ErrorCode::length,
          "sequence of " + std::to_string(n0 + n_new) + " tokens exceeds max_seq " +
              std::to_string(cfg_.max_seq));

  std::vector<uint32_t> ids = z.token_ids;
  for (uint64_t step = 0; step < n_new; ++step) {
    std::vector<float> logits = forward(ids, nullptr);
    uint32_t best = 0;
    for (uint32_t j = 1; j < logits.size(); ++j)
      if (logits[j] > logits[best]) best = j;  // ascending scan keeps lowest id on ties
    ids.push_back(best);
  }

  std::vector<MatF> taps;
  forward(ids, &taps);

  LayerStates states;
  states.old_count = uint32_t(n0);
  states.new_count = uint32_t(n_new);
  std::vector<uint32_t> tap_set = tap_layers();
  states.taps.resize(tap_set.size());
  for (size_t k = 0; k < tap_set.size(); ++k) {
    states.taps[k].layer_index = tap_set[k];
    states.taps[k].states = std::move(taps[k]);
  }
  states.validate();
  return states;
}

std::vector<uint32_t> Backbone::tap_layers() const {
  std::vector<uint32_t> taps;
  for (uint64_t k = 0; k < cfg_.n_taps(); ++k) taps.push_back(uint32_t(k * cfg_.tap_stride));
  return taps;
}

uint64_t Backbone::checksum() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const MatF& m) { h = fnv1a64(m.v.data(), m.v.size() * sizeof(float), h); };
  mix(emb_);
  mix(pos_);
  for (const Block& b : blocks_) {
    mix(b.ln1_g); mix(b.ln1_b);
    mix(b.wq); mix(b.wk); mix(b.wv); mix(b.wo);
    mix(b.bq); mix(b.bk); mix(b.bv); mix(b.bo);
    mix(b.ln2_g); mix(b.ln2_b);
    mix(b.w1); mix(b.b1); mix(b.w2); mix(b.b2);
  }
  mix(lnf_g_); mix(lnf_b_);
  mix(head_w_); mix(head_b_);
  return h;
}

uint64_t Backbone::parameter_count() const {
  uint64_t total = emb_.size() + pos_.size();
  for (const Block& b : blocks_) {
    total += b.ln1_g.size() + b.ln1_b.size();
    total += b.wq.size() + b.wk.size() + b.wv.size() + b.wo.size();
    total += b.bq.size() + b.bk.size() + b.bv.size() + b.bo.size();
    total += b.ln2_g.size() + b.ln2_b.size();
    total += b.w1.size() + b.b1.size() + b.w2.size() + b.b2.size();
  }
  total += lnf_g_.size() + lnf_b_.size() + head_w_.size() + head_b_.size();
  return total;
}

}  // namespace linkedout
