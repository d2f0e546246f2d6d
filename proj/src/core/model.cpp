// SPDX-License-Identifier: Apache-2.0
#include "core/model.hpp"

#include "core/common.hpp"
#include "core/rng.hpp"

namespace linkedout {

static const char kMagic[4] = {'L', 'N', 'K', 'C'};
constexpr uint32_t kCheckpointVersion = 1;

int FusionModel::add(const std::string& name, size_t rows, size_t cols, ParamGroup group) {
  tensors_.push_back(NamedTensor{name, MatD(rows, cols), group});
  return int(tensors_.size()) - 1;
}

FusionModel::FusionModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  size_t d = cfg_.d, d_c = cfg_.d_c, d_z = cfg_.d_z, m = cfg_.m_queries;
  size_t half = d_c / 2;
  bool moe = cfg_.mode != FusionMode::last_layer_last_token;
  bool full = cfg_.mode == FusionMode::full;

  idx_.taps.resize(cfg_.n_taps);
  for (size_t t = 0; t < cfg_.n_taps; ++t) {
    std::string p = "tap" + std::to_string(t) + ".";
    TapTensors& tt = idx_.taps[t];
    if (full) {
      tt.old_q = add(p + "old_queries", m, d, ParamGroup::fusion);
      tt.new_q = add(p + "new_queries", m, d, ParamGroup::fusion);
      tt.old_w = add(p + "old_proj_w", m * d, half, ParamGroup::fusion);
      tt.old_b = add(p + "old_proj_b", 1, half, ParamGroup::fusion);
      tt.new_w = add(p + "new_proj_w", m * d, half, ParamGroup::fusion);
      tt.new_b = add(p + "new_proj_b", 1, half, ParamGroup::fusion);
      tt.empty_new = add(p + "empty_new", 1, d, ParamGroup::fusion);
    } else if (moe) {
      tt.feat_w = add(p + "feat_proj_w", d, d_c, ParamGroup::fusion);
      tt.feat_b = add(p + "feat_proj_b", 1, d_c, ParamGroup::fusion);
    }
    if (moe) {
      tt.e_w1 = add(p + "expert_w1", d_c, d_z, ParamGroup::fusion);
      tt.e_b1 = add(p + "expert_b1", 1, d_z, ParamGroup::fusion);
      tt.e_w2 = add(p + "expert_w2", d_z, d_z, ParamGroup::fusion);
      tt.e_b2 = add(p + "expert_b2", 1, d_z, ParamGroup::fusion);
      if (d_c != d_z) {
        tt.e_ws = add(p + "expert_ws", d_c, d_z, ParamGroup::fusion);
        tt.e_bs = add(p + "expert_bs", 1, d_z, ParamGroup::fusion);
      }
    }
  }
  if (moe) {
    idx_.gate_w1 = add("gate.w1", cfg_.n_taps * d_z, cfg_.gate_hidden, ParamGroup::fusion);
    idx_.gate_b1 = add("gate.b1", 1, cfg_.gate_hidden, ParamGroup::fusion);
    idx_.gate_w2 = add("gate.w2", cfg_.gate_hidden, cfg_.n_taps, ParamGroup::fusion);
    idx_.gate_b2 = add("gate.b2", 1, cfg_.n_taps, ParamGroup::fusion);
  } else {
    idx_.last_w = add("last_proj.w", d, d_z, ParamGroup::fusion);
    idx_.last_b = add("last_proj.b", 1, d_z, ParamGroup::fusion);
  }
  idx_.pos_weights = add("ranker.pos_weights", 1, cfg_.h_max, ParamGroup::head);
  idx_.head_w = add("ranker.head_w", d_z, d_z, ParamGroup::head);
  idx_.head_b = add("ranker.head_b", 1, d_z, ParamGroup::head);
  idx_.cold_start = add("ranker.cold_start", 1, d_z, ParamGroup::head);

  // seeded init: matrices fan-in-scaled uniform, biases zero, head identity
  Rng rng(seed);
  for (NamedTensor& t : tensors_) {
    bool is_bias = t.name.ends_with("_b") || t.name.ends_with(".b1") || t.name.ends_with(".b2") ||
                   t.name.ends_with("_b1") || t.name.ends_with("_b2") ||
                   t.name.ends_with("_bs") || t.name.ends_with("proj.b");
    if (t.name == "ranker.pos_weights" || t.name == "ranker.cold_start" ||
        t.name == "ranker.head_b" || is_bias) {
      continue;  // zeros
    }
    if (t.name == "ranker.head_w") {
      for (size_t i = 0; i < d_z; ++i) t.value(i, i) = 1.0;
      continue;
    }
    // queries and the empty-branch token live in token space (width d);
    // everything else is x*W with fan-in = rows
    bool token_space = t.name.find("queries") != std::string::npos ||
                       t.name.find("empty_new") != std::string::npos;
    double fan = token_space ? double(t.value.cols) : double(t.value.rows);
    double scale = 1.0 / std::sqrt(fan);
    for (double& x : t.value.v) x = rng.uniform(-scale, scale);
  }
}

StagedModel stage_model(ad::Tape& tape, const FusionModel& model) {
  StagedModel staged;
  staged.ids.reserve(model.tensors().size());
  for (const NamedTensor& t : model.tensors()) staged.ids.push_back(tape.leaf(t.value));
  return staged;
}

// ---- checkpoint ----

static void put_f64(std::vector<uint8_t>& out, double x) {
  uint64_t bits;
  std::memcpy(&bits, &x, 8);
  put_u64(out, bits);
}

static double read_f64(ByteReader& r) {
  uint64_t bits = r.u64();
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

std::vector<uint8_t> FusionModel::serialize(const TrainConfig& echo,
                                            uint64_t corpus_seed) const {
  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, uint32_t(cfg_.mode));
  put_u32(buf, uint32_t(cfg_.d));
  put_u32(buf, uint32_t(cfg_.n_taps));
  put_u32(buf, uint32_t(cfg_.tap_stride));
  put_u32(buf, uint32_t(cfg_.d_c));
  put_u32(buf, uint32_t(cfg_.d_z));
  put_u32(buf, uint32_t(cfg_.m_queries));
  put_u32(buf, uint32_t(cfg_.gate_hidden));
  put_u32(buf, uint32_t(cfg_.h_max));
  put_u32(buf, uint32_t(cfg_.n_new));
  put_u32(buf, uint32_t(cfg_.merge.r));
  put_u32(buf, uint32_t(cfg_.merge.passes));
  put_u32(buf, uint32_t(cfg_.prompt_tokens.size()));
  for (uint32_t t : cfg_.prompt_tokens) put_u32(buf, t);

  put_u64(buf, echo.epochs);
  put_u64(buf, echo.batch_size);
  put_f64(buf, echo.lr_fusion);
  put_f64(buf, echo.lr_head);
  put_f64(buf, echo.weight_decay);
  put_f64(buf, echo.grad_clip);
  put_u64(buf, echo.n_negatives);
  put_f64(buf, echo.lambda_align);
  put_f64(buf, echo.lambda_uniform);
  put_f64(buf, echo.lambda_rec);
  put_u64(buf, echo.seed);
  put_f64(buf, echo.lr_decay_alpha);
  put_u64(buf, echo.lr_decay_gap);
  put_u64(buf, corpus_seed);

  put_u32(buf, uint32_t(tensors_.size()));
  for (const NamedTensor& t : tensors_) {
    put_string(buf, t.name);
    put_u32(buf, uint32_t(t.value.rows));
    put_u32(buf, uint32_t(t.value.cols));
    for (double x : t.value.v) put_f32(buf, float(x));
  }
  return buf;
}

void FusionModel::save(const std::filesystem::path& path, const TrainConfig& echo,
                       uint64_t corpus_seed) const {
  atomic_write_file(path, serialize(echo, corpus_seed));
}

uint64_t FusionModel::version_hash(const TrainConfig& echo, uint64_t corpus_seed) const {
  std::vector<uint8_t> bytes = serialize(echo, corpus_seed);
  return fnv1a64(bytes.data(), bytes.size());
}

FusionModel::Loaded FusionModel::load(const std::filesystem::path& path) {
  std::vector<uint8_t> buf = read_file(path);
  ByteReader r(buf.data(), buf.size());
  char magic[4];
  r.raw(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorCode::format,
          path.string() + ": not a model checkpoint");
  uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::version,
          path.string() + ": unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  uint32_t mode = r.u32();
  require(mode <= uint32_t(FusionMode::last_layer_last_token), ErrorCode::format,
          "bad fusion mode in checkpoint");
  cfg.mode = FusionMode(mode);
  cfg.d = r.u32();
  cfg.n_taps = r.u32();
  cfg.tap_stride = r.u32();
  cfg.d_c = r.u32();
  cfg.d_z = r.u32();
  cfg.m_queries = r.u32();
  cfg.gate_hidden = r.u32();
  cfg.h_max = r.u32();
  cfg.n_new = r.u32();
  cfg.merge.r = r.u32();
  cfg.merge.passes = r.u32();
  uint32_t n_prompt = r.u32();
  cfg.prompt_tokens.clear();
  for (uint32_t i = 0; i < n_prompt; ++i) cfg.prompt_tokens.push_back(r.u32());

  TrainConfig echo;
  echo.epochs = r.u64();
  echo.batch_size = r.u64();
  echo.lr_fusion = read_f64(r);
  echo.lr_head = read_f64(r);
  echo.weight_decay = read_f64(r);
  echo.grad_clip = read_f64(r);
  echo.n_negatives = r.u64();
  echo.lambda_align = read_f64(r);
  echo.lambda_uniform = read_f64(r);
  echo.lambda_rec = read_f64(r);
  echo.seed = r.u64();
  echo.lr_decay_alpha = read_f64(r);
  echo.lr_decay_gap = r.u64();
  uint64_t corpus_seed = r.u64();

  FusionModel model(cfg, /*seed=*/0);
  uint32_t n_tensors = r.u32();
  require(n_tensors == model.tensors_.size(), ErrorCode::version,
          path.string() + ": tensor count mismatch (" + std::to_string(n_tensors) + " vs " +
              std::to_string(model.tensors_.size()) + ")");
  for (NamedTensor& t : model.tensors_) {
    std::string name = r.str();
    uint32_t rows = r.u32();
    uint32_t cols = r.u32();
    require(name == t.name, ErrorCode::version,
            path.string() + ": unexpected tensor '" + name + "' (want '" + t.name + "')");
    require(rows == t.value.rows && cols == t.value.cols, ErrorCode::version,
            path.string() + ": tensor " + name + " has shape " + std::to_string(rows) + "x" +
                std::to_string(cols) + ", expected " + std::to_string(t.value.rows) + "x" +
                std::to_string(t.value.cols));
    for (double& x : t.value.v) {
      float f = r.f32();
      require(std::isfinite(f), ErrorCode::corrupt,
              path.string() + ": non-finite value in tensor " + name);
      x = double(f);
    }
  }
  require(r.remaining() == 0, ErrorCode::format, path.string() + ": trailing bytes");

  Loaded out{std::move(model), echo, corpus_seed, fnv1a64(buf.data(), buf.size())};
  return out;
}

}  // namespace linkedout
