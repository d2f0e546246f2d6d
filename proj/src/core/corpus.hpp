// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "core/config.hpp"

namespace linkedout {

struct SyntheticVideo {
  std::string item_id;
  uint32_t topic_id = 0;
  uint32_t texture_id = 0;
  std::vector<uint32_t> token_ids;  // token 0 carries texture, the rest carry topic
};

enum class Split : uint8_t { none = 0, train, val, test };

const char* split_name(Split s);

struct Event {
  std::string user_id;
  std::string item_id;
  uint64_t timestamp = 0;
};

struct InteractionLog {
  std::vector<Event> events;
  std::vector<Split> splits;  // empty until split_leave_one_out; else one per event

  bool is_split() const { return splits.size() == events.size() && !events.empty(); }
};

struct Corpus {
  std::vector<SyntheticVideo> videos;
  InteractionLog log;
};

// Vocabulary regions used by the generator. Texture ids live at the very
// start so that token 0 is a direct texture read-out; each topic owns a
// small token set drawn from for the remaining positions.
struct TokenLayout {
  uint32_t n_textures;
  uint32_t n_topics;
  uint32_t tokens_per_topic = 4;
  uint32_t noise_pool = 32;

  uint32_t texture_token(uint32_t texture) const { return texture; }
  uint32_t topic_token(uint32_t topic, uint32_t k) const {
    return n_textures + topic * tokens_per_topic + k;
  }
  uint32_t noise_token(uint32_t k) const {
    return n_textures + n_topics * tokens_per_topic + k;
  }
  uint32_t vocab_needed() const { return noise_token(noise_pool - 1) + 1; }
};

Corpus generate_corpus(const CorpusConfig& config);

// Labels the last event of every user test, the second-last val, the rest
// train. Event order is untouched. Users with fewer than 3 events are an
// error naming the user.
InteractionLog split_leave_one_out(InteractionLog log);

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

std::unordered_map<std::string, size_t> item_index(const std::vector<SyntheticVideo>& videos);

}  // namespace linkedout
