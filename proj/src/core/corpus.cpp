// SPDX-License-Identifier: Apache-2.0
#include "core/corpus.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace linkedout {

const char* split_name(Split s) {
  switch (s) {
    case Split::none: return "none";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "none";
}

static Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "none") return Split::none;
  throw Error(ErrorCode::format, "unknown split label '" + s + "'");
}

static std::string format_id(char prefix, uint64_t n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%05llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

Corpus generate_corpus(const CorpusConfig& config) {
  config.validate(false);
  Corpus corpus;
  Rng rng(config.seed);
  Rng item_rng = rng.fork(1);
  Rng user_rng = rng.fork(2);

  TokenLayout layout{uint32_t(config.n_textures), uint32_t(config.n_topics)};

  // Items: balanced topics, seeded textures. Content is one texture token
  // followed by a mix of topic tokens and shared noise tokens, so the texture
  // is readable at a single shallow position while the topic only emerges
  // from the token multiset.
  corpus.videos.resize(config.n_items);
  std::vector<std::vector<size_t>> by_topic(config.n_topics);
  for (uint64_t i = 0; i < config.n_items; ++i) {
    SyntheticVideo& v = corpus.videos[i];
    v.item_id = format_id('v', i);
    v.topic_id = uint32_t(i % config.n_topics);
    v.texture_id = uint32_t(item_rng.index(config.n_textures));
    v.token_ids.reserve(config.tokens_per_item);
    v.token_ids.push_back(layout.texture_token(v.texture_id));
    for (uint64_t t = 1; t < config.tokens_per_item; ++t) {
      if (item_rng.uniform() < 0.75) {
        v.token_ids.push_back(
            layout.topic_token(v.topic_id, uint32_t(item_rng.index(layout.tokens_per_topic))));
      } else {
        v.token_ids.push_back(layout.noise_token(uint32_t(item_rng.index(layout.noise_pool))));
      }
    }
    by_topic[v.topic_id].push_back(i);
  }

  // Users: a latent (topic, texture) preference; 1 - noise_prob of the
  // interactions are preference draws, the rest uniform. Items are distinct
  // within a user history.
  corpus.log.events.reserve(config.n_users * config.history_max);
  for (uint64_t u = 0; u < config.n_users; ++u) {
    std::string user_id = format_id('u', u);
    uint32_t pref_topic = uint32_t(user_rng.index(config.n_topics));
    uint32_t pref_texture = uint32_t(user_rng.index(config.n_textures));
    uint64_t len =
        config.history_min + user_rng.index(config.history_max - config.history_min + 1);
    len = std::min(len, config.n_items);

    const std::vector<size_t>& topic_items = by_topic[pref_topic];
    double topic_total = 0;
    for (size_t idx : topic_items)
      topic_total += (corpus.videos[idx].texture_id == pref_texture) ? config.texture_boost : 1.0;

    std::unordered_set<size_t> used;
    for (uint64_t e = 0; e < len; ++e) {
      size_t pick = config.n_items;  // sentinel
      for (int attempt = 0; attempt < 64; ++attempt) {
        size_t candidate;
        if (user_rng.uniform() < config.noise_prob || topic_items.empty()) {
          candidate = size_t(user_rng.index(config.n_items));
        } else {
          double x = user_rng.uniform() * topic_total;
          double acc = 0;
          candidate = topic_items.back();
          for (size_t idx : topic_items) {
            acc += (corpus.videos[idx].texture_id == pref_texture) ? config.texture_boost : 1.0;
            if (x < acc) {
              candidate = idx;
              break;
            }
          }
        }
        if (!used.count(candidate)) {
          pick = candidate;
          break;
        }
      }
      if (pick == config.n_items) {
        // exhausted retries; take the first unused item deterministically
        for (size_t idx = 0; idx < config.n_items; ++idx) {
          if (!used.count(idx)) {
            pick = idx;
            break;
          }
        }
      }
      used.insert(pick);
      corpus.log.events.push_back(Event{user_id, corpus.videos[pick].item_id, e});
    }
  }
  return corpus;
}

InteractionLog split_leave_one_out(InteractionLog log) {
  log.splits.assign(log.events.size(), Split::train);
  // positions per user, in event order
  std::map<std::string, std::vector<size_t>> per_user;
  for (size_t i = 0; i < log.events.size(); ++i)
    per_user[log.events[i].user_id].push_back(i);
  for (const auto& [user, positions] : per_user) {
    require(positions.size() >= 3, ErrorCode::split,
            "user " + user + " has " + std::to_string(positions.size()) +
                " events; leave-one-out needs at least 3");
    uint64_t prev_ts = 0;
    for (size_t k = 0; k < positions.size(); ++k) {
      uint64_t ts = log.events[positions[k]].timestamp;
      require(k == 0 || ts > prev_ts, ErrorCode::split,
              "user " + user + " has non-increasing timestamps");
      prev_ts = ts;
    }
    log.splits[positions[positions.size() - 1]] = Split::test;
    log.splits[positions[positions.size() - 2]] = Split::val;
  }
  return log;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  require(corpus.log.is_split(), ErrorCode::input, "log must be split before serialization");
  std::filesystem::create_directories(dir);

  std::string items;
  for (const SyntheticVideo& v : corpus.videos) {
    nlohmann::json j;
    j["item_id"] = v.item_id;
    j["topic_id"] = v.topic_id;
    j["texture_id"] = v.texture_id;
    j["token_ids"] = v.token_ids;
    items += j.dump();
    items += '\n';
  }
  atomic_write_text(dir / "items.jsonl", items);

  std::string csv = "user_id,item_id,timestamp,split\n";
  for (size_t i = 0; i < corpus.log.events.size(); ++i) {
    const Event& e = corpus.log.events[i];
    csv += e.user_id;
    csv += ',';
    csv += e.item_id;
    csv += ',';
    csv += std::to_string(e.timestamp);
    csv += ',';
    csv += split_name(corpus.log.splits[i]);
    csv += '\n';
  }
  atomic_write_text(dir / "interactions.csv", csv);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  {
    std::ifstream in(dir / "items.jsonl");
    require(bool(in), ErrorCode::io, "cannot open " + (dir / "items.jsonl").string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      require(!j.is_discarded(), ErrorCode::format, "bad JSON in items.jsonl");
      SyntheticVideo v;
      v.item_id = j.at("item_id").get<std::string>();
      v.topic_id = j.at("topic_id").get<uint32_t>();
      v.texture_id = j.at("texture_id").get<uint32_t>();
      v.token_ids = j.at("token_ids").get<std::vector<uint32_t>>();
      require(!v.token_ids.empty(), ErrorCode::format, "item " + v.item_id + " has no tokens");
      corpus.videos.push_back(std::move(v));
    }
  }
  {
    std::ifstream in(dir / "interactions.csv");
    require(bool(in), ErrorCode::io, "cannot open " + (dir / "interactions.csv").string());
    std::string line;
    require(bool(std::getline(in, line)), ErrorCode::format, "interactions.csv is empty");
    require(line == "user_id,item_id,timestamp,split", ErrorCode::format,
            "interactions.csv has unexpected header '" + line + "'");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string user, item, ts, split;
      require(bool(std::getline(ss, user, ',')) && bool(std::getline(ss, item, ',')) &&
                  bool(std::getline(ss, ts, ',')) && bool(std::getline(ss, split)),
              ErrorCode::format, "bad interactions row '" + line + "'");
      corpus.log.events.push_back(Event{user, item, std::stoull(ts)});
      corpus.log.splits.push_back(split_from_name(split));
    }
  }
  return corpus;
}

std::unordered_map<std::string, size_t> item_index(const std::vector<SyntheticVideo>& videos) {
  std::unordered_map<std::string, size_t> idx;
  idx.reserve(videos.size());
  for (size_t i = 0; i < videos.size(); ++i) idx.emplace(videos[i].item_id, i);
  return idx;
}

}  // namespace linkedout
