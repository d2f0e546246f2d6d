// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "core/common.hpp"
#include "core/corpus.hpp"

using namespace linkedout;

namespace {

CorpusConfig small_config() {
  CorpusConfig cfg;
  cfg.n_users = 10;
  cfg.n_items = 20;
  cfg.n_topics = 4;
  cfg.n_textures = 3;
  cfg.history_min = 5;
  cfg.history_max = 5;
  cfg.seed = 7;
  return cfg;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("lo_corpus_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("event count is forced by the config") {
  Corpus corpus = generate_corpus(small_config());
  CHECK(corpus.log.events.size() == 50);
  CHECK(corpus.videos.size() == 20);
}

TEST_CASE("same config and seed give byte-identical corpora") {
  Corpus a = generate_corpus(small_config());
  Corpus b = generate_corpus(small_config());
  a.log = split_leave_one_out(std::move(a.log));
  b.log = split_leave_one_out(std::move(b.log));

  auto dir_a = temp_dir("det_a");
  auto dir_b = temp_dir("det_b");
  save_corpus(a, dir_a);
  save_corpus(b, dir_b);
  CHECK(read_file(dir_a / "items.jsonl") == read_file(dir_b / "items.jsonl"));
  CHECK(read_file(dir_a / "interactions.csv") == read_file(dir_b / "interactions.csv"));

  CorpusConfig other = small_config();
  other.seed = 8;
  Corpus c = generate_corpus(other);
  c.log = split_leave_one_out(std::move(c.log));
  auto dir_c = temp_dir("det_c");
  save_corpus(c, dir_c);
  CHECK(read_file(dir_a / "interactions.csv") != read_file(dir_c / "interactions.csv"));
}

TEST_CASE("planted topics dominate user histories") {
  CorpusConfig cfg;
  cfg.n_users = 200;
  cfg.n_items = 20;
  cfg.n_topics = 4;
  cfg.n_textures = 2;
  cfg.seed = 3;
  Corpus corpus = generate_corpus(cfg);

  // per-topic item counts sum to the catalog size
  std::map<uint32_t, size_t> per_topic;
  for (const SyntheticVideo& v : corpus.videos) per_topic[v.topic_id]++;
  size_t total = 0;
  for (auto& [topic, count] : per_topic) total += count;
  CHECK(total == 20);

  // brute-force purity: majority topic share per user history
  auto items = item_index(corpus.videos);
  std::map<std::string, std::map<uint32_t, size_t>> tally;
  std::map<std::string, size_t> lengths;
  for (const Event& e : corpus.log.events) {
    tally[e.user_id][corpus.videos[items[e.item_id]].topic_id]++;
    lengths[e.user_id]++;
  }
  double purity_sum = 0;
  for (auto& [user, counts] : tally) {
    size_t best = 0;
    for (auto& [topic, count] : counts) best = std::max(best, count);
    purity_sum += double(best) / double(lengths[user]);
  }
  double purity = purity_sum / double(tally.size());
  CHECK(purity > 0.5);
}

TEST_CASE("texture is written to token 0 and topic to the remaining tokens") {
  CorpusConfig cfg = small_config();
  Corpus corpus = generate_corpus(cfg);
  TokenLayout layout{uint32_t(cfg.n_textures), uint32_t(cfg.n_topics)};
  for (const SyntheticVideo& v : corpus.videos) {
    REQUIRE(!v.token_ids.empty());
    CHECK(v.token_ids[0] == layout.texture_token(v.texture_id));
    CHECK(v.topic_id < cfg.n_topics);
    CHECK(v.texture_id < cfg.n_textures);
    for (size_t i = 1; i < v.token_ids.size(); ++i) {
      uint32_t id = v.token_ids[i];
      bool is_topic = id >= layout.topic_token(v.topic_id, 0) &&
                      id < layout.topic_token(v.topic_id, 0) + layout.tokens_per_topic;
      bool is_noise = id >= layout.noise_token(0) && id < layout.noise_token(layout.noise_pool);
      CHECK((is_topic || is_noise));
    }
  }
}

TEST_CASE("leave-one-out split follows the protocol") {
  InteractionLog log;
  for (uint64_t t = 0; t < 5; ++t) log.events.push_back({"u1", "v" + std::to_string(t), t});
  InteractionLog split = split_leave_one_out(log);
  REQUIRE(split.splits.size() == 5);
  CHECK(split.splits[0] == Split::train);
  CHECK(split.splits[1] == Split::train);
  CHECK(split.splits[2] == Split::train);
  CHECK(split.splits[3] == Split::val);
  CHECK(split.splits[4] == Split::test);

  SUBCASE("three events leave one training event") {
    InteractionLog tiny;
    for (uint64_t t = 0; t < 3; ++t) tiny.events.push_back({"u2", "v" + std::to_string(t), t});
    InteractionLog s = split_leave_one_out(tiny);
    CHECK(s.splits[0] == Split::train);
    CHECK(s.splits[1] == Split::val);
    CHECK(s.splits[2] == Split::test);
  }

  SUBCASE("too-few events name the user") {
    InteractionLog bad;
    bad.events.push_back({"u_scarce", "v0", 0});
    bad.events.push_back({"u_scarce", "v1", 1});
    try {
      split_leave_one_out(bad);
      FAIL("expected a split error");
    } catch (const Error& e) {
      CHECK(e.code == ErrorCode::split);
      CHECK(std::string(e.what()).find("u_scarce") != std::string::npos);
    }
  }
}

TEST_CASE("split produces one val and one test event per user") {
  CorpusConfig cfg = small_config();
  cfg.n_users = 100;
  cfg.n_items = 50;
  cfg.history_min = 5;
  cfg.history_max = 9;
  Corpus corpus = generate_corpus(cfg);
  InteractionLog split = split_leave_one_out(corpus.log);

  size_t n_val = 0, n_test = 0, n_train = 0;
  for (Split s : split.splits) {
    if (s == Split::val) ++n_val;
    if (s == Split::test) ++n_test;
    if (s == Split::train) ++n_train;
  }
  CHECK(n_val == 100);
  CHECK(n_test == 100);
  CHECK(n_train + n_val + n_test == split.events.size());

  // order preserved, timestamps strictly increasing per user after split
  std::map<std::string, uint64_t> last_ts;
  std::map<std::string, bool> seen;
  for (size_t i = 0; i < split.events.size(); ++i) {
    const Event& e = split.events[i];
    if (seen[e.user_id]) CHECK(e.timestamp > last_ts[e.user_id]);
    last_ts[e.user_id] = e.timestamp;
    seen[e.user_id] = true;
  }
}

TEST_CASE("serialization round-trips") {
  Corpus corpus = generate_corpus(small_config());
  corpus.log = split_leave_one_out(std::move(corpus.log));
  auto dir = temp_dir("roundtrip");
  save_corpus(corpus, dir);
  Corpus loaded = load_corpus(dir);

  REQUIRE(loaded.videos.size() == corpus.videos.size());
  for (size_t i = 0; i < corpus.videos.size(); ++i) {
    CHECK(loaded.videos[i].item_id == corpus.videos[i].item_id);
    CHECK(loaded.videos[i].topic_id == corpus.videos[i].topic_id);
    CHECK(loaded.videos[i].texture_id == corpus.videos[i].texture_id);
    CHECK(loaded.videos[i].token_ids == corpus.videos[i].token_ids);
  }
  REQUIRE(loaded.log.events.size() == corpus.log.events.size());
  for (size_t i = 0; i < corpus.log.events.size(); ++i) {
    CHECK(loaded.log.events[i].user_id == corpus.log.events[i].user_id);
    CHECK(loaded.log.events[i].item_id == corpus.log.events[i].item_id);
    CHECK(loaded.log.events[i].timestamp == corpus.log.events[i].timestamp);
    CHECK(loaded.log.splits[i] == corpus.log.splits[i]);
  }
}

TEST_CASE("items within a user history are distinct") {
  Corpus corpus = generate_corpus(small_config());
  std::map<std::string, std::set<std::string>> seen;
  std::map<std::string, size_t> count;
  for (const Event& e : corpus.log.events) {
    seen[e.user_id].insert(e.item_id);
    count[e.user_id]++;
  }
  for (auto& [user, items] : seen) CHECK(items.size() == count[user]);
}

TEST_CASE("invalid configs are rejected") {
  CorpusConfig cfg = small_config();
  cfg.history_min = 1;
  CHECK_THROWS_AS(cfg.validate(false), Error);
  cfg = small_config();
  cfg.n_items = 2;  // fewer than topics
  CHECK_THROWS_AS(cfg.validate(false), Error);
  cfg = small_config();
  cfg.history_min = 2;
  cfg.history_max = 2;
  CHECK_NOTHROW(cfg.validate(false));
  CHECK_THROWS_AS(cfg.validate(true), Error);  // split needs >= 3
}
