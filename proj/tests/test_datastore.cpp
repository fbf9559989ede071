#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "mmpr/datastore.hpp"

using namespace mmpr;
using testutil::TempDir;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("embeddings round-trip exactly") {
  TempDir dir("ds_rt");
  std::mt19937_64 rng(7);
  EmbeddingTable t;
  t.modality = Modality::text;
  t.dim = 5;
  for (int i = 0; i < 20; ++i)
    t.rows["item" + std::to_string(i)] = testutil::random_vec(rng, 5, 100.0);
  t.rows["tiny"] = {1e-300, -1e300, 0.0, 0.1, 1.0 / 3.0};
  t.dim = 5;
  save_embeddings(t, dir.str("e.tsv"));
  auto back = load_embeddings(dir.str("e.tsv"), Modality::text);
  CHECK(back.dim == t.dim);
  CHECK(back.rows == t.rows);
}

TEST_CASE("embeddings loader rejects bad input") {
  TempDir dir("ds_bad");
  SUBCASE("dim mismatch") {
    write_file(dir.str("e.tsv"), "a\t1,2,3\nb\t1,2\n");
    CHECK_THROWS_WITH_AS(load_embeddings(dir.str("e.tsv"), Modality::text),
                         doctest::Contains("line 2"), Error);
  }
  SUBCASE("header dim mismatch") {
    write_file(dir.str("e.tsv"), "#dim=4\na\t1,2,3\n");
    CHECK_THROWS_AS(load_embeddings(dir.str("e.tsv"), Modality::text), Error);
  }
  SUBCASE("duplicate id") {
    write_file(dir.str("e.tsv"), "a\t1,2\na\t3,4\n");
    try {
      load_embeddings(dir.str("e.tsv"), Modality::text);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DuplicateId);
    }
  }
  SUBCASE("non-finite value") {
    write_file(dir.str("e.tsv"), "a\t1,nan\n");
    CHECK_THROWS_AS(load_embeddings(dir.str("e.tsv"), Modality::text), Error);
  }
  SUBCASE("missing file") {
    try {
      load_embeddings(dir.str("absent.tsv"), Modality::text);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Io);
    }
  }
  SUBCASE("empty file gives empty table") {
    write_file(dir.str("e.tsv"), "#dim=3\n");
    auto t = load_embeddings(dir.str("e.tsv"), Modality::text);
    CHECK(t.rows.empty());
    CHECK(t.dim == 3);
  }
}

TEST_CASE("interactions round-trip and validation") {
  TempDir dir("ds_int");
  write_file(dir.str("i.tsv"), "u1\ta\t10\nu2\tb\t5\nu1\tb\t7\n");
  auto log = load_interactions(dir.str("i.tsv"));
  REQUIRE(log.entries.size() == 3);
  CHECK(log.entries[0].user == "u1");
  CHECK(log.entries[0].item == "a");
  CHECK(log.entries[0].timestamp == 10);

  save_interactions(log, dir.str("i2.tsv"));
  auto log2 = load_interactions(dir.str("i2.tsv"));
  REQUIRE(log2.entries.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(log2.entries[i].user == log.entries[i].user);
    CHECK(log2.entries[i].item == log.entries[i].item);
    CHECK(log2.entries[i].timestamp == log.entries[i].timestamp);
  }

  SUBCASE("negative timestamp") {
    write_file(dir.str("neg.tsv"), "u\ti\t-1\n");
    try {
      load_interactions(dir.str("neg.tsv"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NegativeTimestamp);
    }
  }
  SUBCASE("malformed line") {
    write_file(dir.str("bad.tsv"), "u\ti\n");
    CHECK_THROWS_AS(load_interactions(dir.str("bad.tsv")), Error);
  }
}

TEST_CASE("profiles round-trip and validation") {
  TempDir dir("ds_prof");
  write_file(dir.str("p.jsonl"),
             R"({"id":"u1","kind":"user","profile":"a user"})"
             "\n"
             R"({"id":"i1","kind":"item","profile":"an item","title":"The Item"})"
             "\n");
  auto store = load_profiles(dir.str("p.jsonl"));
  CHECK(store.user_profiles.at("u1") == "a user");
  CHECK(store.item_profiles.at("i1") == "an item");
  CHECK(store.item_titles.at("i1") == "The Item");

  save_profiles(store, dir.str("p2.jsonl"));
  auto store2 = load_profiles(dir.str("p2.jsonl"));
  CHECK(store2.user_profiles == store.user_profiles);
  CHECK(store2.item_profiles == store.item_profiles);
  CHECK(store2.item_titles == store.item_titles);

  SUBCASE("bad kind") {
    write_file(dir.str("bad.jsonl"), R"({"id":"x","kind":"shop","profile":"p"})" "\n");
    try {
      load_profiles(dir.str("bad.jsonl"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MalformedRecord);
    }
  }
  SUBCASE("missing field") {
    write_file(dir.str("bad.jsonl"), R"({"id":"x","kind":"user"})" "\n");
    CHECK_THROWS_AS(load_profiles(dir.str("bad.jsonl")), Error);
  }
}

TEST_CASE("derive_sequences matches an independent stable sort oracle") {
  std::mt19937_64 rng(99);
  InteractionLog log;
  std::uniform_int_distribution<int> user(0, 5), item(0, 10), ts(0, 4);
  for (int i = 0; i < 200; ++i)
    log.entries.push_back(Interaction{"u" + std::to_string(user(rng)),
                                      "i" + std::to_string(item(rng)),
                                      ts(rng)});

  // Oracle: per user, repeatedly take the earliest remaining entry, first by
  // timestamp then by original position (insertion-order stable selection).
  std::map<std::string, std::vector<std::string>> expected;
  {
    std::map<std::string, std::vector<std::pair<int64_t, size_t>>> per_user;
    for (size_t i = 0; i < log.entries.size(); ++i)
      per_user[log.entries[i].user].push_back({log.entries[i].timestamp, i});
    for (auto& [u, v] : per_user) {
      std::vector<char> taken(v.size(), 0);
      for (size_t n = 0; n < v.size(); ++n) {
        size_t best = v.size();
        for (size_t j = 0; j < v.size(); ++j) {
          if (taken[j]) continue;
          if (best == v.size() || v[j].first < v[best].first) best = j;
        }
        taken[best] = 1;
        expected[u].push_back(log.entries[v[best].second].item);
      }
    }
  }

  auto seqs = derive_sequences(log);
  size_t total = 0;
  for (const auto& s : seqs) {
    CHECK(s.items == expected.at(s.user));
    total += s.items.size();
  }
  CHECK(total == log.entries.size());  // multiplicity preserved
  CHECK(seqs.size() == expected.size());
}
