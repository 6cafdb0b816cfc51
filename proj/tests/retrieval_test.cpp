#include "icalign/retrieval.hpp"

#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "icalign/embedder.hpp"
#include "icalign/error.hpp"
#include "icalign/rng.hpp"
#include "testutil.hpp"

using icalign::Corpus;
using icalign::DemoPair;
using icalign::EmbeddingVector;
using icalign::HashingEmbedder;
using icalign::VectorIndex;

namespace {

Corpus tiny_corpus() {
  return Corpus({{"a", "alpha prompt", "r"},
                 {"b", "beta prompt", "r"},
                 {"c", "gamma prompt", "r"}});
}

std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::vector<float> v(dim);
  for (auto& x : v) {
    x = static_cast<float>(icalign::uniform_real(rng, -1.0, 1.0));
  }
  return v;
}

}  // namespace

TEST_CASE("embed returns one vector per text, deterministically") {
  HashingEmbedder embedder(16, 7);
  const auto vectors = embedder.embed({"a", "a"});
  REQUIRE(vectors.size() == 2);
  CHECK(vectors[0] == vectors[1]);
  CHECK(vectors[0].size() == 16);

  CHECK_THROWS_AS(embedder.embed({}), icalign::InputError);
}

TEST_CASE("hashing embedder matches the scripted oracle") {
  // frozen from tests/oracles/hashing_embedder_oracle.py
  HashingEmbedder embedder(8, 42);
  const auto hello = embedder.embed({"hello"}).front();
  const EmbeddingVector expect_hello{0.f, 0.f, 0.f, 0.f, 0.f, -1.f, 0.f, 0.f};
  REQUIRE(hello.size() == expect_hello.size());
  for (std::size_t i = 0; i < hello.size(); ++i) {
    CHECK(hello[i] == doctest::Approx(expect_hello[i]).epsilon(1e-7));
  }

  const auto fox =
      embedder.embed({"The quick brown fox! Jumps over 2 lazy dogs."}).front();
  const EmbeddingVector expect_fox{-0.301511347f, -0.301511347f, 0.f, 0.f,
                                   0.603022695f,  0.603022695f,  0.f,
                                   -0.301511347f};
  for (std::size_t i = 0; i < fox.size(); ++i) {
    CHECK(fox[i] == doctest::Approx(expect_fox[i]).epsilon(1e-7));
  }

  // case-folding and separator handling share one token stream
  CHECK(embedder.embed({"HELLO"}).front() == hello);
  CHECK(embedder.embed({"  hello!!"}).front() == hello);
}

TEST_CASE("index build covers the corpus and is byte-stable") {
  Corpus corpus = tiny_corpus();
  HashingEmbedder embedder(16, 0);
  const VectorIndex index = VectorIndex::build(corpus, embedder);
  CHECK(index.size() == 3);
  CHECK(index.dim() == 16);
  CHECK(index.ids() == std::vector<std::string>{"a", "b", "c"});
  CHECK(index.embedder_name() == "hash-d16-s0");
  CHECK(index.corpus_hash() == icalign::corpus_hash(corpus));

  testutil::TempDir tmp("index");
  index.save(tmp.file("one.bin"));
  VectorIndex::build(corpus, embedder).save(tmp.file("two.bin"));
  CHECK(testutil::read_file(tmp.file("one.bin")) ==
        testutil::read_file(tmp.file("two.bin")));

  const VectorIndex loaded = VectorIndex::load(tmp.file("one.bin"));
  CHECK(loaded.size() == index.size());
  CHECK(loaded.embedder_name() == index.embedder_name());
  CHECK(loaded.vector_at(1)[0] == index.vector_at(1)[0]);
}

TEST_CASE("concurrent index build equals the serial one") {
  std::vector<DemoPair> demos;
  for (int i = 0; i < 257; ++i) {
    demos.push_back({"d" + std::to_string(i),
                     "prompt number " + std::to_string(i), "r"});
  }
  Corpus corpus(std::move(demos));
  HashingEmbedder embedder(24, 3);
  icalign::IndexBuildOptions serial;
  serial.batch_size = 32;
  serial.max_in_flight = 1;
  icalign::IndexBuildOptions parallel;
  parallel.batch_size = 32;
  parallel.max_in_flight = 4;

  testutil::TempDir tmp("index");
  VectorIndex::build(corpus, embedder, serial).save(tmp.file("serial.bin"));
  VectorIndex::build(corpus, embedder, parallel).save(tmp.file("parallel.bin"));
  CHECK(testutil::read_file(tmp.file("serial.bin")) ==
        testutil::read_file(tmp.file("parallel.bin")));
}

TEST_CASE("paper-scale index holds 9716 vectors") {
  std::vector<DemoPair> demos;
  demos.reserve(9716);
  for (int i = 0; i < 9716; ++i) {
    demos.push_back({"d" + std::to_string(i),
                     "prompt " + std::to_string(i) + " text", "r"});
  }
  Corpus corpus(std::move(demos));
  HashingEmbedder embedder(16, 0);
  icalign::IndexBuildOptions options;
  options.batch_size = 512;
  options.max_in_flight = 4;
  const VectorIndex index = VectorIndex::build(corpus, embedder, options);
  CHECK(index.size() == 9716);
}

TEST_CASE("index cache refuses a mismatched corpus") {
  Corpus corpus = tiny_corpus();
  HashingEmbedder embedder(8, 0);
  const VectorIndex index = VectorIndex::build(corpus, embedder);
  testutil::TempDir tmp("index");
  const std::string path = tmp.file("cache.bin");
  index.save(path);

  CHECK_NOTHROW(VectorIndex::load_for_corpus(path, corpus));
  const Corpus other({{"a", "alpha prompt CHANGED", "r"},
                      {"b", "beta prompt", "r"},
                      {"c", "gamma prompt", "r"}});
  CHECK_THROWS_AS(VectorIndex::load_for_corpus(path, other),
                  icalign::InputError);

  testutil::write_file(tmp.file("junk.bin"), "not an index");
  CHECK_THROWS_AS(VectorIndex::load(tmp.file("junk.bin")),
                  icalign::InputError);
}

TEST_CASE("cosine identity and hand-computed ordering") {
  const std::vector<std::string> ids{"a", "b", "c"};
  const float inv_sqrt2 = 1.0f / std::sqrt(2.0f);
  const std::vector<EmbeddingVector> vectors{
      {1.f, 0.f}, {0.f, 1.f}, {inv_sqrt2, inv_sqrt2}};
  const VectorIndex index =
      VectorIndex::from_vectors({"a", "b", "c"}, vectors, "test", 0);

  const EmbeddingVector query{1.f, 0.f};
  const auto ranking = icalign::rank_by_relevance(index, query, "q");
  REQUIRE(ranking.ranked.size() == 3);
  CHECK(ranking.query_id == "q");
  CHECK(ranking.ranked[0].id == "a");
  CHECK(ranking.ranked[0].score == doctest::Approx(1.0));
  CHECK(ranking.ranked[1].id == "c");
  CHECK(ranking.ranked[1].score == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK(ranking.ranked[2].id == "b");
  CHECK(ranking.ranked[2].score == doctest::Approx(0.0));
  (void)ids;
}

TEST_CASE("ranking matches the brute-force oracle, ties by id") {
  std::mt19937_64 rng(424242);
  for (int iteration = 0; iteration < 60; ++iteration) {
    const std::size_t dim = 2 + icalign::bounded_rand(rng, 15);
    const std::size_t n = 1 + icalign::bounded_rand(rng, 300);
    std::vector<std::string> ids;
    std::vector<EmbeddingVector> vectors;
    char id_buf[16];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(id_buf, sizeof(id_buf), "d%04zu", i);
      ids.emplace_back(id_buf);
      if (i > 0 && icalign::bounded_rand(rng, 10) == 0) {
        vectors.push_back(vectors[icalign::bounded_rand(rng, i)]);  // tie
      } else {
        vectors.push_back(random_vector(rng, dim));
      }
    }
    const VectorIndex index = VectorIndex::from_vectors(ids, vectors, "t", 0);
    const auto query = random_vector(rng, dim);
    const auto got = icalign::rank_by_relevance(index, query);
    const auto want = testutil::brute_force_cosine_rank(ids, vectors, query);
    REQUIRE(got.ranked.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(got.ranked[i].id == want[i].id);
      CHECK(got.ranked[i].score == want[i].score);
    }
  }
}

TEST_CASE("query scaling leaves the ranking unchanged") {
  std::mt19937_64 rng(777);
  const std::size_t dim = 12;
  std::vector<std::string> ids;
  std::vector<EmbeddingVector> vectors;
  for (std::size_t i = 0; i < 200; ++i) {
    ids.push_back("d" + std::to_string(1000 + i));
    vectors.push_back(random_vector(rng, dim));
  }
  const VectorIndex index = VectorIndex::from_vectors(ids, vectors, "t", 0);
  const auto query = random_vector(rng, dim);
  const auto base = icalign::rank_by_relevance(index, query);

  for (const double lambda : {0.25, 4.0, 1024.0, 3.7, 0.0019}) {
    // power-of-two scaling is exact in float, so scores must be bit-equal;
    // other scalars round the query components and may move scores by one
    // float ulp without being allowed to touch the order
    const bool exact =
        lambda == 0.25 || lambda == 4.0 || lambda == 1024.0;
    EmbeddingVector scaled(query);
    for (auto& x : scaled) x = static_cast<float>(x * lambda);
    const auto got = icalign::rank_by_relevance(index, scaled);
    for (std::size_t i = 0; i < base.ranked.size(); ++i) {
      CHECK(got.ranked[i].id == base.ranked[i].id);
      if (exact) {
        CHECK(got.ranked[i].score == base.ranked[i].score);
      } else {
        CHECK(got.ranked[i].score ==
              doctest::Approx(base.ranked[i].score).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("zero vectors are flagged and rank last") {
  const std::vector<EmbeddingVector> vectors{
      {0.f, 0.f}, {1.f, 0.f}, {0.f, 2.f}};
  const VectorIndex index =
      VectorIndex::from_vectors({"zero", "x", "y"}, vectors, "t", 0);
  CHECK(index.zero_vector_ids() == std::vector<std::string>{"zero"});

  const EmbeddingVector ones{1.f, 1.f};
  const auto ranking = icalign::rank_by_relevance(index, ones);
  CHECK(ranking.ranked.back().id == "zero");
  CHECK(std::isinf(ranking.ranked.back().score));

  // zero query: everything undefined, order falls back to ids
  const EmbeddingVector zeros{0.f, 0.f};
  const auto degenerate = icalign::rank_by_relevance(index, zeros);
  CHECK(degenerate.ranked[0].id == "x");
  CHECK(degenerate.ranked[1].id == "y");
  CHECK(degenerate.ranked[2].id == "zero");
}

TEST_CASE("dimension mismatches are hard errors") {
  const VectorIndex index =
      VectorIndex::from_vectors({"a"}, {{1.f, 0.f}}, "t", 0);
  const EmbeddingVector wide{1.f, 0.f, 0.f};
  CHECK_THROWS(icalign::rank_by_relevance(index, wide));
}

TEST_CASE("random ranking is reproducible and complete") {
  Corpus corpus = tiny_corpus();
  const auto one = icalign::rank_randomly(corpus, 99, "q");
  const auto two = icalign::rank_randomly(corpus, 99, "q");
  REQUIRE(one.ranked.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(one.ranked[i].id == two.ranked[i].id);
    CHECK(one.ranked[i].score == 0.0);
  }

  const Corpus singleton(std::vector<DemoPair>{{"only", "p", "r"}});
  const auto solo = icalign::rank_randomly(singleton, 1);
  REQUIRE(solo.ranked.size() == 1);
  CHECK(solo.ranked[0].id == "only");
}

TEST_CASE("random ranking is uniform over first positions") {
  std::vector<DemoPair> demos;
  for (int i = 0; i < 5; ++i) {
    demos.push_back({"d" + std::to_string(i), "p", "r"});
  }
  const Corpus corpus(std::move(demos));
  std::map<std::string, int> first_counts;
  const int trials = 10000;
  for (int seed = 0; seed < trials; ++seed) {
    first_counts[icalign::rank_randomly(corpus, seed).ranked[0].id]++;
  }
  for (const auto& [id, count] : first_counts) {
    INFO("demo ", id, " first ", count, " times");
    CHECK(count > trials * (0.20 - 0.015));
    CHECK(count < trials * (0.20 + 0.015));
  }
}
