#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "icalign/corpus.hpp"
#include "icalign/embedder.hpp"

namespace icalign {

struct ScoredDemo {
  std::string id;
  double score = 0.0;
};

// Full ordering of the corpus for one query, most relevant first. The
// packer truncates; retrieval never does, because the stop rule depends on
// token budgets retrieval knows nothing about.
struct RetrievalRanking {
  std::string query_id;
  std::vector<ScoredDemo> ranked;
};

struct IndexBuildOptions {
  std::size_t batch_size = 64;
  std::size_t max_in_flight = 1;
};

// Immutable exact-search index over corpus prompt embeddings. Brute-force
// scan: at ~10^4 entries approximate structures buy nothing, and exactness
// keeps the ranking testable against a hand-rolled oracle. An ANN-backed
// index would slot in behind this same surface.
class VectorIndex {
 public:
  VectorIndex() = default;

  // Embeds corpus prompts (not responses), batched, optionally with
  // concurrent in-flight batches. Zero-vector embeddings are indexed but
  // recorded in zero_vector_ids().
  static VectorIndex build(const Corpus& corpus, Embedder& embedder,
                           const IndexBuildOptions& options = {});

  static VectorIndex from_vectors(std::vector<std::string> ids,
                                  const std::vector<EmbeddingVector>& vectors,
                                  std::string embedder_name,
                                  std::uint64_t corpus_hash);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> vector_at(std::size_t i) const;
  double norm_at(std::size_t i) const { return norms_[i]; }
  const std::string& embedder_name() const { return embedder_name_; }
  std::uint64_t corpus_hash() const { return corpus_hash_; }
  const std::vector<std::string>& zero_vector_ids() const {
    return zero_ids_;
  }

  // Binary cache: header (magic, version, dim, count, corpus hash,
  // embedder name) then per-id vectors, little-endian. Deterministic bytes
  // for identical contents.
  void save(const std::string& path) const;
  static VectorIndex load(const std::string& path);
  // Refuses a cache whose recorded corpus hash does not match `corpus`.
  static VectorIndex load_for_corpus(const std::string& path,
                                     const Corpus& corpus);

 private:
  std::vector<std::string> ids_;
  std::vector<float> data_;  // size() * dim(), row-major
  std::vector<double> norms_;
  std::vector<std::string> zero_ids_;
  std::string embedder_name_;
  std::uint64_t corpus_hash_ = 0;
  std::size_t dim_ = 0;

  void finish_init();
};

// Exact cosine ranking of every indexed demo: descending score, ties by
// ascending id. Zero vectors (query or entry) score -infinity so they sort
// last without poisoning anything with NaN. Throws on a dim mismatch.
RetrievalRanking rank_by_relevance(const VectorIndex& index,
                                   std::span<const float> query,
                                   std::string query_id = {});

// Uniform random permutation of the corpus ids, reproducible from `seed`.
// The order itself is the ranking; scores are reported as 0.
RetrievalRanking rank_randomly(const Corpus& corpus, std::uint64_t seed,
                               std::string query_id = {});

}  // namespace icalign
