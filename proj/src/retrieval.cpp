#include "icalign/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "icalign/error.hpp"
#include "icalign/hash.hpp"
#include "icalign/rng.hpp"

namespace icalign {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'A', 'L', 'I', 'D', 'X', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  char buf[sizeof(T)];
  in.read(buf, sizeof(T));
  if (!in) throw InputError("truncated index cache: " + path);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

std::string read_bytes(std::ifstream& in, std::size_t n,
                       const std::string& path) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw InputError("truncated index cache: " + path);
  return s;
}

}  // namespace

void VectorIndex::finish_init() {
  const std::size_t n = ids_.size();
  norms_.resize(n);
  zero_ids_.clear();
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) {
      const double x = data_[i * dim_ + d];
      sq += x * x;
    }
    norms_[i] = std::sqrt(sq);
    if (norms_[i] == 0.0) zero_ids_.push_back(ids_[i]);
  }
}

VectorIndex VectorIndex::from_vectors(
    std::vector<std::string> ids, const std::vector<EmbeddingVector>& vectors,
    std::string embedder_name, std::uint64_t corpus_hash) {
  if (ids.size() != vectors.size()) {
    throw Error("from_vectors: ids/vectors size mismatch");
  }
  VectorIndex index;
  index.ids_ = std::move(ids);
  index.embedder_name_ = std::move(embedder_name);
  index.corpus_hash_ = corpus_hash;
  index.dim_ = vectors.empty() ? 0 : vectors.front().size();
  index.data_.reserve(vectors.size() * index.dim_);
  for (const auto& v : vectors) {
    if (v.size() != index.dim_) {
      throw Error("from_vectors: mixed vector dimensions");
    }
    index.data_.insert(index.data_.end(), v.begin(), v.end());
  }
  index.finish_init();
  return index;
}

VectorIndex VectorIndex::build(const Corpus& corpus, Embedder& embedder,
                               const IndexBuildOptions& options) {
  if (corpus.empty()) throw InputError("build index: empty corpus");
  const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
  const std::size_t n = corpus.size();
  const std::size_t n_batches = (n + batch_size - 1) / batch_size;

  std::vector<std::vector<EmbeddingVector>> per_batch(n_batches);
  auto run_batch = [&](std::size_t b) {
    const std::size_t begin = b * batch_size;
    const std::size_t end = std::min(n, begin + batch_size);
    std::vector<std::string> texts;
    texts.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      texts.push_back(corpus.at(i).prompt);
    }
    per_batch[b] = embedder.embed(texts);
  };

  const std::size_t workers =
      std::min(std::max<std::size_t>(1, options.max_in_flight), n_batches);
  if (workers <= 1) {
    for (std::size_t b = 0; b < n_batches; ++b) run_batch(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t b = next.fetch_add(1);
          if (b >= n_batches) return;
          try {
            run_batch(b);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& demo : corpus.demos()) ids.push_back(demo.id);

  std::vector<EmbeddingVector> vectors;
  vectors.reserve(n);
  for (auto& batch : per_batch) {
    for (auto& v : batch) vectors.push_back(std::move(v));
  }
  return from_vectors(std::move(ids), vectors, embedder.name(),
                      ::icalign::corpus_hash(corpus));
}

std::span<const float> VectorIndex::vector_at(std::size_t i) const {
  return {data_.data() + i * dim_, dim_};
}

void VectorIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write index cache: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint32_t>(dim_));
  write_pod(out, static_cast<std::uint64_t>(ids_.size()));
  write_pod(out, corpus_hash_);
  write_pod(out, static_cast<std::uint32_t>(embedder_name_.size()));
  out.write(embedder_name_.data(),
            static_cast<std::streamsize>(embedder_name_.size()));
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    write_pod(out, static_cast<std::uint32_t>(ids_[i].size()));
    out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
    out.write(reinterpret_cast<const char*>(data_.data() + i * dim_),
              static_cast<std::streamsize>(dim_ * sizeof(float)));
  }
  if (!out) throw InputError("failed writing index cache: " + path);
}

VectorIndex VectorIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read index cache: " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw InputError("not an index cache: " + path);
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kFormatVersion) {
    throw InputError("unsupported index cache version " +
                     std::to_string(version) + ": " + path);
  }
  VectorIndex index;
  index.dim_ = read_pod<std::uint32_t>(in, path);
  const auto count = read_pod<std::uint64_t>(in, path);
  index.corpus_hash_ = read_pod<std::uint64_t>(in, path);
  const auto name_len = read_pod<std::uint32_t>(in, path);
  index.embedder_name_ = read_bytes(in, name_len, path);
  index.ids_.reserve(count);
  index.data_.resize(static_cast<std::size_t>(count) * index.dim_);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id_len = read_pod<std::uint32_t>(in, path);
    index.ids_.push_back(read_bytes(in, id_len, path));
    in.read(reinterpret_cast<char*>(index.data_.data() + i * index.dim_),
            static_cast<std::streamsize>(index.dim_ * sizeof(float)));
    if (!in) throw InputError("truncated index cache: " + path);
  }
  index.finish_init();
  return index;
}

VectorIndex VectorIndex::load_for_corpus(const std::string& path,
                                         const Corpus& corpus) {
  VectorIndex index = load(path);
  const std::uint64_t expected = ::icalign::corpus_hash(corpus);
  if (index.corpus_hash_ != expected) {
    throw InputError("index cache " + path +
                     " was built from a different corpus (cache hash " +
                     to_hex(index.corpus_hash_) + ", corpus hash " +
                     to_hex(expected) + "); rebuild with `index --force`");
  }
  if (index.size() != corpus.size()) {
    throw InputError("index cache " + path + " holds " +
                     std::to_string(index.size()) + " vectors for a corpus of " +
                     std::to_string(corpus.size()));
  }
  return index;
}

RetrievalRanking rank_by_relevance(const VectorIndex& index,
                                   std::span<const float> query,
                                   std::string query_id) {
  if (query.size() != index.dim()) {
    throw Error("query dim " + std::to_string(query.size()) +
                " does not match index dim " + std::to_string(index.dim()));
  }
  double query_sq = 0.0;
  for (float x : query) query_sq += static_cast<double>(x) * x;
  const double query_norm = std::sqrt(query_sq);

  RetrievalRanking ranking;
  ranking.query_id = std::move(query_id);
  ranking.ranked.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    double score;
    if (query_norm == 0.0 || index.norm_at(i) == 0.0) {
      // Cosine is undefined for zero vectors; rank them last.
      score = -std::numeric_limits<double>::infinity();
    } else {
      const auto v = index.vector_at(i);
      double dot = 0.0;
      for (std::size_t d = 0; d < v.size(); ++d) {
        dot += static_cast<double>(query[d]) * v[d];
      }
      score = dot / (query_norm * index.norm_at(i));
    }
    ranking.ranked.push_back({index.ids()[i], score});
  }
  std::sort(ranking.ranked.begin(), ranking.ranked.end(),
            [](const ScoredDemo& a, const ScoredDemo& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.id < b.id;
            });
  return ranking;
}

RetrievalRanking rank_randomly(const Corpus& corpus, std::uint64_t seed,
                               std::string query_id) {
  std::vector<std::string> ids;
  ids.reserve(corpus.size());
  for (const auto& demo : corpus.demos()) ids.push_back(demo.id);
  seeded_shuffle(ids, seed);

  RetrievalRanking ranking;
  ranking.query_id = std::move(query_id);
  ranking.ranked.reserve(ids.size());
  for (auto& id : ids) ranking.ranked.push_back({std::move(id), 0.0});
  return ranking;
}

}  // namespace icalign
