#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace icalign {

using EmbeddingVector = std::vector<float>;

// Text embedding backend. Implementations must be deterministic for a fixed
// configuration and safe to call from multiple threads.
class Embedder {
 public:
  virtual ~Embedder() = default;

  virtual std::string name() const = 0;

  // Expected vector width; 0 when unknown until the first response.
  virtual std::size_t dim() const = 0;

  // One vector per input, same order, every entry finite, uniform width.
  // Throws InputError on an empty batch, BackendError on transport
  // failures, Error on a dimension mismatch within the batch.
  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);

 protected:
  virtual std::vector<EmbeddingVector> do_embed(
      const std::vector<std::string>& texts) = 0;
};

// Seeded feature-hashing bag-of-words embedder; lets the whole pipeline run
// with zero external assets. Tokens are lowercased maximal runs of ASCII
// alphanumerics; each token adds the sign bit of its seeded hash (+1/-1) to
// bucket hash % dim; the result is L2-normalized. A text with no tokens
// embeds to the zero vector, which ranking scores as matching nothing.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dim = 64, std::uint64_t seed = 0);

  std::string name() const override;
  std::size_t dim() const override { return dim_; }

 protected:
  std::vector<EmbeddingVector> do_embed(
      const std::vector<std::string>& texts) override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

struct HttpEmbedderOptions {
  std::string endpoint;  // http://host:port
  std::string path = "/embed";
  std::string auth_env;  // name of env var holding a bearer token
  std::size_t dim = 0;   // expected width; 0 accepts the first response's
  int timeout_s = 60;
};

// POSTs {"texts": [...]} and expects {"embeddings": [[...], ...]}.
// Connection and 5xx failures surface as retryable BackendError.
class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(HttpEmbedderOptions options);

  std::string name() const override;
  std::size_t dim() const override { return dim_.load(); }

 protected:
  std::vector<EmbeddingVector> do_embed(
      const std::vector<std::string>& texts) override;

 private:
  HttpEmbedderOptions options_;
  std::atomic<std::size_t> dim_;
};

}  // namespace icalign
