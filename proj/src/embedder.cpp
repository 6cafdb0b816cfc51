#include "icalign/embedder.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "httplib.h"
#include "nlohmann/json.hpp"

#include "icalign/error.hpp"
#include "icalign/hash.hpp"

namespace icalign {

std::vector<EmbeddingVector> Embedder::embed(
    const std::vector<std::string>& texts) {
  if (texts.empty()) throw InputError("embed: empty text batch");
  std::vector<EmbeddingVector> vectors = do_embed(texts);
  if (vectors.size() != texts.size()) {
    throw Error("embedder \"" + name() + "\" returned " +
                std::to_string(vectors.size()) + " vectors for " +
                std::to_string(texts.size()) + " texts");
  }
  const std::size_t width = vectors.front().size();
  if (width == 0) throw Error("embedder \"" + name() + "\" returned empty vectors");
  for (const auto& v : vectors) {
    if (v.size() != width) {
      throw Error("embedder \"" + name() +
                  "\" returned mixed dimensions within one batch (" +
                  std::to_string(width) + " vs " + std::to_string(v.size()) +
                  ")");
    }
    for (float x : v) {
      if (!std::isfinite(x)) {
        throw Error("embedder \"" + name() + "\" returned a non-finite value");
      }
    }
  }
  return vectors;
}

HashingEmbedder::HashingEmbedder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw InputError("hashing embedder: dim must be >= 1");
}

std::string HashingEmbedder::name() const {
  std::ostringstream s;
  s << "hash-d" << dim_ << "-s" << seed_;
  return s.str();
}

std::vector<EmbeddingVector> HashingEmbedder::do_embed(
    const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    EmbeddingVector v(dim_, 0.0f);
    std::string token;
    auto flush = [&] {
      if (token.empty()) return;
      const std::uint64_t h = fnv1a64(token, seed_);
      const std::size_t bucket = static_cast<std::size_t>(h % dim_);
      v[bucket] += (h >> 63) ? -1.0f : 1.0f;
      token.clear();
    };
    for (unsigned char c : text) {
      if (std::isalnum(c)) {
        token.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
      }
    }
    flush();

    double norm_sq = 0.0;
    for (float x : v) norm_sq += static_cast<double>(x) * x;
    if (norm_sq > 0.0) {
      const float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
      for (float& x : v) x *= inv;
    }
    out.push_back(std::move(v));
  }
  return out;
}

HttpEmbedder::HttpEmbedder(HttpEmbedderOptions options)
    : options_(std::move(options)), dim_(options_.dim) {
  if (options_.endpoint.empty()) {
    throw InputError("http embedder: endpoint required");
  }
}

std::string HttpEmbedder::name() const { return "http:" + options_.endpoint; }

std::vector<EmbeddingVector> HttpEmbedder::do_embed(
    const std::vector<std::string>& texts) {
  httplib::Client client(options_.endpoint);
  client.set_connection_timeout(options_.timeout_s);
  client.set_read_timeout(options_.timeout_s);
  httplib::Headers headers;
  if (!options_.auth_env.empty()) {
    if (const char* token = std::getenv(options_.auth_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  const nlohmann::json body{{"texts", texts}};
  auto res = client.Post(options_.path, headers, body.dump(),
                         "application/json");
  if (!res) {
    throw BackendError("embedding request to " + options_.endpoint +
                           " failed: " + httplib::to_string(res.error()),
                       /*retryable=*/true);
  }
  if (res->status == 429 || res->status >= 500) {
    throw BackendError("embedding service returned HTTP " +
                           std::to_string(res->status),
                       /*retryable=*/true);
  }
  if (res->status != 200) {
    throw BackendError("embedding service returned HTTP " +
                           std::to_string(res->status) + ": " +
                           res->body.substr(0, 200),
                       /*retryable=*/false);
  }

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("bad embedding response: ") + e.what());
  }
  if (!j.contains("embeddings") || !j["embeddings"].is_array()) {
    throw BackendError("embedding response missing \"embeddings\" array");
  }
  std::vector<EmbeddingVector> vectors;
  vectors.reserve(j["embeddings"].size());
  for (const auto& row : j["embeddings"]) {
    vectors.push_back(row.get<EmbeddingVector>());
  }
  std::size_t expected = dim_.load();
  if (expected == 0 && !vectors.empty()) {
    dim_.store(vectors.front().size());
  } else if (expected != 0) {
    for (const auto& v : vectors) {
      if (v.size() != expected) {
        throw Error("embedding service returned dim " +
                    std::to_string(v.size()) + ", expected " +
                    std::to_string(expected));
      }
    }
  }
  return vectors;
}

}  // namespace icalign
