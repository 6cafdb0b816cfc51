#include "icalign/token_counter.hpp"

#include <fstream>
#include <limits>

#include "nlohmann/json.hpp"

#include "icalign/error.hpp"

namespace icalign {

namespace {

bool is_ws(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' ||
         c == '\r';
}

// End offset of the max_tokens-token prefix, but only once the next token
// has started (so the extent can no longer grow). nullopt otherwise.
std::optional<std::size_t> closed_prefix_end(std::string_view text,
                                             std::size_t max_tokens) {
  std::size_t tokens = 0;
  std::size_t end = 0;
  bool in_token = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (is_ws(static_cast<unsigned char>(text[i]))) {
      in_token = false;
      continue;
    }
    if (!in_token) {
      if (tokens == max_tokens) return end;
      in_token = true;
      ++tokens;
    }
    end = i + 1;
  }
  return std::nullopt;
}

}  // namespace

std::size_t WhitespaceCounter::count(std::string_view text) const {
  std::size_t n = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    if (is_ws(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++n;
    }
  }
  return n;
}

std::size_t WhitespaceCounter::prefix_bytes(std::string_view text,
                                            std::size_t max_tokens) const {
  if (max_tokens == 0) return 0;
  return closed_prefix_end(text, max_tokens).value_or(text.size());
}

std::optional<std::size_t> WhitespaceCounter::stable_prefix_bytes(
    std::string_view text, std::size_t max_tokens) const {
  return closed_prefix_end(text, max_tokens);
}

BpeCounter BpeCounter::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read merge table: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad merge table " + path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("merges") || !j["merges"].is_array()) {
    throw InputError("bad merge table " + path + ": expected {name, merges}");
  }
  std::vector<std::pair<std::string, std::string>> merges;
  for (const auto& m : j["merges"]) {
    if (!m.is_array() || m.size() != 2 || !m[0].is_string() ||
        !m[1].is_string()) {
      throw InputError("bad merge table " + path +
                       ": each merge must be [left, right]");
    }
    std::string left = m[0].get<std::string>();
    std::string right = m[1].get<std::string>();
    if (left.empty() || right.empty()) {
      throw InputError("bad merge table " + path + ": empty merge side");
    }
    merges.emplace_back(std::move(left), std::move(right));
  }
  return BpeCounter(j.value("name", std::string("bpe")), std::move(merges));
}

BpeCounter::BpeCounter(std::string name,
                       std::vector<std::pair<std::string, std::string>> merges)
    : name_(std::move(name)), merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    // first occurrence wins on duplicate pairs
    ranks_.emplace(merges_[i], i);
  }
}

std::vector<std::string> BpeCounter::tokenize(std::string_view text) const {
  std::vector<std::string> tokens;
  tokens.reserve(text.size());
  for (char c : text) tokens.emplace_back(1, c);

  while (tokens.size() > 1) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      const auto it = ranks_.find({tokens[i], tokens[i + 1]});
      if (it != ranks_.end() && it->second < best) best = it->second;
    }
    if (best == std::numeric_limits<std::size_t>::max()) break;

    const auto& [left, right] = merges_[best];
    std::vector<std::string> merged;
    merged.reserve(tokens.size());
    std::size_t i = 0;
    while (i < tokens.size()) {
      if (i + 1 < tokens.size() && tokens[i] == left &&
          tokens[i + 1] == right) {
        merged.push_back(left + right);
        i += 2;
      } else {
        merged.push_back(std::move(tokens[i]));
        ++i;
      }
    }
    tokens = std::move(merged);
  }
  return tokens;
}

std::size_t BpeCounter::count(std::string_view text) const {
  return tokenize(text).size();
}

std::size_t BpeCounter::prefix_bytes(std::string_view text,
                                     std::size_t max_tokens) const {
  const auto tokens = tokenize(text);
  std::size_t bytes = 0;
  std::size_t taken = 0;
  for (const auto& t : tokens) {
    if (taken == max_tokens) break;
    bytes += t.size();
    ++taken;
  }
  return bytes;
}

}  // namespace icalign
