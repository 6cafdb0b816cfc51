#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace icalign {

// Counting scheme behind every budget decision in the pipeline. Counters
// are deterministic and safe for concurrent use once constructed.
class TokenCounter {
 public:
  virtual ~TokenCounter() = default;

  virtual std::string name() const = 0;

  virtual std::size_t count(std::string_view text) const = 0;

  // Upper bound on extra tokens a concatenation seam may introduce:
  // count(a + b) <= count(a) + count(b) + seam_slack().
  virtual std::size_t seam_slack() const { return 0; }

  // Byte length of the longest prefix of `text` holding at most
  // `max_tokens` tokens; the prefix ends on a token boundary when the text
  // is cut short.
  virtual std::size_t prefix_bytes(std::string_view text,
                                   std::size_t max_tokens) const = 0;

  // Byte length of the `max_tokens`-token prefix if it can no longer change
  // as more text arrives, nullopt otherwise. Lets a streaming consumer cut
  // off an over-producing source early; schemes where appended text can
  // reshape earlier tokens return nullopt.
  virtual std::optional<std::size_t> stable_prefix_bytes(
      std::string_view text, std::size_t max_tokens) const {
    (void)text;
    (void)max_tokens;
    return std::nullopt;
  }
};

// Reference scheme: tokens are maximal runs of non-whitespace bytes
// (whitespace = space, \t, \n, \v, \f, \r). count("") == 0 and
// concatenation never adds tokens, so seam_slack() is 0.
class WhitespaceCounter final : public TokenCounter {
 public:
  std::string name() const override { return "whitespace"; }
  std::size_t count(std::string_view text) const override;
  std::size_t prefix_bytes(std::string_view text,
                           std::size_t max_tokens) const override;
  std::optional<std::size_t> stable_prefix_bytes(
      std::string_view text, std::size_t max_tokens) const override;
};

// Greedy byte-level BPE over a ranked merge table: start from single bytes,
// repeatedly merge the adjacent pair with the lowest rank until none apply.
// No pre-tokenization. Adapter point for real subword vocabularies; the
// merge loop is quadratic in text length, fine for corpus-scale accounting
// but not for bulk training data.
class BpeCounter final : public TokenCounter {
 public:
  // File shape: {"name": "...", "merges": [["l","r"], ...]}, rank = position.
  static BpeCounter load(const std::string& path);
  BpeCounter(std::string name,
             std::vector<std::pair<std::string, std::string>> merges);

  std::string name() const override { return name_; }
  std::size_t count(std::string_view text) const override;
  std::size_t seam_slack() const override { return 2; }
  std::size_t prefix_bytes(std::string_view text,
                           std::size_t max_tokens) const override;

  std::vector<std::string> tokenize(std::string_view text) const;

 private:
  std::string name_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> ranks_;
};

}  // namespace icalign
