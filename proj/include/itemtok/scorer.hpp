#pragma once

#include <memory>
#include <span>

#include "itemtok/vocab.hpp"

namespace itemtok {

/// Incremental next-token distribution over a growing prefix.
class DecodeSession {
 public:
  virtual ~DecodeSession() = default;
  virtual std::unique_ptr<DecodeSession> clone() const = 0;
  virtual void push(TokenId token) = 0;
  /// Log-probabilities of the next token; sums to 1 after exponentiation.
  virtual std::span<const double> log_probs() const = 0;
};

/// Anything that can score continuations of a prompt. Implementations must be
/// safe to use concurrently from several threads once constructed.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::unique_ptr<DecodeSession> open(std::span<const TokenId> prompt) const = 0;
};

}  // namespace itemtok
