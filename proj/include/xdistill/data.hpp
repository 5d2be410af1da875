#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xdistill/common.hpp"
#include "xdistill/rng.hpp"

namespace xdistill {

// Character vocabulary: sorted unique corpus characters with a padding symbol
// at id 0. Encoding an unseen character is an error (closed vocabulary).
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<char> chars);  // chars without the pad symbol

  int64_t size() const { return static_cast<int64_t>(id_to_char_.size()); }
  std::vector<int64_t> encode(const std::string& text) const;
  std::string decode(const std::vector<int64_t>& ids) const;
  const std::vector<char>& symbols() const { return id_to_char_; }  // [0] is pad

 private:
  std::vector<char> id_to_char_;
  std::vector<int64_t> char_to_id_;
};

Vocab build_vocab(const std::string& text);

// Deterministic pseudo-text: four fixed motif sentences cycled with a little
// seeded drift and 2% character noise. Uses 59 distinct characters, so the
// vocabulary lands at 60 with the pad symbol.
std::string synthetic_corpus(int64_t n_chars, uint64_t seed);

struct Batch {
  std::vector<int64_t> inputs;   // B×S, sample-major
  std::vector<int64_t> targets;  // inputs shifted left by one
};

// Cuts the token stream into non-overlapping context windows (each window
// needs context+1 tokens; the trailing remainder is dropped), shuffles the
// windows per epoch with a seed-derived order, and groups them into full
// batches (a trailing partial batch is dropped).
class BatchStream {
 public:
  BatchStream(std::vector<int64_t> tokens, int64_t context, int64_t batch_size,
              uint64_t seed);

  int64_t windows() const { return n_windows_; }
  int64_t batches_per_epoch() const { return n_windows_ / batch_size_; }
  int64_t context() const { return context_; }
  int64_t batch_size() const { return batch_size_; }

  // Same (seed, epoch_index) always yields the same batch sequence.
  std::vector<Batch> epoch(int64_t epoch_index) const;

 private:
  std::vector<int64_t> tokens_;
  int64_t context_;
  int64_t batch_size_;
  uint64_t seed_;
  int64_t n_windows_;
};

}  // namespace xdistill
