#include "xdistill/data.hpp"

#include <algorithm>
#include <set>

namespace xdistill {

Vocab::Vocab(std::vector<char> chars) {
  id_to_char_.push_back('\0');  // pad at id 0
  id_to_char_.insert(id_to_char_.end(), chars.begin(), chars.end());
  char_to_id_.assign(256, -1);
  for (size_t i = 0; i < id_to_char_.size(); ++i) {
    char_to_id_[static_cast<unsigned char>(id_to_char_[i])] = static_cast<int64_t>(i);
  }
}

std::vector<int64_t> Vocab::encode(const std::string& text) const {
  std::vector<int64_t> out;
  out.reserve(text.size());
  for (char c : text) {
    const int64_t id = char_to_id_[static_cast<unsigned char>(c)];
    check(id >= 0, std::string("vocab: character '") + c + "' not in vocabulary");
    out.push_back(id);
  }
  return out;
}

std::string Vocab::decode(const std::vector<int64_t>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int64_t id : ids) {
    check(id >= 0 && id < size(), "vocab: id " + std::to_string(id) + " out of range");
    out.push_back(id_to_char_[static_cast<size_t>(id)]);
  }
  return out;
}

Vocab build_vocab(const std::string& text) {
  check(!text.empty(), "build_vocab: empty text");
  std::set<char> seen(text.begin(), text.end());
  return Vocab(std::vector<char>(seen.begin(), seen.end()));
}

std::string synthetic_corpus(int64_t n_chars, uint64_t seed) {
  check(n_chars > 0, "synthetic_corpus: size must be positive");
  static const std::vector<std::string> motifs = {
      "the quick brown fox jumps over the lazy dog. ",
      "pack my box with five dozen liquor jugs, again. ",
      "JACKDAWS LOVE MY BIG SPHINX OF QUARTZ. ",
      "counting 0 1 2 3 and back 3 2 1 0. ",
  };
  std::string alphabet;
  {
    std::set<char> chars;
    for (const auto& m : motifs) chars.insert(m.begin(), m.end());
    alphabet.assign(chars.begin(), chars.end());
  }
  Rng rng(seed);
  std::string out;
  out.reserve(static_cast<size_t>(n_chars) + 64);
  size_t next_motif = 0;
  while (out.size() < static_cast<size_t>(n_chars)) {
    // mostly cycle in order so next-character prediction is learnable
    if (rng.uniform() < 0.15) {
      next_motif = static_cast<size_t>(rng.below(static_cast<int64_t>(motifs.size())));
    }
    for (char c : motifs[next_motif]) {
      out.push_back(rng.uniform() < 0.02
                        ? alphabet[static_cast<size_t>(
                              rng.below(static_cast<int64_t>(alphabet.size())))]
                        : c);
    }
    next_motif = (next_motif + 1) % motifs.size();
  }
  out.resize(static_cast<size_t>(n_chars));
  return out;
}

BatchStream::BatchStream(std::vector<int64_t> tokens, int64_t context, int64_t batch_size,
                         uint64_t seed)
    : tokens_(std::move(tokens)), context_(context), batch_size_(batch_size), seed_(seed) {
  check(context_ >= 1, "batch stream: context must be at least 1");
  check(batch_size_ >= 1, "batch stream: batch size must be at least 1");
  check(static_cast<int64_t>(tokens_.size()) >= context_ + 1,
        "batch stream: source has " + std::to_string(tokens_.size()) +
            " tokens, needs at least context+1 = " + std::to_string(context_ + 1));
  n_windows_ = (static_cast<int64_t>(tokens_.size()) - 1) / context_;
}

std::vector<Batch> BatchStream::epoch(int64_t epoch_index) const {
  std::vector<int64_t> order(static_cast<size_t>(n_windows_));
  for (int64_t w = 0; w < n_windows_; ++w) order[static_cast<size_t>(w)] = w;
  Rng rng(seed_ + 0x9E3779B97F4A7C15ULL * static_cast<uint64_t>(epoch_index + 1));
  rng.shuffle(order);

  std::vector<Batch> batches;
  const int64_t n_batches = batches_per_epoch();
  batches.reserve(static_cast<size_t>(n_batches));
  for (int64_t bi = 0; bi < n_batches; ++bi) {
    Batch batch;
    batch.inputs.reserve(static_cast<size_t>(batch_size_ * context_));
    batch.targets.reserve(static_cast<size_t>(batch_size_ * context_));
    for (int64_t s = 0; s < batch_size_; ++s) {
      const int64_t start = order[static_cast<size_t>(bi * batch_size_ + s)] * context_;
      for (int64_t t = 0; t < context_; ++t) {
        batch.inputs.push_back(tokens_[static_cast<size_t>(start + t)]);
        batch.targets.push_back(tokens_[static_cast<size_t>(start + t + 1)]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace xdistill
