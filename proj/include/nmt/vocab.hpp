#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nmt/text.hpp"

namespace nmt {

// Ordered token table. Layout: `<pad>` `<unk>` `<s>` `</s>` at 0..3, then the
// language-flag block, then content tokens. Immutable after construction.
class Vocabulary {
 public:
  Vocabulary();  // the four reserved tokens only

  // Tokens in index order; throws MalformedVocabFile when the reserved
  // layout is violated or a token repeats.
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<int> id(const std::string& token) const;
  bool has(const std::string& token) const { return index_.count(token) > 0; }

  // id with `<unk>` fallback.
  int encode(const std::string& token) const;
  std::vector<int> encode_line(const TokenLine& line) const;

  // The contiguous run of `<2XXX>` tokens starting at index 4.
  std::vector<std::string> flags() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Per-token provenance of a dynamic-vocabulary update: each child-vocabulary
// token either keeps a parent embedding row or gets a fresh one.
struct TransferEntry {
  std::string token;
  int new_index = 0;
  std::optional<int> copied_from;  // parent row; empty = fresh init
};

struct TransferMap {
  std::vector<TransferEntry> entries;
  int n_copied = 0;
  int n_fresh = 0;
  double overlap_ratio = 0.0;  // n_copied / |child|
};

struct OverlapReport {
  double shared_pct = 0.0;  // 100 * |parent ∩ child| / |child|
  int n_shared = 0;
  int n_parent = 0;
  int n_child = 0;
};

// Specials, then flags in the given order, then corpus subword types by
// descending frequency (ties lexicographic). Input lines must already be
// BPE-segmented. Throws EmptyCorpus when no input lines exist.
Vocabulary build_vocab(const std::vector<const TokenLines*>& segmented,
                       const std::vector<std::string>& flags);

// Child tokens found in the parent keep their parent row (Copied), the rest
// are Fresh. The model vocabulary after the update is exactly `child`.
TransferMap dynamic_update(const Vocabulary& parent, const Vocabulary& child);

// Identity map: the child vocabulary IS the parent vocabulary, all Copied.
TransferMap static_mode_map(const Vocabulary& parent);

OverlapReport overlap_report(const Vocabulary& parent, const Vocabulary& child);

// Vocab file: one token per line, line number = index.
void vocab_save(const Vocabulary& vocab, const std::string& path);
Vocabulary vocab_load(const std::string& path);

}  // namespace nmt
