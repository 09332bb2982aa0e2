#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nmt/text.hpp"

namespace nmt {

inline constexpr int kDefaultBpeMerges = 8500;

// Ordered byte-pair-encoding merge rules. Symbols are UTF-8 strings; the last
// character of each training word carries the end-of-word marker appended to
// it, and segmented output marks non-final units with the `@@` join marker.
struct BpeModel {
  std::vector<std::pair<std::string, std::string>> merges;
  std::string eow_marker = "</w>";
  std::string join_marker = "@@";

  int n_merges() const { return static_cast<int>(merges.size()); }
  bool operator==(const BpeModel& other) const { return merges == other.merges; }
};

// Learns up to n_merges rules over the word-frequency table of all corpora
// combined. The most frequent adjacent symbol pair is merged each round, ties
// broken by lexicographic (left, right) order; training stops early when no
// pair occurs at least twice. Language flags and the four reserved tokens are
// excluded from the statistics. Throws EmptyCorpus when no words are found.
BpeModel bpe_train(const std::vector<const TokenLines*>& corpora, int n_merges);
BpeModel bpe_train_lines(const TokenLines& lines, int n_merges);

// Segments one token line. Language flags and reserved tokens pass through
// unsegmented; every other word is split per the merge rules, with `@@`
// appended to all units but the last of each word.
TokenLine bpe_apply(const BpeModel& model, const TokenLine& line);

// Same segmentation with the rule index and a per-word cache built once.
// Not thread-safe; use one applier per thread.
class BpeApplier {
 public:
  explicit BpeApplier(const BpeModel& model);
  ~BpeApplier();
  BpeApplier(const BpeApplier&) = delete;
  BpeApplier& operator=(const BpeApplier&) = delete;

  TokenLine apply(const TokenLine& line);
  TokenLines apply_all(const TokenLines& lines);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Inverse of bpe_apply on any line it can emit: joins `@@ `-marked units.
TokenLine bpe_undo(const TokenLine& line);

// Merge file format: line 1 `#bpe v1 <n_merges>`, then one `left right` pair
// per line in application order.
void bpe_save(const BpeModel& model, const std::string& path);
BpeModel bpe_load(const std::string& path);

}  // namespace nmt
