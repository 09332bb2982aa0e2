#pragma once

#include <cstdint>
#include <string>

#include "nmt/text.hpp"

namespace nmt {

// Aligned parallel text, already whitespace-tokenized. Language codes are
// ISO-639-2 three-letter codes (lowercase by convention); the corresponding
// source-side flag token is `<2XXX>` with the code uppercased.
struct ParallelCorpus {
  TokenLines src_lines;
  TokenLines tgt_lines;
  std::string src_lang;
  std::string tgt_lang;

  std::size_t size() const { return src_lines.size(); }
};

// Loads two line-aligned files. No filtering; lines may be empty.
// Throws LineCountMismatch if the files differ in length, IoError otherwise.
ParallelCorpus load_parallel(const std::string& src_path,
                             const std::string& tgt_path,
                             const std::string& src_lang,
                             const std::string& tgt_lang);

inline constexpr int kDefaultMaxTokens = 70;

// Drops a pair when either side is empty or exceeds max_tokens pre-BPE
// whitespace tokens. Survivor order is preserved; idempotent.
ParallelCorpus filter_by_length(const ParallelCorpus& corpus,
                                int max_tokens = kDefaultMaxTokens);

// Prepends `<2XXX>` (XXX = uppercase tgt_lang) to every source line. Targets
// are untouched. Not idempotent: calling twice double-prepends.
ParallelCorpus prepend_flag(const ParallelCorpus& corpus);

// Seeded sample of n pairs without replacement: indices are shuffled
// (Fisher-Yates over the Rng stream), the first n taken, then sorted so the
// output keeps corpus order. Throws SampleTooLarge when n exceeds the size.
ParallelCorpus sample(const ParallelCorpus& corpus, std::size_t n,
                      std::uint64_t seed);

// First n pairs; same error contract as sample().
ParallelCorpus sample_prefix(const ParallelCorpus& corpus, std::size_t n);

}  // namespace nmt
