#include "nmt/corpus.hpp"

#include <algorithm>
#include <numeric>

#include "nmt/errors.hpp"
#include "nmt/rng.hpp"

namespace nmt {

ParallelCorpus load_parallel(const std::string& src_path,
                             const std::string& tgt_path,
                             const std::string& src_lang,
                             const std::string& tgt_lang) {
  const auto src_raw = read_lines(src_path);
  const auto tgt_raw = read_lines(tgt_path);
  if (src_raw.size() != tgt_raw.size()) {
    throw LineCountMismatch(src_path + " has " + std::to_string(src_raw.size()) +
                            " lines, " + tgt_path + " has " +
                            std::to_string(tgt_raw.size()));
  }
  ParallelCorpus corpus;
  corpus.src_lang = src_lang;
  corpus.tgt_lang = tgt_lang;
  corpus.src_lines.reserve(src_raw.size());
  corpus.tgt_lines.reserve(tgt_raw.size());
  for (const auto& line : src_raw) corpus.src_lines.push_back(split_tokens(line));
  for (const auto& line : tgt_raw) corpus.tgt_lines.push_back(split_tokens(line));
  return corpus;
}

ParallelCorpus filter_by_length(const ParallelCorpus& corpus, int max_tokens) {
  const auto limit = static_cast<std::size_t>(max_tokens);
  ParallelCorpus out;
  out.src_lang = corpus.src_lang;
  out.tgt_lang = corpus.tgt_lang;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& s = corpus.src_lines[i];
    const auto& t = corpus.tgt_lines[i];
    if (s.empty() || t.empty()) continue;
    if (s.size() > limit || t.size() > limit) continue;
    out.src_lines.push_back(s);
    out.tgt_lines.push_back(t);
  }
  return out;
}

ParallelCorpus prepend_flag(const ParallelCorpus& corpus) {
  const std::string flag = flag_token(corpus.tgt_lang);
  ParallelCorpus out = corpus;
  for (auto& line : out.src_lines) {
    line.insert(line.begin(), flag);
  }
  return out;
}

ParallelCorpus sample(const ParallelCorpus& corpus, std::size_t n,
                      std::uint64_t seed) {
  if (n > corpus.size()) {
    throw SampleTooLarge("requested " + std::to_string(n) + " of " +
                         std::to_string(corpus.size()) + " pairs");
  }
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());

  ParallelCorpus out;
  out.src_lang = corpus.src_lang;
  out.tgt_lang = corpus.tgt_lang;
  out.src_lines.reserve(n);
  out.tgt_lines.reserve(n);
  for (std::size_t i : idx) {
    out.src_lines.push_back(corpus.src_lines[i]);
    out.tgt_lines.push_back(corpus.tgt_lines[i]);
  }
  return out;
}

ParallelCorpus sample_prefix(const ParallelCorpus& corpus, std::size_t n) {
  if (n > corpus.size()) {
    throw SampleTooLarge("requested " + std::to_string(n) + " of " +
                         std::to_string(corpus.size()) + " pairs");
  }
  ParallelCorpus out;
  out.src_lang = corpus.src_lang;
  out.tgt_lang = corpus.tgt_lang;
  out.src_lines.assign(corpus.src_lines.begin(), corpus.src_lines.begin() + n);
  out.tgt_lines.assign(corpus.tgt_lines.begin(), corpus.tgt_lines.begin() + n);
  return out;
}

}  // namespace nmt
