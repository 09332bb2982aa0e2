#include "nmt/vocab.hpp"

#include <algorithm>
#include <map>

#include "nmt/errors.hpp"

namespace nmt {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> reserved = {kPadToken, kUnkToken,
                                                    kBosToken, kEosToken};
  return reserved;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens)
    : tokens_(std::move(tokens)) {
  const auto& reserved = reserved_tokens();
  if (tokens_.size() < reserved.size()) {
    throw MalformedVocabFile("vocabulary smaller than the reserved block");
  }
  for (std::size_t i = 0; i < reserved.size(); ++i) {
    if (tokens_[i] != reserved[i]) {
      throw MalformedVocabFile("expected '" + reserved[i] + "' at index " +
                               std::to_string(i) + ", found '" + tokens_[i] +
                               "'");
    }
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) {
      throw MalformedVocabFile("empty token at index " + std::to_string(i));
    }
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw MalformedVocabFile("duplicate token '" + tokens_[i] + "'");
    }
  }
}

std::optional<int> Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::encode(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> Vocabulary::encode_line(const TokenLine& line) const {
  std::vector<int> ids;
  ids.reserve(line.size());
  for (const auto& token : line) ids.push_back(encode(token));
  return ids;
}

std::vector<std::string> Vocabulary::flags() const {
  std::vector<std::string> out;
  for (std::size_t i = 4; i < tokens_.size(); ++i) {
    if (!is_language_flag(tokens_[i])) break;
    out.push_back(tokens_[i]);
  }
  return out;
}

Vocabulary build_vocab(const std::vector<const TokenLines*>& segmented,
                       const std::vector<std::string>& flags) {
  bool any_line = false;
  std::map<std::string, long> freq;
  for (const TokenLines* lines : segmented) {
    for (const auto& line : *lines) {
      any_line = true;
      for (const auto& token : line) ++freq[token];
    }
  }
  if (!any_line) throw EmptyCorpus("build_vocab: no input lines");

  std::vector<std::string> tokens = reserved_tokens();
  for (const auto& flag : flags) {
    if (std::find(tokens.begin(), tokens.end(), flag) == tokens.end()) {
      tokens.push_back(flag);
    }
  }

  // frequency section: descending count, ties by lexicographic order
  std::vector<std::pair<long, std::string>> ranked;
  ranked.reserve(freq.size());
  for (const auto& [token, count] : freq) {
    if (std::find(tokens.begin(), tokens.end(), token) != tokens.end()) continue;
    if (is_reserved_token(token)) continue;
    ranked.emplace_back(count, token);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (auto& [count, token] : ranked) tokens.push_back(std::move(token));
  return Vocabulary(std::move(tokens));
}

TransferMap dynamic_update(const Vocabulary& parent, const Vocabulary& child) {
  TransferMap map;
  map.entries.reserve(static_cast<std::size_t>(child.size()));
  for (int i = 0; i < child.size(); ++i) {
    TransferEntry entry;
    entry.token = child.token(i);
    entry.new_index = i;
    entry.copied_from = parent.id(entry.token);
    if (entry.copied_from) {
      ++map.n_copied;
    } else {
      ++map.n_fresh;
    }
    map.entries.push_back(std::move(entry));
  }
  map.overlap_ratio =
      child.size() == 0 ? 0.0
                        : static_cast<double>(map.n_copied) / child.size();
  return map;
}

TransferMap static_mode_map(const Vocabulary& parent) {
  return dynamic_update(parent, parent);
}

OverlapReport overlap_report(const Vocabulary& parent, const Vocabulary& child) {
  OverlapReport report;
  report.n_parent = parent.size();
  report.n_child = child.size();
  for (int i = 0; i < child.size(); ++i) {
    if (parent.has(child.token(i))) ++report.n_shared;
  }
  report.shared_pct =
      child.size() == 0 ? 0.0 : 100.0 * report.n_shared / child.size();
  return report;
}

void vocab_save(const Vocabulary& vocab, const std::string& path) {
  write_lines(path, vocab.tokens());
}

Vocabulary vocab_load(const std::string& path) {
  auto lines = read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  try {
    return Vocabulary(std::move(lines));
  } catch (const MalformedVocabFile& e) {
    throw MalformedVocabFile(path + ": " + e.what());
  }
}

}  // namespace nmt
