#include "nmt/bpe.hpp"

#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_map>

#include "nmt/errors.hpp"

namespace nmt {

namespace {

using Pair = std::pair<std::string, std::string>;

struct Word {
  std::vector<std::string> symbols;
  long freq = 0;
};

// Heap entry ordering: highest count first, then lexicographically smallest
// pair. Entries go stale when counts change; stale ones are skipped on pop.
struct HeapEntry {
  long count;
  Pair pair;
};

struct HeapLess {
  bool operator()(const HeapEntry& a, const HeapEntry& b) const {
    if (a.count != b.count) return a.count < b.count;
    return a.pair > b.pair;
  }
};

bool is_protected_token(const std::string& token) {
  return is_language_flag(token) || is_reserved_token(token);
}

class MergeTrainer {
 public:
  explicit MergeTrainer(std::vector<Word> words) : words_(std::move(words)) {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      add_word(static_cast<int>(w));
    }
    for (const auto& [pair, count] : counts_) {
      heap_.push({count, pair});
    }
    changed_.clear();
  }

  std::vector<Pair> run(int n_merges) {
    std::vector<Pair> merges;
    while (static_cast<int>(merges.size()) < n_merges) {
      Pair best;
      if (!pop_best(&best)) break;
      merges.push_back(best);
      merge_pair(best);
    }
    return merges;
  }

 private:
  // Pops the most frequent current pair; false when no pair occurs >= 2 times.
  bool pop_best(Pair* out) {
    while (!heap_.empty()) {
      HeapEntry top = heap_.top();
      heap_.pop();
      auto it = counts_.find(top.pair);
      if (it == counts_.end() || it->second != top.count) continue;  // stale
      if (top.count < 2) return false;
      *out = top.pair;
      return true;
    }
    return false;
  }

  void merge_pair(const Pair& pair) {
    const std::string joined = pair.first + pair.second;
    auto occ = pair_words_.find(pair);
    if (occ == pair_words_.end()) return;
    const std::set<int> affected = occ->second;
    for (int w : affected) {
      remove_word(w);
      auto& sym = words_[w].symbols;
      std::vector<std::string> merged;
      merged.reserve(sym.size());
      std::size_t i = 0;
      while (i < sym.size()) {
        if (i + 1 < sym.size() && sym[i] == pair.first &&
            sym[i + 1] == pair.second) {
          merged.push_back(joined);
          i += 2;
        } else {
          merged.push_back(sym[i]);
          ++i;
        }
      }
      sym = std::move(merged);
      add_word(w);
    }
    flush_changed();
  }

  void add_word(int w) {
    const auto& word = words_[w];
    for (std::size_t i = 0; i + 1 < word.symbols.size(); ++i) {
      Pair p{word.symbols[i], word.symbols[i + 1]};
      counts_[p] += word.freq;
      pair_words_[p].insert(w);
      changed_.insert(p);
    }
  }

  void remove_word(int w) {
    const auto& word = words_[w];
    for (std::size_t i = 0; i + 1 < word.symbols.size(); ++i) {
      Pair p{word.symbols[i], word.symbols[i + 1]};
      counts_[p] -= word.freq;
      pair_words_[p].erase(w);
      changed_.insert(p);
    }
  }

  void flush_changed() {
    for (const auto& p : changed_) {
      auto it = counts_.find(p);
      if (it == counts_.end()) continue;
      if (it->second <= 0) {
        counts_.erase(it);
        pair_words_.erase(p);
      } else {
        heap_.push({it->second, p});
      }
    }
    changed_.clear();
  }

  std::vector<Word> words_;
  std::map<Pair, long> counts_;
  std::map<Pair, std::set<int>> pair_words_;
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, HeapLess> heap_;
  std::set<Pair> changed_;
};

std::vector<Word> build_word_table(const std::vector<const TokenLines*>& corpora,
                                   const std::string& eow_marker) {
  std::map<std::string, long> freq;
  bool any_line = false;
  for (const TokenLines* lines : corpora) {
    for (const auto& line : *lines) {
      any_line = true;
      for (const auto& token : line) {
        if (is_protected_token(token)) continue;
        ++freq[token];
      }
    }
  }
  if (!any_line) throw EmptyCorpus("bpe_train: no input lines");

  std::vector<Word> words;
  words.reserve(freq.size());
  for (const auto& [text, count] : freq) {
    Word w;
    w.symbols = utf8_split(text);
    if (w.symbols.empty()) continue;
    w.symbols.back() += eow_marker;
    w.freq = count;
    words.push_back(std::move(w));
  }
  return words;
}

}  // namespace

BpeModel bpe_train(const std::vector<const TokenLines*>& corpora, int n_merges) {
  BpeModel model;
  auto words = build_word_table(corpora, model.eow_marker);
  MergeTrainer trainer(std::move(words));
  model.merges = trainer.run(n_merges);
  return model;
}

BpeModel bpe_train_lines(const TokenLines& lines, int n_merges) {
  return bpe_train({&lines}, n_merges);
}

namespace {

struct PairHash {
  std::size_t operator()(const Pair& p) const {
    std::hash<std::string> h;
    return h(p.first) * 1000003u ^ h(p.second);
  }
};

using RankMap = std::unordered_map<Pair, int, PairHash>;

RankMap build_ranks(const BpeModel& model) {
  RankMap ranks;
  ranks.reserve(model.merges.size() * 2);
  for (std::size_t i = 0; i < model.merges.size(); ++i) {
    ranks.emplace(model.merges[i], static_cast<int>(i));
  }
  return ranks;
}

// Splits one word into subword units (without join markers). The earliest
// learned applicable rule is applied over the whole word each round, matching
// how the rules were counted at training time.
std::vector<std::string> segment_word(const BpeModel& model,
                                      const RankMap& ranks,
                                      const std::string& word) {
  std::vector<std::string> symbols = utf8_split(word);
  if (symbols.empty()) return symbols;
  symbols.back() += model.eow_marker;

  while (symbols.size() > 1) {
    int best_rank = -1;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks.find({symbols[i], symbols[i + 1]});
      if (it == ranks.end()) continue;
      if (best_rank < 0 || it->second < best_rank) best_rank = it->second;
    }
    if (best_rank < 0) break;

    const auto& [left, right] = model.merges[static_cast<std::size_t>(best_rank)];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    std::size_t i = 0;
    while (i < symbols.size()) {
      if (i + 1 < symbols.size() && symbols[i] == left &&
          symbols[i + 1] == right) {
        merged.push_back(left + right);
        i += 2;
      } else {
        merged.push_back(symbols[i]);
        ++i;
      }
    }
    symbols = std::move(merged);
  }

  // render: strip the end-of-word marker, mark non-final units
  std::string& last = symbols.back();
  if (last.size() >= model.eow_marker.size() &&
      last.compare(last.size() - model.eow_marker.size(),
                   model.eow_marker.size(), model.eow_marker) == 0) {
    last.erase(last.size() - model.eow_marker.size());
  }
  if (last.empty()) symbols.pop_back();
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
    symbols[i] += model.join_marker;
  }
  return symbols;
}

}  // namespace

TokenLine bpe_apply(const BpeModel& model, const TokenLine& line) {
  const RankMap ranks = build_ranks(model);
  TokenLine out;
  for (const auto& token : line) {
    if (is_protected_token(token)) {
      out.push_back(token);
      continue;
    }
    auto units = segment_word(model, ranks, token);
    out.insert(out.end(), units.begin(), units.end());
  }
  return out;
}

struct BpeApplier::Impl {
  BpeModel model;
  RankMap ranks;
  std::unordered_map<std::string, std::vector<std::string>> cache;
};

BpeApplier::BpeApplier(const BpeModel& model) : impl_(std::make_unique<Impl>()) {
  impl_->model = model;
  impl_->ranks = build_ranks(model);
}

BpeApplier::~BpeApplier() = default;

TokenLine BpeApplier::apply(const TokenLine& line) {
  TokenLine out;
  for (const auto& token : line) {
    if (is_protected_token(token)) {
      out.push_back(token);
      continue;
    }
    auto it = impl_->cache.find(token);
    if (it == impl_->cache.end()) {
      it = impl_->cache
               .emplace(token, segment_word(impl_->model, impl_->ranks, token))
               .first;
    }
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

TokenLines BpeApplier::apply_all(const TokenLines& lines) {
  TokenLines out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(apply(line));
  return out;
}

TokenLine bpe_undo(const TokenLine& line) {
  TokenLine out;
  std::string buffer;
  for (const auto& unit : line) {
    if (unit.size() >= 2 && unit.compare(unit.size() - 2, 2, "@@") == 0) {
      buffer += unit.substr(0, unit.size() - 2);
    } else {
      buffer += unit;
      out.push_back(buffer);
      buffer.clear();
    }
  }
  if (!buffer.empty()) out.push_back(buffer);  // dangling joint at end of line
  return out;
}

void bpe_save(const BpeModel& model, const std::string& path) {
  std::vector<std::string> lines;
  lines.reserve(model.merges.size() + 1);
  lines.push_back("#bpe v1 " + std::to_string(model.n_merges()));
  for (const auto& [left, right] : model.merges) {
    lines.push_back(left + " " + right);
  }
  write_lines(path, lines);
}

BpeModel bpe_load(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw MalformedMergeFile(path + ": empty file");

  std::istringstream header(lines[0]);
  std::string tag, version;
  long declared = -1;
  header >> tag >> version >> declared;
  if (tag != "#bpe" || version != "v1" || declared < 0) {
    throw MalformedMergeFile(path + ": bad header '" + lines[0] + "'");
  }

  BpeModel model;
  std::set<Pair> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto fields = split_tokens(lines[i]);
    if (fields.size() != 2) {
      throw MalformedMergeFile(path + ": line " + std::to_string(i + 1) +
                               " is not 'left right'");
    }
    Pair p{fields[0], fields[1]};
    if (!seen.insert(p).second) {
      throw MalformedMergeFile(path + ": duplicate merge at line " +
                               std::to_string(i + 1));
    }
    model.merges.push_back(std::move(p));
  }
  if (model.n_merges() != declared) {
    throw MalformedMergeFile(path + ": header declares " +
                             std::to_string(declared) + " merges, found " +
                             std::to_string(model.n_merges()));
  }
  return model;
}

}  // namespace nmt
