#include "nmt/decoding.hpp"

#include <algorithm>
#include <cmath>

#include "nmt/errors.hpp"
#include "nmt/text.hpp"

namespace nmt {

namespace {

int default_horizon(int src_len, const DecodeConfig& config) {
  return config.max_out_len > 0 ? config.max_out_len : 2 * src_len + 8;
}

double penalized(double score, std::size_t len, double alpha) {
  return alpha > 0.0 ? score / std::pow(static_cast<double>(len), alpha) : score;
}

// candidate = live[parent] extended by token
struct Candidate {
  int parent;
  int token;
  double score;
};

bool sequence_less(const std::vector<int>& a_prefix, int a_tok,
                   const std::vector<int>& b_prefix, int b_tok) {
  const std::size_t n = std::min(a_prefix.size(), b_prefix.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a_prefix[i] != b_prefix[i]) return a_prefix[i] < b_prefix[i];
  }
  if (a_prefix.size() != b_prefix.size()) {
    return a_prefix.size() < b_prefix.size();  // unreachable for same-step hyps
  }
  return a_tok < b_tok;
}

std::vector<char> excluded_mask(int vocab_size, const std::vector<int>& excluded) {
  std::vector<char> mask(static_cast<std::size_t>(vocab_size), 0);
  for (int id : excluded) {
    if (id >= 0 && id < vocab_size) mask[static_cast<std::size_t>(id)] = 1;
  }
  return mask;
}

std::vector<int> checkpoint_excluded(const Checkpoint& ckpt) {
  std::vector<int> excluded = {kPadId, kBosId};
  const int n_flags = static_cast<int>(ckpt.vocab.flags().size());
  for (int i = 0; i < n_flags; ++i) excluded.push_back(4 + i);
  return excluded;
}

}  // namespace

TransformerScorer::TransformerScorer(const Checkpoint& ckpt,
                                     const std::vector<int>& src_ids)
    : ckpt_(ckpt), src_(src_ids) {
  memory_ = encode_source(ckpt_, tape_, {src_}, false, 0);
}

int TransformerScorer::vocab_size() const { return ckpt_.vocab.size(); }

std::vector<std::vector<float>> TransformerScorer::next_log_probs(
    const std::vector<std::vector<int>>& prefixes) {
  const int n = static_cast<int>(prefixes.size());
  std::vector<std::vector<int>> dec_in(prefixes.size());
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    dec_in[i].reserve(prefixes[i].size() + 1);
    dec_in[i].push_back(kBosId);
    dec_in[i].insert(dec_in[i].end(), prefixes[i].begin(), prefixes[i].end());
  }
  Tensor memory = n == 1 ? memory_
                         : tape_.concat(std::vector<Tensor>(
                               static_cast<std::size_t>(n), memory_), 0);
  const std::vector<std::vector<int>> src_rows(static_cast<std::size_t>(n), src_);
  Tensor logits =
      decode_logits(ckpt_, tape_, memory, src_rows, dec_in, false, 0, true);

  const int v = ckpt_.vocab.size();
  std::vector<std::vector<float>> out(static_cast<std::size_t>(n));
  const auto& lv = logits.value();
  for (int i = 0; i < n; ++i) {
    const float* row = lv.data() + static_cast<long>(i) * v;
    float maxv = row[0];
    for (int j = 1; j < v; ++j) maxv = std::max(maxv, row[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - maxv);
    const float shift = maxv + static_cast<float>(std::log(denom));
    auto& dst = out[static_cast<std::size_t>(i)];
    dst.resize(static_cast<std::size_t>(v));
    for (int j = 0; j < v; ++j) dst[static_cast<std::size_t>(j)] = row[j] - shift;
  }
  return out;
}

Hypothesis beam_decode(Scorer& scorer, const std::vector<int>& excluded,
                       int src_len, const DecodeConfig& config) {
  const int horizon = default_horizon(src_len, config);
  const int v = scorer.vocab_size();
  const auto mask = excluded_mask(v, excluded);
  const double alpha = config.length_penalty_alpha;

  std::vector<Hypothesis> live = {{{}, 0.0}};
  bool have_finished = false;
  Hypothesis best_finished;

  for (int t = 0; t < horizon && !live.empty(); ++t) {
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(live.size());
    for (const auto& h : live) prefixes.push_back(h.ids);
    const auto log_probs = scorer.next_log_probs(prefixes);

    std::vector<Candidate> cands;
    cands.reserve(live.size() * static_cast<std::size_t>(v));
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (int tok = 0; tok < v; ++tok) {
        if (mask[static_cast<std::size_t>(tok)]) continue;
        cands.push_back({static_cast<int>(i), tok,
                         live[i].score + log_probs[i][static_cast<std::size_t>(tok)]});
      }
    }
    std::sort(cands.begin(), cands.end(),
              [&live](const Candidate& a, const Candidate& b) {
                if (a.score != b.score) return a.score > b.score;
                return sequence_less(live[static_cast<std::size_t>(a.parent)].ids,
                                     a.token,
                                     live[static_cast<std::size_t>(b.parent)].ids,
                                     b.token);
              });

    // Only the top beam_size candidates survive the step. Finished ones
    // (`</s>`) retire out of the beam, the rest stay live; restricting
    // retirement to this slice makes beam size 1 trace the greedy path.
    std::vector<Hypothesis> next_live;
    next_live.reserve(static_cast<std::size_t>(config.beam_size));
    const std::size_t take = std::min(
        cands.size(), static_cast<std::size_t>(config.beam_size));
    for (std::size_t ci = 0; ci < take; ++ci) {
      const Candidate& c = cands[ci];
      Hypothesis h;
      h.ids = live[static_cast<std::size_t>(c.parent)].ids;
      h.ids.push_back(c.token);
      if (c.token == kEosId) {
        h.score = penalized(c.score, h.ids.size(), alpha);
        if (!have_finished || h.score > best_finished.score ||
            (h.score == best_finished.score && h.ids < best_finished.ids)) {
          best_finished = std::move(h);
          have_finished = true;
        }
      } else {
        h.score = c.score;
        next_live.push_back(std::move(h));
      }
    }
    live = std::move(next_live);

    // log-probs are <= 0, so live scores can only fall; with alpha == 0 a
    // finished hypothesis at least as good as the best live one is optimal
    if (alpha == 0.0 && have_finished && !live.empty() &&
        best_finished.score >= live.front().score) {
      return best_finished;
    }
  }

  Hypothesis best = have_finished ? best_finished : Hypothesis{{}, -1e300};
  for (const auto& h : live) {
    const double s = penalized(h.score, h.ids.size(), alpha);
    if (s > best.score || (s == best.score && h.ids < best.ids)) {
      best = h;
      best.score = s;
    }
  }
  return best;
}

Hypothesis greedy_decode(Scorer& scorer, const std::vector<int>& excluded,
                         int src_len, int max_out_len) {
  DecodeConfig config;
  config.max_out_len = max_out_len;
  const int horizon = default_horizon(src_len, config);
  const int v = scorer.vocab_size();
  const auto mask = excluded_mask(v, excluded);

  Hypothesis hyp;
  for (int t = 0; t < horizon; ++t) {
    const auto log_probs = scorer.next_log_probs({hyp.ids});
    int best_tok = -1;
    float best_lp = 0.0f;
    for (int tok = 0; tok < v; ++tok) {
      if (mask[static_cast<std::size_t>(tok)]) continue;
      const float lp = log_probs[0][static_cast<std::size_t>(tok)];
      if (best_tok < 0 || lp > best_lp) {
        best_tok = tok;
        best_lp = lp;
      }
    }
    hyp.ids.push_back(best_tok);
    hyp.score += best_lp;
    if (best_tok == kEosId) break;
  }
  return hyp;
}

Hypothesis beam_decode(const Checkpoint& ckpt, const std::vector<int>& src_ids,
                       const DecodeConfig& config) {
  TransformerScorer scorer(ckpt, src_ids);
  return beam_decode(scorer, checkpoint_excluded(ckpt),
                     static_cast<int>(src_ids.size()), config);
}

std::vector<int> greedy_decode(const Checkpoint& ckpt,
                               const std::vector<int>& src_ids,
                               int max_out_len) {
  TransformerScorer scorer(ckpt, src_ids);
  return greedy_decode(scorer, checkpoint_excluded(ckpt),
                       static_cast<int>(src_ids.size()), max_out_len)
      .ids;
}

TokenLines decode_corpus(const Checkpoint& ckpt,
                         const std::vector<std::vector<int>>& src_ids,
                         const DecodeConfig& config) {
  TokenLines out;
  out.reserve(src_ids.size());
  for (const auto& src : src_ids) {
    const Hypothesis hyp = beam_decode(ckpt, src, config);
    TokenLine line;
    line.reserve(hyp.ids.size());
    for (int id : hyp.ids) {
      if (id == kEosId) break;
      line.push_back(ckpt.vocab.token(id));
    }
    out.push_back(std::move(line));
  }
  return out;
}

}  // namespace nmt
