#include "nmt/eval.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "nmt/errors.hpp"
#include "nmt/rng.hpp"

namespace nmt {

namespace {

// Per-sentence clipped n-gram sufficient statistics; corpus BLEU is a pure
// function of their sums, which is what makes bootstrap resampling cheap.
struct SentenceStats {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long hyp_len = 0;
  long ref_len = 0;
};

std::map<TokenLine, long> ngram_counts(const TokenLine& line, int n) {
  std::map<TokenLine, long> counts;
  if (static_cast<int>(line.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= line.size(); ++i) {
    ++counts[TokenLine(line.begin() + static_cast<long>(i),
                       line.begin() + static_cast<long>(i) + n)];
  }
  return counts;
}

SentenceStats sentence_stats(const TokenLine& hyp, const TokenLine& ref) {
  SentenceStats s;
  s.hyp_len = static_cast<long>(hyp.size());
  s.ref_len = static_cast<long>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    const auto hyp_counts = ngram_counts(hyp, n);
    const auto ref_counts = ngram_counts(ref, n);
    long matches = 0;
    for (const auto& [gram, count] : hyp_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(count, it->second);
    }
    s.matches[static_cast<std::size_t>(n - 1)] = matches;
    s.totals[static_cast<std::size_t>(n - 1)] =
        std::max<long>(0, s.hyp_len - n + 1);
  }
  return s;
}

std::vector<SentenceStats> corpus_stats(const TokenLines& hyps,
                                        const TokenLines& refs,
                                        const char* where) {
  if (hyps.size() != refs.size()) {
    throw LengthMismatch(std::string(where) + ": " +
                         std::to_string(hyps.size()) + " hypotheses vs " +
                         std::to_string(refs.size()) + " references");
  }
  if (hyps.empty()) throw EmptyCorpus(std::string(where) + ": no sentences");
  std::vector<SentenceStats> stats;
  stats.reserve(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    stats.push_back(sentence_stats(hyps[i], refs[i]));
  }
  return stats;
}

template <typename Iter>
BleuScore score_from_stats(Iter begin, Iter end, bool smoothed) {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long hyp_len = 0, ref_len = 0;
  for (Iter it = begin; it != end; ++it) {
    for (int n = 0; n < 4; ++n) {
      matches[static_cast<std::size_t>(n)] += it->matches[static_cast<std::size_t>(n)];
      totals[static_cast<std::size_t>(n)] += it->totals[static_cast<std::size_t>(n)];
    }
    hyp_len += it->hyp_len;
    ref_len += it->ref_len;
  }

  BleuScore score;
  score.hyp_len = hyp_len;
  score.ref_len = ref_len;
  if (hyp_len == 0) return score;  // everything zero

  bool any_zero = false;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const std::size_t i = static_cast<std::size_t>(n);
    double p;
    if (smoothed) {
      p = static_cast<double>(matches[i] + 1) / static_cast<double>(totals[i] + 1);
    } else {
      p = totals[i] > 0
              ? static_cast<double>(matches[i]) / static_cast<double>(totals[i])
              : 0.0;
    }
    score.precisions[i] = p;
    if (p <= 0.0) {
      any_zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  score.brevity_penalty =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  if (!any_zero) {
    score.bleu = 100.0 * score.brevity_penalty * std::exp(log_sum / 4.0);
  }
  return score;
}

}  // namespace

BleuScore bleu(const TokenLines& hyps, const TokenLines& refs) {
  const auto stats = corpus_stats(hyps, refs, "bleu");
  return score_from_stats(stats.begin(), stats.end(), false);
}

BleuScore bleu_smoothed(const TokenLines& hyps, const TokenLines& refs) {
  const auto stats = corpus_stats(hyps, refs, "bleu");
  return score_from_stats(stats.begin(), stats.end(), true);
}

std::string bleu_line(const BleuScore& s) {
  char buf[160];
  const double ratio =
      s.ref_len > 0 ? static_cast<double>(s.hyp_len) / s.ref_len : 0.0;
  std::snprintf(buf, sizeof(buf),
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f "
                "(BP=%.3f, ratio=%.3f, hyp_len=%ld, ref_len=%ld)",
                s.bleu, 100.0 * s.precisions[0], 100.0 * s.precisions[1],
                100.0 * s.precisions[2], 100.0 * s.precisions[3],
                s.brevity_penalty, ratio, s.hyp_len, s.ref_len);
  return buf;
}

SignificanceResult bootstrap_significance(const TokenLines& hyps_a,
                                          const TokenLines& hyps_b,
                                          const TokenLines& refs, int n_samples,
                                          std::uint64_t seed) {
  const auto stats_a = corpus_stats(hyps_a, refs, "bootstrap_significance");
  const auto stats_b = corpus_stats(hyps_b, refs, "bootstrap_significance");

  SignificanceResult result;
  result.n_samples = n_samples;
  const double full_a =
      score_from_stats(stats_a.begin(), stats_a.end(), false).bleu;
  const double full_b =
      score_from_stats(stats_b.begin(), stats_b.end(), false).bleu;
  result.delta_bleu = full_a - full_b;
  if (full_a == full_b) {
    result.p_value = 1.0;
    return result;
  }

  const std::size_t n = refs.size();
  Rng rng(seed);
  int losses = 0;
  std::vector<SentenceStats> sample_a(n), sample_b(n);
  for (int s = 0; s < n_samples; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = static_cast<std::size_t>(rng.below(n));
      sample_a[i] = stats_a[idx];
      sample_b[i] = stats_b[idx];
    }
    const double a = score_from_stats(sample_a.begin(), sample_a.end(), false).bleu;
    const double b = score_from_stats(sample_b.begin(), sample_b.end(), false).bleu;
    // the full-set winner loses the sample when it fails to stay strictly ahead
    if (full_a > full_b ? b >= a : a >= b) ++losses;
  }
  result.p_value = static_cast<double>(losses) / n_samples;
  result.significant = result.p_value < 0.05;
  return result;
}

}  // namespace nmt
