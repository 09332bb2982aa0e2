#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nmt/text.hpp"

namespace nmt {

struct BleuScore {
  double bleu = 0.0;  // percentage in [0, 100]
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  long hyp_len = 0;
  long ref_len = 0;
};

// Corpus BLEU over whitespace tokens, case-sensitive, single reference:
// clipped n-gram matches up to 4-grams aggregated at corpus level,
// BP = min(1, exp(1 - ref_len/hyp_len)), any zero precision -> BLEU 0.
// Throws LengthMismatch, EmptyCorpus.
BleuScore bleu(const TokenLines& hyps, const TokenLines& refs);

// Add-one smoothed precisions; for dev-loss-style tracking only, never for
// reported scores.
BleuScore bleu_smoothed(const TokenLines& hyps, const TokenLines& refs);

// "BLEU = 12.34, 40.1/20.2/10.3/5.4 (BP=0.987, ratio=0.987, hyp_len=100,
// ref_len=101)"
std::string bleu_line(const BleuScore& score);

struct SignificanceResult {
  double p_value = 1.0;
  int n_samples = 0;
  double delta_bleu = 0.0;  // BLEU(a) - BLEU(b) on the full set
  bool significant = false;  // p < 0.05
};

// One-sided paired bootstrap: resample sentences with replacement; p is the
// fraction of samples where the system that wins on the full set fails to win.
SignificanceResult bootstrap_significance(const TokenLines& hyps_a,
                                          const TokenLines& hyps_b,
                                          const TokenLines& refs,
                                          int n_samples = 1000,
                                          std::uint64_t seed = 1);

}  // namespace nmt
