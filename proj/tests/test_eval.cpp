#include <algorithm>
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "nmt/errors.hpp"
#include "nmt/eval.hpp"
#include "nmt/rng.hpp"
#include "nmt/text.hpp"
#include "support/bleu_oracle.hpp"

using namespace nmt;

namespace {

TokenLines lines_of(const std::vector<std::string>& raw) {
  TokenLines out;
  for (const auto& line : raw) out.push_back(split_tokens(line));
  return out;
}

TokenLines random_lines(int n, int vocab, int min_len, int max_len, Rng& rng) {
  TokenLines out;
  for (int i = 0; i < n; ++i) {
    TokenLine line;
    const int len =
        min_len + static_cast<int>(rng.below(
                      static_cast<std::uint64_t>(max_len - min_len + 1)));
    for (int k = 0; k < len; ++k) {
      line.push_back("w" + std::to_string(rng.below(
                               static_cast<std::uint64_t>(vocab))));
    }
    out.push_back(std::move(line));
  }
  return out;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("perfect hypotheses score one hundred") {
  TokenLines refs = lines_of({"the cat sat on the mat", "a b c d e"});
  BleuScore s = bleu(refs, refs);
  CHECK(s.bleu == doctest::Approx(100.0));
  CHECK(s.brevity_penalty == doctest::Approx(1.0));
  for (double p : s.precisions) CHECK(p == doctest::Approx(1.0));
}

TEST_CASE("clipping caps repeated unigrams") {
  TokenLines hyps = lines_of({"the the the the"});
  TokenLines refs = lines_of({"the cat"});
  BleuScore s = bleu(hyps, refs);
  CHECK(s.precisions[0] == doctest::Approx(0.25));  // hand count: 1 of 4
  CHECK(s.bleu == doctest::Approx(0.0));            // no bigram matches
}

TEST_CASE("short hypotheses pay the brevity penalty") {
  TokenLines hyps = lines_of({"a b c d"});
  TokenLines refs = lines_of({"a b c d e"});
  BleuScore s = bleu(hyps, refs);
  for (double p : s.precisions) CHECK(p == doctest::Approx(1.0));
  // closed form: all precisions one, so BLEU = 100 * exp(1 - 5/4)
  CHECK(s.brevity_penalty == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)));
  CHECK(s.bleu == doctest::Approx(100.0 * std::exp(-0.25)));
  CHECK(s.bleu == doctest::Approx(77.8800783).epsilon(1e-6));

  // cross-check against the independent oracle
  testutil::OracleBleu oracle = testutil::oracle_bleu(hyps, refs);
  CHECK(s.bleu == doctest::Approx(oracle.bleu).epsilon(1e-9));
}

TEST_CASE("any zero precision zeroes the score") {
  // no 4-gram match possible: hypotheses of length 3
  TokenLines hyps = lines_of({"a b c"});
  TokenLines refs = lines_of({"a b c"});
  CHECK(bleu(hyps, refs).bleu == doctest::Approx(0.0));
  // and fully disjoint corpora
  CHECK(bleu(lines_of({"x y z w"}), lines_of({"a b c d"})).bleu ==
        doctest::Approx(0.0));
}

TEST_CASE("matches the brute force oracle on random corpora") {
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    TokenLines refs = random_lines(12, 6, 1, 9, rng);
    TokenLines hyps;
    for (const auto& ref : refs) {
      // perturb the reference so scores spread over the whole range
      TokenLine hyp = ref;
      for (auto& tok : hyp) {
        if (rng.below(4) == 0) tok = "w" + std::to_string(rng.below(6));
      }
      if (rng.below(5) == 0 && hyp.size() > 1) hyp.pop_back();
      hyps.push_back(std::move(hyp));
    }
    BleuScore s = bleu(hyps, refs);
    testutil::OracleBleu oracle = testutil::oracle_bleu(hyps, refs);
    CHECK(s.bleu == doctest::Approx(oracle.bleu).epsilon(1e-9));
    for (int n = 0; n < 4; ++n) {
      CHECK(s.precisions[static_cast<std::size_t>(n)] ==
            doctest::Approx(oracle.precisions[n]).epsilon(1e-9));
    }
    CHECK(s.hyp_len == oracle.hyp_len);
    CHECK(s.ref_len == oracle.ref_len);
  }
}

TEST_CASE("corpus score ignores sentence order") {
  TokenLines hyps = lines_of({"a b c d", "e f g h", "i j k l"});
  TokenLines refs = lines_of({"a b x d", "e f g h", "i j k q"});
  BleuScore forward = bleu(hyps, refs);
  TokenLines hyps_rev(hyps.rbegin(), hyps.rend());
  TokenLines refs_rev(refs.rbegin(), refs.rend());
  BleuScore reversed = bleu(hyps_rev, refs_rev);
  CHECK(forward.bleu == doctest::Approx(reversed.bleu).epsilon(1e-12));
}

TEST_CASE("brevity penalty is one for long hypotheses") {
  BleuScore s = bleu(lines_of({"a b c d e f"}), lines_of({"a b c d"}));
  CHECK(s.brevity_penalty == doctest::Approx(1.0));
}

TEST_CASE("smoothed variant stays positive where the strict score is zero") {
  TokenLines hyps = lines_of({"a b c"});
  TokenLines refs = lines_of({"a b c"});
  CHECK(bleu(hyps, refs).bleu == doctest::Approx(0.0));
  CHECK(bleu_smoothed(hyps, refs).bleu > 0.0);
}

TEST_CASE("score line mirrors the reference formatting") {
  TokenLines hyps = lines_of({"a b c d"});
  TokenLines refs = lines_of({"a b c d e"});
  BleuScore s = bleu(hyps, refs);
  char expect[256];
  std::snprintf(expect, sizeof(expect),
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f "
                "(BP=%.3f, ratio=%.3f, hyp_len=%ld, ref_len=%ld)",
                s.bleu, s.precisions[0] * 100.0, s.precisions[1] * 100.0,
                s.precisions[2] * 100.0, s.precisions[3] * 100.0,
                s.brevity_penalty,
                static_cast<double>(s.hyp_len) / static_cast<double>(s.ref_len),
                s.hyp_len, s.ref_len);
  CHECK(bleu_line(s) == expect);
}

TEST_CASE("mismatched corpus sizes are rejected") {
  CHECK_THROWS_AS(bleu(lines_of({"a"}), lines_of({"a", "b"})), LengthMismatch);
  CHECK_THROWS_AS(bleu({}, {}), EmptyCorpus);
  CHECK_THROWS_AS(
      bootstrap_significance(lines_of({"a"}), lines_of({"a"}),
                             lines_of({"a", "b"})),
      LengthMismatch);
}

TEST_CASE("identical systems are never significant") {
  Rng rng(5);
  TokenLines refs = random_lines(20, 5, 3, 8, rng);
  TokenLines hyps = random_lines(20, 5, 3, 8, rng);
  SignificanceResult r = bootstrap_significance(hyps, hyps, refs, 300, 1);
  CHECK(r.delta_bleu == doctest::Approx(0.0));
  CHECK(!r.significant);
  CHECK(r.p_value >= 0.05);
}

TEST_CASE("fully separated systems are significant") {
  Rng rng(6);
  TokenLines refs = random_lines(50, 5, 4, 9, rng);
  TokenLines good = refs;
  TokenLines bad;
  for (const auto& ref : refs) {
    bad.push_back(TokenLine(ref.size(), "zzz"));  // shares no tokens
  }
  SignificanceResult r = bootstrap_significance(good, bad, refs, 1000, 2);
  CHECK(r.significant);
  CHECK(r.p_value < 0.05);
  CHECK(r.delta_bleu > 50.0);
}

TEST_CASE("bootstrap is deterministic per seed") {
  Rng rng(7);
  TokenLines refs = random_lines(30, 5, 3, 8, rng);
  TokenLines a = random_lines(30, 5, 3, 8, rng);
  TokenLines b = random_lines(30, 5, 3, 8, rng);
  SignificanceResult r1 = bootstrap_significance(a, b, refs, 500, 42);
  SignificanceResult r2 = bootstrap_significance(a, b, refs, 500, 42);
  CHECK(r1.p_value == r2.p_value);
  CHECK(r1.delta_bleu == r2.delta_bleu);
}

}  // TEST_SUITE
