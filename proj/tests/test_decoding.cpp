#include <cmath>

#include "doctest.h"
#include "nmt/decoding.hpp"
#include "nmt/model.hpp"
#include "nmt/rng.hpp"
#include "support/stub_scorer.hpp"

using namespace nmt;

namespace {

DecodeConfig beam_config(int beam, int max_out_len, double alpha = 0.0) {
  DecodeConfig c;
  c.beam_size = beam;
  c.max_out_len = max_out_len;
  c.length_penalty_alpha = alpha;
  return c;
}

const std::vector<int> kExcluded = {kPadId, kBosId};

}  // namespace

TEST_SUITE("decoding") {

TEST_CASE("beam of one equals greedy on random models") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    testutil::HashScorer scorer(6, seed);
    Hypothesis beam = beam_decode(scorer, kExcluded, 3, beam_config(1, 4));
    Hypothesis greedy = greedy_decode(scorer, kExcluded, 3, 4);
    CHECK(beam.ids == greedy.ids);
    CHECK(beam.score == doctest::Approx(greedy.score).epsilon(1e-9));
  }
}

TEST_CASE("a hand-built three step table matches exhaustive search") {
  // vocab: 0 pad, 1 unk, 2 bos, 3 eos, 4, 5. Step probabilities chosen so
  // the greedy path is NOT optimal: taking 5 first looks worse but pays off.
  const float lo = std::log(0.05f), mid = std::log(0.25f), hi = std::log(0.60f);
  testutil::TableScorer scorer({
      {lo, lo, lo, lo, hi, mid},   // step 1: 4 best, 5 second
      {lo, lo, lo, mid, lo, hi},   // step 2
      {lo, lo, lo, hi, mid, lo},   // step 3: eos likely
  });
  testutil::EnumResult oracle = testutil::exhaustive_best(scorer, kExcluded, 3);
  Hypothesis got = beam_decode(scorer, kExcluded, 3, beam_config(64, 3));
  REQUIRE(oracle.found);
  CHECK(got.ids == oracle.ids);
  CHECK(got.score == doctest::Approx(oracle.score).epsilon(1e-9));
}

TEST_CASE("wide beams recover the exhaustive optimum on random models") {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    testutil::HashScorer scorer(6, seed);
    testutil::EnumResult oracle =
        testutil::exhaustive_best(scorer, kExcluded, 4);
    Hypothesis got = beam_decode(scorer, kExcluded, 4, beam_config(256, 4));
    REQUIRE(oracle.found);
    CHECK(got.ids == oracle.ids);
    CHECK(got.score == doctest::Approx(oracle.score).epsilon(1e-9));
  }
}

TEST_CASE("wide beams recover the optimum under a length penalty") {
  for (std::uint64_t seed = 200; seed < 215; ++seed) {
    testutil::HashScorer scorer(5, seed);
    testutil::EnumResult oracle =
        testutil::exhaustive_best(scorer, kExcluded, 4, 0.8);
    Hypothesis got =
        beam_decode(scorer, kExcluded, 4, beam_config(256, 4, 0.8));
    REQUIRE(oracle.found);
    CHECK(got.ids == oracle.ids);
    CHECK(got.score == doctest::Approx(oracle.score).epsilon(1e-9));
  }
}

TEST_CASE("hypotheses terminate with eos or at the length cap") {
  for (std::uint64_t seed = 300; seed < 320; ++seed) {
    testutil::HashScorer scorer(6, seed);
    Hypothesis h = beam_decode(scorer, kExcluded, 4, beam_config(3, 4));
    REQUIRE(!h.ids.empty());
    const bool ends_eos = h.ids.back() == kEosId;
    CHECK((ends_eos || h.ids.size() == 4));
    // eos never appears mid-sequence
    for (std::size_t i = 0; i + 1 < h.ids.size(); ++i) {
      CHECK(h.ids[i] != kEosId);
    }
  }
}

TEST_CASE("one-hot tables drive greedy to the encoded sequence") {
  const float off = -40.0f;
  auto one_hot = [&](int id, int vocab) {
    std::vector<float> row(static_cast<std::size_t>(vocab), off);
    row[static_cast<std::size_t>(id)] = 0.0f;
    return row;
  };
  testutil::TableScorer scorer(
      {one_hot(5, 6), one_hot(4, 6), one_hot(5, 6), one_hot(3, 6)});
  Hypothesis h = greedy_decode(scorer, kExcluded, 8, 10);
  CHECK(h.ids == std::vector<int>{5, 4, 5, 3});
}

TEST_CASE("greedy never beats any beam") {
  for (std::uint64_t seed = 400; seed < 430; ++seed) {
    testutil::HashScorer scorer(6, seed);
    Hypothesis greedy = greedy_decode(scorer, kExcluded, 4, 4);
    double prev = -1e300;
    for (int k = 1; k <= 5; ++k) {
      Hypothesis beam = beam_decode(scorer, kExcluded, 4, beam_config(k, 4));
      CHECK(beam.score >= greedy.score - 1e-12);
      // beam score is monotone in the beam width under pure log-prob scoring
      CHECK(beam.score >= prev - 1e-12);
      prev = beam.score;
    }
  }
}

TEST_CASE("decoding is deterministic") {
  testutil::HashScorer scorer(6, 777);
  Hypothesis a = beam_decode(scorer, kExcluded, 4, beam_config(4, 4));
  Hypothesis b = beam_decode(scorer, kExcluded, 4, beam_config(4, 4));
  CHECK(a.ids == b.ids);
  CHECK(a.score == b.score);
}

TEST_CASE("excluded ids never surface in checkpoint decoding") {
  std::vector<std::string> tokens = {"<pad>", "<unk>", "<s>", "</s>",
                                     "<2ENG>", "<2DEU>", "x", "y", "z"};
  Vocabulary vocab(tokens);
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_len = 32;
  Checkpoint ckpt = init_model(cfg, vocab, 5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::vector<int> src = {4, 6 + static_cast<int>(seed % 3), kEosId};
    Hypothesis h = beam_decode(ckpt, src, beam_config(3, 8));
    for (int id : h.ids) {
      CHECK(id != kPadId);
      CHECK(id != kBosId);
      CHECK(id != 4);  // flags are masked out too
      CHECK(id != 5);
    }
  }
}

TEST_CASE("flag-only sources still produce a terminated sequence") {
  std::vector<std::string> tokens = {"<pad>", "<unk>", "<s>", "</s>",
                                     "<2ENG>", "x"};
  Vocabulary vocab(tokens);
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_len = 16;
  Checkpoint ckpt = init_model(cfg, vocab, 9);
  std::vector<int> out = greedy_decode(ckpt, {4, kEosId}, 6);
  REQUIRE(!out.empty());
  CHECK((out.back() == kEosId || out.size() == 6));
}

}  // TEST_SUITE
