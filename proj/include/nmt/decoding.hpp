#pragma once

#include <vector>

#include "nmt/model.hpp"

namespace nmt {

struct DecodeConfig {
  int beam_size = 4;
  int batch_size = 32;    // sentences scored per forward pass in decode_corpus
  int max_out_len = 0;    // 0 -> 2 * source length + 8
  double length_penalty_alpha = 0.0;  // 0 = pure summed log-probability
};

struct Hypothesis {
  std::vector<int> ids;  // ends with </s> unless cut off at max_out_len
  double score = 0.0;    // sum of log-probs, / len^alpha when alpha > 0
};

// Next-token distribution provider. Prefixes exclude `<s>`; implementations
// return one row of log-probabilities per prefix.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual int vocab_size() const = 0;
  virtual std::vector<std::vector<float>> next_log_probs(
      const std::vector<std::vector<int>>& prefixes) = 0;
};

// Encodes the source once, then scores growing decoder prefixes batched over
// live beam entries, projecting logits for the last position only.
class TransformerScorer : public Scorer {
 public:
  TransformerScorer(const Checkpoint& ckpt, const std::vector<int>& src_ids);
  int vocab_size() const override;
  std::vector<std::vector<float>> next_log_probs(
      const std::vector<std::vector<int>>& prefixes) override;

 private:
  const Checkpoint& ckpt_;
  std::vector<int> src_;
  Tape tape_{false};
  Tensor memory_;  // (1, src_len, d_model)
};

// Standard beam search over summed log-probs. `excluded` ids are never
// proposed (pad, <s>, language flags). Ties break by (score desc, ids lex
// asc). Each step keeps the top beam_size candidates; those ending in </s>
// retire from the beam (so beam size 1 reduces to greedy search). Early stop
// once the best finished hypothesis cannot be beaten (alpha == 0 only).
Hypothesis beam_decode(Scorer& scorer, const std::vector<int>& excluded,
                       int src_len, const DecodeConfig& config);

Hypothesis greedy_decode(Scorer& scorer, const std::vector<int>& excluded,
                         int src_len, int max_out_len);

// Checkpoint-level wrappers; excluded = pad, <s>, and every language flag.
Hypothesis beam_decode(const Checkpoint& ckpt, const std::vector<int>& src_ids,
                       const DecodeConfig& config);
std::vector<int> greedy_decode(const Checkpoint& ckpt,
                               const std::vector<int>& src_ids,
                               int max_out_len = 0);

// Decode every line; returns token lines with `</s>` stripped and ids mapped
// through the vocabulary (still BPE units; callers bpe_undo before scoring).
TokenLines decode_corpus(const Checkpoint& ckpt,
                         const std::vector<std::vector<int>>& src_ids,
                         const DecodeConfig& config);

}  // namespace nmt
